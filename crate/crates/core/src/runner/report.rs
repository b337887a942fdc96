use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EvalResult, ItemRecord, RunSummary};
use crate::datasets::DatasetId;
use crate::scoring::Method;

pub const MACHINE_TABLE_HEADER: &str = "model,dataset,method,accuracy,item_count";

/// One row of the machine-readable results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub dataset: String,
    pub method: Method,
    pub accuracy: f64,
    pub item_count: usize,
}

impl From<&EvalResult> for TableRow {
    fn from(r: &EvalResult) -> Self {
        Self {
            model: r.model_id.clone(),
            dataset: r.dataset.clone(),
            method: r.method,
            accuracy: r.accuracy,
            item_count: r.item_count,
        }
    }
}

/// Sort key placing the benchmark datasets first in their canonical order.
pub fn dataset_order(label: &str) -> (usize, String) {
    let pos = DatasetId::ALL.iter().position(|d| d.as_str().eq_ignore_ascii_case(label));
    (pos.unwrap_or(DatasetId::ALL.len()), label.to_string())
}

fn sorted_rows(rows: &[TableRow]) -> Vec<TableRow> {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| {
        (&a.model, dataset_order(&a.dataset), a.method).cmp(&(&b.model, dataset_order(&b.dataset), b.method))
    });
    rows
}

pub fn write_machine_table<W: Write>(rows: &[TableRow], out: W) -> io::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in sorted_rows(rows) {
        writer.serialize(row).map_err(io::Error::other)?;
    }
    writer.flush()
}

pub fn read_machine_table(path: impl AsRef<Path>) -> io::Result<Vec<TableRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(io::Error::other)?;
    let headers = reader.headers().map_err(io::Error::other)?.iter().collect::<Vec<_>>().join(",");
    if headers != MACHINE_TABLE_HEADER {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("unexpected header `{headers}`")));
    }
    reader.deserialize().map(|r| r.map_err(io::Error::other)).collect()
}

/// Markdown grid: one row per dataset, a column group per model, one column
/// per method. The best method per (model, dataset) is bold; ties go to the
/// leftmost column.
pub fn render_human_table(rows: &[TableRow]) -> String {
    let models: Vec<String> = rows.iter().map(|r| r.model.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let methods: Vec<Method> = rows.iter().map(|r| r.method).collect::<BTreeSet<_>>().into_iter().collect();
    let mut datasets: Vec<String> = rows.iter().map(|r| r.dataset.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    datasets.sort_by_key(|d| dataset_order(d));

    let cells: BTreeMap<(&str, &str, Method), f64> =
        rows.iter().map(|r| ((r.model.as_str(), r.dataset.as_str(), r.method), r.accuracy)).collect();

    let mut out = String::from("Accuracy (%)\n\n| Dataset |");
    for model in &models {
        for method in &methods {
            out.push_str(&format!(" {model} {method} |"));
        }
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(models.len() * methods.len()));
    out.push('\n');

    for dataset in &datasets {
        out.push_str(&format!("| {dataset} |"));
        for model in &models {
            let group: Vec<Option<f64>> =
                methods.iter().map(|&m| cells.get(&(model.as_str(), dataset.as_str(), m)).copied()).collect();
            let mut best: Option<usize> = None;
            for (i, acc) in group.iter().enumerate() {
                if let Some(acc) = acc {
                    if best.is_none_or(|b| *acc > group[b].unwrap()) {
                        best = Some(i);
                    }
                }
            }
            for (i, acc) in group.iter().enumerate() {
                match acc {
                    Some(acc) if best == Some(i) => out.push_str(&format!(" **{:.1}** |", acc * 100.0)),
                    Some(acc) => out.push_str(&format!(" {:.1} |", acc * 100.0)),
                    None => out.push_str(" - |"),
                }
            }
        }
        out.push('\n');
    }
    out
}

fn file_component(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn dump_name(model: &str, dataset: &str, method: Method, partial: bool) -> String {
    format!(
        "{}__{}__{}{}.jsonl",
        file_component(model),
        file_component(dataset),
        method.as_str().to_ascii_lowercase(),
        if partial { ".partial" } else { "" }
    )
}

fn write_records(path: &Path, records: &[ItemRecord]) -> io::Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub machine_table: PathBuf,
    pub human_table: PathBuf,
    pub predictions: Vec<PathBuf>,
    pub failure_manifest: Option<PathBuf>,
}

/// Writes `results.csv`, `report.md`, one prediction dump per cell under
/// `predictions/`, and `failures.json` plus partial dumps when cells failed.
pub fn emit_report(summary: &RunSummary, out_dir: &Path) -> io::Result<ReportFiles> {
    let pred_dir = out_dir.join("predictions");
    fs::create_dir_all(&pred_dir)?;

    let rows: Vec<TableRow> = summary.results.iter().map(TableRow::from).collect();
    let machine_table = out_dir.join("results.csv");
    write_machine_table(&rows, BufWriter::new(fs::File::create(&machine_table)?))?;

    let mut human = render_human_table(&rows);
    if !summary.notes.is_empty() || !summary.failures.is_empty() {
        human.push_str("\nNotes:\n");
        for note in &summary.notes {
            human.push_str(&format!("- {note}\n"));
        }
        for failure in &summary.failures {
            human.push_str(&format!("- FAILED {failure}\n"));
        }
    }
    let human_table = out_dir.join("report.md");
    fs::write(&human_table, human)?;

    let mut predictions = Vec::new();
    for r in &summary.results {
        let path = pred_dir.join(dump_name(&r.model_id, &r.dataset, r.method, false));
        write_records(&path, &r.records)?;
        predictions.push(path);
    }

    let failure_manifest = if summary.failures.is_empty() {
        None
    } else {
        for f in summary.failures.iter().filter(|f| !f.partial.is_empty()) {
            if let Some(method) = f.method {
                let path = pred_dir.join(dump_name(&f.model_id, &f.dataset, method, true));
                write_records(&path, &f.partial)?;
                predictions.push(path);
            }
        }
        let path = out_dir.join("failures.json");
        let mut out = BufWriter::new(fs::File::create(&path)?);
        serde_json::to_writer_pretty(&mut out, &summary.failures)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Some(path)
    };

    Ok(ReportFiles { machine_table, human_table, predictions, failure_manifest })
}
