//! Runs (method x dataset) cells for one model and collects accuracies.

mod report;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::LogprobBackend;
use crate::datasets::{self, DatasetId, LoadError, LoadOptions, McqItem, StatsReport};
use crate::scoring::{score_item, ItemError, Method};
use crate::templates::TemplateConfig;

pub use report::{
    dataset_order, emit_report, read_machine_table, render_human_table, write_machine_table, ReportFiles, TableRow,
    MACHINE_TABLE_HEADER,
};

pub const DEFAULT_CONCURRENCY: usize = 8;

/// Where a dataset's items come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    /// Official dev release under the data root.
    Official(DatasetId),
    /// A normalized interchange file; the label is the file stem.
    Normalized(PathBuf),
}

impl DatasetSource {
    pub fn label(&self) -> String {
        match self {
            DatasetSource::Official(id) => id.as_str().to_string(),
            DatasetSource::Normalized(path) => {
                path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
            }
        }
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSource::Official(id) => write!(f, "{}", id.as_str().to_ascii_lowercase()),
            DatasetSource::Normalized(path) => write!(f, "file={}", path.display()),
        }
    }
}

impl FromStr for DatasetSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().strip_prefix("file=") {
            Some(path) if !path.is_empty() => Ok(DatasetSource::Normalized(PathBuf::from(path))),
            Some(_) => Err("file= needs a path".into()),
            None => s.parse::<DatasetId>().map(DatasetSource::Official).map_err(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model_id: String,
    pub methods: Vec<Method>,
    pub datasets: Vec<DatasetSource>,
    pub data_root: Option<PathBuf>,
    pub concurrency: usize,
    pub templates: TemplateConfig,
    pub load: LoadOptions,
}

impl RunConfig {
    pub fn new(model_id: impl Into<String>, methods: Vec<Method>, datasets: Vec<DatasetSource>) -> Self {
        Self {
            model_id: model_id.into(),
            methods,
            datasets,
            data_root: None,
            concurrency: DEFAULT_CONCURRENCY,
            templates: TemplateConfig::default(),
            load: LoadOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.model_id.trim().is_empty() {
            return Err(RunError::Config("model id is empty".into()));
        }
        if self.methods.is_empty() {
            return Err(RunError::Config("no methods selected".into()));
        }
        if self.datasets.is_empty() {
            return Err(RunError::Config("no datasets selected".into()));
        }
        if self.concurrency == 0 {
            return Err(RunError::Config("concurrency must be at least 1".into()));
        }
        Ok(())
    }

    /// Methods in canonical order, without duplicates.
    pub fn methods(&self) -> Vec<Method> {
        self.methods.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Datasets in the order given, without duplicates.
    pub fn datasets(&self) -> Vec<DatasetSource> {
        let mut out: Vec<DatasetSource> = Vec::new();
        for d in &self.datasets {
            if !out.contains(d) {
                out.push(d.clone());
            }
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("dataset {0} is empty")]
    EmptyDataset(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub label: String,
    pub items: Vec<McqItem>,
    pub stats: Option<StatsReport>,
}

impl LoadedDataset {
    pub fn new(label: impl Into<String>, items: Vec<McqItem>) -> Self {
        Self { label: label.into(), items, stats: None }
    }
}

pub fn load_dataset(source: &DatasetSource, data_root: Option<&Path>, options: LoadOptions) -> Result<LoadedDataset, RunError> {
    let (items, stats) = match source {
        DatasetSource::Official(id) => {
            let root = data_root.ok_or_else(|| RunError::Config(format!("{id} needs a data root")))?;
            let items = datasets::load_official(*id, root, options)?;
            let stats = datasets::validate_stats(&items, &id.expected_stats());
            (items, Some(stats))
        }
        DatasetSource::Normalized(path) => (datasets::load_normalized(path)?, None),
    };
    if items.is_empty() {
        return Err(RunError::EmptyDataset(source.to_string()));
    }
    Ok(LoadedDataset { label: source.label(), items, stats })
}

/// Per-item outcome, as written to the prediction dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub scores: Vec<f64>,
    pub pred: usize,
    pub gold: usize,
}

impl ItemRecord {
    pub fn correct(&self) -> bool {
        self.pred == self.gold
    }
}

pub fn accuracy(records: &[ItemRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.correct()).count() as f64 / records.len() as f64
}

/// One (model, method, dataset) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub model_id: String,
    pub method: Method,
    pub dataset: String,
    pub records: Vec<ItemRecord>,
    pub accuracy: f64,
    pub item_count: usize,
}

impl EvalResult {
    pub fn correct_count(&self) -> usize {
        self.records.iter().filter(|r| r.correct()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub model_id: String,
    pub dataset: String,
    pub method: Option<Method>,
    /// First failing item, if the failure happened during scoring.
    pub item_id: Option<String>,
    pub message: String,
    pub backend_unreachable: bool,
    #[serde(skip)]
    pub partial: Vec<ItemRecord>,
}

impl fmt::Display for CellFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {}", self.model_id, self.dataset)?;
        if let Some(m) = self.method {
            write!(f, " / {m}")?;
        }
        if let Some(id) = &self.item_id {
            write!(f, " (item {id})")?;
        }
        write!(f, ": {}", self.message)
    }
}

fn thread_pool(concurrency: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .thread_name(|i| format!("mcq-eval-{i}"))
        .build()
        .expect("failed to start worker threads")
}

fn evaluate_in<B: LogprobBackend + ?Sized>(
    pool: &rayon::ThreadPool,
    config: &RunConfig,
    dataset: &LoadedDataset,
    method: Method,
    backend: &B,
) -> Result<EvalResult, Box<CellFailure>> {
    let scored: Vec<Result<ItemRecord, (String, ItemError)>> = pool.install(|| {
        dataset
            .items
            .par_iter()
            .map(|item| {
                score_item::<f64, B>(item, method, &config.model_id, backend, &config.templates)
                    .map(|s| ItemRecord {
                        id: item.id.clone(),
                        scores: s.final_scores(),
                        pred: s.predicted,
                        gold: item.gold_index,
                    })
                    .map_err(|e| (item.id.clone(), e))
            })
            .collect()
    });

    let mut records = Vec::with_capacity(scored.len());
    let mut first_error = None;
    for outcome in scored {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) if first_error.is_none() => first_error = Some(e),
            Err(_) => {}
        }
    }
    if let Some((item_id, err)) = first_error {
        return Err(Box::new(CellFailure {
            model_id: config.model_id.clone(),
            dataset: dataset.label.clone(),
            method: Some(method),
            item_id: Some(item_id),
            backend_unreachable: err.backend_error().is_some_and(|e| e.is_unreachable()),
            message: err.to_string(),
            partial: records,
        }));
    }
    Ok(EvalResult {
        model_id: config.model_id.clone(),
        method,
        dataset: dataset.label.clone(),
        accuracy: accuracy(&records),
        item_count: records.len(),
        records,
    })
}

/// Scores every item of `dataset` under `method`. Items are scored
/// concurrently up to `config.concurrency`; records keep dataset order.
pub fn evaluate<B: LogprobBackend + ?Sized>(
    config: &RunConfig,
    dataset: &LoadedDataset,
    method: Method,
    backend: &B,
) -> Result<EvalResult, Box<CellFailure>> {
    evaluate_in(&thread_pool(config.concurrency), config, dataset, method, backend)
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub results: Vec<EvalResult>,
    pub failures: Vec<CellFailure>,
    /// Dataset statistics warnings and other report footnotes.
    pub notes: Vec<String>,
    /// Number of dataset loads performed.
    pub loads: usize,
}

impl RunSummary {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs every (method, dataset) cell. Each dataset is loaded once; a failing
/// cell is recorded and does not stop its siblings.
pub fn run_matrix<B: LogprobBackend + ?Sized>(config: &RunConfig, backend: &B) -> Result<RunSummary, RunError> {
    config.validate()?;
    let pool = thread_pool(config.concurrency);
    let methods = config.methods();
    let mut summary = RunSummary::default();

    for source in config.datasets() {
        summary.loads += 1;
        let dataset = match load_dataset(&source, config.data_root.as_deref(), config.load) {
            Ok(d) => d,
            Err(e) => {
                log::error!("loading {source}: {e}");
                summary.failures.extend(methods.iter().map(|&m| CellFailure {
                    model_id: config.model_id.clone(),
                    dataset: source.label(),
                    method: Some(m),
                    item_id: None,
                    message: e.to_string(),
                    backend_unreachable: false,
                    partial: Vec::new(),
                }));
                continue;
            }
        };
        if let Some(stats) = &dataset.stats {
            log::info!("{stats}");
            summary.notes.extend(stats.warnings());
        }
        for &method in &methods {
            log::info!("{} {} {method}: scoring {} items", config.model_id, dataset.label, dataset.items.len());
            match evaluate_in(&pool, config, &dataset, method, backend) {
                Ok(r) => {
                    log::info!("{} {} {method}: accuracy {:.4}", config.model_id, dataset.label, r.accuracy);
                    summary.results.push(r);
                }
                Err(f) => {
                    log::error!("{f}");
                    summary.failures.push(*f);
                }
            }
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(pred: usize, gold: usize) -> ItemRecord {
        ItemRecord { id: "x".into(), scores: vec![], pred, gold }
    }

    #[test]
    fn accuracy_arithmetic() {
        assert_eq!(accuracy(&[rec(0, 0), rec(1, 0), rec(1, 1), rec(0, 1)]), 0.5);
        assert_eq!(accuracy(&[rec(2, 2), rec(0, 0)]), 1.0);
        assert_eq!(accuracy(&[]), 0.0);
    }

    #[test]
    fn dataset_source_parsing() {
        assert_eq!("copa".parse::<DatasetSource>().unwrap(), DatasetSource::Official(DatasetId::Copa));
        assert_eq!(
            "file=fx/synthetic.jsonl".parse::<DatasetSource>().unwrap(),
            DatasetSource::Normalized("fx/synthetic.jsonl".into())
        );
        assert_eq!(DatasetSource::Normalized("fx/synthetic.jsonl".into()).label(), "synthetic");
        assert!("file=".parse::<DatasetSource>().is_err());
        assert!("hellaswag".parse::<DatasetSource>().is_err());
    }

    #[test]
    fn config_validation() {
        let ok = RunConfig::new("m", vec![Method::Ca, Method::Zs, Method::Ca], vec![DatasetSource::Official(DatasetId::Copa)]);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.methods(), [Method::Zs, Method::Ca]);
        assert!(RunConfig::new("m", vec![], ok.datasets.clone()).validate().is_err());
        assert!(RunConfig::new("m", vec![Method::Zs], vec![]).validate().is_err());
        assert!(RunConfig { concurrency: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn official_needs_root() {
        let err = load_dataset(&DatasetSource::Official(DatasetId::Piqa), None, LoadOptions::default()).unwrap_err();
        assert!(matches!(err, RunError::Config(_)));
    }
}
