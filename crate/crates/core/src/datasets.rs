//! Loaders for the official development splits of COPA, CSQA, OBQA, PIQA and
//! SIQA, plus the normalized line-delimited interchange format.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::templates::TemplateFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DatasetId {
    Copa,
    Csqa,
    Obqa,
    Piqa,
    Siqa,
}

impl DatasetId {
    /// Report row order.
    pub const ALL: [DatasetId; 5] =
        [DatasetId::Copa, DatasetId::Csqa, DatasetId::Obqa, DatasetId::Piqa, DatasetId::Siqa];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::Copa => "COPA",
            DatasetId::Csqa => "CSQA",
            DatasetId::Obqa => "OBQA",
            DatasetId::Piqa => "PIQA",
            DatasetId::Siqa => "SIQA",
        }
    }

    pub fn family(self) -> TemplateFamily {
        match self {
            DatasetId::Csqa | DatasetId::Siqa => TemplateFamily::QuestionStyle,
            DatasetId::Copa | DatasetId::Obqa | DatasetId::Piqa => TemplateFamily::SentenceStyle,
        }
    }

    pub fn choices(self) -> usize {
        match self {
            DatasetId::Copa | DatasetId::Piqa => 2,
            DatasetId::Csqa => 5,
            DatasetId::Obqa => 4,
            DatasetId::Siqa => 3,
        }
    }

    /// Published validation-split size and choice count.
    pub fn expected_stats(self) -> DatasetStats {
        let item_count = match self {
            DatasetId::Copa => 500,
            DatasetId::Csqa => 1221,
            DatasetId::Obqa => 500,
            DatasetId::Piqa => 2000,
            DatasetId::Siqa => 1954,
        };
        DatasetStats {
            dataset: self,
            split: "validation".into(),
            item_count,
            choices_per_item: self.choices(),
        }
    }

    /// Files of the official dev release, relative to the data root.
    pub fn release_files(self) -> &'static [&'static str] {
        match self {
            DatasetId::Copa => &["copa/copa-dev.xml"],
            DatasetId::Csqa => &["csqa/dev_rand_split.jsonl"],
            DatasetId::Obqa => &["obqa/dev.jsonl"],
            DatasetId::Piqa => &["piqa/valid.jsonl", "piqa/valid-labels.lst"],
            DatasetId::Siqa => &["siqa/dev.jsonl", "siqa/dev-labels.lst"],
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown dataset `{0}` (expected one of copa, csqa, obqa, piqa, siqa)")]
pub struct ParseDatasetError(pub String);

impl FromStr for DatasetId {
    type Err = ParseDatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "copa" => Ok(DatasetId::Copa),
            "csqa" => Ok(DatasetId::Csqa),
            "obqa" => Ok(DatasetId::Obqa),
            "piqa" => Ok(DatasetId::Piqa),
            "siqa" => Ok(DatasetId::Siqa),
            _ => Err(ParseDatasetError(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("item {id}: {reason}")]
pub struct InvalidItem {
    pub id: String,
    pub reason: String,
}

/// One normalized benchmark question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub id: String,
    pub dataset: DatasetId,
    pub family: TemplateFamily,
    pub stem: String,
    pub options: Vec<String>,
    pub gold_index: usize,
}

impl McqItem {
    /// Builds an item, trimming surrounding whitespace from the stem and
    /// options. Rejects empty texts, fewer than two options and an
    /// out-of-range gold index.
    pub fn new(
        id: impl Into<String>,
        dataset: DatasetId,
        stem: &str,
        options: Vec<String>,
        gold_index: usize,
    ) -> Result<Self, InvalidItem> {
        let item = McqItem {
            id: id.into(),
            dataset,
            family: dataset.family(),
            stem: stem.trim().to_string(),
            options: options.into_iter().map(|o| o.trim().to_string()).collect(),
            gold_index,
        };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<(), InvalidItem> {
        let fail = |reason: String| Err(InvalidItem { id: self.id.clone(), reason });
        if self.family != self.dataset.family() {
            return fail(format!("{} items use the {:?} template family", self.dataset, self.dataset.family()));
        }
        if self.stem.trim().is_empty() {
            return fail("empty stem".into());
        }
        if self.options.len() < 2 {
            return fail(format!("{} option(s), need at least 2", self.options.len()));
        }
        if let Some(i) = self.options.iter().position(|o| o.trim().is_empty()) {
            return fail(format!("option {i} is empty"));
        }
        if self.gold_index >= self.options.len() {
            return fail(format!("gold index {} out of range for {} options", self.gold_index, self.options.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dataset: DatasetId,
    pub split: String,
    pub item_count: usize,
    pub choices_per_item: usize,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{records} has {record_count} records but {labels} has {label_count} labels")]
    CountMismatch { records: PathBuf, record_count: usize, labels: PathBuf, label_count: usize },
    #[error("{path}:{line}: {source}")]
    Invalid {
        path: PathBuf,
        line: usize,
        #[source]
        source: InvalidItem,
    },
}

fn read(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.to_path_buf(), source })
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> LoadError {
    LoadError::Malformed { path: path.to_path_buf(), line, message: message.into() }
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty())
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, LoadError> {
    let text = read(path)?;
    lines(&text)
        .map(|(n, line)| {
            serde_json::from_str(line).map(|v| (n, v)).map_err(|e| malformed(path, n, e.to_string()))
        })
        .collect()
}

fn item_at(
    path: &Path,
    line: usize,
    id: String,
    dataset: DatasetId,
    stem: &str,
    options: Vec<String>,
    gold: usize,
) -> Result<McqItem, LoadError> {
    McqItem::new(id, dataset, stem, options, gold).map_err(|source| LoadError::Invalid {
        path: path.to_path_buf(),
        line,
        source,
    })
}

#[derive(Deserialize)]
struct LabeledChoice {
    label: String,
    text: String,
}

#[derive(Deserialize)]
struct ChoiceQuestion {
    stem: String,
    choices: Vec<LabeledChoice>,
}

#[derive(Deserialize)]
struct ChoiceRecord {
    id: String,
    question: ChoiceQuestion,
    #[serde(rename = "answerKey")]
    answer_key: String,
}

fn load_choice_records(path: &Path, dataset: DatasetId) -> Result<Vec<McqItem>, LoadError> {
    parse_jsonl::<ChoiceRecord>(path)?
        .into_iter()
        .map(|(n, rec)| {
            let key = rec.answer_key.trim();
            let gold = rec
                .question
                .choices
                .iter()
                .position(|c| c.label.trim() == key)
                .ok_or_else(|| malformed(path, n, format!("answer key `{key}` matches no choice label")))?;
            let options = rec.question.choices.into_iter().map(|c| c.text).collect();
            item_at(path, n, rec.id, dataset, &rec.question.stem, options, gold)
        })
        .collect()
}

/// CommonsenseQA `dev_rand_split.jsonl`.
pub fn load_csqa(path: impl AsRef<Path>) -> Result<Vec<McqItem>, LoadError> {
    load_choice_records(path.as_ref(), DatasetId::Csqa)
}

/// OpenBookQA `Data/Main/dev.jsonl`.
pub fn load_obqa(path: impl AsRef<Path>) -> Result<Vec<McqItem>, LoadError> {
    load_choice_records(path.as_ref(), DatasetId::Obqa)
}

fn read_labels(path: &Path) -> Result<Vec<(usize, i64)>, LoadError> {
    let text = read(path)?;
    lines(&text)
        .map(|(n, l)| {
            l.trim()
                .parse::<i64>()
                .map(|v| (n, v))
                .map_err(|e| malformed(path, n, format!("bad label `{}`: {e}", l.trim())))
        })
        .collect()
}

fn paired<T>(
    records_path: &Path,
    records: Vec<(usize, T)>,
    labels_path: &Path,
    labels: Vec<(usize, i64)>,
) -> Result<impl Iterator<Item = (usize, T, i64)>, LoadError> {
    if records.len() != labels.len() {
        return Err(LoadError::CountMismatch {
            records: records_path.to_path_buf(),
            record_count: records.len(),
            labels: labels_path.to_path_buf(),
            label_count: labels.len(),
        });
    }
    Ok(records.into_iter().zip(labels).map(|((n, rec), (_, label))| (n, rec, label)))
}

fn label_index(path: &Path, line: usize, label: i64, offset: i64, n_options: usize) -> Result<usize, LoadError> {
    let idx = label - offset;
    if idx < 0 || idx as usize >= n_options {
        return Err(malformed(path, line, format!("label {label} out of range")));
    }
    Ok(idx as usize)
}

#[derive(Deserialize)]
struct PiqaRecord {
    goal: String,
    sol1: String,
    sol2: String,
}

/// PIQA `valid.jsonl` with its `valid-labels.lst` (0-based labels).
pub fn load_piqa(records: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Vec<McqItem>, LoadError> {
    let (records, labels) = (records.as_ref(), labels.as_ref());
    let rows = paired(records, parse_jsonl::<PiqaRecord>(records)?, labels, read_labels(labels)?)?;
    rows.enumerate()
        .map(|(i, (n, rec, label))| {
            let gold = label_index(labels, i + 1, label, 0, 2)?;
            item_at(records, n, format!("piqa-{i}"), DatasetId::Piqa, &rec.goal, vec![rec.sol1, rec.sol2], gold)
        })
        .collect()
}

#[derive(Deserialize)]
struct SiqaRecord {
    context: String,
    question: String,
    #[serde(rename = "answerA")]
    answer_a: String,
    #[serde(rename = "answerB")]
    answer_b: String,
    #[serde(rename = "answerC")]
    answer_c: String,
}

/// Social IQA `dev.jsonl` with its `dev-labels.lst` (1-based labels).
/// The stem is the context followed by the question.
pub fn load_siqa(records: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Vec<McqItem>, LoadError> {
    let (records, labels) = (records.as_ref(), labels.as_ref());
    let rows = paired(records, parse_jsonl::<SiqaRecord>(records)?, labels, read_labels(labels)?)?;
    rows.enumerate()
        .map(|(i, (n, rec, label))| {
            let gold = label_index(labels, i + 1, label, 1, 3)?;
            let stem = format!("{} {}", rec.context.trim(), rec.question.trim());
            let options = vec![rec.answer_a, rec.answer_b, rec.answer_c];
            item_at(records, n, format!("siqa-{i}"), DatasetId::Siqa, &stem, options, gold)
        })
        .collect()
}

/// How a COPA premise is joined to its alternatives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopaConnective {
    /// `"<premise> This happened because"` / `"<premise> As a result,"`.
    #[default]
    Default,
    /// `"<premise without period> because"` / `"<premise without period> so"`.
    Short,
}

impl FromStr for CopaConnective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "default" => Ok(CopaConnective::Default),
            "because" | "so" | "short" => Ok(CopaConnective::Short),
            other => Err(format!("unknown COPA connective `{other}` (expected because, so or default)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsksFor {
    Cause,
    Effect,
}

impl CopaConnective {
    pub fn stem(self, premise: &str, asks_for: AsksFor) -> String {
        let premise = premise.trim();
        match (self, asks_for) {
            (CopaConnective::Default, AsksFor::Cause) => format!("{premise} This happened because"),
            (CopaConnective::Default, AsksFor::Effect) => format!("{premise} As a result,"),
            (CopaConnective::Short, asks) => {
                let clause = premise.strip_suffix('.').unwrap_or(premise);
                let word = if asks == AsksFor::Cause { "because" } else { "so" };
                format!("{clause} {word}")
            }
        }
    }
}

/// Lowers the first letter of an alternative so it reads mid-sentence. The
/// pronoun "I" and words with further capitals (acronyms) are left alone.
pub fn lower_initial(text: &str) -> String {
    let text = text.trim();
    let first_word = text.split_whitespace().next().unwrap_or("");
    let keep = first_word == "I"
        || first_word.starts_with("I'")
        || first_word.chars().skip(1).any(|c| c.is_uppercase());
    let mut chars = text.chars();
    match chars.next() {
        Some(c) if !keep && c.is_uppercase() => c.to_lowercase().chain(chars).collect(),
        _ => text.to_string(),
    }
}

/// COPA dev release (`copa-dev.xml`).
pub fn load_copa(path: impl AsRef<Path>, connective: CopaConnective) -> Result<Vec<McqItem>, LoadError> {
    let path = path.as_ref();
    let text = read(path)?;
    let doc = roxmltree::Document::parse(&text).map_err(|e| malformed(path, e.pos().row as usize, e.to_string()))?;
    let mut items = Vec::new();
    for node in doc.root_element().children().filter(|n| n.has_tag_name("item")) {
        let line = doc.text_pos_at(node.range().start).row as usize;
        let attr = |name: &str| node.attribute(name).ok_or_else(|| malformed(path, line, format!("missing `{name}`")));
        let child = |name: &str| {
            node.children()
                .find(|c| c.has_tag_name(name))
                .and_then(|c| c.text())
                .ok_or_else(|| malformed(path, line, format!("missing <{name}>")))
        };
        let id = attr("id")?;
        let asks_for = match attr("asks-for")? {
            "cause" => AsksFor::Cause,
            "effect" => AsksFor::Effect,
            other => return Err(malformed(path, line, format!("unknown asks-for value `{other}`"))),
        };
        let gold = match attr("most-plausible-alternative")?.trim() {
            "1" => 0,
            "2" => 1,
            other => return Err(malformed(path, line, format!("bad most-plausible-alternative `{other}`"))),
        };
        let stem = connective.stem(child("p")?, asks_for);
        let options = vec![lower_initial(child("a1")?), lower_initial(child("a2")?)];
        items.push(item_at(path, line, format!("copa-{id}"), DatasetId::Copa, &stem, options, gold)?);
    }
    Ok(items)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    pub copa_connective: CopaConnective,
}

/// Loads a dataset from the official release layout under `data_root`
/// (see [`DatasetId::release_files`]).
pub fn load_official(dataset: DatasetId, data_root: &Path, options: LoadOptions) -> Result<Vec<McqItem>, LoadError> {
    let files: Vec<PathBuf> = dataset.release_files().iter().map(|f| data_root.join(f)).collect();
    match dataset {
        DatasetId::Copa => load_copa(&files[0], options.copa_connective),
        DatasetId::Csqa => load_csqa(&files[0]),
        DatasetId::Obqa => load_obqa(&files[0]),
        DatasetId::Piqa => load_piqa(&files[0], &files[1]),
        DatasetId::Siqa => load_siqa(&files[0], &files[1]),
    }
}

/// Reads the normalized interchange format: one [`McqItem`] JSON object per line.
pub fn load_normalized(path: impl AsRef<Path>) -> Result<Vec<McqItem>, LoadError> {
    let path = path.as_ref();
    parse_jsonl::<McqItem>(path)?
        .into_iter()
        .map(|(n, mut item)| {
            item.stem = item.stem.trim().to_string();
            item.options.iter_mut().for_each(|o| *o = o.trim().to_string());
            item.validate()
                .map(|_| item)
                .map_err(|source| LoadError::Invalid { path: path.to_path_buf(), line: n, source })
        })
        .collect()
}

pub fn write_normalized<W: Write>(items: &[McqItem], mut out: W) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Comparison of a loaded split against its published statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatsReport {
    pub expected: DatasetStats,
    pub item_count: usize,
    pub delta: i64,
    /// Items whose option count differs from the expected choice count.
    pub choice_violations: Vec<(String, usize)>,
    pub distinct_gold_labels: usize,
}

impl StatsReport {
    pub fn passed(&self) -> bool {
        self.delta == 0 && self.choice_violations.is_empty()
    }

    pub fn warnings(&self) -> Vec<String> {
        let name = self.expected.dataset;
        let mut out = Vec::new();
        if self.delta != 0 {
            out.push(format!(
                "{name}: loaded {} items, expected {} (delta {:+})",
                self.item_count, self.expected.item_count, self.delta
            ));
        }
        for (id, n) in &self.choice_violations {
            out.push(format!("{name}: item {id} has {n} options, expected {}", self.expected.choices_per_item));
        }
        if self.item_count > 1 && self.distinct_gold_labels < 2 {
            out.push(format!("{name}: every item has the same gold label"));
        }
        out
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} items (expected {}), {} choice violation(s)",
            self.expected.dataset,
            self.expected.split,
            self.item_count,
            self.expected.item_count,
            self.choice_violations.len()
        )
    }
}

/// Report-only check; never fails.
pub fn validate_stats(items: &[McqItem], expected: &DatasetStats) -> StatsReport {
    let choice_violations = items
        .iter()
        .filter(|it| it.options.len() != expected.choices_per_item)
        .map(|it| (it.id.clone(), it.options.len()))
        .collect();
    let distinct_gold_labels = items.iter().map(|it| it.gold_index).collect::<BTreeSet<_>>().len();
    StatsReport {
        expected: expected.clone(),
        item_count: items.len(),
        delta: items.len() as i64 - expected.item_count as i64,
        choice_violations,
        distinct_gold_labels,
    }
}
