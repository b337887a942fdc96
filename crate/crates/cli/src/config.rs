//! Run configuration: flags over an optional TOML file over built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use mcq_eval::backend::RemoteBackend;
use mcq_eval::runner::{DatasetSource, DEFAULT_CONCURRENCY};
use mcq_eval::{CachedBackend, CopaConnective, FixtureBackend, LoadOptions, LogprobBackend, Method, RunConfig, TemplateConfig};
use serde::Deserialize;

pub const DATA_ROOT_ENV: &str = "MCQ_EVAL_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Http(String),
    Fixture(PathBuf),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('=') {
            Some(("http", url)) if !url.is_empty() => Ok(BackendSpec::Http(url.to_string())),
            Some(("fixture", path)) if !path.is_empty() => Ok(BackendSpec::Fixture(PathBuf::from(path))),
            _ => Err(format!("invalid backend `{s}` (expected http=URL or fixture=PATH)")),
        }
    }
}

/// Errors the CLI maps to exit code 3.
#[derive(Debug)]
pub struct Unreachable(pub String);

impl std::fmt::Display for Unreachable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Unreachable {}

impl BackendSpec {
    /// Builds the backend, checking health first for remote servers.
    pub fn connect(&self, model: &str, cache_dir: Option<&Path>) -> Result<Arc<dyn LogprobBackend>> {
        let inner: Arc<dyn LogprobBackend> = match self {
            BackendSpec::Fixture(path) => Arc::new(FixtureBackend::load(path).map_err(|e| anyhow!(e))?),
            BackendSpec::Http(url) => {
                let remote = RemoteBackend::new(url.clone());
                let health = remote.health().map_err(|e| Unreachable(e.to_string()))?;
                if !health.is_ok() {
                    return Err(Unreachable(format!("{url} is not healthy (status {:?})", health.status)).into());
                }
                if !health.models.iter().any(|m| m == model) {
                    return Err(Unreachable(format!("{url} does not serve `{model}` (serves {:?})", health.models)).into());
                }
                Arc::new(remote)
            }
        };
        Ok(match cache_dir {
            Some(dir) => Arc::new(
                CachedBackend::new(inner, dir).with_context(|| format!("creating cache dir {}", dir.display()))?,
            ),
            None => inner,
        })
    }
}

/// Keys accepted in a `--config` TOML file. All optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub model: Option<String>,
    pub method: Option<Vec<String>>,
    pub dataset: Option<Vec<String>>,
    pub backend: Option<String>,
    pub data_root: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub concurrency: Option<usize>,
    pub null_context: Option<String>,
    pub copa_connective: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Values given on the command line for `run`.
#[derive(Debug, Default, Clone)]
pub struct RunFlags {
    pub model: Option<String>,
    pub method: Option<Vec<String>>,
    pub dataset: Option<Vec<String>>,
    pub backend: Option<String>,
    pub data_root: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub concurrency: Option<usize>,
    pub null_context: Option<String>,
    pub copa_connective: Option<String>,
}

#[derive(Debug)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub backend: BackendSpec,
    pub cache_dir: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn parse_list<T: FromStr>(values: &[String]) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    values
        .iter()
        .flat_map(|v| v.split(','))
        .filter(|v| !v.trim().is_empty())
        .map(|v| v.trim().parse::<T>().map_err(|e| anyhow!("{e}")))
        .collect()
}

pub fn data_root(flag: Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
}

pub fn load_options(connective: Option<&str>) -> Result<LoadOptions> {
    let copa_connective = match connective {
        Some(c) => c.parse::<CopaConnective>().map_err(|e| anyhow!(e))?,
        None => CopaConnective::default(),
    };
    Ok(LoadOptions { copa_connective })
}

pub fn resolve_run(flags: RunFlags, file: FileConfig) -> Result<ResolvedRun> {
    let Some(model) = flags.model.or(file.model) else {
        bail!("--model is required");
    };
    let methods = flags.method.or(file.method).ok_or_else(|| anyhow!("--method is required"))?;
    let datasets = flags.dataset.or(file.dataset).ok_or_else(|| anyhow!("--dataset is required"))?;
    let backend = flags.backend.or(file.backend).ok_or_else(|| anyhow!("--backend is required"))?;
    let backend: BackendSpec = backend.parse().map_err(|e: String| anyhow!(e))?;

    let mut config = RunConfig::new(model, parse_list::<Method>(&methods)?, parse_list::<DatasetSource>(&datasets)?);
    config.data_root = data_root(flags.data_root.or(file.data_root));
    config.concurrency = flags.concurrency.or(file.concurrency).unwrap_or(DEFAULT_CONCURRENCY);
    config.templates = TemplateConfig::with_null_context(flags.null_context.or(file.null_context).unwrap_or_default());
    config.load = load_options(flags.copa_connective.or(file.copa_connective).as_deref())?;
    config.validate().map_err(|e| anyhow!(e))?;

    Ok(ResolvedRun {
        config,
        backend,
        cache_dir: flags.cache_dir.or(file.cache_dir),
        out: flags.out.or(file.out).unwrap_or_else(|| PathBuf::from("results")),
    })
}
