//! Downloads the official dev releases into the data-root layout the loaders
//! expect, pinning every file's SHA-256 in `<data-root>/checksums.sha256`.
//!
//! The first fetch records checksums; later fetches and `--verify` compare
//! against them and refuse files that changed.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use flate2::read::GzDecoder;
use mcq_eval::DatasetId;
use sha2::{Digest, Sha256};

pub const LOCK_FILE: &str = "checksums.sha256";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Archive {
    Plain,
    Zip,
    TarGz,
}

/// A release download and the files taken from it.
#[derive(Debug, Clone, Copy)]
pub struct Source {
    pub url: &'static str,
    pub archive: Archive,
    /// `(path suffix inside the archive, destination under the data root)`.
    pub files: &'static [(&'static str, &'static str)],
}

pub fn sources(dataset: DatasetId) -> &'static [Source] {
    match dataset {
        DatasetId::Copa => &[Source {
            url: "https://people.ict.usc.edu/~gordon/downloads/COPA-resources.tgz",
            archive: Archive::TarGz,
            files: &[("copa-dev.xml", "copa/copa-dev.xml")],
        }],
        DatasetId::Csqa => &[Source {
            url: "https://s3.amazonaws.com/commensenseqa/dev_rand_split.jsonl",
            archive: Archive::Plain,
            files: &[("", "csqa/dev_rand_split.jsonl")],
        }],
        DatasetId::Obqa => &[Source {
            url: "https://ai2-public-datasets.s3.amazonaws.com/open-book-qa/OpenBookQA-V1-Sep2018.zip",
            archive: Archive::Zip,
            files: &[("Data/Main/dev.jsonl", "obqa/dev.jsonl")],
        }],
        DatasetId::Piqa => &[
            Source {
                url: "https://yonatanbisk.com/piqa/data/valid.jsonl",
                archive: Archive::Plain,
                files: &[("", "piqa/valid.jsonl")],
            },
            Source {
                url: "https://yonatanbisk.com/piqa/data/valid-labels.lst",
                archive: Archive::Plain,
                files: &[("", "piqa/valid-labels.lst")],
            },
        ],
        DatasetId::Siqa => &[Source {
            url: "https://storage.googleapis.com/ai2-mosaic/public/socialiqa/socialiqa-train-dev.zip",
            archive: Archive::Zip,
            files: &[("/dev.jsonl", "siqa/dev.jsonl"), ("/dev-labels.lst", "siqa/dev-labels.lst")],
        }],
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `sha256sum`-style lock file: `<hex>  <relative path>` per line.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Lockfile {
    entries: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pin {
    Recorded,
    Verified,
}

impl Lockfile {
    pub fn load(data_root: &Path) -> Result<Self> {
        let path = data_root.join(LOCK_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
        };
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (hash, file) = line
                .split_once("  ")
                .ok_or_else(|| anyhow!("{}:{}: expected `<sha256>  <path>`", path.display(), n + 1))?;
            entries.insert(file.trim().to_string(), hash.trim().to_ascii_lowercase());
        }
        Ok(Self { entries })
    }

    pub fn save(&self, data_root: &Path) -> Result<()> {
        let body: String = self.entries.iter().map(|(file, hash)| format!("{hash}  {file}\n")).collect();
        fs::write(data_root.join(LOCK_FILE), body).context("writing checksum lock file")
    }

    pub fn get(&self, rel: &str) -> Option<&str> {
        self.entries.get(rel).map(String::as_str)
    }

    /// Checks `bytes` against the pinned hash, pinning it if none exists.
    pub fn check(&mut self, rel: &str, bytes: &[u8]) -> Result<Pin> {
        let actual = sha256_hex(bytes);
        match self.entries.get(rel) {
            Some(expected) if *expected == actual => Ok(Pin::Verified),
            Some(expected) => bail!("checksum mismatch for {rel}: expected {expected}, got {actual}"),
            None => {
                self.entries.insert(rel.to_string(), actual);
                Ok(Pin::Recorded)
            }
        }
    }
}

fn download(url: &str) -> Result<Vec<u8>> {
    log::info!("downloading {url}");
    let mut resp = ureq::get(url).call().with_context(|| format!("GET {url}"))?;
    let mut bytes = Vec::new();
    resp.body_mut()
        .with_config()
        .limit(1 << 30)
        .reader()
        .read_to_end(&mut bytes)
        .with_context(|| format!("reading {url}"))?;
    Ok(bytes)
}

/// Pulls the single member whose path ends with `suffix` out of an archive.
pub fn extract(archive: Archive, bytes: &[u8], suffix: &str) -> Result<Vec<u8>> {
    let mut found: Vec<(String, Vec<u8>)> = Vec::new();
    match archive {
        Archive::Plain => return Ok(bytes.to_vec()),
        Archive::Zip => {
            let mut zip = zip::ZipArchive::new(Cursor::new(bytes)).context("opening zip archive")?;
            for i in 0..zip.len() {
                let mut file = zip.by_index(i)?;
                if file.is_file() && file.name().ends_with(suffix) {
                    let mut buf = Vec::new();
                    file.read_to_end(&mut buf)?;
                    found.push((file.name().to_string(), buf));
                }
            }
        }
        Archive::TarGz => {
            let mut tar = tar::Archive::new(GzDecoder::new(bytes));
            for entry in tar.entries().context("opening tar.gz archive")? {
                let mut entry = entry?;
                let name = entry.path()?.to_string_lossy().into_owned();
                if entry.header().entry_type().is_file() && name.ends_with(suffix) {
                    let mut buf = Vec::new();
                    entry.read_to_end(&mut buf)?;
                    found.push((name, buf));
                }
            }
        }
    }
    match found.len() {
        1 => Ok(found.pop().unwrap().1),
        0 => bail!("no archive member ends with `{suffix}`"),
        _ => bail!(
            "several archive members end with `{suffix}`: {}",
            found.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(", ")
        ),
    }
}

/// Writes one source's files under `data_root`, checking the lock file.
pub fn install(source: &Source, bytes: &[u8], data_root: &Path, lock: &mut Lockfile) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (suffix, rel) in source.files {
        let content = extract(source.archive, bytes, suffix).with_context(|| format!("extracting {rel}"))?;
        let pin = lock.check(rel, &content)?;
        let dest = data_root.join(rel);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&dest, &content).with_context(|| format!("writing {}", dest.display()))?;
        log::info!("{rel}: {}", if pin == Pin::Recorded { "checksum recorded" } else { "checksum verified" });
        written.push(dest);
    }
    Ok(written)
}

pub fn fetch(dataset: DatasetId, data_root: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(data_root)?;
    let mut lock = Lockfile::load(data_root)?;
    let mut written = Vec::new();
    for source in sources(dataset) {
        let bytes = download(source.url)?;
        let result = install(source, &bytes, data_root, &mut lock);
        lock.save(data_root)?;
        written.extend(result?);
    }
    Ok(written)
}

/// Verifies files already on disk against the lock file.
pub fn verify(dataset: DatasetId, data_root: &Path) -> Result<()> {
    let lock = Lockfile::load(data_root)?;
    for rel in dataset.release_files() {
        let expected = lock.get(rel).ok_or_else(|| anyhow!("{rel} has no recorded checksum"))?;
        let bytes = fs::read(data_root.join(rel)).with_context(|| format!("reading {rel}"))?;
        let actual = sha256_hex(&bytes);
        if actual != expected {
            bail!("checksum mismatch for {rel}: expected {expected}, got {actual}");
        }
    }
    Ok(())
}
