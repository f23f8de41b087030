//! Result files.
//!
//! Every CSV starts with one `# {json}` line holding the [`Metadata`] of the
//! run that produced it, followed by an ordinary header and rows. JSON
//! documents carry the same block under a top-level `"meta"` key. Nothing
//! time- or host-dependent goes into either, so reruns are byte-identical.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Provenance of an output file: enough to regenerate it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub command: String,
    pub seed: u64,
    /// `--set KEY=VALUE` overrides in the order given.
    pub overrides: Vec<String>,
    pub config: Value,
}

/// Output directory that refuses to clobber existing files unless forced.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    force: bool,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>, force: bool) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root, force })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Fails with [`Error::Exists`] if any of `names` is already present.
    ///
    /// Commands call this for all their outputs before doing any work.
    pub fn check_writable(&self, names: &[&str]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        for name in names {
            let path = self.path(name);
            if path.exists() {
                return Err(Error::Exists(path));
            }
        }
        Ok(())
    }

    fn open(&self, name: &str) -> Result<BufWriter<File>> {
        self.check_writable(&[name])?;
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    pub fn write_csv<S: Serialize>(
        &self,
        name: &str,
        meta: &Metadata,
        rows: impl IntoIterator<Item = S>,
    ) -> Result<PathBuf> {
        let mut out = self.open(name)?;
        write_csv(&mut out, meta, rows)?;
        out.flush()?;
        Ok(self.path(name))
    }

    pub fn write_json<S: Serialize>(&self, name: &str, meta: &Metadata, value: &S) -> Result<PathBuf> {
        let mut out = self.open(name)?;
        write_json(&mut out, meta, value)?;
        out.flush()?;
        Ok(self.path(name))
    }
}

pub fn write_csv<W: Write, S: Serialize>(
    mut out: W,
    meta: &Metadata,
    rows: impl IntoIterator<Item = S>,
) -> Result<()> {
    writeln!(out, "# {}", serde_json::to_string(meta)?)?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `value` with `meta` inserted under `"meta"` when `value` is an object.
pub fn write_json<W: Write, S: Serialize>(mut out: W, meta: &Metadata, value: &S) -> Result<()> {
    let mut doc = serde_json::to_value(value)?;
    if let Value::Object(map) = &mut doc {
        map.insert("meta".into(), serde_json::to_value(meta)?);
    }
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out)?;
    Ok(())
}

/// Reads rows written by [`write_csv`], skipping the metadata line.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

/// Metadata line of a CSV written by [`write_csv`].
pub fn read_csv_metadata(path: &Path) -> Result<Option<Metadata>> {
    let text = fs::read_to_string(path)?;
    match text.lines().next().and_then(|l| l.strip_prefix("# ")) {
        Some(json) => Ok(Some(serde_json::from_str(json)?)),
        None => Ok(None),
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
