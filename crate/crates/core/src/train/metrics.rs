//! Per-epoch metrics CSV.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,val_dice_mean,lr,wall_seconds";

/// One completed epoch. Epochs are numbered from 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice_mean: f64,
    pub lr: f32,
    pub wall_seconds: f64,
}

impl EpochRecord {
    /// The record without its timing column, for run-to-run comparison.
    pub fn without_timing(mut self) -> Self {
        self.wall_seconds = 0.0;
        self
    }
}

fn encode_row(r: &EpochRecord) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(r).map_err(|e| Error::Format(format!("metrics row: {e}")))?;
    w.into_inner().map_err(|e| Error::Format(format!("metrics row: {e}")))
}

/// Appends rows, flushing and syncing each so a crash loses at most the
/// epoch in progress.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
}

impl MetricsWriter {
    /// Starts a fresh file containing only the header.
    pub fn create(path: &Path) -> Result<Self> {
        Self::rewrite(path, &[])
    }

    /// Replaces the file with the header and `rows`, then appends after them.
    pub fn rewrite(path: &Path, rows: &[EpochRecord]) -> Result<Self> {
        let mut bytes = format!("{METRICS_HEADER}\n").into_bytes();
        for r in rows {
            bytes.extend(encode_row(r)?);
        }
        write_atomic(path, &bytes)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, r: &EpochRecord) -> Result<()> {
        self.file.write_all(&encode_row(r)?)?;
        self.file.flush()?;
        self.file.sync_data()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Parses a metrics CSV. A missing or wrong header is a format error; a
/// header with no rows yields an empty list.
pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_metrics(&text)
}

pub fn parse_metrics(text: &str) -> Result<Vec<EpochRecord>> {
    let header = text.lines().next().unwrap_or("").trim_end_matches('\r');
    if header != METRICS_HEADER {
        return Err(Error::Format(format!("metrics header {header:?}, expected {METRICS_HEADER:?}")));
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Format(format!("metrics row: {e}"))))
        .collect()
}
