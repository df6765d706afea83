//! Append-only run records: `records.csv`, `records.jsonl` and `timings.csv`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::RunRecord;

pub const RECORDS_CSV: &str = "records.csv";
pub const RECORDS_JSONL: &str = "records.jsonl";
pub const TIMINGS_CSV: &str = "timings.csv";

struct Sink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Sink {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, out: BufWriter::new(file) })
    }

    /// Writes one line and flushes so a crash loses at most the current epoch.
    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub struct RecordWriter {
    csv: Sink,
    jsonl: Sink,
    timings: Sink,
}

impl RecordWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        let mut w = Self {
            csv: Sink::create(dir.join(RECORDS_CSV))?,
            jsonl: Sink::create(dir.join(RECORDS_JSONL))?,
            timings: Sink::create(dir.join(TIMINGS_CSV))?,
        };
        w.csv.line(&RunRecord::CSV_COLUMNS.join(","))?;
        w.timings.line("epoch,wall_seconds")?;
        Ok(w)
    }

    pub fn append(&mut self, record: &RunRecord) -> Result<()> {
        self.csv.line(&record.csv_row())?;
        self.jsonl.line(&serde_json::to_string(record)?)?;
        self.timings.line(&format!("{},{:.3}", record.epoch, record.wall_seconds))
    }
}

/// Reads `records.jsonl` back.
pub fn read_jsonl(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
