//! One JSON file per run record, plus a timings sidecar.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::{Error, Result};

use super::record::{RunRecord, StageTiming};

const TIMINGS_SUFFIX: &str = ".timings.json";

#[derive(Debug)]
pub struct RecordStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

#[derive(Debug, Default)]
pub struct LoadOutcome {
    pub records: Vec<RunRecord>,
    pub errors: Vec<Error>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl RecordStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<RecordStore> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(RecordStore {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn record_path(&self, dataset_id: &str, model: &str, seed: u64) -> PathBuf {
        self.dir
            .join(format!("{}.json", RunRecord::file_stem(dataset_id, model, seed)))
    }

    pub fn timings_path(&self, record: &RunRecord) -> PathBuf {
        self.dir.join(format!("{}{TIMINGS_SUFFIX}", record.stem()))
    }

    pub fn persist(&self, record: &RunRecord) -> Result<PathBuf> {
        let path = self.record_path(&record.dataset_id, &record.model, record.seed);
        let mut body = serde_json::to_vec_pretty(record).expect("record serializes");
        body.push(b'\n');
        let mut timings = serde_json::to_vec_pretty(&record.timings).expect("timings serialize");
        timings.push(b'\n');
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        write_atomic(&path, &body)?;
        write_atomic(&self.timings_path(record), &timings)?;
        Ok(path)
    }

    /// Reads one record and, when present, its timings sidecar.
    pub fn load_file(path: &Path) -> Result<RunRecord> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut record: RunRecord =
            serde_json::from_slice(&bytes).map_err(|e| Error::CorruptRecord {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let stem = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(".json"))
            .unwrap_or_default();
        let sidecar = path.with_file_name(format!("{stem}{TIMINGS_SUFFIX}"));
        if let Ok(t) = std::fs::read(&sidecar) {
            record.timings = serde_json::from_slice::<Vec<StageTiming>>(&t).unwrap_or_default();
        }
        Ok(record)
    }

    /// The previously persisted record for a run, if it parses.
    pub fn existing(&self, dataset_id: &str, model: &str, seed: u64) -> Option<RunRecord> {
        let path = self.record_path(dataset_id, model, seed);
        path.exists()
            .then(|| RecordStore::load_file(&path).ok())
            .flatten()
    }

    /// Every record in the directory, sorted by file name. A malformed file
    /// is reported by name without stopping the rest.
    pub fn load_all(&self) -> Result<LoadOutcome> {
        load_dir(&self.dir)
    }
}

pub fn load_dir(dir: &Path) -> Result<LoadOutcome> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| {
                    n.ends_with(".json") && !n.ends_with(TIMINGS_SUFFIX)
                })
        })
        .collect();
    paths.sort();
    let mut out = LoadOutcome::default();
    for p in paths {
        match RecordStore::load_file(&p) {
            Ok(r) => out.records.push(r),
            Err(e) => {
                log::warn!("{e}");
                out.errors.push(e)
            }
        }
    }
    Ok(out)
}
