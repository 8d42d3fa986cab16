//! Audit orchestration: configuration, per-run pipeline, multi-seed
//! execution and persistence.

mod config;
mod pipeline;
mod record;
mod store;

use rayon::prelude::*;

use crate::error::{Error, Result};

pub use config::{
    parse_config, BiasSource, DatasetConfig, EnsembleConfig, MethodsConfig, ModelEntry,
    ReportConfig, RunConfig,
};
pub use pipeline::{audit_from_path, Audit};
pub use record::{
    MethodSummary, RegionRecord, RunRecord, RunStatus, SplitSizes, StageTiming,
    RECORD_SCHEMA_VERSION,
};
pub use store::{load_dir, LoadOutcome, RecordStore};

pub const THREADS_ENV: &str = "UQAUDIT_THREADS";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MultiRunOptions {
    /// Skip runs whose successful record is already on disk.
    pub resume: bool,
    /// Stop after this many newly executed runs (runs then execute one at
    /// a time, in order).
    pub stop_after: Option<usize>,
}

#[derive(Debug, Default)]
pub struct MultiRunOutcome {
    /// Records for every executed or resumed run, in seed-major order.
    pub records: Vec<RunRecord>,
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
}

impl Audit {
    /// Runs every (seed, model) pair, persisting each record as soon as it
    /// completes.
    pub fn run_multi_seed(&self, store: &RecordStore, opts: MultiRunOptions) -> Result<MultiRunOutcome> {
        let cfg = self.config();
        let jobs: Vec<(u64, &str)> = cfg
            .seeds
            .iter()
            .flat_map(|&s| cfg.models.iter().map(move |m| (s, m.name.as_str())))
            .collect();

        let mut slots: Vec<Option<RunRecord>> = vec![None; jobs.len()];
        let mut pending = Vec::new();
        for (i, &(seed, model)) in jobs.iter().enumerate() {
            let prior = opts
                .resume
                .then(|| store.existing(&cfg.dataset.id, model, seed))
                .flatten()
                .filter(|r| r.status.is_ok() && r.config_fingerprint == self.fingerprint());
            match prior {
                Some(r) => slots[i] = Some(r),
                None => pending.push(i),
            }
        }
        let skipped = jobs.len() - pending.len();
        if let Some(limit) = opts.stop_after {
            pending.truncate(limit);
        }

        let run = |i: usize| -> Result<(usize, RunRecord)> {
            let (seed, model) = jobs[i];
            let record = self.run_single(model, seed)?;
            store.persist(&record)?;
            Ok((i, record))
        };
        let done: Vec<(usize, RunRecord)> = if opts.stop_after.is_some() {
            pending.iter().map(|&i| run(i)).collect::<Result<_>>()?
        } else {
            pending.par_iter().map(|&i| run(i)).collect::<Result<_>>()?
        };

        let executed = done.len();
        let failed = done.iter().filter(|(_, r)| !r.status.is_ok()).count();
        for (i, r) in done {
            slots[i] = Some(r);
        }
        Ok(MultiRunOutcome {
            records: slots.into_iter().flatten().collect(),
            executed,
            skipped,
            failed,
        })
    }
}

/// Thread count from an explicit value, else `UQAUDIT_THREADS`, else the
/// rayon default (0).
pub fn resolve_threads(explicit: Option<usize>) -> Result<usize> {
    if let Some(n) = explicit {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v.trim().parse().map_err(|_| {
            Error::config(format!("{THREADS_ENV}={v} is not a thread count"))
        }),
        _ => Ok(0),
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = one per core).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot start thread pool: {e}")))?;
    Ok(pool.install(f))
}
