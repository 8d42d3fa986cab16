//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::audit::{
    parse_config, resolve_threads, with_threads, Audit, MultiRunOptions, RecordStore, RunConfig,
    RunRecord,
};
use crate::data::{partition_subgroups, Task};
use crate::error::{Error, Result};
use crate::estimators::ModelKind;
use crate::reporting::{self, Format};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "uqaudit", version, about = "Uncertainty and fairness auditing for tabular models")]
pub struct Cli {
    /// Output directory [default: ./uqaudit-out; `report` writes to <dir>/report]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: FormatArg,
    /// Worker threads (0 = one per core); overrides UQAUDIT_THREADS
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Fail J+aB when a train row has no out-of-bag member
    #[arg(long, global = true)]
    pub strict_oob: bool,
    /// Use the ceil(n(1-alpha)) conformal quantile without the finite-sample correction
    #[arg(long, global = true)]
    pub uncorrected_quantile: bool,
    /// Replace empty conformal prediction sets with the most probable label
    #[arg(long, global = true)]
    pub force_nonempty_sets: bool,
    /// Re-run every (seed, model) pair even if a record exists
    #[arg(long, global = true)]
    pub fresh: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the audit described by a config file and persist one record per run
    Audit { config: PathBuf },
    /// Build the report bundle from persisted records
    Report { dir: PathBuf },
    /// Evaluate split conformal coverage only
    Conformal { config: PathBuf },
    /// Print the interval method comparison table
    Compare { dir: PathBuf },
    /// Parse a config and dry-run its checks without fitting
    Validate { config: PathBuf },
}

const DEFAULT_OUT: &str = "./uqaudit-out";

fn exit_code(e: &Error) -> i32 {
    if e.is_user_error() {
        EXIT_USER
    } else {
        EXIT_RUNTIME
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USER
                }
            };
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let threads = resolve_threads(cli.threads)?;
    match &cli.command {
        Command::Audit { config } => cmd_audit(cli, config, threads, out),
        Command::Report { dir } => cmd_report(cli, dir, out),
        Command::Conformal { config } => cmd_conformal(cli, config, threads, out),
        Command::Compare { dir } => cmd_compare(cli, dir, out),
        Command::Validate { config } => cmd_validate(cli, config, out),
    }
}

fn load_config(cli: &Cli, path: &Path) -> Result<RunConfig> {
    let mut cfg = parse_config(path)?;
    let m = &mut cfg.methods;
    m.strict_oob |= cli.strict_oob;
    m.uncorrected_quantile |= cli.uncorrected_quantile;
    m.force_nonempty_sets |= cli.force_nonempty_sets;
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn cmd_audit(cli: &Cli, config: &Path, threads: usize, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(cli, config)?;
    let audit = Audit::new(cfg)?;
    let store = RecordStore::open(out_dir(cli))?;
    let opts = MultiRunOptions {
        resume: !cli.fresh,
        stop_after: None,
    };
    let outcome = with_threads(threads, || audit.run_multi_seed(&store, opts))??;
    writeln!(
        out,
        "{} runs: {} executed, {} resumed, {} failed; records in {}",
        outcome.records.len(),
        outcome.executed,
        outcome.skipped,
        outcome.failed,
        store.dir().display()
    )
    .map_err(io_err)?;
    for r in outcome.records.iter().filter(|r| !r.status.is_ok()) {
        if let crate::audit::RunStatus::Failed { stage, message } = &r.status {
            writeln!(out, "  failed {} [{stage}]: {message}", r.stem()).map_err(io_err)?;
        }
    }
    Ok(if outcome.failed > 0 { EXIT_RUNTIME } else { EXIT_OK })
}

fn load_records(dir: &Path) -> Result<(Vec<RunRecord>, Vec<Error>)> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory"),
        ));
    }
    let loaded = crate::audit::load_dir(dir)?;
    if loaded.records.is_empty() {
        return Err(Error::validation(format!(
            "no run records found in {}",
            dir.display()
        )));
    }
    Ok((loaded.records, loaded.errors))
}

fn cmd_report(cli: &Cli, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let (records, errors) = load_records(dir)?;
    let target = cli.out.clone().unwrap_or_else(|| dir.join("report"));
    let files = reporting::write_bundle(&records, &errors, &target, cli.format.into())?;
    for f in files {
        writeln!(out, "{}", f.display()).map_err(io_err)?;
    }
    Ok(if errors.is_empty() { EXIT_OK } else { EXIT_RUNTIME })
}

fn comparison_with_wall(records: &[RunRecord], format: Format) -> Result<Vec<u8>> {
    let rows = reporting::comparison_rows(records);
    let wall = reporting::method_wall_ms(records);
    match format {
        Format::Json => {
            let v: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    let mut o = serde_json::to_value(r).expect("row serializes");
                    o["wall_ms"] = wall
                        .get(&(r.model.clone(), r.seed, r.method.clone()))
                        .map_or(serde_json::Value::Null, |&w| w.into());
                    o
                })
                .collect();
            let mut b = serde_json::to_vec_pretty(&v).expect("rows serialize");
            b.push(b'\n');
            Ok(b)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "model", "seed", "method", "alpha", "n", "coverage", "mean_width", "unbounded",
                "fits", "wall_ms", "record",
            ])?;
            for r in &rows {
                let opt = |v: Option<f64>| v.map(reporting::fmt_value).unwrap_or_default();
                w.write_record([
                    r.model.clone(),
                    r.seed.to_string(),
                    r.method.clone(),
                    reporting::fmt_value(r.alpha),
                    r.n.to_string(),
                    opt(r.coverage),
                    opt(r.mean_width),
                    r.unbounded.to_string(),
                    r.fits.to_string(),
                    opt(wall.get(&(r.model.clone(), r.seed, r.method.clone())).copied()),
                    r.record.clone(),
                ])?;
            }
            w.into_inner()
                .map_err(|e| Error::validation(format!("csv buffer: {e}")))
        }
    }
}

fn cmd_compare(cli: &Cli, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let (records, errors) = load_records(dir)?;
    if records.iter().all(|r| r.methods.is_empty()) {
        return Err(Error::validation(
            "no interval method results in these records; enable one under `methods`",
        ));
    }
    let bytes = comparison_with_wall(&records, cli.format.into())?;
    if let Some(o) = &cli.out {
        std::fs::create_dir_all(o).map_err(|e| Error::io(o, e))?;
        let path = o.join(format!("method_comparison.{}", Format::from(cli.format).extension()));
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    }
    out.write_all(&bytes).map_err(io_err)?;
    Ok(if errors.is_empty() { EXIT_OK } else { EXIT_RUNTIME })
}

fn cmd_conformal(cli: &Cli, config: &Path, threads: usize, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = load_config(cli, config)?;
    if cfg.splits.calibration <= 0.0 {
        return Err(Error::config("conformal evaluation needs a nonzero splits.calibration fraction"));
    }
    let m = &mut cfg.methods;
    m.bootstrap_metrics = false;
    m.entropy = false;
    m.bootstrap_percentile.clear();
    m.jackknife_plus.clear();
    m.jab.clear();
    m.bias_source = crate::audit::BiasSource::SingleModel;
    if m.conformal.is_empty() {
        m.conformal.push(0.1);
    }
    let audit = Audit::new(cfg)?;
    let records: Vec<RunRecord> = with_threads(threads, || {
        use rayon::prelude::*;
        let jobs: Vec<(u64, String)> = audit
            .config()
            .seeds
            .iter()
            .flat_map(|&s| audit.config().models.iter().map(move |m| (s, m.name.clone())))
            .collect();
        jobs.par_iter()
            .map(|(s, m)| audit.run_single(m, *s))
            .collect::<Result<Vec<_>>>()
    })??;
    let bytes = comparison_with_wall(&records, cli.format.into())?;
    let dir = out_dir(cli);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("conformal.{}", Format::from(cli.format).extension()));
    std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    out.write_all(&bytes).map_err(io_err)?;
    let failed = records.iter().filter(|r| !r.status.is_ok()).count();
    Ok(if failed > 0 { EXIT_RUNTIME } else { EXIT_OK })
}

/// Dry-run checks that need the data but no fitting.
pub fn dry_run(audit: &Audit) -> Result<Vec<String>> {
    let cfg = audit.config();
    let mut notes = Vec::new();
    for &seed in &cfg.seeds {
        let split = audit.split_for(seed)?;
        let (n_train, n_test, n_cal) = (split.train.len(), split.test.len(), split.calibration.len());
        if n_train == 0 || n_test == 0 {
            return Err(Error::validation(format!(
                "seed {seed}: split leaves {n_train} train and {n_test} test rows"
            )));
        }
        if !cfg.methods.conformal.is_empty() && n_cal == 0 {
            return Err(Error::validation(format!("seed {seed}: calibration split is empty")));
        }
        let bag = (cfg.ensemble.fraction * n_train as f64).round() as usize;
        if cfg.methods.needs_ensemble() && bag == 0 {
            return Err(Error::validation(format!(
                "seed {seed}: bootstrap fraction {} of {n_train} train rows draws no rows",
                cfg.ensemble.fraction
            )));
        }
        for m in &cfg.models {
            if let ModelKind::Knn { k } = m.spec.kind {
                let smallest = if cfg.methods.needs_ensemble() { bag } else { n_train };
                let smallest = if cfg.methods.jackknife_plus.is_empty() {
                    smallest
                } else {
                    smallest.min(n_train - 1)
                };
                if k > smallest {
                    return Err(Error::validation(format!(
                        "model `{}`: k = {k} exceeds the {smallest} rows available to some fit",
                        m.name
                    )));
                }
            }
        }
        if cfg.schema.task == Task::BinaryClassification {
            let y = audit.dataset().targets_at(&split.train);
            if y.iter().all(|&v| v == y[0]) {
                notes.push(format!("seed {seed}: train split has a single class"));
            }
        }
        let part = partition_subgroups(audit.dataset(), &split.test, &cfg.subgroups)?;
        let sizes: Vec<String> = part
            .groups
            .iter()
            .map(|g| format!("{}={}", g.name, g.indices.len()))
            .collect();
        notes.push(format!(
            "seed {seed}: train {n_train}, test {n_test}, calibration {n_cal}; test subgroups {}",
            sizes.join(", ")
        ));
        for g in part.empty_groups() {
            notes.push(format!("seed {seed}: subgroup `{g}` is empty; its metrics will be undefined"));
        }
    }
    Ok(notes)
}

fn cmd_validate(cli: &Cli, config: &Path, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(cli, config)?;
    let audit = Audit::new(cfg)?;
    let notes = dry_run(&audit)?;
    let resolved = match cli.format {
        FormatArg::Csv => serde_yaml::to_string(audit.config())
            .map_err(|e| Error::validation(format!("cannot render config: {e}")))?,
        FormatArg::Json => {
            serde_json::to_string_pretty(audit.config()).expect("config serializes") + "\n"
        }
    };
    write!(out, "{resolved}").map_err(io_err)?;
    writeln!(out, "# rows: {}", audit.dataset().len()).map_err(io_err)?;
    writeln!(out, "# fingerprint: {}", audit.fingerprint()).map_err(io_err)?;
    for n in notes {
        writeln!(out, "# {n}").map_err(io_err)?;
    }
    writeln!(out, "# ok").map_err(io_err)?;
    Ok(EXIT_OK)
}
