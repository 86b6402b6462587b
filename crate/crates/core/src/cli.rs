//! Command-line interface. `main.rs` only parses arguments and maps the
//! outcome to an exit code; everything else lives here so it can be tested.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, CONFIG_VERSION};
use crate::error::{Error, Result};
use crate::evalbench::{
    build_sketch, err_metric, generate_dataset, mean_and_std_err, normalize_all, save_results,
    save_series, sort_records, trial_seed, ResultRecord, SketchType,
};
use crate::linalg::io::{load_dmat, save_dmat};
use crate::linalg::DenseMatrix;
use crate::sketch::io::{load_sketch, save_sketch};
use crate::theory::{generalization_gaps, random_profiles, verify_stable_rank_lemma};
use crate::verify::run_all;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PROPERTY: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "lowrank-sketch",
    version,
    about = "Learned sparse sketches for rank-k approximation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML). Built-in defaults are used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate datasets and write them as DMAT1 files.
    GenData,
    /// Train sketches on generated data.
    Train,
    /// Evaluate trained and random sketches on the test sets.
    Eval,
    /// Run the property checks.
    Verify,
    /// Write the m = 1 theory report.
    Theory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    PropertyFailure,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => EXIT_OK,
            Outcome::PropertyFailure => EXIT_PROPERTY,
        }
    }
}

pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_USAGE,
    }
}

/// Config with command-line overrides applied.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let cfg = resolve_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| run_command(cli.command, &cfg))
}

pub fn run_command(command: Command, cfg: &ExperimentConfig) -> Result<Outcome> {
    match command {
        Command::GenData => cmd_gen_data(cfg).map(|_| Outcome::Success),
        Command::Train => cmd_train(cfg).map(|_| Outcome::Success),
        Command::Eval => cmd_eval(cfg).map(|_| Outcome::Success),
        Command::Verify => cmd_verify(cfg),
        Command::Theory => cmd_theory(cfg).map(|_| Outcome::Success),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub datasets: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub label: String,
    /// Hex, since TOML integers are signed 64-bit.
    pub seed: String,
    pub n: usize,
    pub d: usize,
    /// Paths relative to the data directory.
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

fn seed_hex(seed: u64) -> String {
    format!("{seed:#018x}")
}

pub fn data_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.join("data")
}

pub fn manifest_path(cfg: &ExperimentConfig) -> PathBuf {
    data_dir(cfg).join("manifest.toml")
}

fn run_name(label: &str, k: usize, m: usize, sketch: SketchType, trial: usize) -> String {
    format!("{label}_k{k}_m{m}_{sketch}_t{trial}")
}

pub fn sketch_path(
    cfg: &ExperimentConfig,
    label: &str,
    k: usize,
    m: usize,
    sketch: SketchType,
    trial: usize,
) -> PathBuf {
    cfg.out
        .join("sketches")
        .join(format!("{}.skch", run_name(label, k, m, sketch, trial)))
}

pub fn report_path(
    cfg: &ExperimentConfig,
    label: &str,
    k: usize,
    m: usize,
    sketch: SketchType,
    trial: usize,
) -> PathBuf {
    cfg.out
        .join("reports")
        .join(format!("{}.csv", run_name(label, k, m, sketch, trial)))
}

fn write_set(dir: &Path, rel: &str, set: &[DenseMatrix]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir.join(rel))?;
    set.iter()
        .enumerate()
        .map(|(i, a)| {
            let p = PathBuf::from(rel).join(format!("{i:05}.dmat"));
            save_dmat(&dir.join(&p), a)?;
            Ok(p)
        })
        .collect()
}

/// Writes every dataset as DMAT1 files plus `data/manifest.toml`.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<Manifest> {
    let dir = data_dir(cfg);
    std::fs::create_dir_all(&dir)?;
    let mut entries = Vec::new();
    for spec in &cfg.datasets {
        let seeded = cfg.seeded_dataset(spec);
        let (train, test) = generate_dataset(&seeded)?;
        let (n, d) = train[0].shape();
        entries.push(ManifestEntry {
            label: spec.label.clone(),
            seed: seed_hex(seeded.seed),
            n,
            d,
            train: write_set(&dir, &format!("{}/train", spec.label), &train)?,
            test: write_set(&dir, &format!("{}/test", spec.label), &test)?,
        });
        log::info!(
            "{}: {} train, {} test matrices ({n}x{d})",
            spec.label,
            train.len(),
            test.len()
        );
    }
    let manifest = Manifest {
        version: CONFIG_VERSION,
        datasets: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(manifest_path(cfg), text)?;
    Ok(manifest)
}

pub fn load_manifest(cfg: &ExperimentConfig) -> Result<Manifest> {
    let path = manifest_path(cfg);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    toml::from_str(&std::fs::read_to_string(&path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Normalized train and test sets of dataset `label`, read back from disk.
pub fn load_data(
    cfg: &ExperimentConfig,
    manifest: &Manifest,
    label: &str,
) -> Result<(Vec<DenseMatrix>, Vec<DenseMatrix>)> {
    let entry = manifest
        .datasets
        .iter()
        .find(|e| e.label == label)
        .ok_or_else(|| {
            Error::Config(format!(
                "dataset {label} missing from manifest; run gen-data"
            ))
        })?;
    let spec = cfg
        .datasets
        .iter()
        .find(|s| s.label == label)
        .expect("label comes from config");
    if entry.seed != seed_hex(cfg.seeded_dataset(spec).seed) {
        return Err(Error::Config(format!(
            "dataset {label} was generated with a different seed; rerun gen-data"
        )));
    }
    let dir = data_dir(cfg);
    let read = |paths: &[PathBuf]| -> Result<Vec<DenseMatrix>> {
        paths.iter().map(|p| load_dmat(&dir.join(p))).collect()
    };
    Ok((
        normalize_all(&read(&entry.train)?)?,
        normalize_all(&read(&entry.test)?)?,
    ))
}

/// Trains every (dataset, k, m, trained sketch type, trial) combination.
/// Returns the written sketch paths.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let manifest = load_manifest(cfg)?;
    std::fs::create_dir_all(cfg.out.join("sketches"))?;
    std::fs::create_dir_all(cfg.out.join("reports"))?;
    let mut written = Vec::new();
    for spec in &cfg.datasets {
        let (train, _) = load_data(cfg, &manifest, &spec.label)?;
        for &[k, m] in &cfg.pairs {
            let tc = cfg.train_config(k);
            for &kind in cfg.sketches.iter().filter(|s| s.train_mode().is_some()) {
                for t in 0..cfg.trials {
                    let (sketch, report) =
                        build_sketch(kind, &train, m, &tc, trial_seed(tc.seed, t))?;
                    let sketch = sketch.as_sparse().expect("trained sketches are sparse");
                    let path = sketch_path(cfg, &spec.label, k, m, kind, t);
                    save_sketch(&path, sketch)?;
                    if let Some(r) = report {
                        r.save_csv(&report_path(cfg, &spec.label, k, m, kind, t))?;
                        log::info!(
                            "{} k={k} m={m} {kind} trial {t}: train loss {:.5} -> {:.5} in {:.1}s",
                            spec.label,
                            r.initial_loss,
                            r.final_loss,
                            r.wall_time
                        );
                    }
                    written.push(path);
                }
            }
        }
    }
    Ok(written)
}

/// Evaluates every configured sketch type; trained types are read from
/// disk, random types are regenerated from their seeds. Writes
/// `results.csv` and per-series plot data.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let mut records = Vec::new();
    let manifest = if cfg.sketches.is_empty() {
        None
    } else {
        Some(load_manifest(cfg)?)
    };
    for spec in cfg.datasets.iter().filter(|_| manifest.is_some()) {
        let (train, test) = load_data(cfg, manifest.as_ref().expect("checked"), &spec.label)?;
        for &[k, m] in &cfg.pairs {
            let tc = cfg.train_config(k);
            for &kind in &cfg.sketches {
                let mut errs = Vec::with_capacity(cfg.trials);
                for t in 0..cfg.trials {
                    let e = if kind.train_mode().is_some() {
                        let path = sketch_path(cfg, &spec.label, k, m, kind, t);
                        if !path.exists() {
                            return Err(Error::MissingFile(path));
                        }
                        err_metric(&test, &load_sketch(&path)?, k)?
                    } else {
                        build_sketch(kind, &train, m, &tc, trial_seed(tc.seed, t))?
                            .0
                            .err(&test, k)?
                    };
                    errs.push(e);
                }
                let (err, std_err) = mean_and_std_err(&errs);
                records.push(ResultRecord {
                    dataset: spec.label.clone(),
                    k,
                    m,
                    sketch: kind,
                    err,
                    std_err,
                    trials: cfg.trials,
                });
            }
        }
    }
    sort_records(&mut records);
    std::fs::create_dir_all(&cfg.out)?;
    save_results(&records, &cfg.out.join("results.csv"))?;
    write_plot_series(cfg, &records)?;
    Ok(records)
}

/// One `m,err` file per (dataset, k, sketch).
fn write_plot_series(cfg: &ExperimentConfig, records: &[ResultRecord]) -> Result<()> {
    if records.is_empty() {
        return Ok(());
    }
    let dir = cfg.out.join("plots");
    std::fs::create_dir_all(&dir)?;
    let mut keys: Vec<(&str, usize, SketchType)> = records
        .iter()
        .map(|r| (r.dataset.as_str(), r.k, r.sketch))
        .collect();
    keys.sort();
    keys.dedup();
    for (label, k, sketch) in keys {
        let points: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| r.dataset == label && r.k == k && r.sketch == sketch)
            .map(|r| (r.m as f64, r.err))
            .collect();
        save_series(
            &dir.join(format!("{label}_k{k}_{sketch}_err_vs_m.csv")),
            "m",
            "err",
            &points,
        )?;
    }
    Ok(())
}

/// Runs the property checks, prints one line per check and writes
/// `verify.txt`.
pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<Outcome> {
    let results = run_all(&cfg.verify, &cfg.theory, cfg.verify_seed())?;
    let text: String = results.iter().map(|r| format!("{r}\n")).collect();
    print!("{text}");
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("verify.txt"), &text)?;
    Ok(if results.iter().all(|r| r.passed) {
        Outcome::Success
    } else {
        Outcome::PropertyFailure
    })
}

pub const THEORY_HEADER: [&str; 6] = ["d", "stable_rank", "empirical_mean", "product", "n", "gap"];

/// Writes `theory.csv`: one row per random spectral profile (stable-rank
/// lemma) followed by one row per sample size (generalization gap).
pub fn cmd_theory(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let seed = cfg.verify_seed();
    let v = &cfg.verify;
    let profiles = random_profiles(v.stable_rank_profiles, seed)?;
    let check = verify_stable_rank_lemma(&profiles, v.stable_rank_samples, seed ^ 1)?;
    let gaps = generalization_gaps(
        &v.generalization_ns,
        v.generalization_splits,
        &cfg.theory,
        seed ^ 2,
    )?;

    std::fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join("theory.csv");
    let mut out = csv::Writer::from_path(&path)?;
    out.write_record(THEORY_HEADER)?;
    for p in &check.profiles {
        out.write_record([
            p.dim.to_string(),
            format!("{:.6}", p.stable_rank),
            format!("{:.6}", p.mean_simplified),
            format!("{:.6}", p.product),
            String::new(),
            String::new(),
        ])?;
    }
    for (n, gap) in &gaps {
        out.write_record([
            "2".to_string(),
            String::new(),
            String::new(),
            String::new(),
            n.to_string(),
            format!("{gap:.6}"),
        ])?;
    }
    out.flush()?;
    println!(
        "stable-rank lemma: min product {:.4} (bound {:.4}) over {} profiles",
        check.min_product,
        check.bound_constant,
        check.profiles.len()
    );
    for (n, gap) in &gaps {
        println!("generalization: N={n} mean |gap| {gap:.5}");
    }
    Ok(path)
}
