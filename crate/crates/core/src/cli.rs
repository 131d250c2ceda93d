//! The `memreject` command line.
//!
//! Four subcommands: `audit` scores a generated set against a training set
//! and one or more held-out references, `threshold` prints the mean
//! leave-one-out nearest-neighbor distance of a training set, `hist` exports
//! a distance histogram and `train` runs the toy GAN with memorization
//! rejection.
//!
//! Every output file is written atomically once all computation has
//! succeeded. Exit codes: 0 on success, 1 on runtime or numerical failure,
//! 2 on usage errors and unreadable inputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::atomic::write_atomic;
use crate::embedding::{load_embeddings, EmbeddingSet, Format};
use crate::error::{Error, Result};
use crate::fid::{fid, FidReport};
use crate::memtest::{ct_score, CtReport, PartitionSpec};
use crate::nn::{histogram, histogram_csv, loo_mean_distance, nn_distance, DistanceSummary, Metric};
use crate::trainer::checkpoint::save_checkpoint;
use crate::trainer::dataset::{DEFAULT_N_TEST, DEFAULT_N_TRAIN, DEFAULT_SIGMA};
use crate::trainer::{log_csv, make_dataset, train, DatasetKind, TrainerConfig};

#[derive(Debug, Parser)]
#[command(name = "memreject", version, about = "Memorization audits and memorization-rejection training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a generated set for memorization and quality against references.
    Audit(AuditArgs),
    /// Print the mean nearest-neighbor distance within a training set.
    Threshold(ThresholdArgs),
    /// Write a histogram of query-to-reference nearest-neighbor distances.
    Hist(HistArgs),
    /// Train the toy GAN with memorization rejection.
    Train(TrainArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Read labels from the last column of CSV inputs.
    #[arg(long)]
    pub labeled: bool,
}

impl InputArgs {
    fn load(&self, path: &Path) -> Result<EmbeddingSet> {
        load_embeddings(path, Format::from_path(path, self.labeled))
    }
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long, value_name = "P")]
    pub train: PathBuf,
    /// One or more held-out reference sets, comma separated.
    #[arg(long, value_name = "P[,P...]", value_delimiter = ',', required = true)]
    pub test: Vec<PathBuf>,
    #[arg(long, value_name = "P")]
    pub gen: PathBuf,
    #[arg(long)]
    pub metric: Metric,
    /// `labels` or `kmeans:K`.
    #[arg(long, value_name = "SPEC")]
    pub cells: String,
    #[arg(long, value_name = "P")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[arg(long, value_name = "P")]
    pub train: PathBuf,
    #[arg(long)]
    pub metric: Metric,
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    #[arg(long, value_name = "P")]
    pub query: PathBuf,
    #[arg(long = "ref", value_name = "P")]
    pub reference: PathBuf,
    #[arg(long)]
    pub metric: Metric,
    #[arg(long, value_name = "W")]
    pub bin_width: f64,
    #[arg(long, value_name = "P")]
    pub out: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: DatasetKind,
    /// Rejection threshold. A value ending in `dbar` is a multiple of the
    /// training set's mean nearest-neighbor distance, e.g. `0.5dbar`.
    #[arg(long, value_name = "T", conflicts_with = "tau_sweep", required_unless_present = "tau_sweep")]
    pub tau: Option<TauSpec>,
    /// Comma-separated thresholds, one run each.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub tau_sweep: Option<Vec<TauSpec>>,
    #[arg(long, value_name = "N")]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "P")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_N_TRAIN)]
    pub n_train: usize,
    #[arg(long, default_value_t = DEFAULT_N_TEST)]
    pub n_test: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    pub sigma: f64,
    #[arg(long, value_name = "N", default_value_t = TrainerConfig::default().eval_every)]
    pub eval_every: u64,
}

/// A threshold given either absolutely or relative to the training set's
/// mean nearest-neighbor distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauSpec {
    Absolute(f64),
    TimesDbar(f64),
}

impl TauSpec {
    pub fn resolve(self, dbar: f64) -> f64 {
        match self {
            TauSpec::Absolute(t) => t,
            TauSpec::TimesDbar(m) => m * dbar,
        }
    }
}

impl std::str::FromStr for TauSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let (num, relative) = match s.strip_suffix("dbar") {
            Some(n) => (n, true),
            None => (s, false),
        };
        let v: f64 = num
            .parse()
            .map_err(|_| format!("invalid threshold {s:?}, expected a number or a multiple like 0.5dbar"))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(format!("threshold must be finite and non-negative, got {s:?}"));
        }
        Ok(if relative { TauSpec::TimesDbar(v) } else { TauSpec::Absolute(v) })
    }
}

impl std::fmt::Display for TauSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TauSpec::Absolute(t) => write!(f, "{t}"),
            TauSpec::TimesDbar(m) => write!(f, "{m}dbar"),
        }
    }
}

/// Exit status for an error: 2 for usage errors and unreadable inputs, 1
/// otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        e if e.is_usage() => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Audit(a) => cmd_audit(&a),
        Command::Threshold(a) => {
            println!("{:.6}", cmd_threshold(&a)?);
            Ok(())
        }
        Command::Hist(a) => cmd_hist(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
    }
}

/// Audit results against one held-out reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceAudit {
    pub test_path: PathBuf,
    pub ct: CtReport,
    pub fid: FidReport,
    /// Generated-to-train nearest-neighbor distances.
    pub gen_distances: DistanceSummary,
    /// Test-to-train nearest-neighbor distances.
    pub test_distances: DistanceSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub seed: u64,
    pub metric: Metric,
    pub cells: String,
    pub train_path: PathBuf,
    pub gen_path: PathBuf,
    pub references: Vec<ReferenceAudit>,
}

pub fn audit(a: &AuditArgs) -> Result<AuditReport> {
    for input in a.test.iter().chain([&a.train, &a.gen]) {
        if input == &a.out {
            return Err(Error::usage(format!("output {} would overwrite an input", a.out.display())));
        }
    }
    let spec = PartitionSpec::parse(&a.cells, a.seed)?;
    let train = a.input.load(&a.train)?;
    let gen = a.input.load(&a.gen)?;
    let tests = a.test.iter().map(|p| a.input.load(p)).collect::<Result<Vec<_>>>()?;
    let references = a
        .test
        .iter()
        .zip(&tests)
        .map(|(path, test)| {
            let ct = ct_score(&train, test, &gen, a.metric, spec)?;
            let gen_profile = nn_distance(&gen, &train, a.metric)?;
            let test_profile = nn_distance(test, &train, a.metric)?;
            Ok(ReferenceAudit {
                test_path: path.clone(),
                ct,
                fid: fid(&gen, test)?,
                gen_distances: gen_profile.summary(),
                test_distances: test_profile.summary(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AuditReport {
        seed: a.seed,
        metric: a.metric,
        cells: a.cells.clone(),
        train_path: a.train.clone(),
        gen_path: a.gen.clone(),
        references,
    })
}

fn cmd_audit(a: &AuditArgs) -> Result<()> {
    let report = audit(a)?;
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    write_atomic(&a.out, &json)
}

pub fn cmd_threshold(a: &ThresholdArgs) -> Result<f64> {
    loo_mean_distance(&a.input.load(&a.train)?, a.metric)
}

fn cmd_hist(a: &HistArgs) -> Result<()> {
    let query = a.input.load(&a.query)?;
    let reference = a.input.load(&a.reference)?;
    let profile = nn_distance(&query, &reference, a.metric)?;
    let bins = histogram(&profile.distances, a.bin_width)?;
    write_atomic(&a.out, histogram_csv(&bins).as_bytes())
}

/// Final metrics of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub tau: f64,
    pub final_fid: f64,
    pub final_ct: f64,
    pub final_mean_nn_dist: f64,
}

/// File stem shared by the checkpoint and metric log of one run.
pub fn run_stem(tau: f64) -> String {
    format!("tau_{tau}")
}

pub fn cmd_train(a: &TrainArgs) -> Result<Vec<SweepRow>> {
    let taus: Vec<TauSpec> = match (&a.tau, &a.tau_sweep) {
        (Some(t), None) => vec![*t],
        (None, Some(list)) if !list.is_empty() => list.clone(),
        _ => return Err(Error::usage("give exactly one of --tau or --tau-sweep")),
    };
    let data = make_dataset(a.dataset, a.n_train, a.n_test, a.sigma, a.seed)?;
    let base = TrainerConfig {
        total_steps: a.steps,
        seed: a.seed,
        eval_every: a.eval_every,
        ..Default::default()
    };
    let dbar = loo_mean_distance(&data.train, base.metric)?;
    let resolved: Vec<f64> = taus.iter().map(|t| t.resolve(dbar)).collect();
    for (i, t) in resolved.iter().enumerate() {
        if resolved[..i].contains(t) {
            return Err(Error::usage(format!("threshold {t} appears twice in the sweep")));
        }
    }
    let configs = resolved
        .iter()
        .map(|&tau| {
            let c = TrainerConfig { tau, ..base.clone() };
            c.validate().map(|_| c)
        })
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;

    let header = format!(
        "# seed={} dataset={} n_train={} n_test={} sigma={} steps={} dbar={}\n",
        a.seed, a.dataset, a.n_train, a.n_test, a.sigma, a.steps, dbar
    );
    let mut rows = Vec::new();
    for config in configs {
        let tau = config.tau;
        log::info!("training tau = {tau} ({} steps)", config.total_steps);
        let state = train(config, &data)?;
        let stem = run_stem(tau);
        save_checkpoint(&state, &a.out_dir.join(format!("{stem}.mrc")))?;
        let log_text = format!("{header}{}", log_csv(&state.log));
        write_atomic(&a.out_dir.join(format!("{stem}.log.csv")), log_text.as_bytes())?;
        let last = state.log.last().expect("training always logs the initial state");
        rows.push(SweepRow {
            tau,
            final_fid: last.fid,
            final_ct: last.ct,
            final_mean_nn_dist: last.mean_nn_dist,
        });
    }
    let mut summary = header;
    summary.push_str("tau,final_fid,final_ct,final_mean_nn_dist\n");
    for r in &rows {
        writeln!(summary, "{},{},{},{}", r.tau, r.final_fid, r.final_ct, r.final_mean_nn_dist).unwrap();
    }
    write_atomic(&a.out_dir.join("summary.csv"), summary.as_bytes())?;
    Ok(rows)
}
