//! GAN training with memorization rejection.
//!
//! Each outer step updates the discriminator `d_steps_per_g` times on a real
//! minibatch (drawn uniformly with replacement from the training set) and an
//! unfiltered fake minibatch, then updates the generator once on a batch
//! assembled by [`rejection_sample`]. Only generator updates see rejection;
//! evaluation always samples the generator directly.
//!
//! The whole loop runs on a single owned ChaCha stream, so a seed and a
//! config determine every parameter and every logged number. Evaluation
//! draws from its own stream keyed by the step, so changing `eval_every`
//! does not perturb training.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::fid::{frechet_distance, gaussian_stats, FidReport, GaussianStats};
use crate::memtest::{ct_from_distances, kmeans, CellPartition, CtReport, Kmeans, PartitionKind};
use crate::nn::{nn_distance, DistanceProfile, Metric, NnIndex};

use super::adam::Adam;
use super::dataset::{DatasetKind, ToyDataset};
use super::loss::{discriminator_loss, generator_loss, Workspace};
use super::mlp::Mlp;
use super::rejection::{draw_latent, rejection_sample, Generator};

pub const LATENT_DIM: usize = 2;
pub const DATA_DIM: usize = 2;
const TRAIN_STREAM: u64 = 10;
const EVAL_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    /// Rejection threshold; generator-update samples need distance > tau.
    pub tau: f64,
    pub metric: Metric,
    pub batch_size: usize,
    /// Number of generator updates.
    pub total_steps: u64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub d_steps_per_g: usize,
    pub max_rejection_retries: usize,
    pub seed: u64,
    pub eval_every: u64,
    /// Generator samples drawn for each metric-log entry.
    pub eval_samples: usize,
    /// When false the generator is trained on plain samples (no rejection
    /// code runs at all).
    pub rejection: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            tau: 0.0,
            metric: Metric::Euclidean,
            batch_size: 64,
            total_steps: 20_000,
            lr: 0.0002,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            d_steps_per_g: 5,
            max_rejection_retries: 100,
            seed: 0,
            eval_every: 1000,
            eval_samples: 2000,
            rejection: true,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::usage(m.to_string()));
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad("tau must be a finite non-negative number");
        }
        if self.metric == Metric::Cosine && self.tau >= 2.0 {
            return bad("tau must be below 2 under the cosine metric");
        }
        if self.batch_size == 0 || self.d_steps_per_g == 0 || self.max_rejection_retries == 0 {
            return bad("batch size, discriminator steps and retries must be positive");
        }
        if self.eval_every == 0 || self.eval_samples < 2 {
            return bad("eval_every must be positive and eval_samples at least 2");
        }
        if !(self.lr > 0.0 && (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return bad("learning rate must be positive and Adam betas in [0, 1)");
        }
        Ok(())
    }
}

/// One metric-log row. Rejection figures cover the interval since the
/// previous row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub fid: f64,
    pub ct: f64,
    pub mean_nn_dist: f64,
    pub rejection_rate: f64,
    pub fallback_count: u64,
}

pub const LOG_HEADER: &str = "step,fid,ct,mean_nn_dist,rejection_rate,fallback_count";

/// CSV rendering of a metric log (header plus one row per entry).
pub fn log_csv(log: &[LogEntry]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for e in log {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.step, e.fid, e.ct, e.mean_nn_dist, e.rejection_rate, e.fallback_count
        )
        .unwrap();
    }
    out
}

/// Running totals of the rejection sampler.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounters {
    /// Candidates drawn during generator updates.
    pub draws: u64,
    pub rejected: u64,
    pub fallbacks: u64,
    /// Samples that reached a generator update.
    pub generator_samples: u64,
    /// Generator-update samples with distance ≤ tau that were not logged
    /// fallbacks. Always zero unless the sampler is broken.
    pub violations: u64,
}

/// Parameters, optimizer buffers, RNG and metric log of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub config: TrainerConfig,
    pub step: u64,
    pub generator: Mlp,
    pub discriminator: Mlp,
    pub g_opt: Adam,
    pub d_opt: Adam,
    pub log: Vec<LogEntry>,
    pub counters: RejectionCounters,
    /// Counters at the time of the last log entry.
    pub logged_counters: RejectionCounters,
    pub rng: ChaCha8Rng,
}

/// Precomputed reference-side quantities for evaluating generated sets
/// against one dataset.
#[derive(Debug, Clone)]
pub struct Evaluator {
    kind: DatasetKind,
    metric: Metric,
    train_name: String,
    index: NnIndex,
    test_profile: DistanceProfile,
    test_stats: GaussianStats,
    test_cells: Vec<usize>,
    cells: CellModel,
}

#[derive(Debug, Clone)]
enum CellModel {
    Centers(usize),
    Kmeans(Kmeans),
}

pub const MOONS_CELLS: usize = 8;

/// Result of evaluating one generated set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub fid: FidReport,
    pub ct: CtReport,
    pub gen_profile: DistanceProfile,
    pub test_profile: DistanceProfile,
}

impl Evaluator {
    /// Cells are the Voronoi regions of the mixture centers for ring8 and
    /// grid25, applied alike to test and generated points, and k-means cells
    /// fit on the test set for two moons.
    pub fn new(data: &ToyDataset, metric: Metric) -> Result<Self> {
        let index = NnIndex::new(&data.train, metric)?;
        let test_profile = nn_distance(&data.test, &data.train, metric)?;
        let test_stats = gaussian_stats(&data.test)?;
        let (cells, test_cells) = match data.kind {
            DatasetKind::TwoMoons => {
                let km = kmeans(&data.test, MOONS_CELLS.min(data.test.len()), data.seed)?;
                let a = km.assignments.clone();
                (CellModel::Kmeans(km), a)
            }
            kind => {
                let n = kind.centers().len();
                let a = data
                    .test
                    .rows()
                    .map(|r| kind.nearest_center(r).unwrap() as usize)
                    .collect();
                (CellModel::Centers(n), a)
            }
        };
        Ok(Evaluator {
            kind: data.kind,
            metric,
            train_name: data.train.name().to_string(),
            index,
            test_profile,
            test_stats,
            test_cells,
            cells,
        })
    }

    pub fn test_profile(&self) -> &DistanceProfile {
        &self.test_profile
    }

    pub fn evaluate_samples(&self, gen: &EmbeddingSet) -> Result<EvalReport> {
        if gen.dims() != self.index.dims() {
            return Err(Error::DimensionMismatch(gen.dims(), self.index.dims()));
        }
        let (num_cells, cell_of_gen, kind) = match &self.cells {
            CellModel::Centers(n) => (
                *n,
                gen.rows()
                    .map(|r| self.kind.nearest_center(r).unwrap() as usize)
                    .collect(),
                PartitionKind::ByLabel,
            ),
            CellModel::Kmeans(km) => (km.k, gen.rows().map(|r| km.assign(r)).collect(), PartitionKind::Kmeans),
        };
        let partition = CellPartition {
            kind,
            cell_of_test: self.test_cells.clone(),
            cell_of_gen,
            num_cells,
            centroids: None,
        };
        let mut buf = vec![0.0; gen.dims()];
        let (nn_indices, distances): (Vec<usize>, Vec<f64>) = gen
            .rows()
            .map(|r| {
                for (b, &v) in buf.iter_mut().zip(r) {
                    *b = f64::from(v);
                }
                self.index.nearest(&buf)
            })
            .unzip();
        let gen_profile = DistanceProfile {
            query_name: gen.name().to_string(),
            reference_name: self.train_name.clone(),
            metric: self.metric,
            distances,
            nn_indices,
        };
        let (ct, cells, dropped_cells) =
            ct_from_distances(&self.test_profile.distances, &gen_profile.distances, &partition)?;
        let fid = frechet_distance(&gaussian_stats(gen)?, &self.test_stats)?;
        Ok(EvalReport {
            fid,
            ct: CtReport {
                ct,
                metric: self.metric,
                train_name: self.train_name.clone(),
                test_name: self.test_profile.query_name.clone(),
                gen_name: gen.name().to_string(),
                cells,
                dropped_cells,
            },
            gen_profile,
            test_profile: self.test_profile.clone(),
        })
    }
}

/// Draws `n` samples from `g` without rejection.
pub fn sample_generator<G: Generator, R: Rng>(g: &G, n: usize, rng: &mut R) -> Result<EmbeddingSet> {
    let z = draw_latent(rng, n, g.latent_dim());
    let x = g.generate(&z);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("generator produced a non-finite sample".into()));
    }
    EmbeddingSet::new("generated", n, g.output_dim(), x.iter().map(|&v| v as f32).collect(), None)
}

fn eval_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_SEED_MIX);
    rng.set_stream(step);
    rng
}

/// Samples `n_samples` points from the generator (no rejection) and scores
/// them against the dataset.
pub fn evaluate(state: &TrainerState, data: &ToyDataset, n_samples: usize) -> Result<EvalReport> {
    if n_samples < 2 {
        return Err(Error::usage(format!("evaluation needs at least 2 samples, got {n_samples}")));
    }
    let evaluator = Evaluator::new(data, state.config.metric)?;
    state.evaluate_with(&evaluator, n_samples)
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl TrainerState {
    /// Freshly initialized networks and optimizers; the log is empty.
    pub fn new(config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(TRAIN_STREAM);
        let generator = Mlp::new(LATENT_DIM, DATA_DIM, &mut rng);
        let discriminator = Mlp::new(DATA_DIM, 1, &mut rng);
        let g_opt = Adam::new(generator.num_params(), config.lr, config.adam_beta1, config.adam_beta2);
        let d_opt = Adam::new(discriminator.num_params(), config.lr, config.adam_beta1, config.adam_beta2);
        Ok(TrainerState {
            config,
            step: 0,
            generator,
            discriminator,
            g_opt,
            d_opt,
            log: Vec::new(),
            counters: RejectionCounters::default(),
            logged_counters: RejectionCounters::default(),
            rng,
        })
    }

    pub fn evaluate_with(&self, evaluator: &Evaluator, n_samples: usize) -> Result<EvalReport> {
        let mut rng = eval_rng(self.config.seed, self.step);
        let gen = sample_generator(&self.generator, n_samples, &mut rng)?;
        evaluator.evaluate_samples(&gen)
    }

    fn push_log(&mut self, evaluator: &Evaluator) -> Result<()> {
        let report = self.evaluate_with(evaluator, self.config.eval_samples)?;
        let since = RejectionCounters {
            draws: self.counters.draws - self.logged_counters.draws,
            rejected: self.counters.rejected - self.logged_counters.rejected,
            fallbacks: self.counters.fallbacks - self.logged_counters.fallbacks,
            ..Default::default()
        };
        self.log.push(LogEntry {
            step: self.step,
            fid: report.fid.fid,
            ct: report.ct.ct,
            mean_nn_dist: report.gen_profile.mean(),
            rejection_rate: if since.draws > 0 {
                since.rejected as f64 / since.draws as f64
            } else {
                0.0
            },
            fallback_count: since.fallbacks,
        });
        self.logged_counters = self.counters;
        Ok(())
    }

    /// Runs until `config.total_steps` generator updates have been made.
    ///
    /// On failure the state is left at the last completed step.
    pub fn run(&mut self, data: &ToyDataset) -> Result<()> {
        if data.train.dims() != DATA_DIM {
            return Err(Error::DimensionMismatch(data.train.dims(), DATA_DIM));
        }
        let evaluator = Evaluator::new(data, self.config.metric)?;
        let index = NnIndex::new(&data.train, self.config.metric)?;
        let train: Vec<f64> = data.train.as_slice().iter().map(|&v| f64::from(v)).collect();
        if self.log.is_empty() {
            self.push_log(&evaluator)?;
        }
        let mut ws = Workspace::default();
        let mut d_grad = vec![0.0; self.discriminator.num_params()];
        let mut g_grad = vec![0.0; self.generator.num_params()];
        let mut real = Vec::with_capacity(self.config.batch_size * DATA_DIM);
        while self.step < self.config.total_steps {
            self.outer_step(&train, &index, &mut ws, &mut d_grad, &mut g_grad, &mut real)?;
            if self.step % self.config.eval_every == 0 || self.step == self.config.total_steps {
                self.push_log(&evaluator)?;
            }
        }
        Ok(())
    }

    fn outer_step(
        &mut self,
        train: &[f64],
        index: &NnIndex,
        ws: &mut Workspace,
        d_grad: &mut [f64],
        g_grad: &mut [f64],
        real: &mut Vec<f64>,
    ) -> Result<()> {
        let cfg = &self.config;
        let b = cfg.batch_size;
        let n_train = train.len() / DATA_DIM;
        let next_step = self.step + 1;
        let diverged = |message: String| Error::Diverged {
            step: next_step,
            message,
        };

        // Work on copies so a failure leaves the state at the last good step.
        let mut d = self.discriminator.clone();
        let mut d_opt = self.d_opt.clone();
        let mut rng = self.rng.clone();
        for _ in 0..cfg.d_steps_per_g {
            real.clear();
            for _ in 0..b {
                let i = rng.gen_range(0..n_train);
                real.extend_from_slice(&train[i * DATA_DIM..(i + 1) * DATA_DIM]);
            }
            let z = draw_latent(&mut rng, b, LATENT_DIM);
            let fake = self.generator.forward(&z);
            d_grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = discriminator_loss(&d, real, &fake, d_grad, ws);
            if !loss.is_finite() || !all_finite(d_grad) {
                return Err(diverged(format!("discriminator loss {loss}")));
            }
            d_opt.step(&mut d.params, d_grad);
        }

        let mut counters = self.counters;
        let z = if cfg.rejection {
            let batch = rejection_sample(cfg.tau, &self.generator, index, cfg.max_rejection_retries, b, &mut rng);
            counters.draws += batch.draws as u64;
            counters.rejected += batch.retries_used as u64;
            counters.fallbacks += batch.fallback_count as u64;
            Some(batch)
        } else {
            None
        };
        let (z, fallback) = match &z {
            Some(batch) => (batch.z.clone(), Some(&batch.fallback)),
            None => (draw_latent(&mut rng, b, LATENT_DIM), None),
        };
        g_grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = generator_loss(&self.generator, &d, &z, g_grad, None, ws);
        if !loss.is_finite() || !all_finite(g_grad) {
            return Err(diverged(format!("generator loss {loss}")));
        }
        counters.generator_samples += b as u64;
        if let Some(fallback) = fallback {
            // independent re-check of what the generator is updated on
            for (x, &fb) in ws.g_tape.out.chunks_exact(DATA_DIM).zip(fallback) {
                if !fb && index.nearest(x).1 <= cfg.tau {
                    counters.violations += 1;
                }
            }
        }
        let mut g = self.generator.clone();
        let mut g_opt = self.g_opt.clone();
        g_opt.step(&mut g.params, g_grad);
        if !g.is_finite() || !d.is_finite() {
            return Err(diverged("non-finite parameters".into()));
        }

        self.generator = g;
        self.g_opt = g_opt;
        self.discriminator = d;
        self.d_opt = d_opt;
        self.rng = rng;
        self.counters = counters;
        self.step = next_step;
        Ok(())
    }

    /// Fraction of generator-update samples that were fallbacks after
    /// `warmup` steps, read from the metric log. Log rows must fall on
    /// `warmup`.
    pub fn fallback_fraction_after(&self, warmup: u64) -> Option<f64> {
        let mut prev_step = None;
        let mut fallbacks = 0u64;
        let mut steps = 0u64;
        for e in &self.log {
            if let Some(p) = prev_step {
                if p >= warmup {
                    fallbacks += e.fallback_count;
                    steps += e.step - p;
                }
            }
            prev_step = Some(e.step);
        }
        (steps > 0).then(|| fallbacks as f64 / (steps * self.config.batch_size as u64) as f64)
    }
}

/// Initializes and trains a model. Deterministic given the config.
pub fn train(config: TrainerConfig, data: &ToyDataset) -> Result<TrainerState> {
    let mut state = TrainerState::new(config)?;
    state.run(data)?;
    Ok(state)
}
