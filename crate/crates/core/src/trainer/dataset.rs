//! Synthetic 2-D training and test sets.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

/// Training set size of the toy experiments.
pub const DEFAULT_N_TRAIN: usize = 256;
/// Test set size of the toy experiments.
pub const DEFAULT_N_TEST: usize = 2000;
/// Component standard deviation of the toy experiments.
pub const DEFAULT_SIGMA: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Eight Gaussians centered on the unit circle.
    Ring8,
    /// 5×5 grid of Gaussians at integer coordinates in `[-2, 2]²`.
    Grid25,
    /// Two interleaved half circles with Gaussian noise.
    TwoMoons,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Ring8 => "ring8",
            DatasetKind::Grid25 => "grid25",
            DatasetKind::TwoMoons => "two_moons",
        }
    }

    /// Mixture-component centers; empty for two moons.
    pub fn centers(self) -> Vec<[f64; 2]> {
        match self {
            DatasetKind::Ring8 => (0..8)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / 8.0;
                    [a.cos(), a.sin()]
                })
                .collect(),
            DatasetKind::Grid25 => (0..25)
                .map(|k| [(k / 5) as f64 - 2.0, (k % 5) as f64 - 2.0])
                .collect(),
            DatasetKind::TwoMoons => Vec::new(),
        }
    }

    /// Draws `n` labeled points from the data process.
    pub fn sample<R: Rng>(self, n: usize, sigma: f64, rng: &mut R) -> (Vec<f32>, Vec<u32>) {
        let centers = self.centers();
        let mut data = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let (base, label) = match self {
                DatasetKind::TwoMoons => {
                    let moon = rng.gen_range(0..2u32);
                    let t = rng.gen_range(0.0..PI);
                    let p = if moon == 0 {
                        [t.cos(), t.sin()]
                    } else {
                        [1.0 - t.cos(), 0.5 - t.sin()]
                    };
                    (p, moon)
                }
                _ => {
                    let c = rng.gen_range(0..centers.len());
                    (centers[c], c as u32)
                }
            };
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            data.push((base[0] + sigma * nx) as f32);
            data.push((base[1] + sigma * ny) as f32);
            labels.push(label);
        }
        (data, labels)
    }

    /// Index of the nearest mixture center (Euclidean, lowest index on
    /// ties); `None` for two moons.
    pub fn nearest_center(self, p: &[f32]) -> Option<u32> {
        let centers = self.centers();
        if centers.is_empty() {
            return None;
        }
        let mut best = (0, f64::INFINITY);
        for (i, c) in centers.iter().enumerate() {
            let d = (f64::from(p[0]) - c[0]).powi(2) + (f64::from(p[1]) - c[1]).powi(2);
            if d < best.1 {
                best = (i, d);
            }
        }
        Some(best.0 as u32)
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring8" => Ok(DatasetKind::Ring8),
            "grid25" => Ok(DatasetKind::Grid25),
            "two_moons" => Ok(DatasetKind::TwoMoons),
            other => Err(Error::usage(format!(
                "unknown dataset '{other}', expected ring8, grid25 or two_moons"
            ))),
        }
    }
}

/// Training set plus a disjoint held-out sample of the same process.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub kind: DatasetKind,
    pub train: EmbeddingSet,
    pub test: EmbeddingSet,
    pub sigma: f64,
    pub seed: u64,
}

pub const TRAIN_STREAM: u64 = 1;
pub const TEST_STREAM: u64 = 2;

/// Generates train and test sets from independent RNG streams of `seed`.
pub fn make_dataset(kind: DatasetKind, n_train: usize, n_test: usize, sigma: f64, seed: u64) -> Result<ToyDataset> {
    if n_train < 2 || n_test < 2 {
        return Err(Error::usage(format!(
            "need at least 2 train and 2 test points, got {n_train} and {n_test}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::usage(format!("sigma must be positive, got {sigma}")));
    }
    let draw = |n: usize, stream: u64, name: &str| -> Result<EmbeddingSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let (data, labels) = kind.sample(n, sigma, &mut rng);
        EmbeddingSet::new(name, n, 2, data, Some(labels))
    };
    Ok(ToyDataset {
        kind,
        train: draw(n_train, TRAIN_STREAM, "train")?,
        test: draw(n_test, TEST_STREAM, "test")?,
        sigma,
        seed,
    })
}
