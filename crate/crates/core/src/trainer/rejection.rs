//! Memorization rejection sampling.
//!
//! A candidate `x̂ = G(z)` with `z ~ N(0, I)` is kept only when its
//! nearest-neighbor distance to the training set is strictly greater than
//! the threshold `τ`; otherwise a fresh `z` is drawn. A slot that has been
//! rejected `max_retries` times falls back to the farthest candidate it saw
//! instead of looping forever.
//!
//! All slots of a batch are drawn together: each round draws one latent
//! vector for every still-open slot, in slot order, and evaluates the
//! generator once on the stacked batch. When every first draw is accepted,
//! the RNG consumption is therefore identical to plain batch sampling.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::NnIndex;

use super::mlp::Mlp;

/// A latent-to-sample map.
pub trait Generator {
    fn latent_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Maps a row-major latent batch to a row-major sample batch.
    fn generate(&self, z: &[f64]) -> Vec<f64>;
}

impl Generator for Mlp {
    fn latent_dim(&self) -> usize {
        self.input_dim()
    }

    fn output_dim(&self) -> usize {
        Mlp::output_dim(self)
    }

    fn generate(&self, z: &[f64]) -> Vec<f64> {
        self.forward(z)
    }
}

/// `G(z) = z`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityGenerator(pub usize);

impl Generator for IdentityGenerator {
    fn latent_dim(&self) -> usize {
        self.0
    }

    fn output_dim(&self) -> usize {
        self.0
    }

    fn generate(&self, z: &[f64]) -> Vec<f64> {
        z.to_vec()
    }
}

/// Draws `n · dim` standard normal values.
pub fn draw_latent<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<f64> {
    (0..n * dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// A batch assembled by [`rejection_sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct RejectedBatch {
    /// Latent codes of the kept samples, row-major.
    pub z: Vec<f64>,
    /// `G(z)` for the kept samples, row-major.
    pub samples: Vec<f64>,
    /// Nearest-neighbor distance of each kept sample.
    pub distances: Vec<f64>,
    /// Whether each slot holds a fallback rather than an accepted sample.
    pub fallback: Vec<bool>,
    /// Total number of rejected draws.
    pub retries_used: usize,
    pub fallback_count: usize,
    /// Total number of candidates drawn, accepted or not.
    pub draws: usize,
}

struct Slot {
    rejections: usize,
    best: Option<(f64, Vec<f64>, Vec<f64>)>,
    done: bool,
}

/// Fills `batch_size` slots with samples whose distance to the reference
/// index exceeds `tau`. `max_retries` is clamped to at least one draw.
pub fn rejection_sample<G: Generator, R: Rng>(
    tau: f64,
    g: &G,
    index: &NnIndex,
    max_retries: usize,
    batch_size: usize,
    rng: &mut R,
) -> RejectedBatch {
    let zdim = g.latent_dim();
    let xdim = g.output_dim();
    assert_eq!(xdim, index.dims(), "generator output vs reference dimension");
    let max_retries = max_retries.max(1);
    let mut slots: Vec<Slot> = (0..batch_size)
        .map(|_| Slot {
            rejections: 0,
            best: None,
            done: false,
        })
        .collect();
    let mut out = RejectedBatch {
        z: vec![0.0; batch_size * zdim],
        samples: vec![0.0; batch_size * xdim],
        distances: vec![0.0; batch_size],
        fallback: vec![false; batch_size],
        retries_used: 0,
        fallback_count: 0,
        draws: 0,
    };
    let mut open: Vec<usize> = (0..batch_size).collect();
    while !open.is_empty() {
        let z = draw_latent(rng, open.len(), zdim);
        let x = g.generate(&z);
        out.draws += open.len();
        let mut still_open = Vec::new();
        for (k, &slot_id) in open.iter().enumerate() {
            let zk = &z[k * zdim..(k + 1) * zdim];
            let xk = &x[k * xdim..(k + 1) * xdim];
            let (_, d) = index.nearest(xk);
            let slot = &mut slots[slot_id];
            if d > tau {
                out.z[slot_id * zdim..(slot_id + 1) * zdim].copy_from_slice(zk);
                out.samples[slot_id * xdim..(slot_id + 1) * xdim].copy_from_slice(xk);
                out.distances[slot_id] = d;
                slot.done = true;
                continue;
            }
            slot.rejections += 1;
            out.retries_used += 1;
            if slot.best.as_ref().map_or(true, |b| d > b.0) {
                slot.best = Some((d, zk.to_vec(), xk.to_vec()));
            }
            if slot.rejections >= max_retries {
                let (d, bz, bx) = slot.best.take().unwrap();
                out.z[slot_id * zdim..(slot_id + 1) * zdim].copy_from_slice(&bz);
                out.samples[slot_id * xdim..(slot_id + 1) * xdim].copy_from_slice(&bx);
                out.distances[slot_id] = d;
                out.fallback[slot_id] = true;
                out.fallback_count += 1;
                slot.done = true;
            } else {
                still_open.push(slot_id);
            }
        }
        open = still_open;
    }
    debug_assert!(slots.iter().all(|s| s.done));
    out
}
