//! The `C_T` memorization test.
//!
//! Two samples of nearest-neighbor distances to the training set are
//! compared with a Mann-Whitney U test: distances of generated samples and
//! distances of an independent reference test set. If the generator merely
//! learned the data distribution, both samples come from the same law and the
//! standardized statistic `z` is centered on zero. A generator that copies
//! its training data produces distances that are stochastically smaller,
//! pushing `z` negative.
//!
//! To catch memorization that is confined to part of the input domain, both
//! sets are split into cells (by class label, or by k-means centroids fit on
//! the test set) and one test is run per cell. The score `C_T` is the
//! average of the per-cell `z` values weighted by each cell's share of test
//! rows.

use std::str::FromStr;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};
use crate::nn::{nn_distance, Metric};

/// Mann-Whitney U statistic and its normal-approximation z-score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// Number of pairs `(a_i, b_j)` with `a_i > b_j`, plus half the ties.
    /// Small `U` means `a` sits below `b`.
    pub u: f64,
    pub z: f64,
    /// Set when every pooled value is identical; `z` is then 0.
    pub degenerate: bool,
}

/// Mann-Whitney test of `a` against `b` using mid-ranks.
///
/// `z = (U − n_a·n_b/2) / σ_U` with the tie-corrected variance
/// `σ_U² = n_a·n_b/12 · ((N+1) − Σ(t³−t) / (N(N−1)))`, where `t` runs over
/// tie-group sizes in the pooled sample of size `N`. No continuity
/// correction is applied. `z < 0` when `a` tends to be smaller than `b`.
pub fn mann_whitney_z(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::usage(format!(
            "Mann-Whitney test needs non-empty samples, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN in Mann-Whitney sample".into()));
    }
    let na = a.len();
    let nb = b.len();
    let n = na + nb;
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));

    // Mid-ranks are multiples of one half, so these sums are exact.
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        let from_a = pooled[i..j].iter().filter(|p| p.1).count();
        rank_sum_a += mid_rank * from_a as f64;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let (naf, nbf, nf) = (na as f64, nb as f64, n as f64);
    let u = rank_sum_a - naf * (naf + 1.0) / 2.0;
    let mean = naf * nbf / 2.0;
    let var = naf * nbf / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return Ok(MannWhitney {
            u,
            z: 0.0,
            degenerate: true,
        });
    }
    Ok(MannWhitney {
        u,
        z: (u - mean) / var.sqrt(),
        degenerate: false,
    })
}

/// How to divide the input domain into cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionSpec {
    /// One cell per class label; both sets must carry labels.
    ByLabel,
    /// `k` centroids fit on the test set, seeded from `seed`.
    Kmeans { k: usize, seed: u64 },
}

impl PartitionSpec {
    /// Parses `labels` or `kmeans:K`; the k-means seed is supplied separately.
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        if s == "labels" {
            return Ok(PartitionSpec::ByLabel);
        }
        if let Some(k) = s.strip_prefix("kmeans:") {
            let k = usize::from_str(k)
                .ok()
                .filter(|&k| k >= 1)
                .ok_or_else(|| Error::usage(format!("bad k-means cell count '{k}'")))?;
            return Ok(PartitionSpec::Kmeans { k, seed });
        }
        Err(Error::usage(format!(
            "unknown cell spec '{s}', expected labels or kmeans:K"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    ByLabel,
    Kmeans,
}

/// Cell assignment of every test and generated row.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPartition {
    pub kind: PartitionKind,
    pub cell_of_test: Vec<usize>,
    pub cell_of_gen: Vec<usize>,
    pub num_cells: usize,
    /// Row-major `num_cells × K` centroids, k-means only.
    pub centroids: Option<Vec<f64>>,
}

/// Assigns both sets to cells. K-means centroids are fit on `test` only, so
/// generated data never moves cell boundaries.
pub fn partition(test: &EmbeddingSet, gen: &EmbeddingSet, spec: PartitionSpec) -> Result<CellPartition> {
    if test.dims() != gen.dims() {
        return Err(Error::DimensionMismatch(test.dims(), gen.dims()));
    }
    match spec {
        PartitionSpec::ByLabel => {
            let missing = |s: &EmbeddingSet| {
                Error::usage(format!(
                    "set '{}' has no labels; use kmeans:K cells instead",
                    s.name()
                ))
            };
            let tl = test.labels().ok_or_else(|| missing(test))?;
            let gl = gen.labels().ok_or_else(|| missing(gen))?;
            let num_cells = tl.iter().max().map_or(0, |&m| m as usize + 1);
            if let Some(&bad) = gl.iter().find(|&&l| !tl.contains(&l)) {
                return Err(Error::usage(format!(
                    "generated label {bad} does not occur in test set '{}'",
                    test.name()
                )));
            }
            Ok(CellPartition {
                kind: PartitionKind::ByLabel,
                cell_of_test: tl.iter().map(|&l| l as usize).collect(),
                cell_of_gen: gl.iter().map(|&l| l as usize).collect(),
                num_cells,
                centroids: None,
            })
        }
        PartitionSpec::Kmeans { k, seed } => {
            let km = kmeans(test, k, seed)?;
            let cell_of_gen = gen.rows().map(|r| km.assign(r)).collect();
            Ok(CellPartition {
                kind: PartitionKind::Kmeans,
                cell_of_test: km.assignments.clone(),
                cell_of_gen,
                num_cells: k,
                centroids: Some(km.centroids),
            })
        }
    }
}

pub const KMEANS_MAX_ITER: usize = 100;

/// Result of Lloyd's algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct Kmeans {
    pub k: usize,
    pub dims: usize,
    /// Row-major `k × dims`.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

impl Kmeans {
    /// Nearest centroid by Euclidean distance; ties go to the lower index.
    pub fn assign(&self, row: &[f32]) -> usize {
        nearest_centroid(&self.centroids, self.dims, row)
    }
}

fn nearest_centroid(centroids: &[f64], dims: usize, row: &[f32]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, centre) in centroids.chunks_exact(dims).enumerate() {
        let d = sq_dist(centre, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Lloyd's k-means capped at [`KMEANS_MAX_ITER`] iterations.
///
/// Initial centroids are `k` distinct rows drawn by k-means++ seeding from a
/// seeded RNG: after a uniform first pick, each row is drawn with probability
/// proportional to its squared distance from the nearest chosen centroid.
/// Duplicate rows can leave fewer distinct candidates than `k`; the remaining
/// picks then fall back to unused rows in index order. A centroid whose
/// cluster empties keeps its previous position.
pub fn kmeans(set: &EmbeddingSet, k: usize, seed: u64) -> Result<Kmeans> {
    if k == 0 || k > set.len() {
        return Err(Error::usage(format!(
            "k-means needs 1 <= k <= {} rows, got k = {k}",
            set.len()
        )));
    }
    let dims = set.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(set, k, &mut rng);
    let mut assignments: Vec<usize> = set.rows().map(|r| nearest_centroid(&centroids, dims, r)).collect();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut sums = vec![0.0f64; k * dims];
        let mut counts = vec![0usize; k];
        for (r, &c) in set.rows().zip(&assignments) {
            counts[c] += 1;
            for (s, &v) in sums[c * dims..(c + 1) * dims].iter_mut().zip(r) {
                *s += f64::from(v);
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dims {
                    centroids[c * dims + d] = sums[c * dims + d] / counts[c] as f64;
                }
            }
        }
        let next: Vec<usize> = set.rows().map(|r| nearest_centroid(&centroids, dims, r)).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Ok(Kmeans {
        k,
        dims,
        centroids,
        assignments,
        iterations,
    })
}

fn plus_plus_init(set: &EmbeddingSet, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dims = set.dims();
    let n = set.len();
    let mut chosen = vec![false; n];
    let mut centroids: Vec<f64> = Vec::with_capacity(k * dims);
    let push = |i: usize, centroids: &mut Vec<f64>, chosen: &mut Vec<bool>| {
        chosen[i] = true;
        centroids.extend(set.row(i).iter().map(|&v| f64::from(v)));
    };
    push(rng.gen_range(0..n), &mut centroids, &mut chosen);
    let mut d2: Vec<f64> = set
        .rows()
        .map(|r| sq_dist(&centroids[..dims], r))
        .collect();
    while centroids.len() < k * dims {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.unwrap()
        } else {
            chosen.iter().position(|c| !c).unwrap()
        };
        push(pick, &mut centroids, &mut chosen);
        let last = &centroids[centroids.len() - dims..];
        for (i, r) in set.rows().enumerate() {
            d2[i] = if chosen[i] { 0.0 } else { d2[i].min(sq_dist(last, r)) };
        }
    }
    centroids
}

fn sq_dist(centre: &[f64], row: &[f32]) -> f64 {
    centre
        .iter()
        .zip(row)
        .map(|(a, &b)| (a - f64::from(b)).powi(2))
        .sum()
}

/// Per-cell test outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell_id: usize,
    pub n_gen: usize,
    pub n_test: usize,
    #[serde(rename = "U")]
    pub u: f64,
    pub z: f64,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

/// Cell-aggregated memorization score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtReport {
    pub ct: f64,
    pub metric: Metric,
    pub train_name: String,
    pub test_name: String,
    pub gen_name: String,
    pub cells: Vec<CellResult>,
    /// Cells with test rows but no generated rows, or vice versa.
    #[serde(default)]
    pub dropped_cells: Vec<usize>,
}

impl CtReport {
    pub fn weighted_sum(&self) -> f64 {
        self.cells.iter().map(|c| c.weight * c.z).sum()
    }
}

/// Aggregates per-cell Mann-Whitney tests over precomputed distances.
///
/// Cells lacking either test or generated rows are dropped with a warning
/// and the remaining weights are renormalized over the surviving test rows.
pub fn ct_from_distances(
    test_dist: &[f64],
    gen_dist: &[f64],
    partition: &CellPartition,
) -> Result<(f64, Vec<CellResult>, Vec<usize>)> {
    if test_dist.len() != partition.cell_of_test.len() || gen_dist.len() != partition.cell_of_gen.len() {
        return Err(Error::usage("distance lists do not match the partition".to_string()));
    }
    let mut test_cells = vec![Vec::new(); partition.num_cells];
    let mut gen_cells = vec![Vec::new(); partition.num_cells];
    for (&d, &c) in test_dist.iter().zip(&partition.cell_of_test) {
        test_cells[c].push(d);
    }
    for (&d, &c) in gen_dist.iter().zip(&partition.cell_of_gen) {
        gen_cells[c].push(d);
    }
    let mut dropped = Vec::new();
    let mut cells = Vec::new();
    for (cell_id, (t, g)) in test_cells.iter().zip(&gen_cells).enumerate() {
        if t.is_empty() && g.is_empty() {
            continue;
        }
        if t.is_empty() || g.is_empty() {
            warn!(
                "dropping cell {cell_id}: {} test rows, {} generated rows",
                t.len(),
                g.len()
            );
            dropped.push(cell_id);
            continue;
        }
        let mw = mann_whitney_z(g, t)?;
        cells.push(CellResult {
            cell_id,
            n_gen: g.len(),
            n_test: t.len(),
            u: mw.u,
            z: mw.z,
            weight: 0.0,
            degenerate: mw.degenerate,
        });
    }
    if cells.is_empty() {
        return Err(Error::usage(
            "no cell contains both test and generated rows".to_string(),
        ));
    }
    let total: usize = cells.iter().map(|c| c.n_test).sum();
    for c in &mut cells {
        c.weight = c.n_test as f64 / total as f64;
    }
    let ct = cells.iter().map(|c| c.weight * c.z).sum();
    Ok((ct, cells, dropped))
}

/// Full `C_T` pipeline: nearest-neighbor distances of `test` and `gen`
/// against `train`, cell assignment, per-cell tests and aggregation.
pub fn ct_score(
    train: &EmbeddingSet,
    test: &EmbeddingSet,
    gen: &EmbeddingSet,
    metric: Metric,
    spec: PartitionSpec,
) -> Result<CtReport> {
    for s in [test, gen] {
        if s.dims() != train.dims() {
            return Err(Error::DimensionMismatch(s.dims(), train.dims()));
        }
    }
    let cells = partition(test, gen, spec)?;
    let test_profile = nn_distance(test, train, metric)?;
    let gen_profile = nn_distance(gen, train, metric)?;
    let (ct, cells, dropped_cells) =
        ct_from_distances(&test_profile.distances, &gen_profile.distances, &cells)?;
    Ok(CtReport {
        ct,
        metric,
        train_name: train.name().to_string(),
        test_name: test.name().to_string(),
        gen_name: gen.name().to_string(),
        cells,
        dropped_cells,
    })
}
