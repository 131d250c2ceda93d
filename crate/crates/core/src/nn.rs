//! Exact nearest-neighbor distances.
//!
//! For a sample `x` and a reference set `X`, the nearest-neighbor distance is
//! `min_{x' ∈ X} d(f(x), f(x'))`. Search is exhaustive: every reference row is
//! visited and ties resolve to the lowest reference index, so results are
//! reproducible and match a naive double loop bit for bit.
//!
//! Query rows are processed in parallel. Each row's minimum is accumulated
//! independently, so the output does not depend on the number of threads.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

/// Distance between embedding vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// `1 − ⟨u,v⟩ / (‖u‖·‖v‖)`, in `[0, 2]`. Undefined for zero vectors.
    Cosine,
    /// `‖u − v‖₂`.
    Euclidean,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        }
    }

    /// Distance between two vectors. For cosine, both norms must be
    /// non-zero; the result is NaN otherwise.
    pub fn distance(self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => euclidean(u, v),
            Metric::Cosine => cosine_with_norms(u, v, norm(u), norm(v)),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::usage(format!(
                "unknown metric '{other}', expected cosine or euclidean"
            ))),
        }
    }
}

#[inline]
fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[inline]
fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

#[inline]
fn euclidean(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[inline]
fn cosine_with_norms(u: &[f64], v: &[f64], nu: f64, nv: f64) -> f64 {
    (1.0 - dot(u, v) / (nu * nv)).clamp(0.0, 2.0)
}

/// A reference set prepared for repeated exact nearest-neighbor queries.
///
/// Rows are widened to `f64` once and, for the cosine metric, their norms are
/// cached.
#[derive(Debug, Clone)]
pub struct NnIndex {
    metric: Metric,
    dims: usize,
    rows: Vec<f64>,
    norms: Vec<f64>,
}

impl NnIndex {
    pub fn new(reference: &EmbeddingSet, metric: Metric) -> Result<Self> {
        let rows = reference.as_slice().iter().map(|&v| f64::from(v)).collect();
        Self::from_f64(reference.dims(), rows, metric)
    }

    /// Builds an index over row-major `f64` data.
    pub fn from_f64(dims: usize, rows: Vec<f64>, metric: Metric) -> Result<Self> {
        if dims == 0 || rows.is_empty() || rows.len() % dims != 0 {
            return Err(Error::usage(format!(
                "reference data of length {} is not a non-empty multiple of {dims}",
                rows.len()
            )));
        }
        let norms = match metric {
            Metric::Cosine => {
                let norms: Vec<f64> = rows.chunks_exact(dims).map(norm).collect();
                if let Some(row) = norms.iter().position(|&n| n == 0.0) {
                    return Err(Error::Validation {
                        row,
                        message: "zero-norm reference row under cosine metric".into(),
                    });
                }
                norms
            }
            Metric::Euclidean => Vec::new(),
        };
        Ok(NnIndex {
            metric,
            dims,
            rows,
            norms,
        })
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Nearest reference row to `q` as `(index, distance)`. `skip` excludes
    /// one reference row by index (leave-one-out).
    ///
    /// Panics if `q` has the wrong length. Under cosine a zero query yields a
    /// NaN distance; callers validate queries first.
    pub fn nearest_excluding(&self, q: &[f64], skip: Option<usize>) -> (usize, f64) {
        assert_eq!(q.len(), self.dims, "query dimension");
        let mut best = (usize::MAX, f64::INFINITY);
        match self.metric {
            Metric::Euclidean => {
                for (j, r) in self.rows.chunks_exact(self.dims).enumerate() {
                    if Some(j) == skip {
                        continue;
                    }
                    let d = euclidean(q, r);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
            }
            Metric::Cosine => {
                let nq = norm(q);
                for (j, (r, &nr)) in self.rows.chunks_exact(self.dims).zip(&self.norms).enumerate() {
                    if Some(j) == skip {
                        continue;
                    }
                    let d = cosine_with_norms(q, r, nq, nr);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
            }
        }
        best
    }

    pub fn nearest(&self, q: &[f64]) -> (usize, f64) {
        self.nearest_excluding(q, None)
    }
}

/// Per-query nearest-neighbor distances of one set against another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceProfile {
    pub query_name: String,
    pub reference_name: String,
    pub metric: Metric,
    pub distances: Vec<f64>,
    pub nn_indices: Vec<usize>,
}

/// Summary statistics of a distance profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl DistanceProfile {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.distances.iter().sum::<f64>() / self.distances.len() as f64
    }

    pub fn summary(&self) -> DistanceSummary {
        let n = self.distances.len();
        let mean = self.mean();
        let var = if n > 1 {
            self.distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let mut sorted = self.distances.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        DistanceSummary {
            count: n,
            mean,
            std: var.sqrt(),
            min: sorted[0],
            median,
            max: sorted[n - 1],
        }
    }

    /// Bins the distances; see [`histogram`].
    pub fn histogram(&self, bin_width: f64) -> Result<Vec<(f64, usize)>> {
        histogram(&self.distances, bin_width)
    }

    /// CSV with header `query_index,nn_index,distance`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_index,nn_index,distance\n");
        for (i, (j, d)) in self.nn_indices.iter().zip(&self.distances).enumerate() {
            writeln!(out, "{i},{j},{d}").unwrap();
        }
        out
    }
}

/// Exact nearest neighbor in `reference` of every row of `query`.
pub fn nn_distance(
    query: &EmbeddingSet,
    reference: &EmbeddingSet,
    metric: Metric,
) -> Result<DistanceProfile> {
    if query.dims() != reference.dims() {
        return Err(Error::DimensionMismatch(query.dims(), reference.dims()));
    }
    let index = NnIndex::new(reference, metric).map_err(|e| match e {
        Error::Validation { row, message } => Error::Validation {
            row,
            message: format!("{message} (set '{}')", reference.name()),
        },
        other => other,
    })?;
    if metric == Metric::Cosine {
        if let Some(row) = query.first_zero_row() {
            return Err(Error::Validation {
                row,
                message: format!("zero-norm query row under cosine metric (set '{}')", query.name()),
            });
        }
    }
    let dims = query.dims();
    let results: Vec<(usize, f64)> = query
        .as_slice()
        .par_chunks_exact(dims)
        .map_init(
            || vec![0.0f64; dims],
            |buf, row| {
                for (b, &v) in buf.iter_mut().zip(row) {
                    *b = f64::from(v);
                }
                index.nearest(buf)
            },
        )
        .collect();
    let (nn_indices, distances) = results.into_iter().unzip();
    Ok(DistanceProfile {
        query_name: query.name().to_string(),
        reference_name: reference.name().to_string(),
        metric,
        distances,
        nn_indices,
    })
}

/// Leave-one-out mean nearest-neighbor distance of a set to itself.
///
/// Each row is excluded from its own search by index, so duplicated rows
/// still find each other at distance zero.
pub fn loo_mean_distance(train: &EmbeddingSet, metric: Metric) -> Result<f64> {
    if train.len() < 2 {
        return Err(Error::usage(format!(
            "leave-one-out distance needs at least 2 rows, '{}' has {}",
            train.name(),
            train.len()
        )));
    }
    let index = NnIndex::new(train, metric)?;
    let dims = train.dims();
    let per_row: Vec<f64> = (0..index.len())
        .into_par_iter()
        .map(|i| index.nearest_excluding(&index.rows[i * dims..(i + 1) * dims], Some(i)).1)
        .collect();
    Ok(per_row.iter().sum::<f64>() / per_row.len() as f64)
}

/// Counts values into bins `[i·w, (i+1)·w)` starting at zero. The last bin
/// contains the maximum, so the counts always sum to the number of values.
pub fn histogram(distances: &[f64], bin_width: f64) -> Result<Vec<(f64, usize)>> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::usage(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    if let Some(d) = distances.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
        return Err(Error::Numerical(format!("invalid distance {d}")));
    }
    let max = distances.iter().copied().fold(0.0, f64::max);
    let nbins = (max / bin_width).floor() as usize + 1;
    let mut counts = vec![0usize; nbins];
    for &d in distances {
        let b = ((d / bin_width).floor() as usize).min(nbins - 1);
        counts[b] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i as f64 * bin_width, c))
        .collect())
}

/// CSV with header `bin_left,count`.
pub fn histogram_csv(bins: &[(f64, usize)]) -> String {
    let mut out = String::from("bin_left,count\n");
    for (left, count) in bins {
        writeln!(out, "{left},{count}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(rows: &[&[f32]]) -> EmbeddingSet {
        EmbeddingSet::from_rows("t", rows).unwrap()
    }

    #[test]
    fn identical_and_orthogonal_cosine() {
        let p = nn_distance(&set(&[&[1., 0.]]), &set(&[&[1., 0.], &[0., 1.]]), Metric::Cosine).unwrap();
        assert_eq!(p.distances, vec![0.0]);
        assert_eq!(p.nn_indices, vec![0]);

        let p = nn_distance(&set(&[&[1., 0.]]), &set(&[&[0., 1.]]), Metric::Cosine).unwrap();
        assert_eq!(p.distances, vec![1.0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let p = nn_distance(
            &set(&[&[0., 0.]]),
            &set(&[&[2., 0.], &[1., 0.], &[0., 1.], &[-1., 0.]]),
            Metric::Euclidean,
        )
        .unwrap();
        assert_eq!(p.nn_indices, vec![1]);
        assert_eq!(p.distances, vec![1.0]);
    }

    #[test]
    fn rejects_mismatch_and_zero_rows() {
        let e = nn_distance(&set(&[&[1., 0.]]), &set(&[&[1.]]), Metric::Euclidean).unwrap_err();
        assert!(matches!(e, Error::DimensionMismatch(2, 1)));

        let e = nn_distance(&set(&[&[1., 0.], &[0., 0.]]), &set(&[&[1., 1.]]), Metric::Cosine).unwrap_err();
        assert!(matches!(e, Error::Validation { row: 1, .. }));
        let e = nn_distance(&set(&[&[1., 0.]]), &set(&[&[0., 0.]]), Metric::Cosine).unwrap_err();
        assert!(matches!(e, Error::Validation { row: 0, .. }));

        // zero rows are fine for euclidean
        nn_distance(&set(&[&[0., 0.]]), &set(&[&[0., 0.]]), Metric::Euclidean).unwrap();
    }

    #[test]
    fn loo_mean_examples() {
        let d = loo_mean_distance(&set(&[&[2., 3.], &[2., 3.]]), Metric::Euclidean).unwrap();
        assert_eq!(d, 0.0);
        let d = loo_mean_distance(&set(&[&[2., 3.], &[2., 3.]]), Metric::Cosine).unwrap();
        assert_eq!(d, 0.0);
        let d = loo_mean_distance(&set(&[&[0.], &[1.], &[3.]]), Metric::Euclidean).unwrap();
        assert!((d - 4.0 / 3.0).abs() < 1e-15);
        assert!(loo_mean_distance(&set(&[&[1.]]), Metric::Euclidean).unwrap_err().is_usage());
    }

    #[test]
    fn histogram_examples() {
        assert_eq!(histogram(&[0.1, 0.1, 0.3], 0.2).unwrap(), vec![(0.0, 2), (0.2, 1)]);
        assert_eq!(histogram(&[0.0], 0.5).unwrap(), vec![(0.0, 1)]);
        assert!(histogram(&[0.1], 0.0).unwrap_err().is_usage());
        assert!(histogram(&[0.1], -1.0).unwrap_err().is_usage());
    }

    #[test]
    fn csv_outputs() {
        let p = DistanceProfile {
            query_name: "q".into(),
            reference_name: "r".into(),
            metric: Metric::Euclidean,
            distances: vec![0.5, 0.25],
            nn_indices: vec![3, 0],
        };
        assert_eq!(p.to_csv(), "query_index,nn_index,distance\n0,3,0.5\n1,0,0.25\n");
        assert_eq!(histogram_csv(&[(0.0, 2), (0.2, 1)]), "bin_left,count\n0,2\n0.2,1\n");
        let s = p.summary();
        assert_eq!((s.min, s.max, s.median, s.mean), (0.25, 0.5, 0.375, 0.375));
    }

    fn arb_rows(n: std::ops::Range<usize>, k: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
        proptest::collection::vec(proptest::collection::vec(-4.0f32..4.0, k), n)
    }

    fn nonzero(rows: &[Vec<f32>]) -> bool {
        rows.iter().all(|r| r.iter().any(|&v| v != 0.0))
    }

    proptest! {
        #[test]
        fn symmetric_and_in_range(u in proptest::collection::vec(-3.0f64..3.0, 4),
                                  v in proptest::collection::vec(-3.0f64..3.0, 4)) {
            for m in [Metric::Euclidean, Metric::Cosine] {
                let a = m.distance(&u, &v);
                let b = m.distance(&v, &u);
                prop_assert!(a == b || (a.is_nan() && b.is_nan()));
            }
            let c = Metric::Cosine.distance(&u, &v);
            prop_assert!(c.is_nan() || (0.0..=2.0).contains(&c));
            prop_assert!(Metric::Euclidean.distance(&u, &v) >= 0.0);
            prop_assert_eq!(Metric::Euclidean.distance(&u, &u), 0.0);
        }

        #[test]
        fn cosine_scale_invariant(q in arb_rows(1..6, 3), r in arb_rows(1..10, 3), s in 0.01f32..50.0) {
            prop_assume!(nonzero(&q) && nonzero(&r));
            let scale = |rows: &[Vec<f32>]| rows.iter().map(|x| x.iter().map(|v| v * s).collect::<Vec<_>>()).collect::<Vec<_>>();
            let a = nn_distance(&EmbeddingSet::from_rows("q", &q).unwrap(), &EmbeddingSet::from_rows("r", &r).unwrap(), Metric::Cosine).unwrap();
            let b = nn_distance(&EmbeddingSet::from_rows("q", &scale(&q)).unwrap(), &EmbeddingSet::from_rows("r", &scale(&r)).unwrap(), Metric::Cosine).unwrap();
            for (x, y) in a.distances.iter().zip(&b.distances) {
                prop_assert!((x - y).abs() < 1e-6);
            }
            // near-ties can legitimately swap under rescaling; indices must agree otherwise
            for (i, (x, y)) in a.nn_indices.iter().zip(&b.nn_indices).enumerate() {
                if x != y {
                    let qi: Vec<f64> = q[i].iter().map(|&v| v as f64).collect();
                    let rx: Vec<f64> = r[*x].iter().map(|&v| v as f64).collect();
                    let ry: Vec<f64> = r[*y].iter().map(|&v| v as f64).collect();
                    prop_assert!((Metric::Cosine.distance(&qi, &rx) - Metric::Cosine.distance(&qi, &ry)).abs() < 1e-6);
                }
            }
        }

        #[test]
        fn growing_reference_never_increases_distance(q in arb_rows(1..6, 2), r in arb_rows(1..10, 2), extra in arb_rows(1..10, 2)) {
            let qs = EmbeddingSet::from_rows("q", &q).unwrap();
            let small = nn_distance(&qs, &EmbeddingSet::from_rows("r", &r).unwrap(), Metric::Euclidean).unwrap();
            let mut all = r.clone();
            all.extend(extra);
            let big = nn_distance(&qs, &EmbeddingSet::from_rows("r", &all).unwrap(), Metric::Euclidean).unwrap();
            for (a, b) in small.distances.iter().zip(&big.distances) {
                prop_assert!(b <= a);
            }
        }

        #[test]
        fn histogram_counts_sum(d in proptest::collection::vec(0.0f64..3.0, 1..50), w in 0.01f64..1.0) {
            let h = histogram(&d, w).unwrap();
            prop_assert_eq!(h.iter().map(|b| b.1).sum::<usize>(), d.len());
            prop_assert_eq!(h[0].0, 0.0);
            let max = d.iter().copied().fold(0.0, f64::max);
            prop_assert!(h.last().unwrap().0 <= max);
        }
    }
}
