//! Memorization audits for generative models, and GAN training that rejects
//! samples too close to the training data.
//!
//! The library is organized by stage:
//!
//! * [`embedding`]: the `EMB1` binary format and CSV for embedding sets
//! * [`nn`]: exact nearest-neighbor distances, the mean leave-one-out
//!   distance and histograms
//! * [`memtest`]: the cell-wise Mann-Whitney memorization score `C_T`
//! * [`fid`]: Frechet distance between Gaussian fits
//! * [`trainer`]: toy datasets, a hand-differentiated MLP GAN and
//!   memorization-rejection training
//! * [`cli`]: the `memreject` command line
//!
//! ```
//! use memreject::{ct_score, EmbeddingSet, Metric, PartitionSpec};
//!
//! let train = EmbeddingSet::from_rows("train", &[[0.0f32, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])?;
//! let test = EmbeddingSet::from_rows("test", &[[0.1f32, 0.2], [0.9, 0.1], [0.2, 0.8], [0.8, 0.9]])?;
//! let report = ct_score(&train, &test, &test, Metric::Euclidean, PartitionSpec::parse("kmeans:1", 0)?)?;
//! assert_eq!(report.ct, 0.0);
//! # Ok::<(), memreject::Error>(())
//! ```

pub mod atomic;
pub mod cli;
pub mod embedding;
pub mod error;
pub mod fid;
pub mod memtest;
pub mod nn;
pub mod trainer;

pub use embedding::{load_embeddings, save_embeddings, split_by_label, EmbeddingSet, Format};
pub use error::{Error, Result};
pub use fid::{fid, frechet_distance, gaussian_stats, FidReport, GaussianStats};
pub use memtest::{ct_score, mann_whitney_z, partition, CtReport, MannWhitney, PartitionSpec};
pub use nn::{histogram, loo_mean_distance, nn_distance, DistanceProfile, Metric, NnIndex};

// The guide's listings run as doc-tests so they cannot drift from the API.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/nn-distance.md")]
    mod nn_distance {}
    #[doc = include_str!("../../../book/src/memorization-test.md")]
    mod memorization_test {}
    #[doc = include_str!("../../../book/src/fid.md")]
    mod fid {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
