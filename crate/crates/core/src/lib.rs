//! # otseq
//!
//! Distances between ordered sequences of embedded segments, built on
//! entropy-regularized optimal transport over a fused cost
//! `C = C_se + alpha * C_po`: Euclidean segment distances plus a penalty that
//! grows with relative temporal offset.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`ot`] | Sinkhorn solver (plain and log-domain), exact permutation oracle, entropy, value gradient |
//! | [`costs`] | Semantic, positional (three variants) and fused cost matrices |
//! | [`seqdist`] | Fused OT distance, mean-pooling and DTW baselines, exhaustive DTW oracle |
//! | [`fewshot`] | N-way K-shot episodes, class-mean prediction, cross-entropy, benchmark reports |
//! | [`synth`] | Seeded prototype banks and the forward/reversed label regimes |
//! | [`train`] | Linear segment embedding trained through the Sinkhorn solve |
//! | [`config`], [`experiment`] | Run configuration and the driver behind the `otseq` binary |
//!
//! ```
//! use otseq::costs::SegmentSequence;
//! use otseq::seqdist::{agg_distance, cmot_distance, DistanceConfig};
//!
//! let a = SegmentSequence::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
//! let b = a.reversed();
//! // Mean pooling cannot tell a sequence from its reversal...
//! assert_eq!(agg_distance(&a, &b).unwrap(), 0.0);
//! // ...while the fused OT distance can.
//! let cfg = DistanceConfig::default();
//! assert!(cmot_distance(&a, &b, &cfg).unwrap().value > cmot_distance(&a, &a, &cfg).unwrap().value);
//! ```

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod costs;
pub mod error;
pub mod experiment;
pub mod fewshot;
pub mod ot;
pub mod seqdist;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
