//! Generalization bounds for autoencoders evaluated with an entry-wise
//! margin reconstruction loss, and an autoencoder-assisted
//! cluster-then-label semi-supervised learner.
//!
//! Modules, bottom-up: [`matrix`] and [`nn`] (networks and SGD training),
//! [`losses`] (margin/squared/L2 reconstruction measures), [`bounds`]
//! (spectral-norm complexity, generalization gap, μ bounds), [`geometry`]
//! (cluster margins, decoder Lipschitz estimates), [`data`] (IDX/AEB1
//! ingestion, synthetic clustered data, splits), [`ssl`] and the
//! [`experiment`] harness behind the `aebound` CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod losses;
pub mod matrix;
pub mod nn;
pub mod ssl;

pub use error::{Error, Result};
