//! Few-shot DDoS detection with dual-space prototypical networks.
//!
//! The crate covers the whole experimental pipeline: flow-CSV ingestion and
//! cleaning ([`flowdata`]), robust scaling and forest-based feature selection
//! ([`preprocess`]), the MLP / attention-MLP embedding network with exact
//! backpropagation ([`nn`]), episodic prototypical machinery and the
//! dual-space loss ([`fewshot`]), the four training regimes ([`training`]),
//! seeded multi-run benchmarking ([`evaluation`]) and synthetic data
//! ([`synth`]).
//!
//! Data-parallel loops (forest trees, benchmark runs, batch estimation) run on
//! rayon when the `parallel` feature is enabled and fall back to plain
//! iteration otherwise; see [`exec`].

// `!(x >= lo)` guards are written that way so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod fewshot;
pub mod flowdata;
pub mod gradcheck;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use flowdata::LabeledDataset;
