//! Monte Carlo toolkit for random multiplicative cascades on b-ary trees.
//!
//! A cascade assigns each vertex of the infinite b-ary tree a nonnegative
//! mean-one weight and spreads unit mass over the boundary by multiplying
//! weights down each path. This crate simulates such cascades to finite
//! depth and exposes the machinery used to study them:
//!
//! - [`tree`]: tree addresses, cylinders, and the boundary ultrametric;
//! - [`gen`]: generator laws (i.i.d. scalar and vector, Markov kernels,
//!   exchangeable mixtures) with their size-biased companions and moment
//!   functionals;
//! - [`cascade`]: seeded depth-limited realizations, cylinder masses in
//!   log space, and total-mass trajectories;
//! - [`weights`]: weight systems perturbing a cascade, complements, and
//!   additive mass splits;
//! - [`spine`]: size-biased spine sampling, assembly of total mass from
//!   spine plus off-spine subtrees, submartingale bounds, and the
//!   nondegeneracy verdict;
//! - [`perc`]: composition with an independent beta-model pruning field,
//!   survival curves, and critical-exponent estimation;
//! - [`analysis`]: local dimension along the spine, coarse partition
//!   function spectra, and summary statistics.
//!
//! All randomness is derived from a single `u64` seed through address-keyed
//! counter streams ([`rng`]), so a full expansion and a spine simulation of
//! the same seed realize the same underlying weights node for node.

pub mod analysis;
pub mod cascade;
pub mod gen;
pub mod perc;
pub mod rng;
pub mod spine;
pub mod tree;
pub mod weights;

pub(crate) mod util;

use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("digit {digit} out of range for branching number {b}")]
    DigitOutOfRange { digit: u32, b: u32 },

    #[error("level {depth} of a {b}-ary tree exceeds the node cap of {cap}")]
    NodeCapExceeded { depth: usize, b: u32, cap: u64 },

    #[error("address of depth {addr_depth} is beyond the expanded depth {depth}")]
    DepthExceeded { addr_depth: usize, depth: usize },

    #[error("level {level} not available at expansion depth {depth}")]
    ResolutionMismatch { level: usize, depth: usize },

    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("weight decomposition bound violated at {address}: F = {value}")]
    WeightBoundViolated { address: String, value: f64 },

    #[error("all c_j vanish; the submartingale upper bound degenerates")]
    DegenerateBoundConstants,

    #[error("root mass Z = E[W F] at the root vanishes; spine sampling is undefined")]
    ZeroRootMass,

    #[error("model is degenerate (entropy index {index}); {what} requires a nondegenerate model")]
    DegenerateModel { index: f64, what: &'static str },

    #[error("empty sample")]
    EmptySample,

    #[error("no surviving cylinders at depth {0}")]
    EmptyPartition(usize),

    #[error("critical beta not bracketed on [{lo}, {hi}]: {detail}")]
    NotBracketed { lo: f64, hi: f64, detail: String },

    #[error("inconclusive statistical verdict: {0}")]
    Inconclusive(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use cascade::{expand, CascadeRealization, MassTrajectory};
pub use gen::{
    ExchangeableMixtureLaw, GeneratorLaw, GeneratorModel, MarkovKernelLaw, RootWeight, ScalarLaw,
    VectorLaw,
};
pub use spine::{sample_spine, NondegeneracyReport, SpineRealization, Verdict};
pub use tree::{Branching, TreeAddress, DEFAULT_NODE_CAP};
pub use weights::{WeightSystem, WeightedMasses};
