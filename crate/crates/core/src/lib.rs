//! Natural policy gradient methods for entropy-regularized games.
//!
//! The crate covers two-player zero-sum matrix games (vanilla, modified and
//! optimistic NPG), their log-linear function-approximation variant, N-player
//! monotone games (optimistic NPG, extragradient, proximal point) and
//! two-player zero-sum Markov games solved by nested soft value iteration.
//! Reference solutions used as convergence targets live in [`oracles`].

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fa;
pub mod instances;
pub mod markov;
pub mod matrix_game;
pub mod monotone;
pub mod oracles;
pub mod simplex;

pub use error::{NpgError, Result};
pub use fa::{FeatureMap, PlayerFeatures, RestrictedSimplex};
pub use markov::{MarkovFeatureMap, MarkovGameSpec, QTensor, StatePolicyParams};
pub use matrix_game::{
    CostMatrix, OptimisticState, RegularizedGame, SolverConfig, SolverTrace, Status, TraceRecord,
};
pub use monotone::{MonotoneGameSpec, MultiPlayerState};
pub use oracles::OracleSolution;
pub use simplex::{ParamVector, SimplexVector};

pub use nalgebra::{DMatrix, DVector};
