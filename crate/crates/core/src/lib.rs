//! Heterogeneous treatment effect estimation with a sparse L2-SVM.
//!
//! The model classifies a binary outcome recoded to `{-1, +1}` with a linear
//! margin `W = mu + beta'Z + gamma'V` under a squared hinge loss, placing two
//! separate LASSO penalties on the causal-heterogeneity columns `Z`
//! (treatment indicators or treatment x covariate interactions) and on the
//! pre-treatment columns `V`.
//!
//! Pipeline:
//!
//! 1. [`design`] builds a [`CausalDesign`] from raw columns: factorial
//!    treatment-combination indicators or treatment interactions, standardized
//!    main effects, derived terms, and mean-one sampling weights.
//! 2. [`svm`] fits the model for a fixed [`PenaltyPair`] by iterating weighted
//!    LASSO fits ([`lasso`]) over the set of margin-active observations.
//! 3. [`tuning`] selects the penalty pair by minimizing a GCV statistic with an
//!    alternating line search that refines around the incumbent.
//! 4. [`effects`] turns a fit into conditional and average treatment effects.
//! 5. [`simulation`] replicates the two Monte Carlo studies (false discovery
//!    and discovery rates, budget-constrained payoff relative to an oracle).
//!
//! [`cli`] wires everything to CSV/JSON files for the `hte-svm` binary.

pub mod cli;
pub mod config;
pub mod design;
pub mod effects;
pub mod error;
pub mod lasso;
pub mod output;
pub mod simulation;
pub mod svm;
pub mod tuning;

pub use design::{CausalDesign, DesignSpec, RawDataset};
pub use effects::{EffectEstimates, Treatment};
pub use error::{Error, Result};
pub use lasso::{LassoProblem, LassoSolution};
pub use svm::{PenaltyPair, SvmFit};
pub use tuning::{GcvRecord, SearchSettings};
