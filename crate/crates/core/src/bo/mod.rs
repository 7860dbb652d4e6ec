//! Adaptive training-point selection: acquisition functions, Latin
//! hypercube designs, and the loop that couples GPR proposals with
//! incremental basis updates.

mod acquisition;
mod lhs;
mod run;

use thiserror::Error;

use crate::gpr::GprError;
use crate::hfm::{HfmError, ParameterVector};
use crate::reduce::ReduceError;

pub use acquisition::{
    acquisition_ei, acquisition_pi, argmax, propose_from, propose_next, score_candidates,
    AcquisitionConfig, AcquisitionKind,
};
pub use lhs::{lhs_sample, lhs_sample_feasible, lhs_unit};
pub use run::{
    basis_from, design_matrix, lhs_baseline, lhs_evaluations_to_tol, run_bo, run_bo_with_tests,
    simulate_lhs, targets, test_set, BoOutcome, BoRecord, BoRunConfig, BoTrace, SnapshotSet,
};

#[derive(Debug, Error)]
pub enum BoError {
    #[error("invalid BO configuration: {0}")]
    Config(String),
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("high-fidelity solve failed for theta = {theta}: {source}")]
    Hfm {
        theta: ParameterVector,
        #[source]
        source: HfmError,
    },
    #[error(transparent)]
    Reduce(#[from] ReduceError),
    #[error(transparent)]
    Gpr(#[from] GprError),
}
