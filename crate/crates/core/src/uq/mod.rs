//! Forward uncertainty propagation through a surrogate: Monte Carlo mean and
//! standard deviation fields, damage indices and Sobol sensitivity indices.

mod damage;
mod mc;
mod sampling;
mod sobol;
pub mod toys;

use nalgebra::DMatrix;
use thiserror::Error;

pub use damage::{damage_index, DamageIndexSet};
pub use mc::{monte_carlo_uq, FieldStats, McOptions, UqResult};
pub use sampling::{sample_gaussian, unit_to_space};
pub use sobol::{
    analyze, evaluate_design, saltelli_sample, sobol_first, sobol_total, DesignMode, DesignOutputs, SaltelliDesign, SobolIndex,
    SobolResult, BOOTSTRAP_RESAMPLES,
};

use crate::hfm::ParameterVector;
use crate::rom::RomBundle;

#[derive(Debug, Error)]
pub enum UqError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("surrogate evaluation failed at {theta}: {message}")]
    Evaluation { theta: ParameterVector, message: String },
    #[error("baseline trajectory has zero norm")]
    ZeroBaseline,
    #[error("every damage index is zero; normalization is undefined")]
    AllZeroDamage,
    #[error("output variance is zero at time index {time_index}")]
    ZeroVariance { time_index: usize },
    #[error("inconsistent data: {0}")]
    Shape(String),
}

/// Anything that maps parameter vectors to output fields.
pub trait Surrogate {
    /// One output matrix per parameter vector, all of the same shape.
    fn evaluate(&self, thetas: &[ParameterVector]) -> Result<Vec<DMatrix<f64>>, UqError>;
}

/// A trained bundle predicting `n_t` steps.
#[derive(Debug, Clone, Copy)]
pub struct BundleSurrogate<'a> {
    pub bundle: &'a RomBundle,
    pub n_t: usize,
}

impl Surrogate for BundleSurrogate<'_> {
    fn evaluate(&self, thetas: &[ParameterVector]) -> Result<Vec<DMatrix<f64>>, UqError> {
        match self.bundle.predict_many(thetas, self.n_t) {
            Ok(p) => Ok(p.into_iter().map(|p| p.snapshot.values).collect()),
            // report the first parameter of the failing batch
            Err(e) => Err(UqError::Evaluation {
                theta: thetas.first().cloned().unwrap_or(ParameterVector(Vec::new())),
                message: e.to_string(),
            }),
        }
    }
}

/// Wraps a per-parameter closure as a [`Surrogate`].
pub struct FnSurrogate<F>(pub F);

impl<F> Surrogate for FnSurrogate<F>
where
    F: Fn(&ParameterVector) -> DMatrix<f64>,
{
    fn evaluate(&self, thetas: &[ParameterVector]) -> Result<Vec<DMatrix<f64>>, UqError> {
        Ok(thetas.iter().map(&self.0).collect())
    }
}
