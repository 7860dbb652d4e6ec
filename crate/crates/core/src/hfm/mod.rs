//! High-fidelity stand-in solver and the parameter space it is driven by.

mod params;
mod solver;

use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::io::{self, IoError, Meta};

pub use params::{
    derive_material, EffectiveMaterial, FeatureDistribution, ParameterSpace, ParameterVector,
    E_TEMP_COEFF, NU_TEMP_COEFF, RHO_TEMP_COEFF, SIGMA_BOUND,
};
pub use solver::{
    cfl_limit, simulate, tone_burst, Edge, GridConfig, HighFidelityModel, PlateModel,
    SourceConfig, TimeConfig,
};

#[derive(Debug, Error)]
pub enum HfmError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid material: {0}")]
    InvalidMaterial(String),
    #[error("CFL violation: dt = {dt:e} s exceeds the stable limit {limit:e} s for wave speed {wave_speed:.1} m/s")]
    Cfl {
        dt: f64,
        limit: f64,
        wave_speed: f64,
    },
    #[error("solution diverged (non-finite field) at step {step}")]
    Divergence { step: usize },
    #[error("high-fidelity model failed: {0}")]
    External(String),
}

/// `N_h x N_t` field samples; column `i` is the solution at `times[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    pub values: DMatrix<f64>,
    pub times: Vec<f64>,
}

impl SnapshotMatrix {
    pub fn new(values: DMatrix<f64>, times: Vec<f64>) -> Self {
        debug_assert_eq!(values.ncols(), times.len());
        Self { values, times }
    }

    /// Wraps a matrix with unit-spaced time stamps.
    pub fn from_matrix(values: DMatrix<f64>) -> Self {
        let times = (0..values.ncols()).map(|i| i as f64).collect();
        Self { values, times }
    }

    pub fn n_h(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.values.ncols()
    }

    /// Writes the array file plus a `.meta` sidecar holding `meta` and the time stamps.
    pub fn save(&self, path: &Path, meta: &Meta) -> Result<(), IoError> {
        io::write_matrix(path, &self.values)?;
        let mut meta = meta.clone();
        meta.set("n_h", self.n_h());
        meta.set("n_t", self.n_t());
        meta.set("times", io::join_f64(&self.times));
        meta.write(&io::sidecar_path(path))
    }

    /// Loads an array file; time stamps come from the sidecar when present.
    pub fn load(path: &Path) -> Result<(Self, Meta), IoError> {
        let values = io::read_matrix(path)?;
        let side = io::sidecar_path(path);
        if side.exists() {
            let meta = Meta::read(&side)?;
            let times = meta.require_f64_list("times", &side)?;
            if times.len() == values.ncols() {
                return Ok((Self { values, times }, meta));
            }
            return Err(IoError::BadValue {
                path: side,
                key: "times".into(),
                value: format!("{} stamps for {} columns", times.len(), values.ncols()),
            });
        }
        Ok((Self::from_matrix(values), Meta::new()))
    }
}

/// Key/value description of a parameter vector, grid, time and source config.
pub fn describe(theta: &ParameterVector, space: &ParameterSpace, model: &PlateModel) -> Meta {
    let mut meta = Meta::new();
    for (name, v) in space.names.iter().zip(&theta.0) {
        meta.set(format!("theta.{name}"), format!("{v:?}"));
    }
    meta.set("grid.nx", model.grid.nx)
        .set("grid.ny", model.grid.ny)
        .set("grid.dx", format!("{:?}", model.grid.dx))
        .set("grid.thickness", format!("{:?}", model.grid.thickness))
        .set(
            "grid.fixed_edges",
            model
                .grid
                .fixed_edges
                .iter()
                .map(|e| format!("{e:?}").to_lowercase())
                .collect::<Vec<_>>()
                .join(","),
        )
        .set("time.dt", format!("{:?}", model.time.dt))
        .set("time.steps", model.time.steps)
        .set("time.keep_every", model.time.keep_every)
        .set("source.ix", model.source.ix)
        .set("source.iy", model.source.iy)
        .set("source.amplitude", format!("{:?}", model.source.amplitude))
        .set("source.frequency", format!("{:?}", model.source.frequency))
        .set("source.peaks", model.source.peaks);
    meta
}
