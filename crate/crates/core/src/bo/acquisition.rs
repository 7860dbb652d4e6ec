use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::{lhs, BoError};
use crate::gpr::GprModel;
use crate::hfm::{ParameterSpace, ParameterVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcquisitionKind {
    /// Probability of improvement.
    Pi,
    /// Expected improvement.
    Ei,
}

impl AcquisitionKind {
    pub fn name(self) -> &'static str {
        match self {
            AcquisitionKind::Pi => "pi",
            AcquisitionKind::Ei => "ei",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pi" => Some(AcquisitionKind::Pi),
            "ei" => Some(AcquisitionKind::Ei),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionConfig {
    pub kind: AcquisitionKind,
    /// Exploration margin, in units of the target standard deviation.
    pub xi: f64,
    /// Candidate pool size per proposal.
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            kind: AcquisitionKind::Ei,
            xi: 0.01,
            pool_size: 10_000,
            seed: 0,
        }
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// `Phi(delta / sigma)` with `delta = mu - f_max - xi`.
pub fn acquisition_pi(mu: f64, sigma: f64, f_max: f64, xi: f64) -> f64 {
    let delta = mu - f_max - xi;
    if sigma <= 0.0 {
        return if delta > 0.0 { 1.0 } else { 0.0 };
    }
    std_normal().cdf(delta / sigma)
}

/// `sigma phi(delta / sigma) + delta Phi(delta / sigma)`.
pub fn acquisition_ei(mu: f64, sigma: f64, f_max: f64, xi: f64) -> f64 {
    let delta = mu - f_max - xi;
    if sigma <= 0.0 {
        return delta.max(0.0);
    }
    let n = std_normal();
    let z = delta / sigma;
    (sigma * n.pdf(z) + delta * n.cdf(z)).max(0.0)
}

/// Scores every candidate under the model; `xi` is scaled by the model's
/// target standard deviation.
pub fn score_candidates(
    model: &GprModel,
    acq: &AcquisitionConfig,
    candidates: &[ParameterVector],
) -> Result<Vec<f64>, BoError> {
    let f_max = model.max_target();
    let xi = acq.xi * model.target_scale();
    candidates
        .iter()
        .map(|c| {
            let (mu, var) = model.posterior(&c.0)?;
            let sigma = var.max(0.0).sqrt();
            Ok(match acq.kind {
                AcquisitionKind::Pi => acquisition_pi(mu, sigma, f_max, xi),
                AcquisitionKind::Ei => acquisition_ei(mu, sigma, f_max, xi),
            })
        })
        .collect()
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        match best {
            Some(b) if scores[b] >= s => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Maximizes the acquisition over a given candidate list.
pub fn propose_from(
    model: &GprModel,
    acq: &AcquisitionConfig,
    candidates: &[ParameterVector],
) -> Result<ParameterVector, BoError> {
    let scores = score_candidates(model, acq, candidates)?;
    let i = argmax(&scores).ok_or(BoError::EmptyPool)?;
    Ok(candidates[i].clone())
}

/// Maximizes the acquisition over a seeded LHS pool of `acq.pool_size`
/// points, keeping only candidates accepted by `feasible`.
pub fn propose_next(
    model: &GprModel,
    acq: &AcquisitionConfig,
    space: &ParameterSpace,
    feasible: &dyn Fn(&ParameterVector) -> bool,
) -> Result<ParameterVector, BoError> {
    if acq.pool_size == 0 {
        return Err(BoError::EmptyPool);
    }
    let pool: Vec<ParameterVector> = lhs::lhs_sample(space, acq.pool_size, acq.seed)
        .into_iter()
        .filter(|t| feasible(t))
        .collect();
    propose_from(model, acq, &pool)
}
