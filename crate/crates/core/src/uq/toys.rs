//! Analytic test functions with known sensitivity indices.

use std::f64::consts::PI;

use crate::hfm::{FeatureDistribution, ParameterSpace};

/// `sin x1 + a sin^2 x2 + b x3^4 sin x1`.
pub fn ishigami(x: &[f64], a: f64, b: f64) -> f64 {
    x[0].sin() + a * x[1].sin().powi(2) + b * x[2].powi(4) * x[0].sin()
}

/// Three features uniform on `[-pi, pi]`.
pub fn ishigami_space() -> ParameterSpace {
    ParameterSpace::new(
        vec!["x1".into(), "x2".into(), "x3".into()],
        vec![FeatureDistribution::Uniform { lo: -PI, hi: PI }; 3],
    )
    .expect("static space is valid")
}

/// Closed-form first-order and total indices of [`ishigami`].
pub fn ishigami_indices(a: f64, b: f64) -> ([f64; 3], [f64; 3]) {
    let pi4 = PI.powi(4);
    let pi8 = pi4 * pi4;
    let v1 = 0.5 * (1.0 + b * pi4 / 5.0).powi(2);
    let v2 = a * a / 8.0;
    let v13 = b * b * pi8 * (1.0 / 18.0 - 1.0 / 50.0);
    let v = v1 + v2 + v13;
    ([v1 / v, v2 / v, 0.0], [(v1 + v13) / v, v2 / v, v13 / v])
}
