//! Central finite-difference verification of graph gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;

/// Perturbation used for central differences.
pub const FD_STEP: f64 = 1e-6;
/// Default elementwise relative tolerance.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Magnitudes below this are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, FD_FLOOR)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: (String, usize),
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// Compares backward-pass gradients of the scalar built by `loss` against
/// central differences over every scalar in `store`. Inputs that should be
/// checked too can be registered as parameters.
pub fn check<F>(store: &ParamStore, loss: F) -> GradCheck
where
    F: Fn(&ParamStore) -> (Graph, Var),
{
    let (g, l) = loss(store);
    let analytic = g.backward(l).param_grads(store);
    let eval = |s: &ParamStore| {
        let (g, l) = loss(s);
        g.value(l)[[]]
    };
    let mut probe = store.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        checked: 0,
    };
    for (p, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = probe.values()[p].as_slice().expect("standard layout")[k];
            probe.values_mut()[p].as_slice_mut().expect("standard layout")[k] = orig + FD_STEP;
            let up = eval(&probe);
            probe.values_mut()[p].as_slice_mut().expect("standard layout")[k] = orig - FD_STEP;
            let down = eval(&probe);
            probe.values_mut()[p].as_slice_mut().expect("standard layout")[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grad.as_slice().expect("standard layout")[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = (store.names()[p].clone(), k);
            }
        }
    }
    report
}
