use rand::seq::SliceRandom;
use rand::Rng;

use crate::hfm::{ParameterSpace, ParameterVector};

/// Latin hypercube in the unit cube: `count` strata per axis, one point per
/// stratum, strata permuted independently per axis.
pub fn lhs_unit<R: Rng>(dim: usize, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dim]; count];
    let mut order: Vec<usize> = (0..count).collect();
    for d in 0..dim {
        order.shuffle(rng);
        for (p, &stratum) in points.iter_mut().zip(&order) {
            p[d] = (stratum as f64 + rng.random::<f64>()) / count as f64;
        }
    }
    points
}

/// Latin hypercube spread uniformly over the bounding box of `space`.
pub fn lhs_sample(space: &ParameterSpace, count: usize, seed: u64) -> Vec<ParameterVector> {
    let mut rng = crate::seed::rng(seed);
    let bounds = space.bounds();
    lhs_unit(space.dim(), count, &mut rng)
        .into_iter()
        .map(|u| {
            ParameterVector(
                u.iter()
                    .zip(&bounds)
                    .map(|(u, (lo, hi))| lo + u * (hi - lo))
                    .collect(),
            )
        })
        .collect()
}

/// [`lhs_sample`], redrawn with derived seeds until every point is feasible.
/// Returns `None` after `max_draws` failed attempts.
pub fn lhs_sample_feasible(
    space: &ParameterSpace,
    count: usize,
    seed: u64,
    feasible: &dyn Fn(&ParameterVector) -> bool,
    max_draws: usize,
) -> Option<Vec<ParameterVector>> {
    let mut s = seed;
    for draw in 0..max_draws {
        let pts = lhs_sample(space, count, s);
        if pts.iter().all(|p| feasible(p)) {
            return Some(pts);
        }
        s = crate::seed::derive(seed, &format!("lhs-redraw-{}", draw + 1));
    }
    None
}
