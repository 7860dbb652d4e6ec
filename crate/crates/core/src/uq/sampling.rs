use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as NormalCdf};

use crate::hfm::{FeatureDistribution, ParameterSpace, ParameterVector};

/// `r` independent draws from the feature marginals. Gaussian draws outside
/// the space bounds are rejected and redrawn.
pub fn sample_gaussian(space: &ParameterSpace, r: usize, seed: u64) -> Vec<ParameterVector> {
    let mut rng = crate::seed::rng(seed);
    let bounds = space.bounds();
    (0..r)
        .map(|_| {
            ParameterVector(
                space
                    .features
                    .iter()
                    .zip(&bounds)
                    .map(|(f, &(lo, hi))| match *f {
                        FeatureDistribution::Gaussian { mean, std } => {
                            let normal = Normal::new(mean, std).expect("validated std");
                            loop {
                                let v = normal.sample(&mut rng);
                                if v >= lo && v <= hi {
                                    break v;
                                }
                            }
                        }
                        FeatureDistribution::Uniform { lo, hi } => rng.random_range(lo..hi),
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Maps a point of the unit cube through each feature's inverse CDF,
/// truncated to the feature bounds.
pub fn unit_to_space(space: &ParameterSpace, unit: &[f64]) -> ParameterVector {
    ParameterVector(
        space
            .features
            .iter()
            .zip(unit)
            .map(|(f, &u)| match *f {
                FeatureDistribution::Gaussian { mean, std } => {
                    let (lo, hi) = f.bounds();
                    let n = NormalCdf::new(mean, std).expect("validated std");
                    let (plo, phi) = (n.cdf(lo), n.cdf(hi));
                    n.inverse_cdf(plo + u * (phi - plo)).clamp(lo, hi)
                }
                FeatureDistribution::Uniform { lo, hi } => lo + u * (hi - lo),
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_means_follow_the_marginals() {
        let space = ParameterSpace::plate();
        let r = 1000;
        let draws = sample_gaussian(&space, r, 4);
        assert_eq!(draws.len(), r);
        for (k, f) in space.features.iter().enumerate() {
            let FeatureDistribution::Gaussian { mean, std } = *f else {
                unreachable!()
            };
            let m = draws.iter().map(|t| t.0[k]).sum::<f64>() / r as f64;
            assert!((m - mean).abs() <= 4.0 * std / (r as f64).sqrt(), "feature {k}");
        }
        assert!(draws.iter().all(|t| space.contains(t)));
        assert_eq!(sample_gaussian(&space, 5, 4), draws[..5].to_vec());
    }

    #[test]
    fn unit_map_hits_bounds_and_median() {
        let space = ParameterSpace::plate();
        assert!(space.contains(&unit_to_space(&space, &[0.0; 4])));
        assert!(space.contains(&unit_to_space(&space, &[1.0; 4])));
        let mid = unit_to_space(&space, &[0.5; 4]);
        for (a, b) in mid.0.iter().zip(&space.center().0) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }
}
