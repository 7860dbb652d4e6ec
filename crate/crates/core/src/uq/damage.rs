use super::UqError;

/// Normalized damage indices of sample trajectories at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct DamageIndexSet {
    /// `sum_i (u_j(t_i) - b(t_i))^2 / sum_i b(t_i)^2` per sample.
    pub raw: Vec<f64>,
    /// `raw / max(raw)`.
    pub normalized: Vec<f64>,
    pub max_raw: f64,
}

/// Squared deviation of each trajectory from `baseline`, relative to the
/// baseline energy and scaled so the largest index is exactly 1.
pub fn damage_index(trajectories: &[Vec<f64>], baseline: &[f64]) -> Result<DamageIndexSet, UqError> {
    let energy: f64 = baseline.iter().map(|b| b * b).sum();
    if !(energy > 0.0) {
        return Err(UqError::ZeroBaseline);
    }
    let raw: Vec<f64> = trajectories
        .iter()
        .map(|u| {
            if u.len() != baseline.len() {
                return Err(UqError::Shape(format!(
                    "trajectory of length {} against baseline of length {}",
                    u.len(),
                    baseline.len()
                )));
            }
            Ok(u.iter().zip(baseline).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / energy)
        })
        .collect::<Result<_, _>>()?;
    let max_raw = raw.iter().copied().fold(0.0, f64::max);
    if !(max_raw > 0.0) {
        return Err(UqError::AllZeroDamage);
    }
    let normalized = raw
        .iter()
        .map(|&v| if v == max_raw { 1.0 } else { v / max_raw })
        .collect();
    Ok(DamageIndexSet {
        raw,
        normalized,
        max_raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_ratios() {
        // baseline energy 1; deviations chosen to give raw ratios 0.1, 0.2, 0.4
        let b = vec![1.0, 0.0];
        let tr = vec![
            vec![1.0, 0.1f64.sqrt()],
            vec![1.0 + 0.2f64.sqrt(), 0.0],
            vec![1.0, -(0.4f64.sqrt())],
        ];
        let di = damage_index(&tr, &b).unwrap();
        for (got, want) in di.raw.iter().zip([0.1, 0.2, 0.4]) {
            assert!((got - want).abs() < 1e-15);
        }
        for (got, want) in di.normalized.iter().zip([0.25, 0.5, 1.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn baseline_sample_is_zero_and_errors_are_reported() {
        let b = vec![0.5, -1.0, 2.0];
        let di = damage_index(&[b.clone(), vec![0.0, 0.0, 0.0]], &b).unwrap();
        assert_eq!(di.raw[0], 0.0);
        assert_eq!(di.normalized[1], 1.0);
        assert!(matches!(damage_index(&[b.clone()], &[0.0; 3]), Err(UqError::ZeroBaseline)));
        assert!(matches!(damage_index(&[b.clone()], &b), Err(UqError::AllZeroDamage)));
    }

    proptest! {
        #[test]
        fn normalized_in_unit_interval_with_exact_max(
            tr in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 6), 1..20),
            b in proptest::collection::vec(0.1f64..3.0, 6),
        ) {
            match damage_index(&tr, &b) {
                Ok(di) => {
                    prop_assert!(di.normalized.iter().all(|&v| (0.0..=1.0).contains(&v)));
                    prop_assert_eq!(di.normalized.iter().copied().fold(0.0, f64::max), 1.0);
                }
                Err(e) => prop_assert!(matches!(e, UqError::AllZeroDamage)),
            }
        }
    }
}
