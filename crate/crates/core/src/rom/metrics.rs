use nalgebra::DMatrix;

use super::RomError;

/// Root mean squared error over nodes at time column `i`, divided by the
/// range (max - min) of the true field at that time.
pub fn nrmse(truth: &DMatrix<f64>, prediction: &DMatrix<f64>, i: usize) -> Result<f64, RomError> {
    if truth.shape() != prediction.shape() {
        return Err(RomError::Shape(format!(
            "truth is {:?} but prediction is {:?}",
            truth.shape(),
            prediction.shape()
        )));
    }
    if i >= truth.ncols() {
        return Err(RomError::Shape(format!(
            "time index {i} out of range for {} columns",
            truth.ncols()
        )));
    }
    let t = truth.column(i);
    let range = t.max() - t.min();
    if range <= 0.0 || !range.is_finite() {
        return Err(RomError::UndefinedNormalization { time_index: i });
    }
    let mse = (t - prediction.column(i)).norm_squared() / t.len() as f64;
    Ok(mse.sqrt() / range)
}

/// [`nrmse`] at every time column; `None` where the truth is constant.
pub fn nrmse_series(truth: &DMatrix<f64>, prediction: &DMatrix<f64>) -> Result<Vec<Option<f64>>, RomError> {
    (0..truth.ncols())
        .map(|i| match nrmse(truth, prediction, i) {
            Ok(v) => Ok(Some(v)),
            Err(RomError::UndefinedNormalization { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identical_fields_give_zero() {
        let a = DMatrix::from_fn(5, 3, |r, c| (r * 3 + c) as f64);
        assert_eq!(nrmse(&a, &a, 2).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_over_range() {
        let a = DMatrix::from_fn(6, 2, |r, _| r as f64 * 0.5);
        let b = a.add_scalar(0.2);
        assert!((nrmse(&a, &b, 1).unwrap() - 0.2 / 2.5).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_formula() {
        let mut rng = crate::seed::rng(11);
        let a = DMatrix::<f64>::from_fn(100, 1, |_, _| rng.random_range(-2.0..3.0));
        let b = DMatrix::<f64>::from_fn(100, 1, |_, _| rng.random_range(-2.0..3.0));
        let mut sq = 0.0_f64;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..100 {
            sq += (a[k] - b[k]).powi(2);
            lo = lo.min(a[k]);
            hi = hi.max(a[k]);
        }
        let want = (sq / 100.0).sqrt() / (hi - lo);
        assert!((nrmse(&a, &b, 0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn constant_truth_is_undefined() {
        let a = DMatrix::from_element(4, 2, 1.0);
        assert!(matches!(
            nrmse(&a, &a, 0),
            Err(RomError::UndefinedNormalization { time_index: 0 })
        ));
        assert_eq!(nrmse_series(&a, &a).unwrap(), vec![None, None]);
    }
}
