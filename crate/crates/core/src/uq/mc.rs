use nalgebra::DMatrix;

use super::{Surrogate, UqError};
use crate::hfm::ParameterVector;

/// Streaming pointwise mean and variance (Welford).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStats {
    count: usize,
    mean: DMatrix<f64>,
    m2: DMatrix<f64>,
}

impl FieldStats {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            count: 0,
            mean: DMatrix::zeros(rows, cols),
            m2: DMatrix::zeros(rows, cols),
        }
    }

    pub fn push(&mut self, x: &DMatrix<f64>) -> Result<(), UqError> {
        if x.shape() != self.mean.shape() {
            return Err(UqError::Shape(format!(
                "field of shape {:?}, expected {:?}",
                x.shape(),
                self.mean.shape()
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x.iter()) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    /// Sample standard deviation with the `r - 1` denominator.
    pub fn std(&self) -> DMatrix<f64> {
        let denom = (self.count.max(2) - 1) as f64;
        self.m2.map(|s| (s.max(0.0) / denom).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McOptions {
    /// Parameter vectors per surrogate call.
    pub chunk: usize,
    /// Output rows whose full per-sample series are kept (for damage indices).
    pub track_rows: Vec<usize>,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            chunk: 64,
            track_rows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UqResult {
    pub mean: DMatrix<f64>,
    pub std: DMatrix<f64>,
    pub r: usize,
    /// `traces[k][j]` is the output row `track_rows[k]` of sample `j`.
    pub traces: Vec<Vec<Vec<f64>>>,
    pub track_rows: Vec<usize>,
}

impl UqResult {
    /// `node,t_index,time,mean,std` rows for the selected output rows.
    pub fn to_csv(&self, times: &[f64], rows: &[usize]) -> String {
        let mut out = String::from("node,t_index,time,mean,std\n");
        for &node in rows {
            for i in 0..self.mean.ncols() {
                let t = times.get(i).copied().unwrap_or(f64::NAN);
                out.push_str(&format!(
                    "{node},{i},{t:e},{:e},{:e}\n",
                    self.mean[(node, i)],
                    self.std[(node, i)]
                ));
            }
        }
        out
    }
}

/// Pointwise mean and sample standard deviation of the surrogate outputs
/// over `samples`.
pub fn monte_carlo_uq(
    surrogate: &dyn Surrogate,
    samples: &[ParameterVector],
    options: &McOptions,
) -> Result<UqResult, UqError> {
    if samples.len() < 2 {
        return Err(UqError::Config("Monte Carlo needs at least 2 samples".into()));
    }
    let mut stats: Option<FieldStats> = None;
    let mut traces = vec![Vec::with_capacity(samples.len()); options.track_rows.len()];
    for chunk in samples.chunks(options.chunk.max(1)) {
        let fields = surrogate.evaluate(chunk)?;
        if fields.len() != chunk.len() {
            return Err(UqError::Shape("surrogate returned the wrong number of fields".into()));
        }
        for f in &fields {
            let s = stats.get_or_insert_with(|| FieldStats::new(f.nrows(), f.ncols()));
            s.push(f)?;
            for (k, &row) in options.track_rows.iter().enumerate() {
                if row >= f.nrows() {
                    return Err(UqError::Shape(format!("tracked row {row} out of range")));
                }
                traces[k].push(f.row(row).iter().copied().collect());
            }
        }
    }
    let stats = stats.expect("at least two samples");
    Ok(UqResult {
        mean: stats.mean().clone(),
        std: stats.std(),
        r: stats.count(),
        traces,
        track_rows: options.track_rows.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hfm::ParameterSpace;
    use crate::uq::{sample_gaussian, FnSurrogate};
    use proptest::prelude::*;

    #[test]
    fn identical_samples_have_zero_std() {
        let s = FnSurrogate(|_: &ParameterVector| DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 0.5]));
        let thetas = vec![ParameterVector(vec![0.0]); 5];
        let res = monte_carlo_uq(&s, &thetas, &McOptions::default()).unwrap();
        assert!(res.std.iter().all(|&v| v == 0.0));
        assert_eq!(res.mean, DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 0.5]));
    }

    #[test]
    fn two_samples_closed_form() {
        let s = FnSurrogate(|t: &ParameterVector| DMatrix::from_fn(3, 2, |r, c| t.0[0] * (r + c) as f64 + r as f64));
        let thetas = vec![ParameterVector(vec![1.0]), ParameterVector(vec![4.0])];
        let opts = McOptions {
            chunk: 1,
            track_rows: vec![2],
        };
        let res = monte_carlo_uq(&s, &thetas, &opts).unwrap();
        let a = s.evaluate(&thetas[..1]).unwrap().remove(0);
        let b = s.evaluate(&thetas[1..]).unwrap().remove(0);
        for k in 0..6 {
            assert!((res.mean[k] - 0.5 * (a[k] + b[k])).abs() < 1e-14);
            assert!((res.std[k] - (a[k] - b[k]).abs() / 2f64.sqrt()).abs() < 1e-14);
        }
        assert_eq!(res.traces[0][1], vec![b[(2, 0)], b[(2, 1)]]);
    }

    #[test]
    fn linear_toy_matches_gaussian_propagation() {
        let space = ParameterSpace::gaussian(&[("E", 68.9, 1.332)]).unwrap();
        let c = 2.5;
        let s = FnSurrogate(move |t: &ParameterVector| DMatrix::from_element(1, 1, c * t.0[0]));
        for r in [1000usize, 4000] {
            let res = monte_carlo_uq(&s, &sample_gaussian(&space, r, 9), &McOptions::default()).unwrap();
            let (m, sd) = (c * 68.9, c * 1.332);
            assert!((res.mean[0] - m).abs() <= 3.0 * sd / (r as f64).sqrt());
            assert!((res.std[0] - sd).abs() <= 0.1 * sd);
        }
    }

    #[test]
    fn rejects_a_single_sample() {
        let s = FnSurrogate(|_: &ParameterVector| DMatrix::zeros(1, 1));
        assert!(monte_carlo_uq(&s, &[ParameterVector(vec![0.0])], &McOptions::default()).is_err());
    }

    proptest! {
        #[test]
        fn welford_matches_two_pass(xs in proptest::collection::vec(-1e3f64..1e3, 2..40)) {
            let mut st = FieldStats::new(1, 1);
            for &x in &xs {
                st.push(&DMatrix::from_element(1, 1, x)).unwrap();
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!((st.mean()[0] - mean).abs() <= 1e-9 * mean.abs().max(1.0));
            prop_assert!((st.std()[0] - var.sqrt()).abs() <= 1e-9 * var.sqrt().max(1.0));
            prop_assert!(st.std()[0] >= 0.0);
        }
    }
}
