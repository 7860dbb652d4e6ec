use ndarray::{Array2, ArrayView2, Axis};

/// Per-feature min-max scaling to `[-1, 1]`. Features with zero range map to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMax {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl MinMax {
    /// Statistics over the rows of `data` (samples x features).
    pub fn fit(data: ArrayView2<'_, f64>) -> Self {
        let lo = data
            .axis_iter(Axis(1))
            .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
            .collect();
        let hi = data
            .axis_iter(Axis(1))
            .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn forward(&self, j: usize, v: f64) -> f64 {
        let range = self.hi[j] - self.lo[j];
        if range > 0.0 {
            2.0 * (v - self.lo[j]) / range - 1.0
        } else {
            0.0
        }
    }

    pub fn inverse(&self, j: usize, v: f64) -> f64 {
        let range = self.hi[j] - self.lo[j];
        if range > 0.0 {
            self.lo[j] + 0.5 * (v + 1.0) * range
        } else {
            self.lo[j]
        }
    }

    pub fn normalize(&self, data: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = data.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| self.forward(j, v));
        }
        out
    }

    pub fn denormalize(&self, data: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = data.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| self.inverse(j, v));
        }
        out
    }

    pub fn normalize_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().enumerate().map(|(j, &v)| self.forward(j, v)).collect()
    }

    /// Flattened `lo` then `hi`, for checkpoints.
    pub fn to_flat(&self) -> Vec<f64> {
        self.lo.iter().chain(&self.hi).copied().collect()
    }

    pub fn from_flat(flat: &[f64]) -> Option<Self> {
        if flat.len() % 2 != 0 {
            return None;
        }
        let n = flat.len() / 2;
        Some(Self {
            lo: flat[..n].to_vec(),
            hi: flat[n..].to_vec(),
        })
    }
}
