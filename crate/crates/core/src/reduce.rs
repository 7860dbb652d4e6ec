//! Incremental truncated SVD over streaming snapshot batches, plus the
//! projection and error estimators that drive training-point selection.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::hfm::ParameterVector;
use crate::io::{self, IoError, Meta};

/// Orthogonality drift `max |U^T U - I|` above which the basis is re-orthonormalized.
pub const REORTHO_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error("dimension mismatch: expected {expected} rows, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("reconstruction error undefined for a zero-norm snapshot matrix")]
    ZeroNorm,
    #[error("mean test error needs at least one test snapshot matrix")]
    EmptyTestSet,
    #[error("truncation tolerance must lie in (0, 1), got {0}")]
    Tolerance(f64),
    #[error("cannot pad rank {rank} to {target}: {reason}")]
    Padding {
        rank: usize,
        target: usize,
        reason: &'static str,
    },
    #[error("compression ratio undefined before any columns were seen")]
    NoColumns,
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Truncated left singular basis of every column fed so far.
///
/// Truncation shares one discarded-energy budget across all updates: the
/// energy thrown away in total never exceeds `eps_svd^2` times the energy of
/// all columns seen, so the relative reconstruction error of the whole
/// stream stays below `eps_svd`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBasis {
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    eps_svd: f64,
    columns_seen: usize,
    total_energy: f64,
    discarded_energy: f64,
}

impl ReducedBasis {
    pub fn new(eps_svd: f64) -> Result<Self, ReduceError> {
        if !(eps_svd > 0.0 && eps_svd < 1.0) {
            return Err(ReduceError::Tolerance(eps_svd));
        }
        Ok(Self {
            u: DMatrix::zeros(0, 0),
            sigma: Vec::new(),
            eps_svd,
            columns_seen: 0,
            total_energy: 0.0,
            discarded_energy: 0.0,
        })
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.sigma
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn eps_svd(&self) -> f64 {
        self.eps_svd
    }

    pub fn columns_seen(&self) -> usize {
        self.columns_seen
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// Row count once the first non-zero batch arrived.
    pub fn n_h(&self) -> Option<usize> {
        (!self.is_empty()).then(|| self.u.nrows())
    }

    /// `max |U^T U - I|`.
    pub fn orthogonality_drift(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let g = self.u.tr_mul(&self.u);
        let mut worst: f64 = 0.0;
        for j in 0..g.ncols() {
            for i in 0..g.nrows() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Folds a block of columns into the basis.
    pub fn update(&mut self, batch: &DMatrix<f64>) -> Result<(), ReduceError> {
        if let Some(n_h) = self.n_h() {
            if batch.nrows() != n_h {
                return Err(ReduceError::Dimension {
                    expected: n_h,
                    got: batch.nrows(),
                });
            }
        }
        self.columns_seen += batch.ncols();
        let energy = batch.norm_squared();
        if energy == 0.0 {
            return Ok(());
        }
        self.total_energy += energy;

        let (stacked, core) = if self.is_empty() {
            // first batch: SVD of the batch itself
            let qr = batch.clone().qr();
            (qr.q(), qr.r())
        } else {
            let r = self.rank();
            let b = batch.ncols();
            // classical Gram-Schmidt, applied twice
            let mut p = self.u.tr_mul(batch);
            let mut resid = batch - &self.u * &p;
            let p2 = self.u.tr_mul(&resid);
            resid -= &self.u * &p2;
            p += p2;
            let qr = resid.qr();
            let q = qr.q();
            let rr = qr.r();
            let mut k = DMatrix::zeros(r + b.min(q.ncols()), r + b);
            for i in 0..r {
                k[(i, i)] = self.sigma[i];
            }
            k.view_mut((0, r), (r, b)).copy_from(&p);
            k.view_mut((r, r), (rr.nrows(), b)).copy_from(&rr);
            let mut stacked = DMatrix::zeros(self.u.nrows(), r + q.ncols());
            stacked.columns_mut(0, r).copy_from(&self.u);
            stacked.columns_mut(r, q.ncols()).copy_from(&q);
            (stacked, k)
        };

        let svd = core.svd(true, false);
        let uk = svd.u.expect("left vectors requested");
        let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        let keep = self.budgeted_rank(&sv);
        self.discarded_energy += sv[keep..].iter().map(|s| s * s).sum::<f64>();
        self.u = &stacked * uk.columns(0, keep);
        self.sigma = sv[..keep].to_vec();

        if self.orthogonality_drift() > REORTHO_THRESHOLD {
            self.reorthonormalize();
        }
        Ok(())
    }

    /// Splits a snapshot matrix into `n_batches` contiguous column blocks and
    /// feeds them in order.
    pub fn update_in_batches(
        &mut self,
        snapshots: &DMatrix<f64>,
        n_batches: usize,
    ) -> Result<(), ReduceError> {
        let n = snapshots.ncols();
        let n_batches = n_batches.clamp(1, n.max(1));
        let mut start = 0;
        for i in 0..n_batches {
            let end = (i + 1) * n / n_batches;
            if end > start {
                self.update(&snapshots.columns(start, end - start).into_owned())?;
            }
            start = end;
        }
        Ok(())
    }

    /// Smallest rank whose tail still fits the remaining discard budget.
    fn budgeted_rank(&self, sv: &[f64]) -> usize {
        let allowed = self.eps_svd * self.eps_svd * self.total_energy - self.discarded_energy;
        let mut tail = 0.0;
        let mut keep = sv.len();
        while keep > 0 {
            let s = sv[keep - 1];
            if tail + s * s > allowed {
                break;
            }
            tail += s * s;
            keep -= 1;
        }
        keep
    }

    fn reorthonormalize(&mut self) {
        let scaled = &self.u * DMatrix::from_diagonal(&DVector::from_vec(self.sigma.clone()));
        let qr = scaled.qr();
        let q = qr.q();
        let svd = qr.r().svd(true, false);
        self.u = q * svd.u.expect("left vectors requested");
        self.sigma = svd.singular_values.iter().copied().collect();
    }

    /// Writes `U` in the shared array format and a sidecar with rank,
    /// tolerance, counters and singular values.
    pub fn save(&self, path: &Path) -> Result<(), ReduceError> {
        io::write_matrix(path, &self.u)?;
        let mut meta = Meta::new();
        meta.set("rank", self.rank())
            .set("eps_svd", format!("{:?}", self.eps_svd))
            .set("columns_seen", self.columns_seen)
            .set("total_energy", format!("{:?}", self.total_energy))
            .set("discarded_energy", format!("{:?}", self.discarded_energy))
            .set("singular_values", io::join_f64(&self.sigma));
        meta.write(&io::sidecar_path(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ReduceError> {
        let u = io::read_matrix(path)?;
        let side = io::sidecar_path(path);
        let meta = Meta::read(&side)?;
        let rank: usize = meta.require("rank", &side)?;
        let sigma = meta.require_f64_list("singular_values", &side)?;
        if sigma.len() != rank || u.ncols() != rank {
            return Err(IoError::BadValue {
                path: side,
                key: "rank".into(),
                value: format!("{rank} vs {} columns, {} singular values", u.ncols(), sigma.len()),
            }
            .into());
        }
        let mut basis = Self::new(meta.require("eps_svd", &side)?)?;
        basis.u = u;
        basis.sigma = sigma;
        basis.columns_seen = meta.require("columns_seen", &side)?;
        basis.total_energy = meta.require("total_energy", &side)?;
        basis.discarded_energy = meta.require("discarded_energy", &side)?;
        Ok(basis)
    }
}

/// Functional form of [`ReducedBasis::update`].
pub fn svd_update(
    mut basis: ReducedBasis,
    batch: &DMatrix<f64>,
) -> Result<ReducedBasis, ReduceError> {
    basis.update(batch)?;
    Ok(basis)
}

/// Smallest rank `r` with `sqrt(sum_{i>r} s_i^2 / sum_i s_i^2) <= eps_svd`.
/// Expects non-increasing singular values; an all-zero spectrum gives 0.
pub fn truncate(sigma: &[f64], eps_svd: f64) -> usize {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0;
    }
    let allowed = eps_svd * eps_svd * total;
    let mut tail = 0.0;
    let mut r = sigma.len();
    while r > 0 && tail + sigma[r - 1] * sigma[r - 1] <= allowed {
        tail += sigma[r - 1] * sigma[r - 1];
        r -= 1;
    }
    r
}

/// Truncated left singular vectors of `s` from one dense SVD.
pub fn direct_basis(s: &DMatrix<f64>, eps_svd: f64) -> DMatrix<f64> {
    let svd = s.clone().svd(true, false);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let r = truncate(&sv, eps_svd);
    svd.u.expect("left vectors requested").columns(0, r).into_owned()
}

fn check_rows(u: &DMatrix<f64>, rows: usize) -> Result<(), ReduceError> {
    if u.nrows() != rows {
        return Err(ReduceError::Dimension {
            expected: u.nrows(),
            got: rows,
        });
    }
    Ok(())
}

/// Reduced coordinates `U^T S`.
pub fn project(u: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>, ReduceError> {
    check_rows(u, s.nrows())?;
    Ok(u.tr_mul(s))
}

/// Full field `U c`.
pub fn reconstruct(u: &DMatrix<f64>, coords: &DMatrix<f64>) -> Result<DMatrix<f64>, ReduceError> {
    if coords.nrows() != u.ncols() {
        return Err(ReduceError::Dimension {
            expected: u.ncols(),
            got: coords.nrows(),
        });
    }
    Ok(u * coords)
}

/// `||S - U U^T S||_F / ||S||_F`.
pub fn reconstruction_error(s: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<f64, ReduceError> {
    let norm = s.norm();
    if norm == 0.0 {
        return Err(ReduceError::ZeroNorm);
    }
    if u.ncols() == 0 {
        return Ok(1.0);
    }
    check_rows(u, s.nrows())?;
    let resid = s - u * u.tr_mul(s);
    Ok((resid.norm() / norm).min(1.0))
}

/// Mean reconstruction error over a set of test snapshot matrices.
pub fn mean_test_error(tests: &[&DMatrix<f64>], u: &DMatrix<f64>) -> Result<f64, ReduceError> {
    if tests.is_empty() {
        return Err(ReduceError::EmptyTestSet);
    }
    let mut sum = 0.0;
    for s in tests {
        sum += reconstruction_error(s, u)?;
    }
    Ok(sum / tests.len() as f64)
}

/// Basis rank over the number of columns compressed.
pub fn compression_ratio(basis: &ReducedBasis) -> Result<f64, ReduceError> {
    if basis.columns_seen() == 0 {
        return Err(ReduceError::NoColumns);
    }
    Ok(basis.rank() as f64 / basis.columns_seen() as f64)
}

/// Appends zero columns up to `target`, which must be a perfect square.
pub fn zero_pad_basis(u: &DMatrix<f64>, target: usize) -> Result<DMatrix<f64>, ReduceError> {
    let rank = u.ncols();
    if target < rank {
        return Err(ReduceError::Padding {
            rank,
            target,
            reason: "target below current rank",
        });
    }
    let side = (target as f64).sqrt().round() as usize;
    if side * side != target {
        return Err(ReduceError::Padding {
            rank,
            target,
            reason: "target is not a perfect square",
        });
    }
    let mut padded = DMatrix::zeros(u.nrows(), target);
    padded.columns_mut(0, rank).copy_from(u);
    Ok(padded)
}

/// Smallest perfect square `>= rank` whose side is a multiple of `multiple`.
pub fn padded_rank(rank: usize, multiple: usize) -> usize {
    let multiple = multiple.max(1);
    let mut side = multiple;
    while side * side < rank {
        side += multiple;
    }
    side * side
}

/// Training parameters paired with their current reconstruction errors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    pub entries: Vec<(ParameterVector, f64)>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.entries.iter().map(|(t, _)| t.0.clone()).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, e)| *e).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::seed::rng(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn truncate_examples() {
        assert_eq!(truncate(&[1.0, 0.0, 0.0], 1e-3), 1);
        // rank 1 leaves sqrt(1/2) > 0.5
        assert_eq!(truncate(&[1.0, 1.0], 0.5), 2);
        assert_eq!(truncate(&[0.0, 0.0], 0.1), 0);
        assert_eq!(truncate(&[], 0.1), 0);
    }

    #[test]
    fn rank_one_batch_is_exact() {
        let a = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
        let b = DVector::from_vec(vec![3.0, -1.0, 2.0]);
        let s = &a * b.transpose();
        let basis = svd_update(ReducedBasis::new(1e-6).unwrap(), &s).unwrap();
        assert_eq!(basis.rank(), 1);
        assert!(reconstruction_error(&s, basis.u()).unwrap() < 1e-12);
    }

    #[test]
    fn batches_match_direct_svd() {
        let s = gaussian(10, 8, 3);
        let mut basis = ReducedBasis::new(1e-10).unwrap();
        basis.update_in_batches(&s, 4).unwrap();
        let direct = direct_basis(&s, 1e-10);
        let e_inc = reconstruction_error(&s, basis.u()).unwrap();
        let e_dir = reconstruction_error(&s, &direct).unwrap();
        assert!((e_inc - e_dir).abs() < 1e-8, "{e_inc} vs {e_dir}");
        assert_eq!(basis.columns_seen(), 8);

        let svd = s.clone().svd(false, false);
        for (a, b) in basis.singular_values().iter().zip(svd.singular_values.iter()) {
            assert!((a - b).abs() < 1e-9 * b.max(1.0));
        }
    }

    #[test]
    fn zero_batch_leaves_basis_unchanged() {
        let mut basis = ReducedBasis::new(1e-6).unwrap();
        basis.update(&gaussian(6, 3, 1)).unwrap();
        let before = basis.clone();
        basis.update(&DMatrix::zeros(6, 2)).unwrap();
        assert_eq!(basis.u(), before.u());
        assert_eq!(basis.singular_values(), before.singular_values());
        assert_eq!(basis.columns_seen(), 5);
    }

    #[test]
    fn row_mismatch_is_rejected() {
        let mut basis = ReducedBasis::new(1e-6).unwrap();
        basis.update(&gaussian(6, 3, 1)).unwrap();
        assert!(matches!(
            basis.update(&gaussian(5, 1, 2)),
            Err(ReduceError::Dimension { expected: 6, got: 5 })
        ));
        assert!(ReducedBasis::new(0.0).is_err());
        assert!(ReducedBasis::new(1.0).is_err());
    }

    #[test]
    fn projection_round_trips() {
        let mut basis = ReducedBasis::new(1e-12).unwrap();
        basis.update(&gaussian(12, 4, 5)).unwrap();
        let u = basis.u();
        let coords = project(u, u).unwrap();
        assert!((coords - DMatrix::identity(4, 4)).amax() < 1e-12);

        let s = u * gaussian(4, 6, 6);
        let back = reconstruct(u, &project(u, &s).unwrap()).unwrap();
        assert!((back - &s).amax() < 1e-10);
        assert!(reconstruction_error(&s, u).unwrap() < 1e-12);
        assert!(project(u, &gaussian(11, 2, 0)).is_err());
        assert!(reconstruct(u, &gaussian(3, 2, 0)).is_err());
    }

    #[test]
    fn orthogonal_snapshots_have_unit_error() {
        let u = DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 0.0]);
        let s = DMatrix::from_column_slice(4, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        assert_eq!(reconstruction_error(&s, &u).unwrap(), 1.0);
        assert!(matches!(
            reconstruction_error(&DMatrix::zeros(4, 2), &u),
            Err(ReduceError::ZeroNorm)
        ));
        let inside = DMatrix::from_column_slice(4, 1, &[3.0, 0.0, 0.0, 0.0]);
        assert_eq!(mean_test_error(&[&inside, &s], &u).unwrap(), 0.5);
        assert!(matches!(mean_test_error(&[], &u), Err(ReduceError::EmptyTestSet)));
    }

    #[test]
    fn error_matches_dense_formula() {
        let s = gaussian(20, 10, 7);
        let u = direct_basis(&gaussian(20, 3, 8), 1e-12);
        assert_eq!(u.ncols(), 3);
        // explicit projector P = U U^T, no shortcuts
        let p = &u * u.transpose();
        let oracle = (&s - &p * &s).norm() / s.norm();
        let got = reconstruction_error(&s, &u).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn compression_ratio_counts_columns() {
        let mut basis = ReducedBasis::new(1e-6).unwrap();
        assert!(compression_ratio(&basis).is_err());
        let a = DVector::from_fn(8, |i, _| i as f64 + 1.0);
        for _ in 0..10 {
            basis.update(&(&a * DMatrix::from_element(1, 10, 1.0))).unwrap();
        }
        assert_eq!(basis.rank(), 1);
        assert!((compression_ratio(&basis).unwrap() - 0.01).abs() < 1e-15);

        let mut full = ReducedBasis::new(1e-12).unwrap();
        full.update(&gaussian(6, 4, 2)).unwrap();
        assert_eq!(compression_ratio(&full).unwrap(), 1.0);
    }

    #[test]
    fn padding_keeps_reconstruction() {
        let s = gaussian(30, 13, 9);
        let u = direct_basis(&s, 1e-12);
        assert_eq!(u.ncols(), 13);
        let padded = zero_pad_basis(&u, 16).unwrap();
        assert_eq!(padded.ncols(), 16);
        let a = reconstruct(&u, &project(&u, &s).unwrap()).unwrap();
        let b = reconstruct(&padded, &project(&padded, &s).unwrap()).unwrap();
        assert!((a - b).amax() < 1e-12);
        assert_eq!(zero_pad_basis(&padded, 16).unwrap(), padded);
        assert!(zero_pad_basis(&u, 12).is_err());
        assert!(zero_pad_basis(&u, 15).is_err());
        assert_eq!(padded_rank(249, 1), 256);
        assert_eq!(padded_rank(249, 8), 256);
        assert_eq!(padded_rank(13, 8), 64);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("basis.roms");
        let mut basis = ReducedBasis::new(1e-3).unwrap();
        basis.update_in_batches(&gaussian(9, 8, 4), 4).unwrap();
        basis.save(&path).unwrap();
        assert_eq!(ReducedBasis::load(&path).unwrap(), basis);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn orthonormal_and_sorted(seed in 0u64..1000, rows in 5usize..25, cols in 2usize..16,
                                      batches in 1usize..5, eps in 1e-6f64..0.3) {
                let s = gaussian(rows, cols, seed);
                let mut basis = ReducedBasis::new(eps).unwrap();
                basis.update_in_batches(&s, batches).unwrap();
                prop_assert!(basis.orthogonality_drift() < 1e-10);
                let sv = basis.singular_values();
                prop_assert!(sv.iter().all(|&v| v >= 0.0));
                prop_assert!(sv.windows(2).all(|w| w[0] >= w[1]));
                // the shared discard budget bounds the stream error
                prop_assert!(reconstruction_error(&s, basis.u()).unwrap() <= eps * (1.0 + 1e-9));
            }

            #[test]
            fn incremental_within_factor_of_direct(seed in 0u64..1000, batches in 1usize..6,
                                                   eps in 0.05f64..0.5) {
                let s = gaussian(30, 12, seed);
                let mut basis = ReducedBasis::new(eps).unwrap();
                basis.update_in_batches(&s, batches).unwrap();
                let e_inc = reconstruction_error(&s, basis.u()).unwrap();
                let e_dir = reconstruction_error(&s, &direct_basis(&s, eps)).unwrap();
                prop_assert!(e_inc <= 1.5 * e_dir + 1e-12, "{} vs {}", e_inc, e_dir);
            }

            #[test]
            fn error_is_scale_invariant(seed in 0u64..1000, scale in 1e-3f64..1e3) {
                let s = gaussian(15, 6, seed);
                let u = direct_basis(&gaussian(15, 3, seed + 1), 1e-12);
                let a = reconstruction_error(&s, &u).unwrap();
                let b = reconstruction_error(&(&s * scale), &u).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!(a <= 1.0);
            }

            #[test]
            fn extending_basis_never_hurts(seed in 0u64..1000, r in 1usize..6) {
                let s = gaussian(16, 6, seed);
                let t = gaussian(16, 5, seed + 7);
                let full = direct_basis(&gaussian(16, 12, seed + 3), 1e-12);
                let small = full.columns(0, r).into_owned();
                let big = full.columns(0, r + 4).into_owned();
                let e_small = mean_test_error(&[&s, &t], &small).unwrap();
                let e_big = mean_test_error(&[&s, &t], &big).unwrap();
                prop_assert!(e_big <= e_small + 1e-12);
            }
        }
    }
}
