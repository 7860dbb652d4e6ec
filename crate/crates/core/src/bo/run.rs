use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::acquisition::{propose_next, AcquisitionConfig};
use super::lhs::lhs_sample_feasible;
use super::BoError;
use crate::gpr::{GprModel, KernelConfig, KernelKind};
use crate::hfm::{HighFidelityModel, ParameterSpace, ParameterVector, SnapshotMatrix};
use crate::reduce::{self, LabeledDataset, ReducedBasis};
use crate::seed;

/// Redraw attempts when an LHS design hits the infeasible region.
const MAX_LHS_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct BoRunConfig {
    /// Initial LHS training points `tau`.
    pub n_init: usize,
    /// Testing points `n` used for the stopping criterion.
    pub n_test: usize,
    pub eps_svd: f64,
    pub eps_tol: f64,
    /// Cap on the total number of training points.
    pub max_train: usize,
    /// Column batches each snapshot matrix is split into for the SVD update.
    pub batches: usize,
    pub kernel: KernelConfig,
    pub acquisition: AcquisitionConfig,
    pub seed: u64,
    /// Store elapsed seconds in the trace; off keeps outputs reproducible.
    pub record_wall_time: bool,
}

impl Default for BoRunConfig {
    fn default() -> Self {
        Self {
            n_init: 4,
            n_test: 10,
            eps_svd: 7e-4,
            eps_tol: 9e-4,
            max_train: 100,
            batches: 4,
            kernel: KernelConfig {
                kind: KernelKind::Rbf,
                normalize_targets: true,
                noise: 1e-8,
                ..KernelConfig::default()
            },
            acquisition: AcquisitionConfig::default(),
            seed: 0,
            record_wall_time: false,
        }
    }
}

impl BoRunConfig {
    pub fn validate(&self) -> Result<(), BoError> {
        let fail = |m: &str| Err(BoError::Config(m.to_string()));
        if self.n_init == 0 || self.n_test == 0 {
            return fail("n_init and n_test must be >= 1");
        }
        if !(self.eps_tol > 0.0) {
            return fail("eps_tol must be > 0");
        }
        if self.max_train < self.n_init {
            return fail("max_train must be >= n_init");
        }
        if self.batches == 0 {
            return fail("batches must be >= 1");
        }
        if self.acquisition.pool_size == 0 {
            return fail("candidate pool size must be >= 1");
        }
        Ok(())
    }
}

/// One row of the optimization trace.
#[derive(Debug, Clone, PartialEq)]
pub struct BoRecord {
    pub iteration: usize,
    /// Newly added training point; `None` for the initialization row.
    pub theta: Option<ParameterVector>,
    pub eps_s: f64,
    pub rank: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoTrace {
    pub records: Vec<BoRecord>,
    /// `false` when the training cap stopped the loop first.
    pub converged: bool,
}

impl BoTrace {
    pub fn final_error(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.eps_s)
    }

    /// CSV with columns `iteration, <features>, eps_s, rank, seconds`.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("iteration");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push_str(",eps_s,rank,seconds\n");
        for r in &self.records {
            write!(out, "{}", r.iteration).unwrap();
            for i in 0..names.len() {
                out.push(',');
                if let Some(t) = &r.theta {
                    write!(out, "{:?}", t.0[i]).unwrap();
                }
            }
            writeln!(out, ",{:?},{},{:?}", r.eps_s, r.rank, r.seconds).unwrap();
        }
        out
    }
}

/// Parameters and their high-fidelity solutions.
#[derive(Debug, Clone, Default)]
pub struct SnapshotSet {
    pub thetas: Vec<ParameterVector>,
    pub snapshots: Vec<SnapshotMatrix>,
}

impl SnapshotSet {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn matrices(&self) -> Vec<&DMatrix<f64>> {
        self.snapshots.iter().map(|s| &s.values).collect()
    }

    pub fn push(&mut self, theta: ParameterVector, s: SnapshotMatrix) {
        self.thetas.push(theta);
        self.snapshots.push(s);
    }
}

#[derive(Debug, Clone)]
pub struct BoOutcome {
    pub train: SnapshotSet,
    pub test: SnapshotSet,
    pub basis: ReducedBasis,
    pub dataset: LabeledDataset,
    pub trace: BoTrace,
}

fn solve(hfm: &dyn HighFidelityModel, theta: &ParameterVector) -> Result<SnapshotMatrix, BoError> {
    hfm.solve(theta).map_err(|source| BoError::Hfm {
        theta: theta.clone(),
        source,
    })
}

/// Simulates a feasible LHS design of `count` points.
pub fn simulate_lhs(
    space: &ParameterSpace,
    hfm: &dyn HighFidelityModel,
    count: usize,
    seed: u64,
) -> Result<SnapshotSet, BoError> {
    let feasible = |t: &ParameterVector| hfm.is_feasible(t);
    let thetas = lhs_sample_feasible(space, count, seed, &feasible, MAX_LHS_DRAWS)
        .ok_or_else(|| BoError::Config("no feasible LHS design found".into()))?;
    let mut set = SnapshotSet::default();
    for t in thetas {
        let s = solve(hfm, &t)?;
        set.push(t, s);
    }
    Ok(set)
}

/// Test design used by [`run_bo`] for a given root seed.
pub fn test_set(
    space: &ParameterSpace,
    hfm: &dyn HighFidelityModel,
    n_test: usize,
    root_seed: u64,
) -> Result<SnapshotSet, BoError> {
    simulate_lhs(space, hfm, n_test, seed::derive(root_seed, "bo-test"))
}

/// Adaptive sampling loop: grows the training set one GPR-guided point at a
/// time until the mean test reconstruction error drops below `eps_tol`.
pub fn run_bo(
    config: &BoRunConfig,
    space: &ParameterSpace,
    hfm: &dyn HighFidelityModel,
) -> Result<BoOutcome, BoError> {
    config.validate()?;
    let test = test_set(space, hfm, config.n_test, config.seed)?;
    run_bo_with_tests(config, space, hfm, test)
}

/// [`run_bo`] against a precomputed test set.
pub fn run_bo_with_tests(
    config: &BoRunConfig,
    space: &ParameterSpace,
    hfm: &dyn HighFidelityModel,
    test: SnapshotSet,
) -> Result<BoOutcome, BoError> {
    config.validate()?;
    if test.is_empty() {
        return Err(BoError::Config("test set is empty".into()));
    }
    let start = Instant::now();
    let elapsed = || {
        if config.record_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };

    let mut train = simulate_lhs(space, hfm, config.n_init, seed::derive(config.seed, "bo-init"))?;
    let mut basis = ReducedBasis::new(config.eps_svd)?;
    for s in &train.snapshots {
        basis.update_in_batches(&s.values, config.batches)?;
    }
    let mut dataset = relabel(&train, &basis)?;
    let mut eps_s = reduce::mean_test_error(&test.matrices(), basis.u())?;
    let mut trace = BoTrace::default();
    trace.records.push(BoRecord {
        iteration: 0,
        theta: None,
        eps_s,
        rank: basis.rank(),
        seconds: elapsed(),
    });

    let feasible = |t: &ParameterVector| hfm.is_feasible(t);
    let mut iteration = 0;
    while eps_s >= config.eps_tol && train.len() < config.max_train {
        iteration += 1;
        let model = GprModel::fit(
            &dataset,
            &config.kernel,
            seed::derive(config.seed, &format!("gpr-{iteration}")),
        )?;
        let acq = AcquisitionConfig {
            seed: seed::derive(config.seed, &format!("pool-{iteration}")),
            ..config.acquisition.clone()
        };
        let theta = propose_next(&model, &acq, space, &feasible)?;
        let s = solve(hfm, &theta)?;
        basis.update_in_batches(&s.values, config.batches)?;
        train.push(theta.clone(), s);
        dataset = relabel(&train, &basis)?;
        eps_s = reduce::mean_test_error(&test.matrices(), basis.u())?;
        trace.records.push(BoRecord {
            iteration,
            theta: Some(theta),
            eps_s,
            rank: basis.rank(),
            seconds: elapsed(),
        });
    }
    trace.converged = eps_s < config.eps_tol;
    Ok(BoOutcome {
        train,
        test,
        basis,
        dataset,
        trace,
    })
}

/// Reconstruction error of every training snapshot against the current basis.
fn relabel(train: &SnapshotSet, basis: &ReducedBasis) -> Result<LabeledDataset, BoError> {
    let mut entries = Vec::with_capacity(train.len());
    for (t, s) in train.thetas.iter().zip(&train.snapshots) {
        entries.push((t.clone(), reduce::reconstruction_error(&s.values, basis.u())?));
    }
    Ok(LabeledDataset { entries })
}

/// Basis from a one-shot design, folded in with the same batched update.
pub fn basis_from(
    set: &SnapshotSet,
    eps_svd: f64,
    batches: usize,
) -> Result<ReducedBasis, BoError> {
    let mut basis = ReducedBasis::new(eps_svd)?;
    for s in &set.snapshots {
        basis.update_in_batches(&s.values, batches)?;
    }
    Ok(basis)
}

/// LHS baseline at a fixed budget: returns the design, its basis and the
/// mean test error of that basis.
pub fn lhs_baseline(
    space: &ParameterSpace,
    hfm: &dyn HighFidelityModel,
    test: &SnapshotSet,
    count: usize,
    eps_svd: f64,
    batches: usize,
    seed: u64,
) -> Result<(SnapshotSet, ReducedBasis, f64), BoError> {
    let set = simulate_lhs(space, hfm, count, seed)?;
    let basis = basis_from(&set, eps_svd, batches)?;
    let err = reduce::mean_test_error(&test.matrices(), basis.u())?;
    Ok((set, basis, err))
}

/// Smallest LHS size (doubling, then bisection) whose basis reaches
/// `eps_tol` on `test`. Each size uses its own seeded design. `None` if
/// `max_count` points do not suffice.
#[allow(clippy::too_many_arguments)]
pub fn lhs_evaluations_to_tol(
    space: &ParameterSpace,
    hfm: &dyn HighFidelityModel,
    test: &SnapshotSet,
    eps_svd: f64,
    eps_tol: f64,
    batches: usize,
    seed: u64,
    max_count: usize,
) -> Result<Option<usize>, BoError> {
    let reaches = |k: usize| -> Result<bool, BoError> {
        let s = seed::derive(seed, &format!("lhs-{k}"));
        let (_, _, err) = lhs_baseline(space, hfm, test, k, eps_svd, batches, s)?;
        Ok(err < eps_tol)
    };
    let mut lo = 0;
    let mut hi = 1;
    loop {
        if hi > max_count {
            if lo < max_count && reaches(max_count)? {
                hi = max_count;
                break;
            }
            return Ok(None);
        }
        if reaches(hi)? {
            break;
        }
        lo = hi;
        hi *= 2;
    }
    // invariant: lo fails (or is 0), hi reaches
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if reaches(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Column-stacked design matrix of parameter vectors (one row each).
pub fn design_matrix(thetas: &[ParameterVector]) -> DMatrix<f64> {
    let dim = thetas.first().map_or(0, |t| t.dim());
    DMatrix::from_fn(thetas.len(), dim, |i, j| thetas[i].0[j])
}

/// Training targets as a vector.
pub fn targets(data: &LabeledDataset) -> DVector<f64> {
    DVector::from_vec(data.targets())
}
