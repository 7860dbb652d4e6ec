//! Gaussian process regression of reconstruction error over parameter space.
//!
//! Hyperparameters are fitted by maximizing the log marginal likelihood with
//! L-BFGS from several seeded starting points. They are optimized in log
//! space, and box bounds are enforced through a `tanh` reparametrization so
//! the optimizer itself runs unconstrained.

use std::path::Path;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use thiserror::Error;

use crate::io::{self, IoError, Meta};
use crate::reduce::LabeledDataset;

/// Additive diagonal jitter tried in order (relative to the kernel variance)
/// until the covariance factorizes.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Debug, Error)]
pub enum GprError {
    #[error("need at least 2 distinct training inputs, got {0}")]
    InsufficientData(usize),
    #[error("input has {got} features, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("covariance matrix is not positive definite: {0}")]
    Conditioning(String),
    #[error("posterior variance {0:e} is negative beyond round-off")]
    NegativeVariance(f64),
    #[error("invalid kernel configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Rbf,
    Matern15,
    /// Pointwise product of the rbf and Matern-1.5 kernels with one shared variance.
    Product,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Matern15 => "matern15",
            KernelKind::Product => "product",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rbf" => Some(KernelKind::Rbf),
            "matern15" | "matern" => Some(KernelKind::Matern15),
            "product" => Some(KernelKind::Product),
            _ => None,
        }
    }
}

/// `sigma2 * exp(-d2 / (2 l))`, the length scale entering linearly.
pub fn kernel_rbf(a: &[f64], b: &[f64], l: f64, sigma2: f64) -> f64 {
    rbf_from_d2(sq_dist(a, b), l, sigma2, false)
}

/// `sigma2 * (1 + a) exp(-a)` with `a = sqrt(3) |x - x'| / l`.
pub fn kernel_matern15(a: &[f64], b: &[f64], l: f64, sigma2: f64) -> f64 {
    matern_from_d(sq_dist(a, b).sqrt(), l, sigma2)
}

/// Product of [`kernel_rbf`] and [`kernel_matern15`].
pub fn kernel_product(
    a: &[f64],
    b: &[f64],
    rbf: (f64, f64),
    matern: (f64, f64),
) -> f64 {
    kernel_rbf(a, b, rbf.0, rbf.1) * kernel_matern15(a, b, matern.0, matern.1)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn rbf_from_d2(d2: f64, l: f64, sigma2: f64, squared: bool) -> f64 {
    let denom = if squared { 2.0 * l * l } else { 2.0 * l };
    sigma2 * (-d2 / denom).exp()
}

fn matern_from_d(d: f64, l: f64, sigma2: f64) -> f64 {
    let a = 3f64.sqrt() * d / l;
    sigma2 * (1.0 + a) * (-a).exp()
}

/// Kernel family, hyperparameters and their fitting bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub kind: KernelKind,
    /// rbf length scale `l_r`.
    pub rbf_length: f64,
    /// Matern length scale `l_m`.
    pub matern_length: f64,
    /// Shared signal variance.
    pub variance: f64,
    /// Observation noise variance added to the diagonal.
    pub noise: f64,
    /// Use `2 l^2` instead of `2 l` in the rbf denominator.
    pub squared_length: bool,
    pub length_bounds: (f64, f64),
    pub variance_bounds: (f64, f64),
    /// Standardize inputs per feature with training statistics.
    pub standardize_inputs: bool,
    /// Fit on `(y - mean) / std`; the prior mean becomes the training mean.
    pub normalize_targets: bool,
    /// Random restarts on top of the initial point.
    pub restarts: usize,
    pub max_iters: u64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            kind: KernelKind::Matern15,
            rbf_length: 1.0,
            matern_length: 1.0,
            variance: 1.0,
            noise: 0.0,
            squared_length: false,
            length_bounds: (1e-2, 1e2),
            variance_bounds: (1e-4, 1e2),
            standardize_inputs: true,
            normalize_targets: false,
            restarts: 8,
            max_iters: 100,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<(), GprError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let bounds_ok = |(lo, hi): (f64, f64)| pos(lo) && hi.is_finite() && hi >= lo;
        if !(pos(self.rbf_length) && pos(self.matern_length) && pos(self.variance)) {
            return Err(GprError::Config(
                "length scales and variance must be positive".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(GprError::Config("noise variance must be >= 0".into()));
        }
        if !(bounds_ok(self.length_bounds) && bounds_ok(self.variance_bounds)) {
            return Err(GprError::Config("hyperparameter bounds must be positive and ordered".into()));
        }
        Ok(())
    }

    /// Covariance between two (already standardized) points.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.eval_d2(sq_dist(a, b))
    }

    fn eval_d2(&self, d2: f64) -> f64 {
        match self.kind {
            KernelKind::Rbf => rbf_from_d2(d2, self.rbf_length, self.variance, self.squared_length),
            KernelKind::Matern15 => matern_from_d(d2.sqrt(), self.matern_length, self.variance),
            KernelKind::Product => {
                rbf_from_d2(d2, self.rbf_length, self.variance, self.squared_length)
                    * matern_from_d(d2.sqrt(), self.matern_length, 1.0)
            }
        }
    }

    /// Kernel value and its derivatives with respect to the log of each
    /// active hyperparameter, in [`Self::log_params`] order.
    fn eval_with_grad(&self, d2: f64, grad: &mut [f64]) -> f64 {
        let d = d2.sqrt();
        let rbf_dlog = |k: f64| {
            if self.squared_length {
                k * d2 / (self.rbf_length * self.rbf_length)
            } else {
                k * d2 / (2.0 * self.rbf_length)
            }
        };
        match self.kind {
            KernelKind::Rbf => {
                let k = self.eval_d2(d2);
                grad[0] = rbf_dlog(k);
                grad[1] = k;
                k
            }
            KernelKind::Matern15 => {
                let a = 3f64.sqrt() * d / self.matern_length;
                let k = self.variance * (1.0 + a) * (-a).exp();
                grad[0] = self.variance * a * a * (-a).exp();
                grad[1] = k;
                k
            }
            KernelKind::Product => {
                let r = rbf_from_d2(d2, self.rbf_length, 1.0, self.squared_length);
                let a = 3f64.sqrt() * d / self.matern_length;
                let m = (1.0 + a) * (-a).exp();
                let k = self.variance * r * m;
                grad[0] = rbf_dlog(k);
                grad[1] = self.variance * r * a * a * (-a).exp();
                grad[2] = k;
                k
            }
        }
    }

    fn n_params(&self) -> usize {
        match self.kind {
            KernelKind::Product => 3,
            _ => 2,
        }
    }

    /// Log hyperparameters being fitted: lengths first, variance last.
    pub fn log_params(&self) -> Vec<f64> {
        match self.kind {
            KernelKind::Rbf => vec![self.rbf_length.ln(), self.variance.ln()],
            KernelKind::Matern15 => vec![self.matern_length.ln(), self.variance.ln()],
            KernelKind::Product => vec![
                self.rbf_length.ln(),
                self.matern_length.ln(),
                self.variance.ln(),
            ],
        }
    }

    pub fn with_log_params(&self, p: &[f64]) -> Self {
        let mut c = self.clone();
        match self.kind {
            KernelKind::Rbf => {
                c.rbf_length = p[0].exp();
                c.variance = p[1].exp();
            }
            KernelKind::Matern15 => {
                c.matern_length = p[0].exp();
                c.variance = p[1].exp();
            }
            KernelKind::Product => {
                c.rbf_length = p[0].exp();
                c.matern_length = p[1].exp();
                c.variance = p[2].exp();
            }
        }
        c
    }

    fn log_bounds(&self) -> Vec<(f64, f64)> {
        let l = (self.length_bounds.0.ln(), self.length_bounds.1.ln());
        let v = (self.variance_bounds.0.ln(), self.variance_bounds.1.ln());
        let mut b = vec![l; self.n_params() - 1];
        b.push(v);
        b
    }
}

/// Affine map of one axis: `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Per-column mean and population standard deviation; flat columns keep scale 1.
    fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut shift = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            shift.push(mean);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { shift, scale }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, c))| (v - s) / c)
            .collect()
    }
}

/// Factorized covariance plus everything a posterior query needs.
struct Factor {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

fn pairwise_d2(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        x.row(i)
            .iter()
            .zip(x.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}

fn factorize(cfg: &KernelConfig, d2: &DMatrix<f64>, y: &DVector<f64>) -> Result<Factor, GprError> {
    let n = d2.nrows();
    let base = DMatrix::from_fn(n, n, |i, j| cfg.eval_d2(d2[(i, j)]));
    for &j in &JITTER_LADDER {
        let jitter = j * cfg.variance;
        let mut k = base.clone();
        for i in 0..n {
            k[(i, i)] += cfg.noise + jitter;
        }
        if let Some(chol) = k.cholesky() {
            let alpha = chol.solve(y);
            if alpha.iter().all(|v| v.is_finite()) {
                return Ok(Factor { chol, alpha, jitter });
            }
        }
    }
    Err(GprError::Conditioning(format!(
        "factorization failed after jitter {:e}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

fn log_ml(f: &Factor, y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let logdet: f64 = f.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * y.dot(&f.alpha) - logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// Log marginal likelihood and its gradient with respect to the log hyperparameters.
fn log_ml_with_grad(
    cfg: &KernelConfig,
    d2: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(f64, Vec<f64>), GprError> {
    let f = factorize(cfg, d2, y)?;
    let lml = log_ml(&f, y);
    let n = y.len();
    let np = cfg.n_params();
    let kinv = f.chol.inverse();
    // W = alpha alpha^T - K^-1; dL/dp = 0.5 * sum(W .* dK/dp)
    let mut grad = vec![0.0; np];
    let mut g = vec![0.0; np];
    for j in 0..n {
        for i in 0..n {
            cfg.eval_with_grad(d2[(i, j)], &mut g);
            let w = f.alpha[i] * f.alpha[j] - kinv[(i, j)];
            for p in 0..np {
                grad[p] += 0.5 * w * g[p];
            }
        }
    }
    // the jitter scales with the variance
    let diag_w: f64 = (0..n).map(|i| f.alpha[i] * f.alpha[i] - kinv[(i, i)]).sum();
    grad[np - 1] += 0.5 * diag_w * f.jitter;
    Ok((lml, grad))
}

/// Unconstrained coordinates `z` with `log p = c + h tanh(z)`.
struct Reparam {
    bounds: Vec<(f64, f64)>,
}

impl Reparam {
    fn to_log(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.bounds)
            .map(|(z, (lo, hi))| 0.5 * (lo + hi) + 0.5 * (hi - lo) * z.tanh())
            .collect()
    }

    fn from_log(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(&self.bounds)
            .map(|(p, (lo, hi))| {
                if hi <= lo {
                    return 0.0;
                }
                let t = (2.0 * (p - 0.5 * (lo + hi)) / (hi - lo)).clamp(-0.999_999, 0.999_999);
                t.atanh()
            })
            .collect()
    }

    fn chain(&self, z: &[f64], dlog: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.bounds)
            .zip(dlog)
            .map(|((z, (lo, hi)), g)| g * 0.5 * (hi - lo) * (1.0 - z.tanh().powi(2)))
            .collect()
    }
}

struct NegLogMl<'a> {
    cfg: &'a KernelConfig,
    d2: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    reparam: Reparam,
}

impl CostFunction for NegLogMl<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, z: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        let cfg = self.cfg.with_log_params(&self.reparam.to_log(z));
        let f = factorize(&cfg, self.d2, self.y)?;
        Ok(-log_ml(&f, self.y))
    }
}

impl Gradient for NegLogMl<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, z: &Vec<f64>) -> Result<Vec<f64>, argmin::core::Error> {
        let cfg = self.cfg.with_log_params(&self.reparam.to_log(z));
        let (_, g) = log_ml_with_grad(&cfg, self.d2, self.y)?;
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        Ok(self.reparam.chain(z, &neg))
    }
}

/// A fitted Gaussian process. Immutable; queries are pure.
#[derive(Debug, Clone)]
pub struct GprModel {
    pub kernel: KernelConfig,
    inputs: DMatrix<f64>,
    raw_inputs: DMatrix<f64>,
    raw_targets: DVector<f64>,
    targets: DVector<f64>,
    x_std: Standardizer,
    y_shift: f64,
    y_scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_ml: f64,
}

impl GprModel {
    /// Maximum-likelihood fit. `seed` drives the restart points.
    pub fn fit(data: &LabeledDataset, config: &KernelConfig, seed: u64) -> Result<Self, GprError> {
        let (x, y) = dataset_arrays(data)?;
        Self::fit_arrays(&x, &y, config, seed)
    }

    /// Fit on a `tau x xi` input matrix.
    pub fn fit_arrays(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        config: &KernelConfig,
        seed: u64,
    ) -> Result<Self, GprError> {
        config.validate()?;
        let prep = Prepared::new(x, y, config)?;
        let reparam = Reparam {
            bounds: config.log_bounds(),
        };
        let init_log: Vec<f64> = config
            .log_params()
            .iter()
            .zip(&reparam.bounds)
            .map(|(p, (lo, hi))| p.clamp(*lo, *hi))
            .collect();

        let score = |log_p: &[f64]| -> Option<f64> {
            let cfg = config.with_log_params(log_p);
            factorize(&cfg, &prep.d2, &prep.y).ok().map(|f| log_ml(&f, &prep.y))
        };
        let mut best_log = init_log.clone();
        let mut best = score(&init_log).unwrap_or(f64::NEG_INFINITY);

        let mut rng = crate::seed::rng(seed);
        let mut starts = vec![reparam.from_log(&init_log)];
        for _ in 0..config.restarts {
            let p: Vec<f64> = reparam
                .bounds
                .iter()
                .map(|(lo, hi)| rng.random_range(*lo..=*hi))
                .collect();
            starts.push(reparam.from_log(&p));
        }
        for z0 in starts {
            let problem = NegLogMl {
                cfg: config,
                d2: &prep.d2,
                y: &prep.y,
                reparam: Reparam {
                    bounds: reparam.bounds.clone(),
                },
            };
            let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7);
            let Ok(res) = Executor::new(problem, solver)
                .configure(|s| s.param(z0).max_iters(config.max_iters))
                .run()
            else {
                continue;
            };
            if let Some(z) = res.state().get_best_param() {
                let log_p = reparam.to_log(z);
                if let Some(v) = score(&log_p) {
                    if v > best {
                        best = v;
                        best_log = log_p;
                    }
                }
            }
        }
        if !best.is_finite() {
            return Err(GprError::Conditioning(
                "no hyperparameter setting gave a factorizable covariance".into(),
            ));
        }
        Self::assemble(prep, config.with_log_params(&best_log))
    }

    /// Conditions on the data with the given hyperparameters, no optimization.
    pub fn with_hyperparameters(
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        config: &KernelConfig,
    ) -> Result<Self, GprError> {
        config.validate()?;
        let prep = Prepared::new(x, y, config)?;
        Self::assemble(prep, config.clone())
    }

    fn assemble(prep: Prepared, kernel: KernelConfig) -> Result<Self, GprError> {
        let f = factorize(&kernel, &prep.d2, &prep.y)?;
        let log_ml = log_ml(&f, &prep.y);
        Ok(Self {
            kernel,
            inputs: prep.x,
            raw_inputs: prep.raw_x,
            raw_targets: prep.raw_y,
            targets: prep.y,
            x_std: prep.x_std,
            y_shift: prep.y_shift,
            y_scale: prep.y_scale,
            chol: f.chol,
            alpha: f.alpha,
            log_ml,
        })
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_ml
    }

    /// Log marginal likelihood of this model's data under another kernel setting.
    pub fn log_marginal_likelihood_at(&self, kernel: &KernelConfig) -> Result<f64, GprError> {
        let d2 = pairwise_d2(&self.inputs);
        let f = factorize(kernel, &d2, &self.targets)?;
        Ok(log_ml(&f, &self.targets))
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn n_train(&self) -> usize {
        self.inputs.nrows()
    }

    /// Posterior mean and variance at `theta` (raw, unstandardized units).
    pub fn posterior(&self, theta: &[f64]) -> Result<(f64, f64), GprError> {
        if theta.len() != self.dim() {
            return Err(GprError::Dimension {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        let z = self.x_std.apply(theta);
        let kstar = DVector::from_fn(self.n_train(), |i, _| {
            let row: Vec<f64> = self.inputs.row(i).iter().copied().collect();
            self.kernel.eval(&z, &row)
        });
        let mean = kstar.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .expect("Cholesky factor has a positive diagonal");
        let prior = self.kernel.variance;
        let mut var = prior - v.norm_squared();
        if var < 0.0 {
            if var < -1e-12 * prior.max(1.0) {
                return Err(GprError::NegativeVariance(var));
            }
            var = 0.0;
        }
        Ok((
            self.y_shift + self.y_scale * mean,
            self.y_scale * self.y_scale * var,
        ))
    }

    /// Batched [`Self::posterior`] over the rows of `thetas`.
    pub fn posterior_many(&self, thetas: &[Vec<f64>]) -> Result<Vec<(f64, f64)>, GprError> {
        thetas.iter().map(|t| self.posterior(t)).collect()
    }

    /// Standard deviation used to normalize targets (1 when disabled).
    pub fn target_scale(&self) -> f64 {
        self.y_scale
    }

    /// Largest observed training target.
    pub fn max_target(&self) -> f64 {
        self.raw_targets.max()
    }

    /// Prior variance in target units.
    pub fn prior_variance(&self) -> f64 {
        self.y_scale * self.y_scale * self.kernel.variance
    }

    /// Writes hyperparameters to `<path>.meta`-style text and training data
    /// as arrays next to `path`.
    pub fn save(&self, path: &Path) -> Result<(), GprError> {
        let k = &self.kernel;
        let mut meta = Meta::new();
        meta.set("kind", k.kind.name())
            .set("rbf_length", format!("{:?}", k.rbf_length))
            .set("matern_length", format!("{:?}", k.matern_length))
            .set("variance", format!("{:?}", k.variance))
            .set("noise", format!("{:?}", k.noise))
            .set("squared_length", k.squared_length)
            .set("standardize_inputs", k.standardize_inputs)
            .set("normalize_targets", k.normalize_targets)
            .set("log_ml", format!("{:?}", self.log_ml));
        meta.write(path)?;
        io::write_matrix(&with_suffix(path, "inputs.roms"), &self.raw_inputs)?;
        io::write_matrix(
            &with_suffix(path, "targets.roms"),
            &DMatrix::from_column_slice(self.raw_targets.len(), 1, self.raw_targets.as_slice()),
        )?;
        Ok(())
    }

    /// Rebuilds a model saved with [`Self::save`].
    pub fn load(path: &Path) -> Result<Self, GprError> {
        let meta = Meta::read(path)?;
        let kind_raw: String = meta.require("kind", path)?;
        let kind = KernelKind::parse(&kind_raw).ok_or_else(|| IoError::BadValue {
            path: path.to_path_buf(),
            key: "kind".into(),
            value: kind_raw.clone(),
        })?;
        let kernel = KernelConfig {
            kind,
            rbf_length: meta.require("rbf_length", path)?,
            matern_length: meta.require("matern_length", path)?,
            variance: meta.require("variance", path)?,
            noise: meta.require("noise", path)?,
            squared_length: meta.require("squared_length", path)?,
            standardize_inputs: meta.require("standardize_inputs", path)?,
            normalize_targets: meta.require("normalize_targets", path)?,
            ..KernelConfig::default()
        };
        let x = io::read_matrix(&with_suffix(path, "inputs.roms"))?;
        let y = io::read_matrix(&with_suffix(path, "targets.roms"))?;
        Self::with_hyperparameters(&x, &DVector::from_column_slice(y.as_slice()), &kernel)
    }
}

fn with_suffix(path: &Path, suffix: &str) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".");
    os.push(suffix);
    os.into()
}

/// Standardized training data and its pairwise squared distances.
struct Prepared {
    raw_x: DMatrix<f64>,
    raw_y: DVector<f64>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    d2: DMatrix<f64>,
    x_std: Standardizer,
    y_shift: f64,
    y_scale: f64,
}

impl Prepared {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &KernelConfig) -> Result<Self, GprError> {
        if x.nrows() != y.len() {
            return Err(GprError::Dimension {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.ncols() == 0 {
            return Err(GprError::Config("inputs have no features".into()));
        }
        let distinct = count_distinct(x);
        if distinct < 2 {
            return Err(GprError::InsufficientData(distinct));
        }
        let x_std = if cfg.standardize_inputs {
            Standardizer::fit(x)
        } else {
            Standardizer::identity(x.ncols())
        };
        let xs = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - x_std.shift[j]) / x_std.scale[j]
        });
        let (y_shift, y_scale) = if cfg.normalize_targets {
            let n = y.len() as f64;
            let mean = y.sum() / n;
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
        } else {
            (0.0, 1.0)
        };
        let ys = y.map(|v| (v - y_shift) / y_scale);
        let d2 = pairwise_d2(&xs);
        if cfg.noise == 0.0 {
            check_duplicates(&d2, &ys)?;
        }
        Ok(Self {
            raw_x: x.clone(),
            raw_y: y.clone(),
            x: xs,
            y: ys,
            d2,
            x_std,
            y_shift,
            y_scale,
        })
    }
}

fn count_distinct(x: &DMatrix<f64>) -> usize {
    let mut rows: Vec<Vec<u64>> = x
        .row_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort();
    rows.dedup();
    rows.len()
}

/// Identical inputs with different targets make a noiseless covariance singular.
fn check_duplicates(d2: &DMatrix<f64>, y: &DVector<f64>) -> Result<(), GprError> {
    let tol = 1e-12 * y.amax().max(1.0);
    for j in 0..d2.ncols() {
        for i in 0..j {
            if d2[(i, j)] == 0.0 && (y[i] - y[j]).abs() > tol {
                return Err(GprError::Conditioning(format!(
                    "training points {i} and {j} coincide but have targets {} and {} with zero noise",
                    y[i], y[j]
                )));
            }
        }
    }
    Ok(())
}

fn dataset_arrays(data: &LabeledDataset) -> Result<(DMatrix<f64>, DVector<f64>), GprError> {
    let Some((first, _)) = data.entries.first() else {
        return Err(GprError::InsufficientData(0));
    };
    let dim = first.dim();
    for (theta, _) in &data.entries {
        if theta.dim() != dim {
            return Err(GprError::Dimension {
                expected: dim,
                got: theta.dim(),
            });
        }
    }
    let x = DMatrix::from_fn(data.len(), dim, |i, j| data.entries[i].0 .0[j]);
    let y = DVector::from_iterator(data.len(), data.entries.iter().map(|(_, e)| *e));
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hfm::ParameterVector;
    use rand_distr::StandardNormal;

    #[test]
    fn rbf_examples() {
        assert_eq!(kernel_rbf(&[0.3, -1.0], &[0.3, -1.0], 0.7, 2.5), 2.5);
        // |x - x'|^2 = 2 l with l = 0.8
        let v = kernel_rbf(&[0.0], &[1.6f64.sqrt()], 0.8, 1.0);
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
        let a = [0.1, 2.0, -3.0];
        let b = [1.0, -0.5, 0.0];
        assert_eq!(kernel_rbf(&a, &b, 1.3, 0.9), kernel_rbf(&b, &a, 1.3, 0.9));
    }

    #[test]
    fn matern_examples() {
        assert_eq!(kernel_matern15(&[1.0, 2.0], &[1.0, 2.0], 0.5, 3.0), 3.0);
        let l = 1.7;
        let v = kernel_matern15(&[0.0], &[l / 3f64.sqrt()], l, 1.0);
        assert!((v - 2.0 * (-1f64).exp()).abs() < 1e-15);
        assert!((v - 0.735759).abs() < 1e-6);
        assert!(kernel_matern15(&[0.0], &[1e4], 1.0, 1.0) < 1e-300);
    }

    #[test]
    fn product_composes() {
        let a = [0.2, -0.4];
        let b = [1.1, 0.3];
        let r = kernel_rbf(&a, &b, 0.9, 1.5);
        let m = kernel_matern15(&a, &b, 1.2, 0.7);
        assert!((kernel_product(&a, &b, (0.9, 1.5), (1.2, 0.7)) - r * m).abs() < 1e-15);
        assert_eq!(kernel_product(&a, &a, (0.9, 1.5), (1.2, 0.7)), 1.5 * 0.7);
        assert!(kernel_product(&a, &b, (0.9, 1.5), (1.2, 0.7)) <= 1.5 * 0.7);
    }

    /// `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt`, composite Simpson.
    fn bessel_k(nu: f64, x: f64) -> f64 {
        // integrand is below e^-700 once x cosh t > 700
        let t_max = (700.0 / x).acosh().max(1.0);
        let n = 40_000;
        let h = t_max / n as f64;
        let f = |t: f64| (-x * t.cosh()).exp() * (nu * t).cosh();
        let mut sum = f(0.0) + f(t_max);
        for i in 1..n {
            sum += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        sum * h / 3.0
    }

    #[test]
    fn matern_closed_form_matches_bessel() {
        let nu: f64 = 1.5;
        let gamma = statrs::function::gamma::gamma(nu);
        for i in 1..=50 {
            let r = 0.1 * i as f64; // d / l
            let s = (2.0 * nu).sqrt() * r;
            let general = 2f64.powf(1.0 - nu) / gamma * s.powf(nu) * bessel_k(nu, s);
            let closed = kernel_matern15(&[0.0], &[r], 1.0, 1.0);
            assert!((general - closed).abs() < 1e-10, "d/l = {r}: {general} vs {closed}");
        }
    }

    fn dataset(xs: &[f64], ys: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        (
            DMatrix::from_column_slice(xs.len(), 1, xs),
            DVector::from_column_slice(ys),
        )
    }

    fn fixed(kind: KernelKind) -> KernelConfig {
        KernelConfig {
            kind,
            standardize_inputs: false,
            ..KernelConfig::default()
        }
    }

    #[test]
    fn posterior_matches_dense_solve() {
        let (x, y) = dataset(&[-1.0, 0.2, 1.5], &[0.3, -0.2, 0.8]);
        for kind in [KernelKind::Rbf, KernelKind::Matern15, KernelKind::Product] {
            let cfg = KernelConfig {
                rbf_length: 0.6,
                matern_length: 1.3,
                variance: 1.7,
                noise: 1e-3,
                ..fixed(kind)
            };
            let model = GprModel::with_hyperparameters(&x, &y, &cfg).unwrap();
            let k = |a: f64, b: f64| match kind {
                KernelKind::Rbf => kernel_rbf(&[a], &[b], 0.6, 1.7),
                KernelKind::Matern15 => kernel_matern15(&[a], &[b], 1.3, 1.7),
                KernelKind::Product => kernel_product(&[a], &[b], (0.6, 1.7), (1.3, 1.0)),
            };
            let xs = [-1.0, 0.2, 1.5];
            let kk = DMatrix::from_fn(3, 3, |i, j| k(xs[i], xs[j]) + if i == j { 1e-3 } else { 0.0 });
            let inv = kk.try_inverse().unwrap();
            for &t in &[-2.0, 0.0, 0.7, 3.0] {
                let ks = DVector::from_fn(3, |i, _| k(t, xs[i]));
                let mu = (ks.transpose() * &inv * &y)[0];
                let var = k(t, t) - (ks.transpose() * &inv * &ks)[0];
                let (m, v) = model.posterior(&[t]).unwrap();
                assert!((m - mu).abs() < 1e-10, "{kind:?} mean at {t}");
                assert!((v - var).abs() < 1e-10, "{kind:?} var at {t}");
            }
        }
    }

    #[test]
    fn noiseless_interpolation_and_decay() {
        let (x, y) = dataset(&[0.0, 1.0, 2.5, 4.0], &[0.4, -0.1, 0.9, 0.2]);
        let model = GprModel::with_hyperparameters(&x, &y, &fixed(KernelKind::Matern15)).unwrap();
        for i in 0..4 {
            let (m, v) = model.posterior(&[x[(i, 0)]]).unwrap();
            assert!((m - y[i]).abs() < 1e-8);
            assert!(v <= 1e-8);
        }
        let (m, v) = model.posterior(&[1e3]).unwrap();
        assert!(m.abs() < 1e-12);
        assert!((v - model.prior_variance()).abs() < 1e-12);
    }

    #[test]
    fn conflicting_duplicates_are_rejected() {
        let (x, y) = dataset(&[0.0, 1.0, 1.0], &[0.1, 0.2, 0.5]);
        let err = GprModel::with_hyperparameters(&x, &y, &fixed(KernelKind::Rbf));
        assert!(matches!(err, Err(GprError::Conditioning(_))));
        let err = GprModel::fit_arrays(&x, &y, &fixed(KernelKind::Rbf), 0);
        assert!(matches!(err, Err(GprError::Conditioning(_))));
        // consistent duplicates are fine
        let (x, y) = dataset(&[0.0, 1.0, 1.0], &[0.1, 0.2, 0.2]);
        assert!(GprModel::with_hyperparameters(&x, &y, &fixed(KernelKind::Rbf)).is_ok());
        let (x, y) = dataset(&[1.0, 1.0], &[0.2, 0.2]);
        assert!(matches!(
            GprModel::with_hyperparameters(&x, &y, &fixed(KernelKind::Rbf)),
            Err(GprError::InsufficientData(1))
        ));
    }

    #[test]
    fn constant_targets_give_constant_mean() {
        let data = LabeledDataset {
            entries: (0..8)
                .map(|i| {
                    let t = i as f64;
                    (ParameterVector::new(vec![t, (t * 1.7).sin()]), 0.25)
                })
                .collect(),
        };
        let cfg = KernelConfig {
            normalize_targets: true,
            ..KernelConfig::default()
        };
        let model = GprModel::fit(&data, &cfg, 1).unwrap();
        for &(a, b) in &[(0.5, 0.0), (3.3, 0.5), (6.0, -0.5)] {
            let (m, _) = model.posterior(&[a, b]).unwrap();
            assert!((m - 0.25).abs() < 1e-9, "{m}");
        }
    }

    #[test]
    fn fit_improves_likelihood_and_is_deterministic() {
        let mut rng = crate::seed::rng(4);
        let xs: Vec<f64> = (0..15).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (2.0 * x).sin() + 0.3 * x).collect();
        let (x, y) = dataset(&xs, &ys);
        for kind in [KernelKind::Rbf, KernelKind::Matern15, KernelKind::Product] {
            let cfg = KernelConfig {
                rbf_length: 5.0,
                matern_length: 0.05,
                variance: 0.2,
                noise: 1e-6,
                ..KernelConfig::default()
            }
            .clone();
            let cfg = KernelConfig { kind, ..cfg };
            let init = GprModel::with_hyperparameters(&x, &y, &cfg).unwrap();
            let fitted = GprModel::fit_arrays(&x, &y, &cfg, 11).unwrap();
            assert!(fitted.log_marginal_likelihood() >= init.log_marginal_likelihood());
            let again = GprModel::fit_arrays(&x, &y, &cfg, 11).unwrap();
            assert_eq!(fitted.kernel, again.kernel);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let (x, y) = dataset(&[-1.0, -0.3, 0.4, 0.9, 2.0], &[0.2, 0.5, -0.1, 0.3, 1.0]);
        for kind in [KernelKind::Rbf, KernelKind::Matern15, KernelKind::Product] {
            for squared_length in [false, true] {
                let cfg = KernelConfig {
                    kind,
                    squared_length,
                    rbf_length: 0.7,
                    matern_length: 1.4,
                    variance: 0.8,
                    noise: 1e-4,
                    standardize_inputs: false,
                    ..KernelConfig::default()
                };
                let d2 = pairwise_d2(&x);
                let (_, g) = log_ml_with_grad(&cfg, &d2, &y).unwrap();
                let p = cfg.log_params();
                for i in 0..p.len() {
                    let h = 1e-6;
                    let mut up = p.clone();
                    up[i] += h;
                    let mut dn = p.clone();
                    dn[i] -= h;
                    let f = |q: &[f64]| {
                        let c = cfg.with_log_params(q);
                        log_ml(&factorize(&c, &d2, &y).unwrap(), &y)
                    };
                    let fd = (f(&up) - f(&dn)) / (2.0 * h);
                    assert!((fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0), "{kind:?} p{i}: {fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn recovers_length_scale_of_synthetic_gp() {
        let mut fitted = Vec::new();
        for seed in 0..10u64 {
            let mut rng = crate::seed::rng(100 + seed);
            let xs: Vec<f64> = (0..40).map(|_| rng.random_range(-5.0..5.0)).collect();
            let k = DMatrix::from_fn(40, 40, |i, j| {
                kernel_matern15(&[xs[i]], &[xs[j]], 1.0, 1.0) + if i == j { 1e-8 } else { 0.0 }
            });
            let l = k.cholesky().unwrap().unpack();
            let z = DVector::from_fn(40, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = l * z;
            let (x, _) = dataset(&xs, &vec![0.0; 40]);
            let cfg = KernelConfig {
                noise: 1e-8,
                ..fixed(KernelKind::Matern15)
            };
            let model = GprModel::fit_arrays(&x, &y, &cfg, seed).unwrap();
            fitted.push(model.kernel.matern_length);
        }
        fitted.sort_by(f64::total_cmp);
        let median = 0.5 * (fitted[4] + fitted[5]);
        assert!((0.5..=2.0).contains(&median), "median l = {median}, all {fitted:?}");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gpr.meta");
        let (x, y) = dataset(&[0.0, 1.0, 2.0], &[1.0, 0.5, 0.7]);
        let model = GprModel::fit_arrays(&x, &y, &KernelConfig::default(), 2).unwrap();
        model.save(&path).unwrap();
        let back = GprModel::load(&path).unwrap();
        let a = model.posterior(&[0.4]).unwrap();
        let b = back.posterior(&[0.4]).unwrap();
        assert!((a.0 - b.0).abs() < 1e-14 && (a.1 - b.1).abs() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn kind_strategy() -> impl Strategy<Value = KernelKind> {
            prop_oneof![
                Just(KernelKind::Rbf),
                Just(KernelKind::Matern15),
                Just(KernelKind::Product)
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn gram_is_symmetric_psd(kind in kind_strategy(), seed in 0u64..500,
                                     n in 2usize..12, l in 0.1f64..5.0) {
                let mut rng = crate::seed::rng(seed);
                let pts: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .collect();
                let cfg = KernelConfig { kind, rbf_length: l, matern_length: l, ..KernelConfig::default() };
                let g = DMatrix::from_fn(n, n, |i, j| cfg.eval(&pts[i], &pts[j]));
                prop_assert!((&g - g.transpose()).amax() == 0.0);
                let min_eig = g.symmetric_eigenvalues().min();
                prop_assert!(min_eig >= -1e-10, "min eigenvalue {}", min_eig);
            }

            #[test]
            fn posterior_variance_below_prior(kind in kind_strategy(), seed in 0u64..500,
                                              t in -4.0f64..4.0) {
                let mut rng = crate::seed::rng(seed);
                let xs: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
                let ys: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                let (x, y) = dataset(&xs, &ys);
                let cfg = KernelConfig { kind, noise: 1e-6, ..fixed(kind) };
                let model = GprModel::with_hyperparameters(&x, &y, &cfg).unwrap();
                let (_, v) = model.posterior(&[t]).unwrap();
                prop_assert!(v >= 0.0 && v <= model.prior_variance() + 1e-12);
            }
        }
    }
}
