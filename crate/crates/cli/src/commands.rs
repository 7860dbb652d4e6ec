//! One function per subcommand. Each reads its inputs, runs one pipeline
//! stage and writes artifacts plus sidecars under the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;

use rom_core::bo::{self, SnapshotSet};
use rom_core::hfm::{self, HighFidelityModel, ParameterSpace, ParameterVector, SnapshotMatrix};
use rom_core::io::{self, Meta};
use rom_core::reduce::{self, ReducedBasis};
use rom_core::rom::{self, RomBundle};
use rom_core::uq::{self, toys, BundleSurrogate, FnSurrogate, McOptions, Surrogate};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::output::{dir_digest, Artifacts};

const SET_MANIFEST: &str = "manifest.txt";
const SET_KIND: &str = "training-set";
const ISHIGAMI_A: f64 = 7.0;
const ISHIGAMI_B: f64 = 0.1;

/// Shared state of one invocation.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub jobs: usize,
}

impl Context {
    pub fn new(config: PipelineConfig, out: PathBuf, jobs: usize) -> Self {
        Self {
            config,
            out,
            jobs: jobs.max(1),
        }
    }

    fn artifacts(&self, command: &'static str) -> Artifacts {
        Artifacts::new(self.config.hash(), command)
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))
    }
}

/// Parses `a,b,c` into a parameter vector of dimension `dim`.
pub fn parse_theta(text: &str, dim: usize) -> Result<ParameterVector, CliError> {
    let values = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Config(format!("theta `{text}`: `{}` is not a finite number", s.trim())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != dim {
        return Err(CliError::Config(format!(
            "theta `{text}` has {} values, the parameter space has {dim}",
            values.len()
        )));
    }
    Ok(ParameterVector(values))
}

/// One parameter vector per non-empty line; a non-numeric first line is a header.
pub fn read_theta_file(path: &Path, dim: usize) -> Result<Vec<ParameterVector>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_theta(line, dim) {
            Ok(t) => out.push(t),
            Err(_) if i == 0 && line.chars().any(|c| c.is_ascii_alphabetic() && c != 'e' && c != 'E') => {}
            Err(e) => return Err(CliError::Config(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("{}: no parameter vectors", path.display())));
    }
    Ok(out)
}

/// Parameter vectors from `--theta` values and an optional file, in that order.
pub fn collect_thetas(inline: &[String], file: Option<&Path>, dim: usize) -> Result<Vec<ParameterVector>, CliError> {
    let mut thetas = inline.iter().map(|t| parse_theta(t, dim)).collect::<Result<Vec<_>, _>>()?;
    if let Some(f) = file {
        thetas.extend(read_theta_file(f, dim)?);
    }
    if thetas.is_empty() {
        return Err(CliError::Config("no parameter vectors given (use --theta or --theta-file)".into()));
    }
    Ok(thetas)
}

fn theta_meta(meta: &mut Meta, names: &[String], theta: &ParameterVector) {
    for (n, v) in names.iter().zip(&theta.0) {
        meta.set(format!("theta.{n}"), format!("{v:?}"));
    }
}

fn read_theta_meta(meta: &Meta, names: &[String], path: &Path) -> Result<ParameterVector, CliError> {
    let values = names
        .iter()
        .map(|n| meta.require::<f64>(&format!("theta.{n}"), path))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ParameterVector(values))
}

pub fn snapshot_name(index: usize) -> String {
    format!("sim_{index:03}.roms")
}

/// Runs the high-fidelity model for each parameter vector.
pub fn simulate(ctx: &Context, thetas: &[ParameterVector]) -> Result<Vec<PathBuf>, CliError> {
    let space = ctx.config.space()?;
    let model = ctx.config.plate()?;
    let art = ctx.artifacts("simulate");
    let solved: Vec<Result<SnapshotMatrix, CliError>> =
        ctx.pool()?.install(|| thetas.par_iter().map(|t| model.solve(t).map_err(CliError::from)).collect());
    io::create_dir_all(&ctx.out)?;
    let mut paths = Vec::new();
    for (k, (theta, snap)) in thetas.iter().zip(solved).enumerate() {
        let snap = snap?;
        let path = ctx.out.join(snapshot_name(k));
        let mut meta = hfm::describe(theta, &space, &model);
        meta.set("config_hash", &art.config_hash).set("command", art.command).set("index", k);
        snap.save(&path, &meta)?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Bo,
    Lhs,
}

impl SampleMode {
    fn name(self) -> &'static str {
        match self {
            SampleMode::Bo => "bo",
            SampleMode::Lhs => "lhs",
        }
    }
}

/// A training set on disk.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub train: SnapshotSet,
    pub test: SnapshotSet,
    pub basis: ReducedBasis,
    pub manifest: Meta,
}

fn write_set(dir: &Path, set: &SnapshotSet, names: &[String], art: &Artifacts) -> Result<(), CliError> {
    io::create_dir_all(dir)?;
    for (k, (t, s)) in set.thetas.iter().zip(&set.snapshots).enumerate() {
        let mut meta = art.meta();
        theta_meta(&mut meta, names, t);
        meta.set("index", k);
        s.save(&dir.join(snapshot_name(k)), &meta)?;
    }
    Ok(())
}

fn read_set(dir: &Path, count: usize, names: &[String]) -> Result<SnapshotSet, CliError> {
    let mut set = SnapshotSet::default();
    for k in 0..count {
        let path = dir.join(snapshot_name(k));
        let (snap, meta) = SnapshotMatrix::load(&path)?;
        let theta = read_theta_meta(&meta, names, &io::sidecar_path(&path))?;
        set.push(theta, snap);
    }
    Ok(set)
}

fn per_test_errors(test: &SnapshotSet, u: &DMatrix<f64>) -> Result<Vec<f64>, CliError> {
    test.snapshots
        .iter()
        .map(|s| reduce::reconstruction_error(&s.values, u).map_err(CliError::from))
        .collect()
}

/// Loads a directory written by [`sample`].
pub fn load_training_set(dir: &Path, names: &[String]) -> Result<TrainingSet, CliError> {
    let path = dir.join(SET_MANIFEST);
    let manifest = Meta::read(&path)?;
    let kind: String = manifest.require("kind", &path)?;
    if kind != SET_KIND {
        return Err(CliError::Io(format!("{}: `kind` is `{kind}`, expected `{SET_KIND}`", path.display())));
    }
    let stored: String = manifest.require("names", &path)?;
    if stored != names.join(",") {
        return Err(CliError::Config(format!(
            "{}: feature names `{stored}` differ from the configured space",
            path.display()
        )));
    }
    let n_train: usize = manifest.require("n_train", &path)?;
    let n_test: usize = manifest.require("n_test", &path)?;
    Ok(TrainingSet {
        train: read_set(&dir.join("train"), n_train, names)?,
        test: read_set(&dir.join("test"), n_test, names)?,
        basis: ReducedBasis::load(&dir.join("basis.roms"))?,
        manifest,
    })
}

/// Selects training parameters (BO or LHS), simulates them and builds a basis.
///
/// LHS draws `count` points, or as many as the BO run in `bo_run` used. The
/// test set is the one BO would use, so errors are comparable; with
/// `bo_run` a per-test comparison is written as well.
pub fn sample(
    ctx: &Context,
    mode: SampleMode,
    count: Option<usize>,
    bo_run: Option<&Path>,
) -> Result<TrainingSet, CliError> {
    let space = ctx.config.space()?;
    let model = ctx.config.plate()?;
    let bo_cfg = ctx.config.bo_config()?;
    let art = ctx.artifacts("sample");
    let names = &space.names;

    let (train, test, basis, trace, bo_set) = match mode {
        SampleMode::Bo => {
            let out = bo::run_bo(&bo_cfg, &space, &model)?;
            (out.train, out.test, out.basis, Some(out.trace), None)
        }
        SampleMode::Lhs => {
            let prior = bo_run.map(|d| load_training_set(d, names)).transpose()?;
            let n = match (count, &prior) {
                (Some(n), _) => n,
                (None, Some(p)) => p.train.len(),
                (None, None) => {
                    return Err(CliError::Config("--mode lhs needs --count or --bo-run".into()));
                }
            };
            if n == 0 {
                return Err(CliError::Config("--count must be >= 1".into()));
            }
            let test = match &prior {
                Some(p) => p.test.clone(),
                None => bo::test_set(&space, &model, bo_cfg.n_test, bo_cfg.seed)?,
            };
            let train = bo::simulate_lhs(&space, &model, n, ctx.config.stage_seed("lhs"))?;
            let basis = bo::basis_from(&train, bo_cfg.eps_svd, bo_cfg.batches)?;
            (train, test, basis, None, prior)
        }
    };

    let errors = per_test_errors(&test, basis.u())?;
    let mean_error = errors.iter().sum::<f64>() / errors.len() as f64;
    io::create_dir_all(&ctx.out)?;
    write_set(&ctx.out.join("train"), &train, names, &art)?;
    write_set(&ctx.out.join("test"), &test, names, &art)?;
    basis.save(&ctx.out.join("basis.roms"))?;

    let mut csv = String::from("test_index");
    for n in names {
        write!(csv, ",{n}").unwrap();
    }
    csv.push_str(",error\n");
    for (k, (t, e)) in test.thetas.iter().zip(&errors).enumerate() {
        write!(csv, "{k}").unwrap();
        for v in &t.0 {
            write!(csv, ",{v:?}").unwrap();
        }
        writeln!(csv, ",{e:?}").unwrap();
    }
    art.write_text(&ctx.out.join("test_errors.csv"), &csv, &[("mode", mode.name().into())])?;
    if let Some(trace) = &trace {
        art.write_text(&ctx.out.join("trace.csv"), &trace.to_csv(names), &[])?;
    }
    if let Some(prior) = &bo_set {
        let bo_errors = per_test_errors(&test, prior.basis.u())?;
        let mut cmp = String::from("test_index,bo_error,lhs_error\n");
        for (k, (b, l)) in bo_errors.iter().zip(&errors).enumerate() {
            writeln!(cmp, "{k},{b:?},{l:?}").unwrap();
        }
        art.write_text(&ctx.out.join("comparison.csv"), &cmp, &[])?;
    }

    let mut manifest = art.meta();
    manifest
        .set("kind", SET_KIND)
        .set("mode", mode.name())
        .set("names", names.join(","))
        .set("n_train", train.len())
        .set("n_test", test.len())
        .set("rank", basis.rank())
        .set("eps_svd", format!("{:?}", bo_cfg.eps_svd))
        .set("mean_test_error", format!("{mean_error:?}"));
    if let Some(trace) = &trace {
        manifest.set("converged", trace.converged);
    }
    manifest.write(&ctx.out.join(SET_MANIFEST))?;
    art.seal_dir(&ctx.out)?;
    Ok(TrainingSet {
        train,
        test,
        basis,
        manifest,
    })
}

/// Trains the networks on a training set and writes a bundle.
pub fn train(ctx: &Context, data: &Path) -> Result<RomBundle, CliError> {
    let space = ctx.config.space()?;
    let rom_cfg = ctx.config.rom_config()?;
    let art = ctx.artifacts("train");
    let set = load_training_set(data, &space.names)?;
    let (mut bundle, report) = rom::fit_bundle(&set.train, set.basis.u(), &space, &rom_cfg)?;
    bundle
        .provenance
        .set("config_hash", &art.config_hash)
        .set("training_set_hash", dir_digest(data)?)
        .set("seed", ctx.config.seed)
        .set("rank", report.rank)
        .set("padded", report.padded)
        .set("basis_error", format!("{:?}", report.basis_error));
    bundle.save(&ctx.out)?;
    let mut csv = String::from("stage,epoch,train_loss,val_loss\n");
    for (stage, r) in [("cae", &report.cae), ("ffnn", &report.ffnn), ("lstm", &report.lstm)] {
        for (e, tl) in r.train_loss.iter().enumerate() {
            let vl = r.val_loss.get(e).map_or(String::new(), |v| format!("{v:?}"));
            writeln!(csv, "{stage},{},{tl:?},{vl}", e + 1).unwrap();
        }
    }
    art.write_text(&ctx.out.join("losses.csv"), &csv, &[])?;
    art.seal_dir(&ctx.out)?;
    Ok(bundle)
}

fn load_bundle(dir: &Path, space: &ParameterSpace) -> Result<RomBundle, CliError> {
    let bundle = RomBundle::load(dir)?;
    if bundle.names != space.names {
        return Err(CliError::Config(format!(
            "bundle features {:?} differ from the configured space {:?}",
            bundle.names, space.names
        )));
    }
    Ok(bundle)
}

fn horizon(ctx: &Context, bundle: &RomBundle) -> usize {
    ctx.config.uq.n_t.unwrap_or(bundle.times.len())
}

/// Predicts full fields; with `truth` (a directory of `simulate` outputs in
/// the same order) also writes per-step nRMSE.
pub fn predict(
    ctx: &Context,
    bundle_dir: &Path,
    thetas: &[ParameterVector],
    truth: Option<&Path>,
) -> Result<Vec<PathBuf>, CliError> {
    let space = ctx.config.space()?;
    let bundle = load_bundle(bundle_dir, &space)?;
    let art = ctx.artifacts("predict");
    let n_t = horizon(ctx, &bundle);
    let preds = bundle.predict_many(thetas, n_t)?;
    io::create_dir_all(&ctx.out)?;
    let mut paths = Vec::new();
    let mut csv = String::from("sample,t_index,time,nrmse\n");
    for (k, (theta, p)) in thetas.iter().zip(&preds).enumerate() {
        let path = ctx.out.join(format!("pred_{k:03}.roms"));
        let mut meta = art.meta();
        theta_meta(&mut meta, &space.names, theta);
        meta.set("extrapolated", p.extrapolated);
        p.snapshot.save(&path, &meta)?;
        paths.push(path);
        if let Some(dir) = truth {
            let (truth, _) = SnapshotMatrix::load(&dir.join(snapshot_name(k)))?;
            if truth.values.shape() != p.snapshot.values.shape() {
                return Err(CliError::Config(format!(
                    "truth {k} is {:?}, prediction is {:?}",
                    truth.values.shape(),
                    p.snapshot.values.shape()
                )));
            }
            for (i, e) in rom::nrmse_series(&truth.values, &p.snapshot.values)?.iter().enumerate() {
                let e = e.map_or(String::new(), |v| format!("{v:?}"));
                writeln!(csv, "{k},{i},{:?},{e}", p.snapshot.times[i]).unwrap();
            }
        }
    }
    if truth.is_some() {
        art.write_text(&ctx.out.join("nrmse.csv"), &csv, &[])?;
    }
    Ok(paths)
}

/// Monte Carlo mean and standard deviation fields.
pub fn uq_cmd(ctx: &Context, bundle_dir: &Path, report: bool) -> Result<uq::UqResult, CliError> {
    let space = ctx.config.space()?;
    let bundle = load_bundle(bundle_dir, &space)?;
    let art = ctx.artifacts("uq");
    let n_t = horizon(ctx, &bundle);
    let samples = uq::sample_gaussian(&space, ctx.config.uq.r, ctx.config.stage_seed("uq"));
    let surrogate = BundleSurrogate { bundle: &bundle, n_t };
    let opts = McOptions {
        chunk: ctx.config.uq.chunk,
        track_rows: Vec::new(),
    };
    let res = uq::monte_carlo_uq(&surrogate, &samples, &opts)?;
    let times: Vec<f64> = (0..n_t).map(|i| bundle.time_at(i)).collect();
    let nodes = ctx.config.uq_nodes();
    check_nodes(&nodes, res.mean.nrows())?;
    io::create_dir_all(&ctx.out)?;
    art.write_text(&ctx.out.join("uq.csv"), &res.to_csv(&times, &nodes), &[("r", res.r.to_string())])?;
    io::write_matrix(&ctx.out.join("uq_mean.roms"), &res.mean)?;
    io::write_matrix(&ctx.out.join("uq_std.roms"), &res.std)?;
    for name in ["uq_mean.roms", "uq_std.roms"] {
        let mut m = art.meta();
        m.set("r", res.r).set("times", io::join_f64(&times));
        m.write(&io::sidecar_path(&ctx.out.join(name)))?;
    }
    if report {
        for &node in &nodes {
            let mut csv = String::from("time,mean,lower,upper\n");
            for (i, t) in times.iter().enumerate() {
                let (m, s) = (res.mean[(node, i)], res.std[(node, i)]);
                writeln!(csv, "{t:e},{m:e},{:e},{:e}", m - s, m + s).unwrap();
            }
            art.write_text(&ctx.out.join(format!("plot_uq_node{node}.csv")), &csv, &[])?;
        }
    }
    art.seal_dir(&ctx.out)?;
    Ok(res)
}

fn check_nodes(nodes: &[usize], n_h: usize) -> Result<(), CliError> {
    match nodes.iter().find(|&&n| n >= n_h) {
        Some(n) => Err(CliError::Config(format!("node {n} outside the {n_h}-node field"))),
        None => Ok(()),
    }
}

/// What `sobol` analyzes.
pub enum SobolTarget<'a> {
    Bundle(&'a Path),
    /// Built-in analytic test function with three uniform features.
    Ishigami,
}

/// Sobol indices per feature and output time step.
pub fn sobol_cmd(ctx: &Context, target: SobolTarget<'_>, report: bool) -> Result<uq::SobolResult, CliError> {
    let art = ctx.artifacts("sobol");
    let mode = ctx.config.design_mode()?;
    let n = ctx.config.uq.sobol_n;
    let design_seed = ctx.config.stage_seed("sobol-design");
    let boot_seed = ctx.config.stage_seed("sobol-bootstrap");
    let (result, names, times) = match target {
        SobolTarget::Ishigami => {
            let space = toys::ishigami_space();
            let design = uq::saltelli_sample(&space, n, design_seed, mode)?;
            let s = FnSurrogate(|t: &ParameterVector| {
                DMatrix::from_element(1, 1, toys::ishigami(&t.0, ISHIGAMI_A, ISHIGAMI_B))
            });
            let out = uq::evaluate_design(&s, &design, &|m| m.row(0).iter().copied().collect(), ctx.config.uq.chunk)?;
            (uq::analyze(&out, ctx.config.uq.bootstrap, boot_seed)?, space.names, vec![0.0])
        }
        SobolTarget::Bundle(dir) => {
            let space = ctx.config.space()?;
            let bundle = load_bundle(dir, &space)?;
            let n_t = horizon(ctx, &bundle);
            let node = ctx.config.uq.sobol_node.unwrap_or(ctx.config.uq_nodes()[0]);
            check_nodes(&[node], bundle.n_h())?;
            let design = uq::saltelli_sample(&space, n, design_seed, mode)?;
            let s = BundleSurrogate { bundle: &bundle, n_t };
            let out = uq::evaluate_design(&s, &design, &|m| m.row(node).iter().copied().collect(), ctx.config.uq.chunk)?;
            let times = (0..n_t).map(|i| bundle.time_at(i)).collect();
            (uq::analyze(&out, ctx.config.uq.bootstrap, boot_seed)?, space.names, times)
        }
    };
    io::create_dir_all(&ctx.out)?;
    art.write_text(
        &ctx.out.join("sobol.csv"),
        &result.to_csv(&names, &times),
        &[("n", result.n.to_string()), ("estimator", result.estimator.into())],
    )?;
    if report {
        // bars at the last time step with defined indices
        let last = (0..times.len()).rev().find(|&i| result.indices.iter().all(|f| f[i].is_some()));
        let mut csv = String::from("feature,t_index,S,S_T,S_conf,S_T_conf\n");
        if let Some(i) = last {
            for (v, name) in names.iter().enumerate() {
                let s = result.get(v, i).expect("defined");
                writeln!(csv, "{name},{i},{:e},{:e},{:e},{:e}", s.first, s.total, s.first_conf, s.total_conf).unwrap();
            }
        }
        art.write_text(&ctx.out.join("plot_sobol_bars.csv"), &csv, &[])?;
    }
    Ok(result)
}

/// Damage indices at one node, relative to the sample-mean trajectory there.
pub fn di_cmd(ctx: &Context, bundle_dir: &Path, node: Option<usize>, report: bool) -> Result<uq::DamageIndexSet, CliError> {
    let space = ctx.config.space()?;
    let bundle = load_bundle(bundle_dir, &space)?;
    let art = ctx.artifacts("di");
    let n_t = horizon(ctx, &bundle);
    let node = node.or(ctx.config.uq.di_node).unwrap_or(ctx.config.uq_nodes()[0]);
    check_nodes(&[node], bundle.n_h())?;
    let count = ctx.config.uq.di_samples.unwrap_or(ctx.config.uq.r);
    let samples = uq::sample_gaussian(&space, count, ctx.config.stage_seed("di"));
    let surrogate = BundleSurrogate { bundle: &bundle, n_t };
    let mut traces = Vec::with_capacity(count);
    for chunk in samples.chunks(ctx.config.uq.chunk) {
        for f in surrogate.evaluate(chunk)? {
            traces.push(f.row(node).iter().copied().collect::<Vec<f64>>());
        }
    }
    let baseline: Vec<f64> = (0..n_t)
        .map(|i| traces.iter().map(|t| t[i]).sum::<f64>() / count as f64)
        .collect();
    let di = uq::damage_index(&traces, &baseline)?;
    let mut csv = String::from("sample");
    for n in &space.names {
        write!(csv, ",{n}").unwrap();
    }
    csv.push_str(",DI\n");
    for (j, (t, d)) in samples.iter().zip(&di.normalized).enumerate() {
        write!(csv, "{j}").unwrap();
        for v in &t.0 {
            write!(csv, ",{v:?}").unwrap();
        }
        writeln!(csv, ",{d:?}").unwrap();
    }
    io::create_dir_all(&ctx.out)?;
    art.write_text(
        &ctx.out.join("di.csv"),
        &csv,
        &[("node", node.to_string()), ("max_raw", format!("{:?}", di.max_raw))],
    )?;
    if report {
        let mut scatter = String::from("feature,value,DI\n");
        for (v, name) in space.names.iter().enumerate() {
            for (t, d) in samples.iter().zip(&di.normalized) {
                writeln!(scatter, "{name},{:e},{d:e}", t.0[v]).unwrap();
            }
        }
        art.write_text(&ctx.out.join("plot_di_scatter.csv"), &scatter, &[])?;
    }
    Ok(di)
}

/// UQ, damage indices and Sobol indices with plot-data files.
pub fn report(ctx: &Context, bundle_dir: &Path) -> Result<(), CliError> {
    uq_cmd(ctx, bundle_dir, true)?;
    di_cmd(ctx, bundle_dir, None, true)?;
    sobol_cmd(ctx, SobolTarget::Bundle(bundle_dir), true)?;
    Ok(())
}
