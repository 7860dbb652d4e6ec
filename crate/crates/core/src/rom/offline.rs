use nalgebra::DMatrix;
use ndarray::{concatenate, Array2, Axis};

use super::bundle::RomBundle;
use super::RomError;
use crate::bo::{self, BoOutcome, BoRunConfig, SnapshotSet};
use crate::hfm::{HighFidelityModel, ParameterSpace};
use crate::io::Meta;
use crate::nn::{
    build_sliding_windows, split_by_parameter, Cae, Ffnn, Lstm, MinMax, Regression, TrainConfig, TrainReport,
};
use crate::reduce;
use crate::seed::derive;

/// Side of the padded coordinate image must be a multiple of this
/// (three 2x pooling levels in the autoencoder).
pub const PAD_MULTIPLE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct RomConfig {
    pub q: usize,
    pub window: usize,
    /// Fraction of training parameters held out for validation.
    pub val_fraction: f64,
    pub cae: TrainConfig,
    pub ffnn: TrainConfig,
    pub lstm: TrainConfig,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    /// Every this many LSTM epochs the closed-loop latent error of the
    /// validation trajectories is measured, and the parameters with the
    /// lowest error are kept. 0 keeps the final parameters.
    pub lstm_select_every: usize,
    /// Root seed for initialization, shuffling and the validation split.
    /// The `seed` fields of the stage configs are ignored.
    pub seed: u64,
}

impl Default for RomConfig {
    /// Reduced epoch counts suitable for a desktop run.
    fn default() -> Self {
        Self {
            q: 4,
            window: 10,
            val_fraction: 0.1,
            cae: TrainConfig {
                lr: 2e-3,
                batch_size: 20,
                epochs: 300,
                seed: 0,
            },
            ffnn: TrainConfig {
                lr: 1e-2,
                batch_size: 4,
                epochs: 500,
                seed: 0,
            },
            lstm: TrainConfig {
                lr: 1e-3,
                batch_size: 32,
                epochs: 200,
                seed: 0,
            },
            lstm_hidden: crate::nn::lstm::LSTM_HIDDEN,
            lstm_layers: crate::nn::lstm::LSTM_LAYERS,
            lstm_select_every: 5,
            seed: 0,
        }
    }
}

impl RomConfig {
    /// Full-length training schedule.
    pub fn full() -> Self {
        Self {
            cae: TrainConfig {
                lr: 5e-4,
                batch_size: 20,
                epochs: 2000,
                seed: 0,
            },
            ffnn: TrainConfig {
                lr: 1e-2,
                batch_size: 4,
                epochs: 10_000,
                seed: 0,
            },
            lstm: TrainConfig {
                lr: 1e-4,
                batch_size: 10,
                epochs: 35_000,
                seed: 0,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RomError> {
        if self.q == 0 || self.window == 0 || self.lstm_hidden == 0 || self.lstm_layers == 0 {
            return Err(RomError::Config("q, window and LSTM sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(RomError::Config("val_fraction must lie in [0, 1)".into()));
        }
        for (name, c) in [("cae", &self.cae), ("ffnn", &self.ffnn), ("lstm", &self.lstm)] {
            if !(c.lr > 0.0) || c.batch_size == 0 {
                return Err(RomError::Config(format!("{name}: learning rate and batch size must be positive")));
            }
        }
        Ok(())
    }

    fn stage(&self, base: &TrainConfig, label: &str) -> TrainConfig {
        TrainConfig {
            seed: derive(self.seed, label),
            ..base.clone()
        }
    }
}

/// Per-stage metrics of an offline run.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineReport {
    /// Mean relative reconstruction error of the training snapshots in the basis.
    pub basis_error: f64,
    pub rank: usize,
    pub padded: usize,
    pub train_parameters: Vec<usize>,
    pub val_parameters: Vec<usize>,
    pub cae: TrainReport,
    pub ffnn: TrainReport,
    pub lstm: TrainReport,
    /// 1-based LSTM epoch whose parameters were kept, with its validation
    /// rollout error. `None` when no selection ran.
    pub lstm_selected: Option<(usize, f64)>,
}

impl OfflineReport {
    /// `(stage, final train loss, final validation loss)` rows.
    pub fn stage_losses(&self) -> Vec<(&'static str, f64, Option<f64>)> {
        vec![
            ("cae", self.cae.final_train(), self.cae.final_val()),
            ("ffnn", self.ffnn.final_train(), self.ffnn.final_val()),
            ("lstm", self.lstm.final_train(), self.lstm.final_val()),
        ]
    }
}

fn stack(rows: &[Array2<f64>], idx: &[usize]) -> Array2<f64> {
    let views: Vec<_> = idx.iter().map(|&j| rows[j].view()).collect();
    if views.is_empty() {
        return Array2::zeros((0, rows.first().map_or(0, |r| r.ncols())));
    }
    concatenate(Axis(0), &views).expect("equal widths")
}

/// Mean squared latent error of closed-loop rollouts started from the true
/// first window of each trajectory.
fn rollout_error(
    lstm: &Lstm,
    latents: &[ndarray::ArrayView2<'_, f64>],
    thetas: &[Vec<f64>],
) -> Result<f64, crate::nn::NnError> {
    let w = lstm.window();
    let (n_t, q) = latents[0].dim();
    let starts = ndarray::Array3::from_shape_fn((latents.len(), w, q), |(b, i, k)| latents[b][(i, k)]);
    let th = Array2::from_shape_fn((thetas.len(), lstm.parameter_dim()), |(b, c)| thetas[b][c]);
    let out = lstm.rollout(starts.view(), th.view(), n_t - w)?;
    let mut sum = 0.0;
    for (b, z) in latents.iter().enumerate() {
        for i in w..n_t {
            for k in 0..q {
                sum += (out[(b, i - w, k)] - z[(i, k)]).powi(2);
            }
        }
    }
    Ok(sum / out.len() as f64)
}

/// Trains the three networks on `train` given a reduced basis.
pub fn fit_bundle(
    train: &SnapshotSet,
    basis: &DMatrix<f64>,
    space: &ParameterSpace,
    config: &RomConfig,
) -> Result<(RomBundle, OfflineReport), RomError> {
    config.validate()?;
    let first = train
        .snapshots
        .first()
        .ok_or_else(|| RomError::Shape("no training snapshots".into()))?;
    let (n_h, n_t) = (first.n_h(), first.n_t());
    if train.snapshots.iter().any(|s| s.n_h() != n_h || s.n_t() != n_t) {
        return Err(RomError::Shape("training snapshots differ in shape".into()));
    }
    if basis.nrows() != n_h || basis.ncols() == 0 {
        return Err(RomError::Shape(format!(
            "basis is {}x{} for {n_h} nodes",
            basis.nrows(),
            basis.ncols()
        )));
    }
    if n_t <= config.window {
        return Err(RomError::Config(format!(
            "{n_t} time steps do not exceed the window {}",
            config.window
        )));
    }
    if train.thetas.iter().any(|t| t.dim() != space.dim()) {
        return Err(RomError::Shape("parameter dimension differs from the space".into()));
    }
    let m = train.len();
    let rank = basis.ncols();
    let padded = reduce::padded_rank(rank, PAD_MULTIPLE);
    let basis_error = reduce::mean_test_error(&train.matrices(), basis)?;

    // padded reduced coordinates, one row per time step
    let coords: Vec<Array2<f64>> = train
        .snapshots
        .iter()
        .map(|s| {
            let c = basis.transpose() * &s.values;
            Array2::from_shape_fn((n_t, padded), |(i, k)| if k < rank { c[(k, i)] } else { 0.0 })
        })
        .collect();
    let (tr, va) = split_by_parameter(m, config.val_fraction, derive(config.seed, "split"));
    let coord_norm = MinMax::fit(stack(&coords, &tr).view());
    let coords_n: Vec<Array2<f64>> = coords.iter().map(|c| coord_norm.normalize(c.view())).collect();

    let mut cae = Cae::new(padded, config.q, derive(config.seed, "cae-init")).map_err(RomError::stage("cae"))?;
    let cae_report = cae
        .train(
            stack(&coords_n, &tr).view(),
            stack(&coords_n, &va).view(),
            &config.stage(&config.cae, "cae-shuffle"),
        )
        .map_err(RomError::stage("cae"))?;

    let latents: Vec<Array2<f64>> = coords_n
        .iter()
        .map(|c| cae.encode(c.view()))
        .collect::<Result<_, _>>()
        .map_err(RomError::stage("cae"))?;
    let latent_norm = MinMax::fit(stack(&latents, &tr).view());
    let latents_n: Vec<Array2<f64>> = latents.iter().map(|z| latent_norm.normalize(z.view())).collect();

    let theta_rows = Array2::from_shape_fn((m, space.dim()), |(j, c)| train.thetas[j].0[c]);
    let theta_norm = MinMax::fit(theta_rows.select(Axis(0), &tr).view());
    let thetas_n: Vec<Vec<f64>> = train.thetas.iter().map(|t| theta_norm.normalize_row(&t.0)).collect();
    let times = first.times.clone();
    let head_times = Array2::from_shape_fn((config.window, 1), |(i, _)| times[i]);
    let time_norm = MinMax::fit(head_times.view());
    let times_n: Vec<f64> = times.iter().map(|&t| time_norm.forward(0, t)).collect();

    let pick = |idx: &[usize]| -> (Vec<_>, Vec<Vec<f64>>) {
        (
            idx.iter().map(|&j| latents_n[j].view()).collect(),
            idx.iter().map(|&j| thetas_n[j].clone()).collect(),
        )
    };
    let (z_tr, th_tr) = pick(&tr);
    let (z_va, th_va) = pick(&va);
    let xi = space.dim();

    let ffnn_net = RomError::stage("ffnn");
    let ffnn_train = Regression::first_window(&z_tr, &th_tr, &times_n, config.window).map_err(ffnn_net)?;
    let ffnn_val = if va.is_empty() {
        Regression {
            inputs: Array2::zeros((0, xi + 1)),
            targets: Array2::zeros((0, config.q)),
        }
    } else {
        Regression::first_window(&z_va, &th_va, &times_n, config.window).map_err(ffnn_net)?
    };
    let mut ffnn = Ffnn::new(xi, config.q, derive(config.seed, "ffnn-init")).map_err(ffnn_net)?;
    let ffnn_report = ffnn
        .train(&ffnn_train, &ffnn_val, &config.stage(&config.ffnn, "ffnn-shuffle"))
        .map_err(ffnn_net)?;

    let lstm_net = RomError::stage("lstm");
    let lstm_train = build_sliding_windows(&z_tr, &th_tr, config.window).map_err(lstm_net)?;
    let lstm_val = if va.is_empty() {
        crate::nn::SlidingWindows {
            inputs: ndarray::Array3::zeros((0, config.window, config.q + xi)),
            targets: Array2::zeros((0, config.q)),
            origin: Vec::new(),
            window: config.window,
        }
    } else {
        build_sliding_windows(&z_va, &th_va, config.window).map_err(lstm_net)?
    };
    let mut lstm = Lstm::with_size(
        config.q,
        xi,
        config.window,
        config.lstm_hidden,
        config.lstm_layers,
        derive(config.seed, "lstm-init"),
    )
    .map_err(lstm_net)?;
    let lstm_config = config.stage(&config.lstm, "lstm-shuffle");
    let select = config.lstm_select_every > 0 && !z_va.is_empty();
    let mut best: Option<(usize, f64, Lstm)> = None;
    let mut select_error = None;
    let lstm_report = lstm
        .train_observed(&lstm_train, &lstm_val, &lstm_config, |epoch, net| {
            let done = epoch + 1;
            if !select || (done % config.lstm_select_every != 0 && done != lstm_config.epochs) {
                return;
            }
            match rollout_error(net, &z_va, &th_va) {
                Ok(e) if e.is_finite() && best.as_ref().is_none_or(|b| e < b.1) => best = Some((done, e, net.clone())),
                Ok(_) => {}
                Err(err) => select_error = Some(err),
            }
        })
        .map_err(lstm_net)?;
    if let Some(err) = select_error {
        return Err(lstm_net(err));
    }
    let lstm_selected = best.map(|(epoch, e, net)| {
        lstm = net;
        (epoch, e)
    });

    let report = OfflineReport {
        basis_error,
        rank,
        padded,
        train_parameters: tr,
        val_parameters: va,
        cae: cae_report,
        ffnn: ffnn_report,
        lstm: lstm_report,
        lstm_selected,
    };
    let mut provenance = Meta::new();
    provenance
        .set("seed", config.seed)
        .set("rank", rank)
        .set("padded", padded)
        .set("basis_error", format!("{basis_error:e}"));
    if let Some((epoch, e)) = report.lstm_selected {
        provenance
            .set("lstm_selected_epoch", epoch)
            .set("lstm_selected_rollout_error", format!("{e:e}"));
    }
    for (stage, train_loss, val_loss) in report.stage_losses() {
        provenance.set(format!("{stage}_train_loss"), format!("{train_loss:e}"));
        if let Some(v) = val_loss {
            provenance.set(format!("{stage}_val_loss"), format!("{v:e}"));
        }
    }
    let bundle = RomBundle {
        basis: basis.clone(),
        cae,
        lstm,
        ffnn,
        coord_norm,
        latent_norm,
        theta_norm,
        time_norm,
        times,
        names: space.names.clone(),
        bounds: space.bounds(),
        provenance,
    };
    bundle.validate()?;
    Ok((bundle, report))
}

/// Adaptive sampling followed by [`fit_bundle`] on the selected snapshots.
pub fn train_offline(
    hfm: &dyn HighFidelityModel,
    space: &ParameterSpace,
    bo_config: &BoRunConfig,
    config: &RomConfig,
) -> Result<(RomBundle, OfflineReport, BoOutcome), RomError> {
    config.validate()?;
    let outcome = bo::run_bo(bo_config, space, hfm)?;
    let (bundle, report) = fit_bundle(&outcome.train, outcome.basis.u(), space, config)?;
    Ok((bundle, report, outcome))
}
