//! Sliding-window LSTM over latent trajectories.

use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};

use super::checkpoint;
use super::graph::{Graph, Var};
use super::layers::{Activation, Dense, LstmCell};
use super::params::ParamStore;
use super::train::{self, Split, TrainConfig, TrainReport};
use super::NnError;

pub const LSTM_HIDDEN: usize = 50;
pub const LSTM_LAYERS: usize = 3;

/// Windowed samples built from per-parameter latent trajectories.
///
/// Sample `α` of parameter `j` has input rows `[z(t_{α+k}); θ_j]` for
/// `k = 0..w` and target `z(t_{α+w})`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingWindows {
    /// `(samples, w, q + ξ)`
    pub inputs: Array3<f64>,
    /// `(samples, q)`
    pub targets: Array2<f64>,
    /// `(parameter index, α)` of each sample.
    pub origin: Vec<(usize, usize)>,
    pub window: usize,
}

impl SlidingWindows {
    pub fn len(&self) -> usize {
        self.targets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Samples per parameter, `N_t - w`.
    pub fn per_parameter(n_t: usize, window: usize) -> usize {
        n_t.saturating_sub(window)
    }
}

/// `latents[j]` is the `N_t x q` trajectory of parameter `thetas[j]`.
pub fn build_sliding_windows(
    latents: &[ArrayView2<'_, f64>],
    thetas: &[Vec<f64>],
    window: usize,
) -> Result<SlidingWindows, NnError> {
    if latents.len() != thetas.len() {
        return Err(NnError::Shape(format!(
            "{} trajectories but {} parameter vectors",
            latents.len(),
            thetas.len()
        )));
    }
    if window == 0 {
        return Err(NnError::Config("window must be at least 1".into()));
    }
    let Some(first) = latents.first() else {
        return Err(NnError::Data("no trajectories".into()));
    };
    let q = first.ncols();
    let xi = thetas[0].len();
    let mut total = 0;
    for (z, th) in latents.iter().zip(thetas) {
        if z.ncols() != q || th.len() != xi {
            return Err(NnError::Shape("inconsistent latent or parameter width".into()));
        }
        if z.nrows() <= window {
            return Err(NnError::Data(format!(
                "trajectory of {} steps is not longer than the window {window}",
                z.nrows()
            )));
        }
        total += z.nrows() - window;
    }
    let mut inputs = Array3::zeros((total, window, q + xi));
    let mut targets = Array2::zeros((total, q));
    let mut origin = Vec::with_capacity(total);
    let mut row = 0;
    for (j, (z, th)) in latents.iter().zip(thetas).enumerate() {
        for alpha in 0..z.nrows() - window {
            let mut x = inputs.index_axis_mut(Axis(0), row);
            x.slice_mut(s![.., ..q]).assign(&z.slice(s![alpha..alpha + window, ..]));
            for k in 0..window {
                for (c, &v) in th.iter().enumerate() {
                    x[[k, q + c]] = v;
                }
            }
            targets.row_mut(row).assign(&z.row(alpha + window));
            origin.push((j, alpha));
            row += 1;
        }
    }
    Ok(SlidingWindows {
        inputs,
        targets,
        origin,
        window,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    q: usize,
    xi: usize,
    window: usize,
    store: ParamStore,
    cells: Vec<LstmCell>,
    head: Dense,
}

impl Lstm {
    pub fn new(q: usize, xi: usize, window: usize, seed: u64) -> Result<Self, NnError> {
        Self::with_size(q, xi, window, LSTM_HIDDEN, LSTM_LAYERS, seed)
    }

    pub fn with_size(
        q: usize,
        xi: usize,
        window: usize,
        hidden: usize,
        layers: usize,
        seed: u64,
    ) -> Result<Self, NnError> {
        if window == 0 || q == 0 || hidden == 0 || layers == 0 {
            return Err(NnError::Config("LSTM sizes must be positive".into()));
        }
        let mut rng = crate::seed::rng(seed);
        let mut store = ParamStore::new();
        let cells = (0..layers)
            .map(|l| {
                let input = if l == 0 { q + xi } else { hidden };
                LstmCell::new(&mut store, &format!("lstm{}", l + 1), input, hidden, &mut rng)
            })
            .collect();
        let head = Dense::new(&mut store, "head", hidden, q, Activation::Linear, &mut rng);
        Ok(Self {
            q,
            xi,
            window,
            store,
            cells,
            head,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.q
    }

    pub fn parameter_dim(&self) -> usize {
        self.xi
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn hidden(&self) -> usize {
        self.cells[0].hidden
    }

    pub fn layers(&self) -> usize {
        self.cells.len()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// `steps[k]` holds the `(batch, q + ξ)` inputs of window position `k`.
    pub fn forward_graph(&self, g: &mut Graph, store: &ParamStore, steps: &[Var]) -> Var {
        let mut states: Vec<Option<(Var, Var)>> = vec![None; self.cells.len()];
        let mut top = None;
        for &x in steps {
            let mut h_in = x;
            for (cell, state) in self.cells.iter().zip(states.iter_mut()) {
                let (h, c) = cell.step(g, store, h_in, *state);
                *state = Some((h, c));
                h_in = h;
            }
            top = Some(h_in);
        }
        self.head.forward(g, store, top.expect("window is non-empty"))
    }

    fn check_inputs(&self, windows: ArrayView3<'_, f64>) -> Result<(), NnError> {
        let sh = windows.shape();
        if sh[1] != self.window || sh[2] != self.q + self.xi {
            return Err(NnError::Shape(format!(
                "LSTM expects windows of shape ({}, {}), got ({}, {})",
                self.window,
                self.q + self.xi,
                sh[1],
                sh[2]
            )));
        }
        Ok(())
    }

    fn step_inputs(g: &mut Graph, windows: ArrayView3<'_, f64>, idx: Option<&[usize]>) -> Vec<Var> {
        (0..windows.shape()[1])
            .map(|k| {
                let slab = windows.index_axis(Axis(1), k);
                let t = match idx {
                    Some(idx) => slab.select(Axis(0), idx),
                    None => slab.to_owned(),
                };
                g.input(t.into_dyn())
            })
            .collect()
    }

    /// One-step predictions for each window (teacher forced).
    pub fn predict(&self, windows: ArrayView3<'_, f64>) -> Result<Array2<f64>, NnError> {
        self.check_inputs(windows)?;
        let mut out = Array2::zeros((windows.shape()[0], self.q));
        let mut start = 0;
        for chunk in windows.axis_chunks_iter(Axis(0), 512) {
            let mut g = Graph::new();
            let steps = Self::step_inputs(&mut g, chunk, None);
            let y = self.forward_graph(&mut g, &self.store, &steps);
            let yv = g.value(y).view().into_dimensionality::<ndarray::Ix2>().expect("2-D output");
            out.slice_mut(s![start..start + chunk.shape()[0], ..]).assign(&yv);
            start += chunk.shape()[0];
        }
        Ok(out)
    }

    /// Closed-loop rollout. `starts` is `(batch, w, q)` with the first `w`
    /// latents of each trajectory and `thetas` is `(batch, ξ)`. Returns the
    /// `(batch, horizon, q)` latents following the start window, each one
    /// fed back as input for the next.
    pub fn rollout(
        &self,
        starts: ArrayView3<'_, f64>,
        thetas: ArrayView2<'_, f64>,
        horizon: usize,
    ) -> Result<Array3<f64>, NnError> {
        let (b, w, q) = starts.dim();
        if w != self.window || q != self.q || thetas.dim() != (b, self.xi) {
            return Err(NnError::Shape("rollout start or parameter shape mismatch".into()));
        }
        let mut windows = Array3::zeros((b, w, q + self.xi));
        windows.slice_mut(s![.., .., ..q]).assign(&starts);
        for k in 0..w {
            windows.slice_mut(s![.., k, q..]).assign(&thetas);
        }
        let mut out = Array3::zeros((b, horizon, q));
        for step in 0..horizon {
            let next = self.predict(windows.view())?;
            out.slice_mut(s![.., step, ..]).assign(&next);
            for k in 0..w - 1 {
                let shifted = windows.slice(s![.., k + 1, ..q]).to_owned();
                windows.slice_mut(s![.., k, ..q]).assign(&shifted);
            }
            windows.slice_mut(s![.., w - 1, ..q]).assign(&next);
        }
        Ok(out)
    }

    fn loss_graph(&self, store: &ParamStore, data: &SlidingWindows, idx: &[usize]) -> (Graph, Var) {
        let mut g = Graph::new();
        let steps = Self::step_inputs(&mut g, data.inputs.view(), Some(idx));
        let y = self.forward_graph(&mut g, store, &steps);
        let target = data.targets.select(Axis(0), idx).into_dyn();
        let loss = g.mse(y, target);
        (g, loss)
    }

    /// Mean squared one-step error over a window set.
    pub fn loss(&self, data: &SlidingWindows) -> Result<f64, NnError> {
        self.check_inputs(data.inputs.view())?;
        let mut build = |s: &ParamStore, _: Split, idx: &[usize]| self.loss_graph(s, data, idx);
        Ok(train::evaluate(&self.store, data.len(), &mut build, Split::Val))
    }

    pub fn train(
        &mut self,
        train_set: &SlidingWindows,
        val_set: &SlidingWindows,
        config: &TrainConfig,
    ) -> Result<TrainReport, NnError> {
        self.train_observed(train_set, val_set, config, |_, _| {})
    }

    /// [`Lstm::train`] that passes a copy of the network to
    /// `observe(epoch, lstm)` after every epoch.
    pub fn train_observed<O>(
        &mut self,
        train_set: &SlidingWindows,
        val_set: &SlidingWindows,
        config: &TrainConfig,
        mut observe: O,
    ) -> Result<TrainReport, NnError>
    where
        O: FnMut(usize, &Lstm),
    {
        self.check_inputs(train_set.inputs.view())?;
        if !val_set.is_empty() {
            self.check_inputs(val_set.inputs.view())?;
        }
        let mut store = std::mem::take(&mut self.store);
        let this = &*self;
        let build = |s: &ParamStore, split: Split, idx: &[usize]| match split {
            Split::Train => this.loss_graph(s, train_set, idx),
            Split::Val => this.loss_graph(s, val_set, idx),
        };
        let view = |epoch: usize, s: &ParamStore| {
            let mut copy = this.clone();
            copy.store = s.clone();
            observe(epoch, &copy);
        };
        let result = train::fit_observed(&mut store, train_set.len(), val_set.len(), config, build, view);
        self.store = store;
        result
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut meta = crate::io::Meta::new();
        meta.set("kind", "lstm")
            .set("q", self.q)
            .set("xi", self.xi)
            .set("window", self.window)
            .set("hidden", self.hidden())
            .set("layers", self.layers());
        checkpoint::save(path, &meta, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let (meta, values) = checkpoint::load(path)?;
        checkpoint::expect_kind(&meta, "lstm", path)?;
        let mut net = Self::with_size(
            meta.require("q", path)?,
            meta.require("xi", path)?,
            meta.require("window", path)?,
            meta.require("hidden", path)?,
            meta.require("layers", path)?,
            0,
        )?;
        checkpoint::restore(&mut net.store, values, path)?;
        Ok(net)
    }
}
