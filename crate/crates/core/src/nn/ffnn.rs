//! Feed-forward map from `[t; θ]` to the latent vector.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};

use super::checkpoint;
use super::graph::{Graph, Var};
use super::layers::{Activation, Dense, LEAKY_SLOPE};
use super::params::ParamStore;
use super::train::{self, Split, TrainConfig, TrainReport};
use super::NnError;

pub const FFNN_HIDDEN: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct Ffnn {
    xi: usize,
    q: usize,
    store: ParamStore,
    hidden: Dense,
    out: Dense,
}

/// Inputs `(samples, ξ + 1)` paired with target latents `(samples, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Regression {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `[t_i; θ_j]` for the first `window` times of every trajectory;
    /// `times` are shared by all parameters.
    pub fn first_window(
        latents: &[ArrayView2<'_, f64>],
        thetas: &[Vec<f64>],
        times: &[f64],
        window: usize,
    ) -> Result<Self, NnError> {
        if window == 0 {
            return Err(NnError::Config("window must be at least 1".into()));
        }
        if latents.len() != thetas.len() {
            return Err(NnError::Shape("trajectory and parameter counts differ".into()));
        }
        let Some(first) = latents.first() else {
            return Err(NnError::Data("no trajectories".into()));
        };
        let (q, xi) = (first.ncols(), thetas[0].len());
        if times.len() < window {
            return Err(NnError::Data("fewer times than the window".into()));
        }
        let rows = latents.len() * window;
        let mut inputs = Array2::zeros((rows, xi + 1));
        let mut targets = Array2::zeros((rows, q));
        for (j, (z, th)) in latents.iter().zip(thetas).enumerate() {
            if z.nrows() < window || z.ncols() != q || th.len() != xi {
                return Err(NnError::Shape("inconsistent trajectory shape".into()));
            }
            for i in 0..window {
                let r = j * window + i;
                inputs[[r, 0]] = times[i];
                inputs.slice_mut(s![r, 1..]).assign(&ndarray::aview1(th));
                targets.row_mut(r).assign(&z.row(i));
            }
        }
        Ok(Self { inputs, targets })
    }
}

impl Ffnn {
    pub fn new(xi: usize, q: usize, seed: u64) -> Result<Self, NnError> {
        if xi == 0 || q == 0 {
            return Err(NnError::Config("FFNN sizes must be positive".into()));
        }
        let mut rng = crate::seed::rng(seed);
        let mut store = ParamStore::new();
        let hidden = Dense::new(
            &mut store,
            "hidden",
            xi + 1,
            FFNN_HIDDEN,
            Activation::LeakyRelu(LEAKY_SLOPE),
            &mut rng,
        );
        let out = Dense::new(&mut store, "out", FFNN_HIDDEN, q, Activation::Linear, &mut rng);
        Ok(Self {
            xi,
            q,
            store,
            hidden,
            out,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.xi + 1
    }

    pub fn latent_dim(&self) -> usize {
        self.q
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn forward_graph(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.hidden.forward(g, store, x);
        self.out.forward(g, store, h)
    }

    pub fn predict(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>, NnError> {
        if inputs.ncols() != self.input_dim() {
            return Err(NnError::Shape(format!(
                "FFNN expects {} inputs, got {}",
                self.input_dim(),
                inputs.ncols()
            )));
        }
        let mut g = Graph::new();
        let x = g.input(inputs.to_owned().into_dyn());
        let y = self.forward_graph(&mut g, &self.store, x);
        Ok(g.value(y).view().into_dimensionality::<ndarray::Ix2>().expect("2-D output").to_owned())
    }

    fn loss_graph(&self, store: &ParamStore, data: &Regression, idx: &[usize]) -> (Graph, Var) {
        let mut g = Graph::new();
        let x = g.input(data.inputs.select(Axis(0), idx).into_dyn());
        let y = self.forward_graph(&mut g, store, x);
        let loss = g.mse(y, data.targets.select(Axis(0), idx).into_dyn());
        (g, loss)
    }

    pub fn loss(&self, data: &Regression) -> f64 {
        let mut build = |s: &ParamStore, _: Split, idx: &[usize]| self.loss_graph(s, data, idx);
        train::evaluate(&self.store, data.len(), &mut build, Split::Val)
    }

    pub fn train(
        &mut self,
        train_set: &Regression,
        val_set: &Regression,
        config: &TrainConfig,
    ) -> Result<TrainReport, NnError> {
        if train_set.inputs.ncols() != self.input_dim() || train_set.targets.ncols() != self.q {
            return Err(NnError::Shape("FFNN training data width mismatch".into()));
        }
        let mut store = std::mem::take(&mut self.store);
        let this = &*self;
        let result = train::fit(&mut store, train_set.len(), val_set.len(), config, |s, split, idx| {
            match split {
                Split::Train => this.loss_graph(s, train_set, idx),
                Split::Val => this.loss_graph(s, val_set, idx),
            }
        });
        self.store = store;
        result
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut meta = crate::io::Meta::new();
        meta.set("kind", "ffnn").set("xi", self.xi).set("q", self.q);
        checkpoint::save(path, &meta, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let (meta, values) = checkpoint::load(path)?;
        checkpoint::expect_kind(&meta, "ffnn", path)?;
        let mut net = Self::new(meta.require("xi", path)?, meta.require("q", path)?, 0)?;
        checkpoint::restore(&mut net.store, values, path)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths() {
        let net = Ffnn::new(4, 4, 0).unwrap();
        assert_eq!(net.input_dim(), 5);
        let s = net.params();
        assert_eq!(s.value(s.id("hidden.w").unwrap()).shape(), &[5, 50]);
        assert_eq!(s.value(s.id("out.w").unwrap()).shape(), &[50, 4]);
    }

    #[test]
    fn first_window_rows() {
        let z = Array2::from_shape_fn((6, 2), |(i, c)| (10 * i + c) as f64);
        let times = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
        let data = Regression::first_window(&[z.view(), z.view()], &[vec![7.0], vec![8.0]], &times, 3).unwrap();
        assert_eq!(data.len(), 6);
        assert_eq!(data.inputs.row(4).to_vec(), vec![0.1, 8.0]);
        assert_eq!(data.targets.row(4).to_vec(), vec![10.0, 11.0]);
    }

    #[test]
    fn fits_a_single_parameter() {
        let z = Array2::from_shape_fn((5, 3), |(i, c)| 0.2 * i as f64 - 0.3 * c as f64);
        let times: Vec<f64> = (0..5).map(|i| -1.0 + 0.5 * i as f64).collect();
        let data = Regression::first_window(&[z.view()], &[vec![0.4, -0.1]], &times, 5).unwrap();
        let mut net = Ffnn::new(2, 3, 1).unwrap();
        let cfg = TrainConfig {
            lr: 1e-2,
            batch_size: 5,
            epochs: 1500,
            seed: 0,
        };
        let report = net.train(&data, &data, &cfg).unwrap();
        assert!(report.final_train() < 1e-5, "loss {}", report.final_train());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ffnn");
        let net = Ffnn::new(3, 2, 4).unwrap();
        net.save(&path).unwrap();
        assert_eq!(Ffnn::load(&path).unwrap(), net);
    }
}
