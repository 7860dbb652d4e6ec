//! Convolutional autoencoder over zero-padded reduced coordinates.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis, IxDyn};

use super::checkpoint;
use super::graph::{Graph, Tensor, Var};
use super::layers::{Activation, Conv, Dense};
use super::params::ParamStore;
use super::train::{self, Split, TrainConfig, TrainReport};
use super::NnError;

/// Channel count of the reshaped decoder seed.
const SEED_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Cae {
    side: usize,
    q: usize,
    store: ParamStore,
    enc_conv: [Conv; 2],
    enc_dense: [Dense; 3],
    dec_dense: [Dense; 3],
    dec_conv: [Conv; 4],
}

impl Cae {
    /// Autoencoder for inputs of `n` values reshaped to a `sqrt(n)` square.
    /// The side must be a positive multiple of 8 (three pooling levels).
    pub fn new(n: usize, q: usize, seed: u64) -> Result<Self, NnError> {
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n {
            return Err(NnError::Shape(format!("CAE input size {n} is not a perfect square")));
        }
        if side == 0 || side % 8 != 0 {
            return Err(NnError::Shape(format!("CAE side {side} is not a positive multiple of 8")));
        }
        if q == 0 {
            return Err(NnError::Config("latent size must be positive".into()));
        }
        let mut rng = crate::seed::rng(seed);
        let mut s = ParamStore::new();
        let elu = Activation::Elu;
        let flat = (side / 4) * (side / 4) * 10;
        let seed_len = (side / 8) * (side / 8) * SEED_CHANNELS;
        let enc_conv = [
            Conv::new(&mut s, "enc.conv1", 1, 25, elu, &mut rng),
            Conv::new(&mut s, "enc.conv2", 25, 10, elu, &mut rng),
        ];
        let enc_dense = [
            Dense::new(&mut s, "enc.dense1", flat, 20, elu, &mut rng),
            Dense::new(&mut s, "enc.dense2", 20, 10, elu, &mut rng),
            Dense::new(&mut s, "enc.dense3", 10, q, Activation::Linear, &mut rng),
        ];
        let dec_dense = [
            Dense::new(&mut s, "dec.dense1", q, 10, elu, &mut rng),
            Dense::new(&mut s, "dec.dense2", 10, 20, elu, &mut rng),
            Dense::new(&mut s, "dec.dense3", 20, seed_len, elu, &mut rng),
        ];
        let dec_conv = [
            Conv::new(&mut s, "dec.conv1", SEED_CHANNELS, 10, elu, &mut rng),
            Conv::new(&mut s, "dec.conv2", 10, 25, elu, &mut rng),
            Conv::new(&mut s, "dec.conv3", 25, 30, elu, &mut rng),
            Conv::new(&mut s, "dec.conv4", 30, 1, Activation::Linear, &mut rng),
        ];
        Ok(Self {
            side,
            q,
            store: s,
            enc_conv,
            enc_dense,
            dec_dense,
            dec_conv,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn input_len(&self) -> usize {
        self.side * self.side
    }

    pub fn latent_dim(&self) -> usize {
        self.q
    }

    /// `(height, width, channels)` of one encoder input.
    pub fn input_shape(&self) -> [usize; 3] {
        [self.side, self.side, 1]
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// `x` of shape `(batch, side, side, 1)` to `(batch, q)`.
    pub fn encode_graph(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let batch = g.value(x).shape()[0];
        let mut h = self.enc_conv[0].forward(g, store, x);
        h = g.max_pool2(h);
        h = self.enc_conv[1].forward(g, store, h);
        h = g.max_pool2(h);
        let flat = g.value(h).len() / batch;
        h = g.reshape(h, &[batch, flat]);
        for d in &self.enc_dense {
            h = d.forward(g, store, h);
        }
        h
    }

    /// `z` of shape `(batch, q)` to `(batch, side, side, 1)`.
    pub fn decode_graph(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Var {
        let batch = g.value(z).shape()[0];
        let mut h = z;
        for d in &self.dec_dense {
            h = d.forward(g, store, h);
        }
        let s8 = self.side / 8;
        h = g.reshape(h, &[batch, s8, s8, SEED_CHANNELS]);
        for (k, c) in self.dec_conv.iter().enumerate() {
            h = c.forward(g, store, h);
            if k < 3 {
                h = g.upsample2(h);
            }
        }
        h
    }

    fn image_batch(&self, rows: ArrayView2<'_, f64>, idx: &[usize]) -> Tensor {
        let n = self.input_len();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend(rows.row(i).iter());
        }
        Tensor::from_shape_vec(IxDyn(&[idx.len(), self.side, self.side, 1]), data)
            .expect("row length matches input size")
    }

    fn check_width(&self, rows: ArrayView2<'_, f64>) -> Result<(), NnError> {
        if rows.ncols() != self.input_len() {
            return Err(NnError::Shape(format!(
                "CAE expects rows of length {}, got {}",
                self.input_len(),
                rows.ncols()
            )));
        }
        Ok(())
    }

    /// Latent codes for each row of `rows` (samples x n).
    pub fn encode(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>, NnError> {
        self.check_width(rows)?;
        let mut out = Array2::zeros((rows.nrows(), self.q));
        let idx: Vec<usize> = (0..rows.nrows()).collect();
        for chunk in idx.chunks(512) {
            let mut g = Graph::new();
            let x = g.input(self.image_batch(rows, chunk));
            let z = self.encode_graph(&mut g, &self.store, x);
            let zv = g.value(z);
            for (k, &i) in chunk.iter().enumerate() {
                for j in 0..self.q {
                    out[[i, j]] = zv[[k, j]];
                }
            }
        }
        Ok(out)
    }

    /// Reconstructed rows (samples x n) from latent codes (samples x q).
    pub fn decode(&self, latents: ArrayView2<'_, f64>) -> Result<Array2<f64>, NnError> {
        if latents.ncols() != self.q {
            return Err(NnError::Shape(format!(
                "decoder expects {} latent values, got {}",
                self.q,
                latents.ncols()
            )));
        }
        let n = self.input_len();
        let mut out = Array2::zeros((latents.nrows(), n));
        for (chunk_idx, chunk) in latents.axis_chunks_iter(Axis(0), 512).enumerate() {
            let mut g = Graph::new();
            let z = g.input(chunk.to_owned().into_dyn());
            let y = self.decode_graph(&mut g, &self.store, z);
            let yv = g.value(y);
            let flat = yv.view().into_shape_with_order((chunk.nrows(), n)).expect("contiguous");
            out.slice_mut(ndarray::s![chunk_idx * 512..chunk_idx * 512 + chunk.nrows(), ..])
                .assign(&flat);
        }
        Ok(out)
    }

    /// Mean squared reconstruction error over the rows.
    pub fn loss(&self, rows: ArrayView2<'_, f64>) -> Result<f64, NnError> {
        self.check_width(rows)?;
        let mut build = |s: &ParamStore, _: Split, idx: &[usize]| self.loss_graph(s, rows, idx);
        Ok(train::evaluate(&self.store, rows.nrows(), &mut build, Split::Val))
    }

    fn loss_graph(&self, store: &ParamStore, rows: ArrayView2<'_, f64>, idx: &[usize]) -> (Graph, Var) {
        let mut g = Graph::new();
        let img = self.image_batch(rows, idx);
        let x = g.input(img.clone());
        let z = self.encode_graph(&mut g, store, x);
        let y = self.decode_graph(&mut g, store, z);
        let loss = g.mse(y, img);
        (g, loss)
    }

    /// Trains on `train_rows`, reporting validation loss on `val_rows`
    /// (which may be empty).
    pub fn train(
        &mut self,
        train_rows: ArrayView2<'_, f64>,
        val_rows: ArrayView2<'_, f64>,
        config: &TrainConfig,
    ) -> Result<TrainReport, NnError> {
        self.check_width(train_rows)?;
        if val_rows.nrows() > 0 {
            self.check_width(val_rows)?;
        }
        let mut store = std::mem::take(&mut self.store);
        let this = &*self;
        let result = train::fit(
            &mut store,
            train_rows.nrows(),
            val_rows.nrows(),
            config,
            |s, split, idx| match split {
                Split::Train => this.loss_graph(s, train_rows, idx),
                Split::Val => this.loss_graph(s, val_rows, idx),
            },
        );
        self.store = store;
        result
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut meta = crate::io::Meta::new();
        meta.set("kind", "cae").set("side", self.side).set("q", self.q);
        checkpoint::save(path, &meta, &self.store)
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let (meta, values) = checkpoint::load(path)?;
        checkpoint::expect_kind(&meta, "cae", path)?;
        let side: usize = meta.require("side", path)?;
        let q: usize = meta.require("q", path)?;
        let mut net = Self::new(side * side, q, 0)?;
        checkpoint::restore(&mut net.store, values, path)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_the_layer_table() {
        let cae = Cae::new(256, 4, 0).unwrap();
        assert_eq!(cae.input_shape(), [16, 16, 1]);
        let s = cae.params();
        assert_eq!(s.value(s.id("enc.dense1.w").unwrap()).shape(), &[160, 20]);
        assert_eq!(s.value(s.id("enc.dense3.w").unwrap()).shape(), &[10, 4]);
        assert_eq!(s.value(s.id("dec.dense3.w").unwrap()).shape(), &[20, 12]);
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(IxDyn(&[2, 16, 16, 1])));
        let z = cae.encode_graph(&mut g, s, x);
        assert_eq!(g.value(z).shape(), &[2, 4]);
        let y = cae.decode_graph(&mut g, s, z);
        assert_eq!(g.value(y).shape(), &[2, 16, 16, 1]);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(matches!(Cae::new(250, 4, 0), Err(NnError::Shape(_))));
        assert!(matches!(Cae::new(144, 4, 0), Err(NnError::Shape(_))));
        assert!(Cae::new(64, 4, 0).is_ok());
    }

    #[test]
    fn seeded_initialization_is_reproducible() {
        assert_eq!(Cae::new(64, 4, 7).unwrap(), Cae::new(64, 4, 7).unwrap());
        assert_ne!(Cae::new(64, 4, 7).unwrap(), Cae::new(64, 4, 8).unwrap());
    }

    #[test]
    fn memorizes_a_single_sample() {
        let mut cae = Cae::new(64, 4, 1).unwrap();
        let row = Array2::from_shape_fn((1, 64), |(_, k)| ((k as f64) * 0.3).sin() * 0.8);
        let cfg = TrainConfig {
            lr: 2e-3,
            batch_size: 1,
            epochs: 600,
            seed: 0,
        };
        let report = cae.train(row.view(), row.view(), &cfg).unwrap();
        assert!(report.final_train() < 1e-3 * report.train_loss[0]);
        let back = cae.decode(cae.encode(row.view()).unwrap().view()).unwrap();
        let err: f64 = (&back - &row).iter().map(|e| e * e).sum();
        assert!((err - report.final_val().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cae");
        let cae = Cae::new(64, 3, 5).unwrap();
        cae.save(&path).unwrap();
        assert_eq!(Cae::load(&path).unwrap(), cae);
    }
}
