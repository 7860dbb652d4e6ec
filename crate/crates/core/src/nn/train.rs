//! Mini-batch training loop shared by the three networks.

use rand::seq::SliceRandom;

use super::adam::Adam;
use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

/// Per-epoch mean losses; `val_loss` is empty without validation samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

impl TrainReport {
    pub fn final_train(&self) -> f64 {
        self.train_loss.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_val(&self) -> Option<f64> {
        self.val_loss.last().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// Samples per graph when evaluating validation loss.
const EVAL_CHUNK: usize = 512;

/// Runs Adam over shuffled mini-batches. `build(store, split, indices)`
/// returns a graph and its scalar loss (a mean over the given samples).
pub fn fit<F>(
    store: &mut ParamStore,
    n_train: usize,
    n_val: usize,
    config: &TrainConfig,
    build: F,
) -> Result<TrainReport, NnError>
where
    F: FnMut(&ParamStore, Split, &[usize]) -> (Graph, Var),
{
    fit_observed(store, n_train, n_val, config, build, |_, _| {})
}

/// [`fit`] that hands the parameters to `observe(epoch, store)` after
/// every epoch.
pub fn fit_observed<F, O>(
    store: &mut ParamStore,
    n_train: usize,
    n_val: usize,
    config: &TrainConfig,
    mut build: F,
    mut observe: O,
) -> Result<TrainReport, NnError>
where
    F: FnMut(&ParamStore, Split, &[usize]) -> (Graph, Var),
    O: FnMut(usize, &ParamStore),
{
    if n_train == 0 {
        return Err(NnError::Data("no training samples".into()));
    }
    let mut adam = Adam::new(store, config.lr);
    let mut rng = crate::seed::rng(config.seed);
    let mut order: Vec<usize> = (0..n_train).collect();
    let batch = config.batch_size.max(1);
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let (g, loss) = build(store, Split::Train, chunk);
            let l = g.value(loss)[[]];
            if !l.is_finite() {
                return Err(NnError::Divergence { epoch });
            }
            total += l * chunk.len() as f64;
            let grads = g.backward(loss).param_grads(store);
            adam.step(store, &grads)?;
        }
        report.train_loss.push(total / n_train as f64);
        if n_val > 0 {
            report.val_loss.push(evaluate(store, n_val, &mut build, Split::Val));
        }
        observe(epoch, store);
    }
    Ok(report)
}

/// Mean loss over `n` samples of a split without updating parameters.
pub fn evaluate<F>(store: &ParamStore, n: usize, build: &mut F, split: Split) -> f64
where
    F: FnMut(&ParamStore, Split, &[usize]) -> (Graph, Var),
{
    let idx: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (g, loss) = build(store, split, chunk);
        total += g.value(loss)[[]] * chunk.len() as f64;
    }
    total / n.max(1) as f64
}

/// Splits `m` parameter indices into training and validation groups:
/// `floor(val_fraction * m)` validation parameters chosen by a seeded shuffle.
pub fn split_by_parameter(m: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = ((val_fraction * m as f64).floor() as usize).min(m.saturating_sub(1));
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut crate::seed::rng(seed));
    let mut val = idx.split_off(m - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Tensor;
    use ndarray::IxDyn;

    #[test]
    fn split_sizes() {
        let (t, v) = split_by_parameter(20, 0.1, 1);
        assert_eq!((t.len(), v.len()), (18, 2));
        let (t, v) = split_by_parameter(9, 0.1, 1);
        assert_eq!((t.len(), v.len()), (9, 0));
        let (t, v) = split_by_parameter(1, 0.5, 1);
        assert_eq!((t.len(), v.len()), (1, 0));
    }

    #[test]
    fn memorizes_a_constant() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::zeros(IxDyn(&[1, 2])));
        let cfg = TrainConfig {
            lr: 0.05,
            batch_size: 4,
            epochs: 300,
            seed: 0,
        };
        let report = fit(&mut store, 8, 2, &cfg, |s, _, idx| {
            let mut g = Graph::new();
            let pv = g.param(s, p);
            let ones = g.input(Tensor::from_elem(IxDyn(&[idx.len(), 1]), 1.0));
            let y = g.matmul(ones, pv);
            let t = Tensor::from_shape_fn(IxDyn(&[idx.len(), 2]), |i| [0.7, -0.2][i[1]]);
            let loss = g.mse(y, t);
            (g, loss)
        })
        .unwrap();
        assert!(report.final_train() < 1e-6);
        assert_eq!(report.val_loss.len(), 300);
        assert!(report.final_val().unwrap() < 1e-6);
    }
}
