//! Layer building blocks expressed as graph fragments.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};

/// Slope of the leaky ReLU used by the feed-forward network.
pub const LEAKY_SLOPE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Linear,
    Elu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Linear => x,
            Activation::Elu => g.elu(x),
            Activation::LeakyRelu(s) => g.leaky_relu(x, s),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub act: Activation,
}

impl Dense {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        act: Activation,
        rng: &mut R,
    ) -> Self {
        let w = store.uniform(format!("{name}.w"), &[fan_in, fan_out], fan_in, rng);
        let b = store.filled(format!("{name}.b"), &[fan_out], 0.0);
        Self { w, b, act }
    }

    /// `act(x W + b)` for `x` of shape `(n, fan_in)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w);
        let y = g.add_bias(y, b);
        self.act.apply(g, y)
    }
}

/// 3x3 "same" convolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub act: Activation,
}

impl Conv {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        act: Activation,
        rng: &mut R,
    ) -> Self {
        let w = store.uniform(format!("{name}.w"), &[3, 3, c_in, c_out], 9 * c_in, rng);
        let b = store.filled(format!("{name}.b"), &[c_out], 0.0);
        Self { w, b, act }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.conv2d(x, w, b);
        self.act.apply(g, y)
    }
}

/// One LSTM layer. Gate columns are ordered input, forget, candidate, output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let wx = store.uniform(format!("{name}.wx"), &[input, 4 * hidden], input, rng);
        let wh = store.uniform(format!("{name}.wh"), &[hidden, 4 * hidden], hidden, rng);
        // forget-gate bias starts at 1
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        let b = store.add(
            format!("{name}.b"),
            ndarray::Array1::from(bias).into_dyn(),
        );
        Self { wx, wh, b, hidden }
    }

    /// One time step; `h`/`c` of `None` mean zero state.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        state: Option<(Var, Var)>,
    ) -> (Var, Var) {
        let wx = g.param(store, self.wx);
        let b = g.param(store, self.b);
        let mut z = g.matmul(x, wx);
        if let Some((h, _)) = state {
            let wh = g.param(store, self.wh);
            let zh = g.matmul(h, wh);
            z = g.add(z, zh);
        }
        let z = g.add_bias(z, b);
        let n = self.hidden;
        let i = g.slice_cols(z, 0, n);
        let i = g.sigmoid(i);
        let f = g.slice_cols(z, n, n);
        let f = g.sigmoid(f);
        let cand = g.slice_cols(z, 2 * n, n);
        let cand = g.tanh(cand);
        let o = g.slice_cols(z, 3 * n, n);
        let o = g.sigmoid(o);
        let ic = g.mul(i, cand);
        let c = match state {
            Some((_, c_prev)) => {
                let fc = g.mul(f, c_prev);
                g.add(fc, ic)
            }
            None => ic,
        };
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        (h, c)
    }
}
