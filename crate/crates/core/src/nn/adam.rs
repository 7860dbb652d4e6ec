use ndarray::Zip;

use super::graph::Tensor;
use super::params::ParamStore;
use super::NnError;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || store.values().iter().map(|p| Tensor::zeros(p.raw_dim())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update. A non-finite gradient aborts before any parameter changes.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<(), NnError> {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        for (name, g) in store.names().iter().zip(grads) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient(name.clone()));
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (lr, eps) = (self.lr, self.eps);
        for (((p, g), m), v) in store
            .values_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, IxDyn};

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut store = ParamStore::new();
        store.add("p", arr1(&[1.0, -2.0]).into_dyn());
        let before = store.clone();
        let mut adam = Adam::new(&store, 0.1);
        adam.step(&mut store, &[Tensor::zeros(IxDyn(&[2]))]).unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut store = ParamStore::new();
        store.add("p", arr1(&[1.0, 1.0, 1.0]).into_dyn());
        let mut adam = Adam::new(&store, 0.01);
        adam.step(&mut store, &[arr1(&[3.0, -0.5, 1e-3]).into_dyn()]).unwrap();
        let p = store.values()[0].clone();
        assert!((p[0] - 0.99).abs() < 1e-6);
        assert!((p[1] - 1.01).abs() < 1e-6);
        assert!((p[2] - 0.99).abs() < 1e-4);
    }

    #[test]
    fn descends_a_convex_quadratic() {
        // f(p) = sum a_i (p_i - c_i)^2
        let a = [1.0, 10.0, 0.1];
        let c = [0.5, -1.0, 2.0];
        let f = |p: &Tensor| p.iter().zip(a.iter().zip(&c)).map(|(p, (a, c))| a * (p - c).powi(2)).sum::<f64>();
        let mut store = ParamStore::new();
        store.add("p", Tensor::zeros(IxDyn(&[3])));
        let initial = f(&store.values()[0]);
        let mut adam = Adam::new(&store, 0.05);
        for _ in 0..100 {
            let p = store.values()[0].clone();
            let g = Tensor::from_shape_fn(IxDyn(&[3]), |i| 2.0 * a[i[0]] * (p[i[0]] - c[i[0]]));
            adam.step(&mut store, &[g]).unwrap();
        }
        assert!(f(&store.values()[0]) < initial);
        assert_eq!(adam.steps_taken(), 100);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut store = ParamStore::new();
        store.add("decoder.conv3.w", Tensor::zeros(IxDyn(&[2])));
        let mut adam = Adam::new(&store, 0.1);
        let err = adam
            .step(&mut store, &[arr1(&[f64::NAN, 0.0]).into_dyn()])
            .unwrap_err();
        assert!(err.to_string().contains("decoder.conv3.w"));
    }
}
