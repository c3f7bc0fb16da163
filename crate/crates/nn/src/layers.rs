//! Parameterised building blocks over a [`Graph`].

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::{BufferId, ParamId, ParamStore};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use roc_core::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Pending running-statistic update produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnUpdate<T> {
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub batch_mean: Vec<T>,
    /// unbiased
    pub batch_var: Vec<T>,
}

/// Forward-pass mode. Training collects batch-norm statistics so the store
/// can stay borrowed immutably while the graph is built.
#[derive(Debug, Clone)]
pub enum Mode<T> {
    Eval,
    Train(Vec<BnUpdate<T>>),
}

impl<T: Scalar> Mode<T> {
    pub fn train() -> Self {
        Mode::Train(Vec::new())
    }

    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    /// Folds collected statistics into the running buffers with momentum 0.1.
    pub fn commit(self, store: &mut ParamStore<T>) {
        let Mode::Train(updates) = self else {
            return;
        };
        let m = T::lit(BN_MOMENTUM);
        let keep = T::one() - m;
        for u in updates {
            for (r, &b) in store.buffer_mut(u.running_mean).data_mut().iter_mut().zip(&u.batch_mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in store.buffer_mut(u.running_var).data_mut().iter_mut().zip(&u.batch_var) {
                *r = keep * *r + m * b;
            }
        }
    }
}

fn he_normal<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let data = (0..shape.iter().product::<usize>()).map(|_| T::lit(normal.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = he_normal(rng, &[out_c, in_c, k, k], in_c * k * k);
        let weight = store.add_param(format!("{name}.weight"), w);
        Conv2dLayer { weight, in_c, out_c, k, stride, pad }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        g.conv2d(x, w, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2dLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
}

impl BatchNorm2dLayer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm2dLayer {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[channels], T::one())),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mode: &mut Mode<T>, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let eps = T::lit(BN_EPS);
        match mode {
            Mode::Eval => g.batch_norm_eval(
                x,
                gamma,
                beta,
                store.buffer(self.running_mean).data(),
                store.buffer(self.running_var).data(),
                eps,
            ),
            Mode::Train(updates) => {
                let count = {
                    let s = g.value(x).shape();
                    s[0] * s[2..].iter().product::<usize>()
                };
                let (y, mean, var) = g.batch_norm_train(x, gamma, beta, eps)?;
                let bessel = T::from_usize(count).unwrap() / T::from_usize(count.max(2) - 1).unwrap();
                updates.push(BnUpdate {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    batch_mean: mean,
                    batch_var: var.into_iter().map(|v| v * bessel).collect(),
                });
                Ok(y)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl LinearLayer {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, d_in: usize, d_out: usize) -> Self {
        let weight = store.add_param(format!("{name}.weight"), he_normal(rng, &[d_out, d_in], d_in));
        let bias = store.add_param(format!("{name}.bias"), Tensor::zeros(&[d_out]));
        LinearLayer { weight, bias, d_in, d_out }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn he_normal_has_expected_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Tensor<f64> = he_normal(&mut rng, &[200, 50], 50);
        let n = t.numel() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01);
        assert!((var - 2.0 / 50.0).abs() < 0.004, "{var}");
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2dLayer::new(&mut store, "bn", 1);
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let mut mode = Mode::train();
        bn.forward(&mut g, &store, &mut mode, x).unwrap();
        mode.commit(&mut store);
        // mean 4, unbiased var 20/3
        assert!((store.buffer(bn.running_mean).data()[0] - 0.4).abs() < 1e-12);
        let expect = 0.9 + 0.1 * 20.0 / 3.0;
        assert!((store.buffer(bn.running_var).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2dLayer::new(&mut store, "bn", 1);
        store.buffer_mut(bn.running_mean).data_mut()[0] = 2.0;
        store.buffer_mut(bn.running_var).data_mut()[0] = 4.0 - BN_EPS;
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 1, 1, 2], vec![2.0, 6.0]).unwrap());
        let y = bn.forward(&mut g, &store, &mut Mode::Eval, x).unwrap();
        let out = g.value(y).data();
        assert!(out[0].abs() < 1e-12 && (out[1] - 2.0).abs() < 1e-9);
    }
}
