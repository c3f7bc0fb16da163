use crate::param::ParamStore;
use roc_core::Scalar;

/// Adam with bias correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam { lr, ..Adam::default() }
    }

    /// Applies one update to every parameter in `store`, then zeroes the
    /// gradients.
    pub fn step<T: Scalar>(&self, store: &mut ParamStore<T>) {
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        for p in store.params_mut() {
            p.step += 1;
            let t = p.step as i32;
            let c1 = T::one() - b1.powi(t);
            let c2 = T::one() - b2.powi(t);
            let grads = p.grad.data();
            let m = p.first_moment.data_mut();
            for (mi, &g) in m.iter_mut().zip(grads) {
                *mi = b1 * *mi + (T::one() - b1) * g;
            }
            let v = p.second_moment.data_mut();
            for (vi, &g) in v.iter_mut().zip(grads) {
                *vi = b2 * *vi + (T::one() - b2) * g * g;
            }
            let (m, v) = (p.first_moment.data(), p.second_moment.data());
            for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let mhat = mi / c1;
                let vhat = vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add_param("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        Adam::default().step(&mut store);
        assert_eq!(store.param(id).value.data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add_param("w", Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap());
        store.param_mut(id).grad.data_mut().copy_from_slice(&[3.0, -0.01, 250.0]);
        Adam::default().step(&mut store);
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
        for (&w, expect) in store.param(id).value.data().iter().zip([-1e-3, 1e-3, -1e-3]) {
            assert!((w - expect).abs() < 1e-8, "{w}");
        }
        assert!(store.param(id).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_steps_decrease_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add_param("w", Tensor::new(vec![2], vec![1.0, -3.0]).unwrap());
        let loss = |w: &[f64]| w.iter().map(|x| x * x).sum::<f64>();
        let start = loss(store.param(id).value.data());
        let opt = Adam::with_lr(0.1);
        for _ in 0..2 {
            let g: Vec<f64> = store.param(id).value.data().iter().map(|x| 2.0 * x).collect();
            store.param_mut(id).grad.data_mut().copy_from_slice(&g);
            opt.step(&mut store);
        }
        assert!(loss(store.param(id).value.data()) < start);
    }
}
