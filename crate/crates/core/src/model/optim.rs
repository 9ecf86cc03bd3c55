use super::networks::Parameterized;
use super::tensor::Tensor;
use crate::scalar::Real;

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    step: i32,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new<M: Parameterized<T>>(model: &M, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Tensor<T>> = model.params().iter().map(|(_, t)| t.zeros_like()).collect();
        Self {
            lr: T::lit(lr),
            beta1: T::lit(beta1),
            beta2: T::lit(beta2),
            eps: T::lit(1e-8),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step<M: Parameterized<T>>(&mut self, model: &mut M, grads: &M) {
        self.step += 1;
        let bc1 = T::one() - self.beta1.powi(self.step);
        let bc2 = T::one() - self.beta2.powi(self.step);
        let (b1, b2) = (self.beta1, self.beta2);
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let grads = grads.params();
        for (((p, (_, g)), m), v) in model.params_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = b1 * *mv + c1 * gv;
                *vv = b2 * *vv + c2 * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv = *pv - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layers::Conv2d;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f64>::init(1, 1, 1, 1, 0, true, &mut rng);
        let before = conv.weight.data()[0];
        let mut grad = conv.zeros_like();
        grad.weight.data_mut()[0] = 3.0;
        let mut opt = Adam::new(&conv, 0.01, 0.5, 0.999);
        opt.step(&mut conv, &grad);
        // with bias correction the first update is lr * sign(g), up to eps
        assert!((before - conv.weight.data()[0] - 0.01).abs() < 1e-9);
        assert_eq!(conv.bias.as_ref().unwrap().data()[0], 0.0);
    }
}
