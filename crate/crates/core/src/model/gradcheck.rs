//! Central-difference verification of the hand-written backward passes.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Conv2d;
use super::loss::{bce_grad, d_loss_terms, g_loss_terms, l1_grad, LossTerms};
use super::networks::{Discriminator, Generator, Parameterized};
use super::tensor::Tensor;
use super::train::batch_tensors;
use crate::datasetprep::PairedSample;
use crate::error::Result;

/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-7;

pub const DEFAULT_SAMPLES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub generator: f64,
    pub discriminator: f64,
    pub checked_weights: usize,
    /// Sampled weights whose ±ε perturbation moved some rectifier input
    /// across zero; the central difference straddles a kink there, so they
    /// were replaced by fresh draws.
    pub skipped_at_kinks: usize,
}

impl GradCheck {
    pub fn max(&self) -> f64 {
        self.generator.max(self.discriminator)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampled {
    pub max_relative_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares `grad` against central differences of `loss` at `count`
/// weights drawn uniformly without replacement from all of `model`'s
/// parameters. `loss` also returns the rectifier sign pattern of its
/// forward pass; a weight whose patterns at `w + ε` and `w − ε` differ is
/// skipped and another is drawn.
pub fn max_relative_error<M: Parameterized<f64>>(
    model: &mut M,
    grad: &M,
    loss: impl Fn(&M) -> (LossTerms<f64>, Vec<bool>),
    epsilon: f64,
    count: usize,
    seed: u64,
) -> Sampled {
    let sizes: Vec<usize> = model.params().iter().map(|(_, t)| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let analytic: Vec<f64> = grad.params().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Sampled { max_relative_error: 0.0, checked: 0, skipped: 0 };
    for flat in sample_indices(&mut rng, total, total) {
        if out.checked == count {
            break;
        }
        let (mut tensor, mut idx) = (0, flat);
        while idx >= sizes[tensor] {
            idx -= sizes[tensor];
            tensor += 1;
        }
        let original = model.params()[tensor].1.data()[idx];
        model.params_mut()[tensor].data_mut()[idx] = original + epsilon;
        let (plus, plus_signs) = loss(model);
        model.params_mut()[tensor].data_mut()[idx] = original - epsilon;
        let (minus, minus_signs) = loss(model);
        model.params_mut()[tensor].data_mut()[idx] = original;
        if plus_signs != minus_signs {
            out.skipped += 1;
            continue;
        }
        let e = relative_error(analytic[flat], plus.difference(&minus) / (2.0 * epsilon));
        out.max_relative_error = out.max_relative_error.max(e);
        out.checked += 1;
    }
    out
}

/// Checks the generator against `g_loss` (through the discriminator) and
/// the discriminator against `d_loss` with the generated image held fixed.
pub fn grad_check(
    g: &Generator<f64>,
    d: &Discriminator<f64>,
    sample: &PairedSample,
    lambda: f64,
    epsilon: f64,
    count: usize,
) -> Result<GradCheck> {
    let (x, y) = batch_tensors::<f64>(std::slice::from_ref(sample), g.config().out_channels)?;
    let (real, real_cache) = d.forward_cached(&x, &y)?;

    let g_loss = |g: &Generator<f64>| -> (LossTerms<f64>, Vec<bool>) {
        let cache = g.forward_cached(&x).unwrap();
        let (f, fake_cache) = d.forward_cached(&x, cache.output()).unwrap();
        let loss = g_loss_terms(&f, cache.output(), &y, lambda).unwrap();
        let mut signs = cache.rectifier_signs();
        signs.extend(fake_cache.rectifier_signs());
        (loss, signs)
    };
    let cache = g.forward_cached(&x)?;
    let fake = cache.output().clone();
    let (logits, d_cache) = d.forward_cached(&x, &fake)?;
    let (_, mut d_fake) = d.backward(&d_cache, &bce_grad(&logits, 1.0, 1.0));
    d_fake.add_assign(&l1_grad(&fake, &y, lambda));
    let (g_grad, _) = g.backward(&cache, &d_fake);
    let generator = max_relative_error(&mut g.clone(), &g_grad, g_loss, epsilon, count, 1);

    let d_loss = |d: &Discriminator<f64>| -> (LossTerms<f64>, Vec<bool>) {
        let (r, rc) = d.forward_cached(&x, &y).unwrap();
        let (f, fc) = d.forward_cached(&x, &fake).unwrap();
        let mut signs = rc.rectifier_signs();
        signs.extend(fc.rectifier_signs());
        (d_loss_terms(&r, &f), signs)
    };
    let (mut d_grad, _) = d.backward(&real_cache, &bce_grad(&real, 1.0, 0.5));
    let (fake_grad, _) = d.backward(&d_cache, &bce_grad(&logits, 0.0, 0.5));
    for (a, (_, b)) in d_grad.params_mut().into_iter().zip(fake_grad.params()) {
        a.add_assign(b);
    }
    let discriminator = max_relative_error(&mut d.clone(), &d_grad, d_loss, epsilon, count, 2);

    Ok(GradCheck {
        generator: generator.max_relative_error,
        discriminator: discriminator.max_relative_error,
        checked_weights: generator.checked + discriminator.checked,
        skipped_at_kinks: generator.skipped + discriminator.skipped,
    })
}

/// Degenerate case: one convolution with loss `½‖conv(x) − t‖²`, whose
/// central differences are exact up to roundoff.
pub fn grad_check_linear(conv: &Conv2d<f64>, x: &Tensor<f64>, target: &Tensor<f64>, epsilon: f64, count: usize) -> Result<f64> {
    let loss = |c: &Conv2d<f64>| -> (LossTerms<f64>, Vec<bool>) {
        let (y, _) = c.forward(x).unwrap();
        let terms = y.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).collect();
        (LossTerms { groups: vec![(0.5, terms)] }, vec![])
    };
    let (y, cache) = conv.forward(x)?;
    let dy = Tensor::from_vec(y.shape(), y.data().iter().zip(target.data()).map(|(a, b)| a - b).collect())?;
    let mut grad = conv.zeros_like();
    conv.backward(&dy, &cache, &mut grad);
    Ok(max_relative_error(&mut conv.clone(), &grad, loss, epsilon, count, 3).max_relative_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasetprep::compose_pair;
    use crate::imaging::{ColorMask, WindowedImage};
    use crate::model::networks::{DiscriminatorConfig, GeneratorConfig};
    use rand::Rng;

    pub(crate) fn tiny_models(seed: u64) -> (Generator<f64>, Discriminator<f64>, PairedSample) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Generator::init(GeneratorConfig { depth: 2, base_channels: 4, in_channels: 1, out_channels: 3 }, &mut rng)
            .unwrap();
        let d = Discriminator::init(DiscriminatorConfig { layers: 2, base_channels: 4, in_channels: 4 }, &mut rng).unwrap();
        let colors = [[0, 0, 0], [255, 0, 0], [0, 255, 0], [0, 0, 255]];
        let target = ColorMask::new(16, 16, (0..256).map(|_| colors[rng.random_range(0..4)]).collect()).unwrap();
        let input = WindowedImage::from_intensities(16, 16, (0..256).map(|_| rng.random()).collect()).unwrap();
        (g, d, compose_pair(&target, &input).unwrap())
    }

    #[test]
    fn linear_model_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let conv = Conv2d::<f64>::init(4, 4, 4, 2, 1, true, &mut rng);
        let x = Tensor::from_vec(&[1, 4, 8, 8], (0..256).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let t = Tensor::from_vec(&[1, 4, 4, 4], (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let err = grad_check_linear(&conv, &x, &t, 1e-3, 200).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn tiny_networks_pass() {
        let (g, d, s) = tiny_models(5);
        let r = grad_check(&g, &d, &s, 100.0, 1e-5, DEFAULT_SAMPLES).unwrap();
        assert!(r.max() < 1e-4, "{r:?}");
        let coarse = grad_check(&g, &d, &s, 100.0, 1e-3, DEFAULT_SAMPLES).unwrap();
        assert!(coarse.generator > r.generator && coarse.discriminator > r.discriminator);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
    }
}
