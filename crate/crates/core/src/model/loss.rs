//! Conditional-GAN objective: binary cross-entropy on patch logits plus a
//! weighted L1 reconstruction term.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanLosses<T> {
    pub g_loss: T,
    pub d_loss: T,
    pub l1: T,
}

/// `BCE(sigmoid(z), y)`, stable for large `|z|`.
pub fn bce_with_logits<T: Real>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn mean_bce<T: Real>(logits: &Tensor<T>, y: T) -> T {
    compensated_sum(logits.data().iter().map(|&z| bce_with_logits(z, y))) / T::from_usize(logits.len()).unwrap()
}

pub fn l1_distance<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("L1 between {:?} and {:?}", a.shape(), b.shape())));
    }
    Ok(compensated_sum(a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs())) / T::from_usize(a.len()).unwrap())
}

/// Discriminator, generator and L1 terms from logit maps.
///
/// `d_loss = (mean BCE(real, 1) + mean BCE(fake, 0)) / 2` and
/// `g_loss = mean BCE(fake, 1) + lambda * mean |gen_out - target|`.
pub fn pix2pix_losses<T: Real>(
    d_real: &Tensor<T>,
    d_fake: &Tensor<T>,
    gen_out: &Tensor<T>,
    target: &Tensor<T>,
    lambda: T,
) -> Result<GanLosses<T>> {
    let l1 = l1_distance(gen_out, target)?;
    let half = T::lit(0.5);
    Ok(GanLosses {
        d_loss: half * (mean_bce(d_real, T::one()) + mean_bce(d_fake, T::zero())),
        g_loss: mean_bce(d_fake, T::one()) + lambda * l1,
        l1,
    })
}

/// A loss `Σ_k w_k Σ_i t_k[i]` with its terms kept apart, so that two
/// nearby evaluations can be differenced term by term instead of through
/// their rounded totals.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms<T> {
    pub groups: Vec<(T, Vec<T>)>,
}

impl<T: Real> LossTerms<T> {
    pub fn total(&self) -> T {
        compensated_sum(self.groups.iter().map(|(w, t)| *w * compensated_sum(t.iter().copied())))
    }

    /// `self.total() - other.total()` for terms of identical layout.
    pub fn difference(&self, other: &LossTerms<T>) -> T {
        compensated_sum(self.groups.iter().zip(&other.groups).map(|((w, a), (_, b))| {
            *w * compensated_sum(a.iter().zip(b).map(|(&x, &y)| x - y))
        }))
    }
}

fn bce_terms<T: Real>(logits: &Tensor<T>, y: T) -> (T, Vec<T>) {
    let k = T::one() / T::from_usize(logits.len()).unwrap();
    (k, logits.data().iter().map(|&z| bce_with_logits(z, y)).collect())
}

/// Terms of the generator loss of [`pix2pix_losses`].
pub fn g_loss_terms<T: Real>(d_fake: &Tensor<T>, gen_out: &Tensor<T>, target: &Tensor<T>, lambda: T) -> Result<LossTerms<T>> {
    if gen_out.shape() != target.shape() {
        return Err(Error::Shape(format!("L1 between {:?} and {:?}", gen_out.shape(), target.shape())));
    }
    let l1 = gen_out.data().iter().zip(target.data()).map(|(&x, &y)| (x - y).abs()).collect();
    Ok(LossTerms { groups: vec![bce_terms(d_fake, T::one()), (lambda / T::from_usize(gen_out.len()).unwrap(), l1)] })
}

/// Terms of the discriminator loss of [`pix2pix_losses`].
pub fn d_loss_terms<T: Real>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> LossTerms<T> {
    let half = T::lit(0.5);
    let (kr, real) = bce_terms(d_real, T::one());
    let (kf, fake) = bce_terms(d_fake, T::zero());
    LossTerms { groups: vec![(half * kr, real), (half * kf, fake)] }
}

/// Gradient of `scale * mean BCE(sigmoid(z), y)` with respect to the logits.
pub fn bce_grad<T: Real>(logits: &Tensor<T>, y: T, scale: T) -> Tensor<T> {
    let k = scale / T::from_usize(logits.len()).unwrap();
    logits.map(|z| k * (sigmoid(z) - y))
}

/// Gradient of `lambda * mean |a - b|` with respect to `a`.
pub fn l1_grad<T: Real>(a: &Tensor<T>, b: &Tensor<T>, lambda: T) -> Tensor<T> {
    let k = lambda / T::from_usize(a.len()).unwrap();
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            if x > y {
                k
            } else if x < y {
                -k
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_vec(a.shape(), data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
    }

    #[test]
    fn terms_add_up_to_the_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (real, fake) = (rand_tensor(&[1, 1, 3, 3], &mut rng, 4.0), rand_tensor(&[1, 1, 3, 3], &mut rng, 4.0));
        let (out, target) = (rand_tensor(&[1, 3, 4, 4], &mut rng, 1.0), rand_tensor(&[1, 3, 4, 4], &mut rng, 1.0));
        let l = pix2pix_losses(&real, &fake, &out, &target, 100.0).unwrap();
        let g = g_loss_terms(&fake, &out, &target, 100.0).unwrap();
        let d = d_loss_terms(&real, &fake);
        assert!((g.total() - l.g_loss).abs() < 1e-12 && (d.total() - l.d_loss).abs() < 1e-12);
        let g2 = g_loss_terms(&fake, &out.map(|v| v + 1e-3), &target, 100.0).unwrap();
        assert!((g2.difference(&g) - (g2.total() - g.total())).abs() < 1e-12);
    }

    #[test]
    fn identical_output_has_zero_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = rand_tensor(&[1, 3, 4, 4], &mut rng, 1.0);
        let d = rand_tensor(&[1, 1, 2, 2], &mut rng, 3.0);
        let l = pix2pix_losses(&d, &d, &t, &t, 100.0).unwrap();
        assert_eq!(l.l1, 0.0);
        let pure = pix2pix_losses(&d, &d, &t, &t.map(|v| v + 1.0), 0.0).unwrap();
        assert_eq!(pure.g_loss, mean_bce(&d, 1.0));
    }

    #[test]
    fn half_probability_discriminator() {
        let zeros = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let t = Tensor::full(&[1, 3, 2, 2], 0.25);
        let l = pix2pix_losses(&zeros, &zeros, &t, &t, 100.0).unwrap();
        assert_eq!(l.g_loss, -(0.5f64).ln());
        assert_eq!(l.d_loss, std::f64::consts::LN_2);
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let dr = rand_tensor(&[2, 1, 3, 3], &mut rng, 4.0);
            let df = rand_tensor(&[2, 1, 3, 3], &mut rng, 4.0);
            let g = rand_tensor(&[2, 3, 4, 4], &mut rng, 1.0);
            let t = rand_tensor(&[2, 3, 4, 4], &mut rng, 1.0);
            let lambda = 37.5;
            let l = pix2pix_losses(&dr, &df, &g, &t, lambda).unwrap();

            let p = |z: f64| 1.0 / (1.0 + (-z).exp());
            let mut real = 0.0;
            let mut fake0 = 0.0;
            let mut fake1 = 0.0;
            for i in 0..dr.len() {
                real += -p(dr.data()[i]).ln();
                fake0 += -(1.0 - p(df.data()[i])).ln();
                fake1 += -p(df.data()[i]).ln();
            }
            let n = dr.len() as f64;
            let mut l1 = 0.0;
            for i in 0..g.len() {
                l1 += (g.data()[i] - t.data()[i]).abs();
            }
            l1 /= g.len() as f64;
            let d_ref = 0.5 * (real / n + fake0 / n);
            let g_ref = fake1 / n + lambda * l1;
            assert!(((l.d_loss - d_ref) / d_ref).abs() < 1e-6);
            assert!(((l.g_loss - g_ref) / g_ref).abs() < 1e-6);
            assert!(((l.l1 - l1) / l1).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch() {
        let d = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let r = pix2pix_losses(&d, &d, &Tensor::zeros(&[1, 3, 4, 4]), &Tensor::zeros(&[1, 3, 8, 8]), 1.0);
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        assert!(bce_with_logits(800.0f64, 1.0) < 1e-300);
        assert!((bce_with_logits(-800.0f64, 1.0) - 800.0).abs() < 1e-9);
        assert!(sigmoid(-800.0f64) >= 0.0);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = rand_tensor(&[1, 1, 2, 3], &mut rng, 2.0);
        let g = bce_grad(&z, 1.0, 0.5);
        for i in 0..z.len() {
            let eps = 1e-6;
            let mut zp = z.clone();
            zp.data_mut()[i] += eps;
            let mut zm = z.clone();
            zm.data_mut()[i] -= eps;
            let fd = 0.5 * (mean_bce(&zp, 1.0) - mean_bce(&zm, 1.0)) / (2.0 * eps);
            assert!((fd - g.data()[i]).abs() < 1e-8);
        }
    }
}
