//! Encoder-decoder generator with skip connections and a patch-level
//! discriminator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    leaky_relu, leaky_relu_backward, relu, relu_backward, tanh, tanh_backward, Conv2d, ConvCache, ConvTranspose2d,
    ConvTransposeCache, InstanceNorm, NormCache,
};
use super::tensor::{concat_channels, split_channels, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

const KERNEL: usize = 4;

/// Named access to every trainable tensor, in a fixed order.
pub trait Parameterized<T: Real> {
    fn params(&self) -> Vec<(String, &Tensor<T>)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}

fn push_conv<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, prefix: &str, w: &'a Tensor<T>, b: &'a Option<Tensor<T>>) {
    out.push((format!("{prefix}.weight"), w));
    if let Some(b) = b {
        out.push((format!("{prefix}.bias"), b));
    }
}

fn push_norm<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, prefix: &str, n: &'a Option<InstanceNorm<T>>) {
    if let Some(n) = n {
        out.push((format!("{prefix}.norm.gamma"), &n.gamma));
        out.push((format!("{prefix}.norm.beta"), &n.beta));
    }
}

fn push_mut<'a, T>(out: &mut Vec<&'a mut Tensor<T>>, w: &'a mut Tensor<T>, b: &'a mut Option<Tensor<T>>, n: Option<&'a mut InstanceNorm<T>>) {
    out.push(w);
    if let Some(b) = b {
        out.push(b);
    }
    if let Some(n) = n {
        out.push(&mut n.gamma);
        out.push(&mut n.beta);
    }
}

impl<T: Real> Parameterized<T> for Conv2d<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        push_conv(&mut out, "conv", &self.weight, &self.bias);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        push_mut(&mut out, &mut self.weight, &mut self.bias, None);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl GeneratorConfig {
    /// Feature channels produced by encoder level `k`.
    pub fn level_channels(&self, k: usize) -> usize {
        self.base_channels * (1usize << k.min(3))
    }

    /// Spatial extents must be divisible by this.
    pub fn stride_product(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::ConfigInvalid(format!("degenerate generator config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DownLevel<T> {
    conv: Conv2d<T>,
    norm: Option<InstanceNorm<T>>,
}

#[derive(Debug, Clone, PartialEq)]
struct UpLevel<T> {
    conv: ConvTranspose2d<T>,
    norm: Option<InstanceNorm<T>>,
}

/// U-Net style generator.
///
/// Encoder level `k` applies LeakyReLU (except at `k = 0`), a stride-2 conv
/// and instance norm (except at the outermost and innermost levels).
/// Decoder level `k` consumes the innermost code (`k = depth - 1`) or the
/// concatenation of the encoder output `k` with decoder output `k + 1`,
/// applies ReLU and a stride-2 transposed conv, then instance norm, or tanh
/// at the outermost level.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    config: GeneratorConfig,
    down: Vec<DownLevel<T>>,
    up: Vec<UpLevel<T>>,
}

pub struct GeneratorCache<T> {
    input_dims: (usize, usize),
    down_in: Vec<Tensor<T>>,
    down_conv: Vec<ConvCache<T>>,
    down_norm: Vec<Option<NormCache<T>>>,
    down_out: Vec<Tensor<T>>,
    up_in: Vec<Tensor<T>>,
    up_conv: Vec<ConvTransposeCache<T>>,
    up_norm: Vec<Option<NormCache<T>>>,
    output: Tensor<T>,
}

impl<T: Real> GeneratorCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }

    /// Which inputs of each rectifier were positive. Two forward passes
    /// with equal patterns lie on the same linear piece of every rectifier.
    pub fn rectifier_signs(&self) -> Vec<bool> {
        let leaky = self.down_in.iter().skip(1);
        leaky.chain(&self.up_in).flat_map(|t| t.data().iter().map(|&v| v > T::zero())).collect()
    }
}

impl<T: Real> Generator<T> {
    pub fn init(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.depth;
        let down = (0..d)
            .map(|k| {
                let cin = if k == 0 { config.in_channels } else { config.level_channels(k - 1) };
                let cout = config.level_channels(k);
                let normed = k > 0 && k + 1 < d;
                let conv = Conv2d::init(cin, cout, KERNEL, 2, 1, !normed, rng);
                let norm = normed.then(|| InstanceNorm::init(cout, rng));
                DownLevel { conv, norm }
            })
            .collect();
        let up = (0..d)
            .rev()
            .map(|k| {
                let cin = if k + 1 == d { config.level_channels(k) } else { 2 * config.level_channels(k) };
                let cout = if k == 0 { config.out_channels } else { config.level_channels(k - 1) };
                let conv = ConvTranspose2d::init(cin, cout, KERNEL, 2, 1, k == 0, rng);
                let norm = (k > 0).then(|| InstanceNorm::init(cout, rng));
                UpLevel { conv, norm }
            })
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        Ok(Self { config, down, up })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            down: self
                .down
                .iter()
                .map(|l| DownLevel { conv: l.conv.zeros_like(), norm: l.norm.as_ref().map(InstanceNorm::zeros_like) })
                .collect(),
            up: self
                .up
                .iter()
                .map(|l| UpLevel { conv: l.conv.zeros_like(), norm: l.norm.as_ref().map(InstanceNorm::zeros_like) })
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Generator<U> {
        let mut out = Generator::<U>::init(self.config, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0)).unwrap();
        for (dst, (_, src)) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        out
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.in_channels {
            return Err(Error::Shape(format!("generator expects {} channels, got {c}", self.config.in_channels)));
        }
        let m = self.config.stride_product();
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("{h}x{w} input is not divisible by 2^{} = {m}", self.config.depth)));
        }
        Ok((h, w))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<GeneratorCache<T>> {
        let input_dims = self.check_input(x)?;
        let d = self.config.depth;
        let mut cache = GeneratorCache {
            input_dims,
            down_in: Vec::with_capacity(d),
            down_conv: Vec::with_capacity(d),
            down_norm: Vec::with_capacity(d),
            down_out: Vec::with_capacity(d),
            up_in: Vec::with_capacity(d),
            up_conv: Vec::with_capacity(d),
            up_norm: Vec::with_capacity(d),
            output: Tensor::zeros(&[0]),
        };
        let mut h = x.clone();
        for (k, level) in self.down.iter().enumerate() {
            let act = if k == 0 { h.clone() } else { leaky_relu(&h) };
            let (z, cc) = level.conv.forward(&act)?;
            let (out, nc) = match &level.norm {
                Some(n) => {
                    let (o, c) = n.forward(&z)?;
                    (o, Some(c))
                }
                None => (z, None),
            };
            cache.down_in.push(h);
            cache.down_conv.push(cc);
            cache.down_norm.push(nc);
            cache.down_out.push(out.clone());
            h = out;
        }
        // decoder runs innermost first; caches are stored innermost first too
        let mut u: Option<Tensor<T>> = None;
        for k in (0..d).rev() {
            let level = &self.up[k];
            let inp = match &u {
                None => cache.down_out[k].clone(),
                Some(prev) => concat_channels(&cache.down_out[k], prev)?,
            };
            let (z, cc) = level.conv.forward(&relu(&inp))?;
            let (out, nc) = match &level.norm {
                Some(n) => {
                    let (o, c) = n.forward(&z)?;
                    (o, Some(c))
                }
                None => (tanh(&z), None),
            };
            cache.up_in.push(inp);
            cache.up_conv.push(cc);
            cache.up_norm.push(nc);
            u = Some(out);
        }
        cache.output = u.expect("depth >= 1");
        Ok(cache)
    }

    /// Parameter gradients for `dL/d(output)`, plus `dL/d(input)`.
    pub fn backward(&self, cache: &GeneratorCache<T>, d_out: &Tensor<T>) -> (Generator<T>, Tensor<T>) {
        let d = self.config.depth;
        let mut grad = self.zeros_like();
        let mut d_down: Vec<Option<Tensor<T>>> = vec![None; d];
        let mut du = d_out.clone();
        for k in 0..d {
            // cache index for decoder level k
            let ci = d - 1 - k;
            let level = &self.up[k];
            let g = &mut grad.up[k];
            let dz = match (&level.norm, &cache.up_norm[ci]) {
                (Some(n), Some(nc)) => n.backward(&du, nc, g.norm.as_mut().unwrap()),
                _ => tanh_backward(&cache.output, &du),
            };
            let d_act = level.conv.backward(&dz, &cache.up_conv[ci], &mut g.conv);
            let d_in = relu_backward(&cache.up_in[ci], &d_act);
            if k + 1 == d {
                accumulate(&mut d_down[k], d_in);
            } else {
                let (d_skip, d_prev) = split_channels(&d_in, self.config.level_channels(k));
                accumulate(&mut d_down[k], d_skip);
                du = d_prev;
            }
        }
        let mut dh = Tensor::zeros(&[0]);
        for k in (0..d).rev() {
            let level = &self.down[k];
            let g = &mut grad.down[k];
            let mut dout = d_down[k].take().expect("every encoder level feeds the decoder");
            if k + 1 < d {
                dout.add_assign(&dh);
            }
            let dz = match (&level.norm, &cache.down_norm[k]) {
                (Some(n), Some(nc)) => n.backward(&dout, nc, g.norm.as_mut().unwrap()),
                _ => dout,
            };
            let d_act = level.conv.backward(&dz, &cache.down_conv[k], &mut g.conv);
            dh = if k == 0 { d_act } else { leaky_relu_backward(&cache.down_in[k], &d_act) };
        }
        debug_assert_eq!(
            (dh.shape()[2], dh.shape()[3]),
            cache.input_dims,
            "input gradient keeps the input extent"
        );
        (grad, dh)
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, t: Tensor<T>) {
    match slot {
        Some(s) => s.add_assign(&t),
        None => *slot = Some(t),
    }
}

impl<T: Real> Parameterized<T> for Generator<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (k, l) in self.down.iter().enumerate() {
            let p = format!("generator.down{k}");
            push_conv(&mut out, &p, &l.conv.weight, &l.conv.bias);
            push_norm(&mut out, &p, &l.norm);
        }
        for (k, l) in self.up.iter().enumerate() {
            let p = format!("generator.up{k}");
            push_conv(&mut out, &p, &l.conv.weight, &l.conv.bias);
            push_norm(&mut out, &p, &l.norm);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.down {
            push_mut(&mut out, &mut l.conv.weight, &mut l.conv.bias, l.norm.as_mut());
        }
        for l in &mut self.up {
            push_mut(&mut out, &mut l.conv.weight, &mut l.conv.bias, l.norm.as_mut());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Number of stride-2 feature layers before the stride-1 score layer.
    pub layers: usize,
    pub base_channels: usize,
    /// Condition channels plus candidate channels.
    pub in_channels: usize,
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.base_channels == 0 || self.in_channels == 0 {
            return Err(Error::ConfigInvalid(format!("degenerate discriminator config {self:?}")));
        }
        Ok(())
    }

    /// `(kernel, stride, pad)` of every layer, score layer last.
    pub fn layer_geometry(&self) -> Vec<(usize, usize, usize)> {
        let mut g = vec![(KERNEL, 2, 1); self.layers];
        g.push((KERNEL, 1, 1));
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
struct FeatureLayer<T> {
    conv: Conv2d<T>,
    norm: Option<InstanceNorm<T>>,
}

/// Patch discriminator: stride-2 conv layers with LeakyReLU (instance norm
/// after all but the first), then a stride-1 conv producing one logit per
/// receptive-field patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    config: DiscriminatorConfig,
    features: Vec<FeatureLayer<T>>,
    score: Conv2d<T>,
}

pub struct DiscriminatorCache<T> {
    cond_channels: usize,
    conv: Vec<ConvCache<T>>,
    norm: Vec<Option<NormCache<T>>>,
    pre_act: Vec<Tensor<T>>,
    score: Option<ConvCache<T>>,
}

impl<T: Real> DiscriminatorCache<T> {
    /// Which LeakyReLU inputs were positive.
    pub fn rectifier_signs(&self) -> Vec<bool> {
        self.pre_act.iter().flat_map(|t| t.data().iter().map(|&v| v > T::zero())).collect()
    }
}

impl<T: Real> Discriminator<T> {
    pub fn init(config: DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut cin = config.in_channels;
        let mut features = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let cout = config.base_channels * (1usize << i.min(3));
            let normed = i > 0;
            let conv = Conv2d::init(cin, cout, KERNEL, 2, 1, !normed, rng);
            let norm = normed.then(|| InstanceNorm::init(cout, rng));
            features.push(FeatureLayer { conv, norm });
            cin = cout;
        }
        let score = Conv2d::init(cin, 1, KERNEL, 1, 1, true, rng);
        Ok(Self { config, features, score })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            features: self
                .features
                .iter()
                .map(|l| FeatureLayer { conv: l.conv.zeros_like(), norm: l.norm.as_ref().map(InstanceNorm::zeros_like) })
                .collect(),
            score: self.score.zeros_like(),
        }
    }

    pub fn cast<U: Real>(&self) -> Discriminator<U> {
        let mut out = Discriminator::<U>::init(self.config, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0)).unwrap();
        for (dst, (_, src)) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        out
    }

    /// Logit map for `candidate` conditioned on `input`.
    pub fn forward(&self, input: &Tensor<T>, candidate: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(input, candidate)?.0)
    }

    pub fn forward_cached(&self, input: &Tensor<T>, candidate: &Tensor<T>) -> Result<(Tensor<T>, DiscriminatorCache<T>)> {
        let (ni, ci, hi, wi) = input.dims4()?;
        let (nc, cc, hc, wc) = candidate.dims4()?;
        if (ni, hi, wi) != (nc, hc, wc) {
            return Err(Error::Shape(format!(
                "input {:?} and candidate {:?} differ in batch or spatial dims",
                input.shape(),
                candidate.shape()
            )));
        }
        if ci + cc != self.config.in_channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels in total, got {}",
                self.config.in_channels,
                ci + cc
            )));
        }
        let mut h = concat_channels(input, candidate)?;
        let mut cache = DiscriminatorCache {
            cond_channels: ci,
            conv: Vec::new(),
            norm: Vec::new(),
            pre_act: Vec::new(),
            score: None,
        };
        for layer in &self.features {
            let (z, c) = layer.conv.forward(&h)?;
            let (z, nc) = match &layer.norm {
                Some(n) => {
                    let (o, c) = n.forward(&z)?;
                    (o, Some(c))
                }
                None => (z, None),
            };
            h = leaky_relu(&z);
            cache.conv.push(c);
            cache.norm.push(nc);
            cache.pre_act.push(z);
        }
        let (logits, sc) = self.score.forward(&h)?;
        cache.score = Some(sc);
        Ok((logits, cache))
    }

    /// Parameter gradients and `dL/d(candidate)` for `dL/d(logits)`.
    pub fn backward(&self, cache: &DiscriminatorCache<T>, d_logits: &Tensor<T>) -> (Discriminator<T>, Tensor<T>) {
        let mut grad = self.zeros_like();
        let mut dh = self.score.backward(d_logits, cache.score.as_ref().unwrap(), &mut grad.score);
        for i in (0..self.features.len()).rev() {
            let layer = &self.features[i];
            let g = &mut grad.features[i];
            let dz = leaky_relu_backward(&cache.pre_act[i], &dh);
            let dz = match (&layer.norm, &cache.norm[i]) {
                (Some(n), Some(nc)) => n.backward(&dz, nc, g.norm.as_mut().unwrap()),
                _ => dz,
            };
            dh = layer.conv.backward(&dz, &cache.conv[i], &mut g.conv);
        }
        let (_, d_candidate) = split_channels(&dh, cache.cond_channels);
        (grad, d_candidate)
    }
}

impl<T: Real> Parameterized<T> for Discriminator<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.features.iter().enumerate() {
            let p = format!("discriminator.layer{i}");
            push_conv(&mut out, &p, &l.conv.weight, &l.conv.bias);
            push_norm(&mut out, &p, &l.norm);
        }
        push_conv(&mut out, "discriminator.score", &self.score.weight, &self.score.bias);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.features {
            push_mut(&mut out, &mut l.conv.weight, &mut l.conv.bias, l.norm.as_mut());
        }
        push_mut(&mut out, &mut self.score.weight, &mut self.score.bias, None);
        out
    }
}

/// Patch-map extent for an `h x w` input, by per-layer conv arithmetic.
pub fn patch_map_dims(config: &DiscriminatorConfig, h: usize, w: usize) -> Option<(usize, usize)> {
    config.layer_geometry().iter().try_fold((h, w), |(h, w), &(k, s, p)| {
        Some((super::layers::conv_out(h, k, s, p)?, super::layers::conv_out(w, k, s, p)?))
    })
}
