//! Sequential, seeded adversarial training and single-image inference.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::loss::{bce_grad, l1_distance, l1_grad, pix2pix_losses, GanLosses};
use super::networks::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Parameterized};
use super::optim::Adam;
use super::tensor::Tensor;
use crate::datasetprep::{augment, decompose_pair, PairedSample, Variant};
use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, ColorMask, Raster, WindowedImage};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub g_loss: f64,
    pub d_loss: f64,
    pub l1: f64,
    pub val_l1: Option<f64>,
}

/// Trained weights together with everything needed to reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub config: TrainConfig,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Recipe the checkpoint was trained for, if any.
    pub variant: Option<Variant>,
}

fn to_unit<T: Real>(v: u8) -> T {
    T::lit(f64::from(v) / 127.5 - 1.0)
}

fn from_unit<T: Real>(v: T) -> u8 {
    ((v.as_f64() + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Grayscale image as a `[1, 1, h, w]` tensor in `[-1, 1]`.
pub fn image_tensor<T: Real>(img: &WindowedImage) -> Tensor<T> {
    let data = img.intensities().iter().map(|&v| to_unit(v)).collect();
    Tensor::from_vec(&[1, 1, img.height(), img.width()], data).unwrap()
}

/// Stacks samples into `(input, target)` batches; the target keeps the
/// first `out_channels` color channels.
pub fn batch_tensors<T: Real>(samples: &[PairedSample], out_channels: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let (w, h) = (first.half_width(), first.height());
    let plane = w * h;
    let mut x = Vec::with_capacity(samples.len() * plane);
    let mut y = Vec::with_capacity(samples.len() * plane * out_channels);
    for s in samples {
        if (s.half_width(), s.height()) != (w, h) {
            return Err(Error::Shape(format!(
                "batch mixes {w}x{h} with {}x{} samples",
                s.half_width(),
                s.height()
            )));
        }
        let (target, input) = decompose_pair(s)?;
        x.extend(input.pixels().iter().map(|p| to_unit::<T>(p[0])));
        for c in 0..out_channels {
            y.extend(target.pixels().iter().map(|p| to_unit::<T>(p[c])));
        }
    }
    Ok((
        Tensor::from_vec(&[samples.len(), 1, h, w], x)?,
        Tensor::from_vec(&[samples.len(), out_channels, h, w], y)?,
    ))
}

fn add_grads<T: Real, M: Parameterized<T>>(acc: &mut M, other: &M) {
    for (a, (_, b)) in acc.params_mut().into_iter().zip(other.params()) {
        a.add_assign(b);
    }
}

/// One discriminator step followed by one generator step.
pub fn train_step<T: Real>(
    g: &mut Generator<T>,
    d: &mut Discriminator<T>,
    opt_g: &mut Adam<T>,
    opt_d: &mut Adam<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    lambda: T,
) -> Result<GanLosses<T>> {
    let gen = g.forward_cached(x)?;
    let fake = gen.output();

    let (real_logits, real_cache) = d.forward_cached(x, y)?;
    let (fake_logits, fake_cache) = d.forward_cached(x, fake)?;
    let d_loss = pix2pix_losses(&real_logits, &fake_logits, fake, y, lambda)?.d_loss;
    let half = T::lit(0.5);
    let (mut d_grad, _) = d.backward(&real_cache, &bce_grad(&real_logits, T::one(), half));
    let (d_grad_fake, _) = d.backward(&fake_cache, &bce_grad(&fake_logits, T::zero(), half));
    add_grads(&mut d_grad, &d_grad_fake);
    opt_d.step(d, &d_grad);

    let (fake_logits, fake_cache) = d.forward_cached(x, fake)?;
    let losses = pix2pix_losses(&real_logits, &fake_logits, fake, y, lambda)?;
    let (_, mut d_fake) = d.backward(&fake_cache, &bce_grad(&fake_logits, T::one(), T::one()));
    d_fake.add_assign(&l1_grad(fake, y, lambda));
    let (g_grad, _) = g.backward(&gen, &d_fake);
    opt_g.step(g, &g_grad);

    Ok(GanLosses { d_loss, ..losses })
}

/// Holds the models, optimizers and streams of one training run.
pub struct Trainer {
    config: TrainConfig,
    generator: Generator<f32>,
    discriminator: Discriminator<f32>,
    opt_g: Adam<f32>,
    opt_d: Adam<f32>,
    data_rng: ChaCha8Rng,
    epoch: usize,
    history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(config: TrainConfig, generator: GeneratorConfig, discriminator: DiscriminatorConfig) -> Result<Self> {
        config.validate(&generator)?;
        if discriminator.in_channels != generator.in_channels + generator.out_channels {
            return Err(Error::ConfigInvalid("discriminator must see input and output channels".into()));
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let g = Generator::init(generator, &mut init_rng)?;
        let d = Discriminator::init(discriminator, &mut init_rng)?;
        let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed);
        data_rng.set_stream(1);
        Ok(Self {
            opt_g: Adam::new(&g, config.learning_rate, config.beta1, config.beta2),
            opt_d: Adam::new(&d, config.learning_rate, config.beta1, config.beta2),
            config,
            generator: g,
            discriminator: d,
            data_rng,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// Uses the preset architecture for `out_channels` target channels.
    pub fn for_preset(config: TrainConfig, out_channels: usize) -> Result<Self> {
        let p = config.preset;
        Self::new(config, p.generator(1, out_channels), p.discriminator(1, out_channels))
    }

    pub fn generator(&self) -> &Generator<f32> {
        &self.generator
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// Mean L1 between generated and target images, without augmentation.
    pub fn validation_l1(&self, val: &[PairedSample]) -> Result<Option<f64>> {
        validation_l1(&self.generator, val, self.config.crop_size)
    }

    pub fn run_epoch(&mut self, train: &[PairedSample], val: &[PairedSample]) -> Result<&EpochRecord> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let aug = self.config.augment();
        let out_channels = self.generator.config().out_channels;
        let lambda = self.config.l1_weight as f32;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.data_rng);
        let (mut g_sum, mut d_sum, mut l1_sum) = (0.0, 0.0, 0.0);
        let mut steps = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| augment(&train[i], &aug, &mut self.data_rng))
                .collect::<Result<Vec<_>>>()?;
            let (x, y) = batch_tensors::<f32>(&batch, out_channels)?;
            let l = train_step(
                &mut self.generator,
                &mut self.discriminator,
                &mut self.opt_g,
                &mut self.opt_d,
                &x,
                &y,
                lambda,
            )?;
            g_sum += f64::from(l.g_loss);
            d_sum += f64::from(l.d_loss);
            l1_sum += f64::from(l.l1);
            steps += 1;
        }
        self.epoch += 1;
        let n = steps as f64;
        let val_l1 = self.validation_l1(val)?;
        self.history.push(EpochRecord { epoch: self.epoch, g_loss: g_sum / n, d_loss: d_sum / n, l1: l1_sum / n, val_l1 });
        Ok(self.history.last().unwrap())
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        Checkpoint {
            generator: self.generator,
            discriminator: self.discriminator,
            config: self.config,
            epoch: self.epoch,
            history: self.history,
            variant: None,
        }
    }
}

pub fn validation_l1(g: &Generator<f32>, val: &[PairedSample], size: usize) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let out_channels = g.config().out_channels;
    let mut total = 0.0;
    for s in val {
        let s = if (s.half_width(), s.height()) == (size, size) {
            s.clone()
        } else {
            let (t, i) = decompose_pair(s)?;
            let t = resize_bilinear(&t, size, size)?;
            let i = resize_bilinear(&i, size, size)?;
            let gray: Vec<u8> = i.pixels().iter().map(|p| p[0]).collect();
            crate::datasetprep::compose_pair(&t, &WindowedImage::from_intensities(size, size, gray)?)?
        };
        let (x, y) = batch_tensors::<f32>(std::slice::from_ref(&s), out_channels)?;
        total += f64::from(l1_distance(&g.forward(&x)?, &y)?);
    }
    Ok(Some(total / val.len() as f64))
}

/// Trains for `config.epochs` epochs on the preset architecture.
pub fn train(
    train_set: &[PairedSample],
    val_set: &[PairedSample],
    config: &TrainConfig,
    out_channels: usize,
) -> Result<Checkpoint> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut trainer = Trainer::for_preset(config.clone(), out_channels)?;
    for _ in 0..config.epochs {
        trainer.run_epoch(train_set, val_set)?;
    }
    Ok(trainer.into_checkpoint())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub mask: ColorMask,
    pub seconds: f64,
}

/// Runs the generator on one windowed slice and rescales to 8-bit RGB.
/// Single-channel generators are replicated to gray.
pub fn segment(ckpt: &Checkpoint, img: &WindowedImage) -> Result<Segmentation> {
    let start = Instant::now();
    let out = ckpt.generator.forward(&image_tensor::<f32>(img))?;
    let (_, c, h, w) = out.dims4()?;
    let plane = h * w;
    let d = out.data();
    let pixels = (0..plane)
        .map(|i| {
            if c >= 3 {
                [from_unit(d[i]), from_unit(d[plane + i]), from_unit(d[2 * plane + i])]
            } else {
                [from_unit(d[i]); 3]
            }
        })
        .collect();
    let mask = ColorMask::new(w, h, pixels)?;
    Ok(Segmentation { mask, seconds: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasetprep::compose_pair;
    use crate::model::config::Preset;

    fn tiny_dataset(n: usize, size: usize) -> Vec<PairedSample> {
        (0..n)
            .map(|k| {
                let gray: Vec<u8> = (0..size * size).map(|i| ((i * (k + 3)) % 256) as u8).collect();
                let rgb: Vec<[u8; 3]> = gray.iter().map(|&v| if v > 128 { [255, 0, 0] } else { [0, 0, 0] }).collect();
                compose_pair(
                    &ColorMask::new(size, size, rgb).unwrap(),
                    &WindowedImage::from_intensities(size, size, gray).unwrap(),
                )
                .unwrap()
            })
            .collect()
    }

    fn small_config() -> TrainConfig {
        let mut cfg = TrainConfig::for_preset(Preset::Toy);
        cfg.crop_size = 16;
        cfg.load_size = 16;
        cfg.epochs = 2;
        cfg.seed = 42;
        cfg
    }

    fn small_trainer(cfg: TrainConfig) -> Trainer {
        let g = GeneratorConfig { depth: 2, base_channels: 4, in_channels: 1, out_channels: 3 };
        let d = DiscriminatorConfig { layers: 2, base_channels: 4, in_channels: 4 };
        Trainer::new(cfg, g, d).unwrap()
    }

    #[test]
    fn zero_epochs_is_the_seeded_initialization() {
        let mut cfg = small_config();
        cfg.epochs = 0;
        let ckpt = small_trainer(cfg.clone()).into_checkpoint();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let g = Generator::<f32>::init(ckpt.generator.config().clone(), &mut rng).unwrap();
        assert_eq!(ckpt.generator, g);
        assert_eq!(ckpt.epoch, 0);
        assert!(ckpt.history.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_dataset(4, 16);
        let run = || {
            let mut t = small_trainer(small_config());
            for _ in 0..2 {
                t.run_epoch(&data, &data[..1]).unwrap();
            }
            t.into_checkpoint()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 2);
        assert!(a.history.iter().all(|h| h.val_l1.is_some()));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let cfg = small_config();
        assert!(matches!(train(&[], &[], &cfg, 3), Err(Error::EmptyDataset)));
        let mut t = small_trainer(cfg);
        assert!(matches!(t.run_epoch(&[], &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn segmentation_keeps_dims_and_is_pure() {
        let ckpt = small_trainer(small_config()).into_checkpoint();
        let img = WindowedImage::from_intensities(16, 32, (0..512).map(|i| (i % 256) as u8).collect()).unwrap();
        let a = segment(&ckpt, &img).unwrap();
        let b = segment(&ckpt, &img).unwrap();
        assert_eq!((a.mask.width(), a.mask.height()), (16, 32));
        assert_eq!(a.mask, b.mask);
        let bad = WindowedImage::from_intensities(6, 6, vec![0; 36]).unwrap();
        assert!(matches!(segment(&ckpt, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn batches_stack_samples() {
        let data = tiny_dataset(3, 8);
        let (x, y) = batch_tensors::<f32>(&data, 3).unwrap();
        assert_eq!(x.shape(), &[3, 1, 8, 8]);
        assert_eq!(y.shape(), &[3, 3, 8, 8]);
        let (_, y1) = batch_tensors::<f32>(&data, 1).unwrap();
        assert_eq!(y1.shape(), &[3, 1, 8, 8]);
        assert!(x.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
