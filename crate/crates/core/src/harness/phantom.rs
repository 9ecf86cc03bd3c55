//! Synthetic CT slices with known fat labels.
//!
//! Each slice holds a rotated elliptical "heart" wrapped in nested bands:
//! epicardial fat, a thin pericardium, then mediastinal fat whose thickness
//! varies with angle. Soft tissue fills the rest of an elliptical body with
//! air outside it. Only fat falls inside the fat window.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{encode_labels, save_hu, save_rgb_png, HuImage, Label, LabelMap, Palette, Raster};
use crate::morphology::{save_mask_png, BinaryMask};
use crate::datasetprep::binarize_class;

/// HU range assigned to fat before noise.
pub const FAT_HU: (i16, i16) = (-100, -50);

/// Epicardial fat takes the lower part of the fat band, mediastinal fat the
/// upper part, so the two depots differ in texture.
const EPICARDIAL_HU: (i16, i16) = (-100, -88);
const MEDIASTINAL_HU: (i16, i16) = (-62, -50);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub n_images: usize,
    pub size: usize,
    pub seed: u64,
    /// Gaussian noise standard deviation as a fraction of the fat window width.
    pub noise_level: f64,
    /// Fraction of epicardial pixels dropped from the emitted holey masks.
    pub hole_rate: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self { n_images: 260, size: 64, seed: 0, noise_level: 0.05, hole_rate: 0.0 }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::ConfigInvalid(format!("phantom size {} is below 16", self.size)));
        }
        if !(0.0..=1.0).contains(&self.noise_level) || !(0.0..=1.0).contains(&self.hole_rate) {
            return Err(Error::ConfigInvalid("noise_level and hole_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Additionally requires the size to suit a generator of `depth` levels.
    pub fn validate_for_depth(&self, depth: usize) -> Result<()> {
        self.validate()?;
        if self.size % (1 << depth) != 0 {
            return Err(Error::ConfigInvalid(format!("phantom size {} is not divisible by 2^{depth}", self.size)));
        }
        Ok(())
    }
}

pub fn phantom_id(index: usize) -> String {
    format!("img_{index:04}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSlice {
    pub id: String,
    pub hu: HuImage,
    pub labels: LabelMap,
    /// HU values before noise.
    pub clean: HuImage,
}

struct Geometry {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    a: f64,
    b: f64,
    epi: f64,
    peri: f64,
    med_base: f64,
    med_bulge: f64,
    med_phase: f64,
}

impl Geometry {
    fn sample(size: f64, rng: &mut impl Rng) -> Self {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        Self {
            cx: size * (0.5 + rng.random_range(-0.02..0.02)),
            cy: size * (0.5 + rng.random_range(-0.02..0.02)),
            cos: theta.cos(),
            sin: theta.sin(),
            a: size * rng.random_range(0.10..0.13),
            b: size * rng.random_range(0.08..0.10),
            epi: size * rng.random_range(0.11..0.13),
            peri: size * rng.random_range(0.09..0.11),
            med_base: size * rng.random_range(0.08..0.10),
            med_bulge: size * rng.random_range(0.02..0.05),
            med_phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    /// Label of the pixel center at `(x, y)`, or `None` outside the heart complex.
    fn label(&self, x: f64, y: f64) -> Option<Label> {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        let inside = |grow: f64| (u / (self.a + grow)).powi(2) + (v / (self.b + grow)).powi(2) <= 1.0;
        let phi = (v / self.b).atan2(u / self.a);
        let med = self.med_base + self.med_bulge * (phi - self.med_phase).cos().max(0.0);
        if inside(0.0) {
            Some(Label::Background)
        } else if inside(self.epi) {
            Some(Label::Epicardial)
        } else if inside(self.epi + self.peri) {
            Some(Label::Pericardium)
        } else if inside(self.epi + self.peri + med) {
            Some(Label::Mediastinal)
        } else {
            None
        }
    }
}

/// Deterministic slice `index` of the phantom described by `cfg`.
pub fn generate_slice(cfg: &PhantomConfig, index: usize) -> Result<PhantomSlice> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let s = cfg.size;
    let g = Geometry::sample(s as f64, &mut rng);
    let noise = Normal::new(0.0, cfg.noise_level * 170.0).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let (body_a, body_b) = (0.7 * s as f64, 0.62 * s as f64);
    let mut labels = Vec::with_capacity(s * s);
    let mut clean = Vec::with_capacity(s * s);
    let mut noisy = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (label, hu) = match g.label(px, py) {
                Some(Label::Background) => (Label::Background, rng.random_range(20..=60)),
                // a thin low-attenuation line, below the window
                Some(Label::Pericardium) => (Label::Pericardium, rng.random_range(-320..=-260)),
                Some(Label::Epicardial) => (Label::Epicardial, rng.random_range(EPICARDIAL_HU.0..=EPICARDIAL_HU.1)),
                Some(fat) => (fat, rng.random_range(MEDIASTINAL_HU.0..=MEDIASTINAL_HU.1)),
                None => {
                    let r = ((px - s as f64 / 2.0) / body_a).powi(2) + ((py - s as f64 / 2.0) / body_b).powi(2);
                    let hu = if r > 1.0 { rng.random_range(-1000..=-950) } else { rng.random_range(20..=60) };
                    (Label::Background, hu)
                }
            };
            let n: f64 = if cfg.noise_level > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            labels.push(label);
            clean.push(hu as i16);
            noisy.push((f64::from(hu) + n).round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16);
        }
    }
    Ok(PhantomSlice {
        id: phantom_id(index),
        hu: HuImage::new(s, s, noisy)?,
        labels: LabelMap::new(s, s, labels)?,
        clean: HuImage::new(s, s, clean)?,
    })
}

pub fn generate_phantom(cfg: &PhantomConfig) -> Result<Vec<PhantomSlice>> {
    (0..cfg.n_images).map(|i| generate_slice(cfg, i)).collect()
}

/// Clears each set pixel independently with probability `rate`.
pub fn inject_holes(m: &BinaryMask, rate: f64, rng: &mut impl Rng) -> BinaryMask {
    let bits = m.bits().iter().map(|&b| b && !rng.random_bool(rate)).collect();
    BinaryMask::new(m.width(), m.height(), bits).expect("same dims")
}

/// Writes `hu/{id}.huim`, `masks/{id}.png`, `holey/{id}.png` (epicardial
/// masks with injected holes) and `phantom.json`.
pub fn write_phantom(cfg: &PhantomConfig, dir: &Path) -> Result<Vec<PhantomSlice>> {
    let slices = generate_phantom(cfg)?;
    for sub in ["hu", "masks", "holey"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let mut hole_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    hole_rng.set_stream(u64::MAX);
    for s in &slices {
        save_hu(&s.hu, &dir.join("hu").join(format!("{}.huim", s.id)))?;
        save_rgb_png(&encode_labels(&s.labels, &Palette::CANONICAL), &dir.join("masks").join(format!("{}.png", s.id)))?;
        let holey = inject_holes(&binarize_class(&s.labels, Label::Epicardial), cfg.hole_rate, &mut hole_rng);
        save_mask_png(&holey, &dir.join("holey").join(format!("{}.png", s.id)))?;
    }
    fs::write(dir.join("phantom.json"), serde_json::to_string_pretty(cfg)?)?;
    Ok(slices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::decode_colors;

    fn cfg(n: usize) -> PhantomConfig {
        PhantomConfig { n_images: n, size: 64, seed: 3, noise_level: 0.05, hole_rate: 0.05 }
    }

    #[test]
    fn every_class_is_present() {
        for s in generate_phantom(&cfg(10)).unwrap() {
            for l in Label::ALL {
                assert!(s.labels.count(l) > 20, "{} has few {l}", s.id);
            }
        }
    }

    #[test]
    fn fat_is_in_band_before_noise() {
        for s in generate_phantom(&cfg(5)).unwrap() {
            for (l, v) in s.labels.labels().iter().zip(s.clean.values()) {
                let fat = (FAT_HU.0..=FAT_HU.1).contains(v);
                assert_eq!(fat, matches!(l, Label::Epicardial | Label::Mediastinal));
            }
        }
    }

    #[test]
    fn targets_use_only_palette_colors() {
        for s in generate_phantom(&cfg(5)).unwrap() {
            let mask = encode_labels(&s.labels, &Palette::CANONICAL);
            assert_eq!(decode_colors(&mask, &Palette::CANONICAL), s.labels);
        }
    }

    #[test]
    fn slices_are_independent_of_count() {
        let few = generate_phantom(&cfg(2)).unwrap();
        let many = generate_phantom(&cfg(6)).unwrap();
        assert_eq!(few[..], many[..2]);
        assert_ne!(many[0].hu, many[1].hu);
    }

    #[test]
    fn files_are_reproducible() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_phantom(&cfg(1), a.path()).unwrap();
        write_phantom(&cfg(1), b.path()).unwrap();
        for f in ["hu/img_0000.huim", "masks/img_0000.png", "holey/img_0000.png", "phantom.json"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn holes_only_remove_pixels() {
        let m = BinaryMask::full(32, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = inject_holes(&m, 0.05, &mut rng);
        assert!(h.is_subset_of(&m));
        let dropped = m.count_ones() - h.count_ones();
        assert!((20..90).contains(&dropped), "{dropped}");
        assert_eq!(inject_holes(&m, 0.0, &mut rng), m);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(PhantomConfig { size: 8, ..cfg(1) }.validate().is_err());
        assert!(PhantomConfig { hole_rate: 1.5, ..cfg(1) }.validate().is_err());
        assert!(PhantomConfig { size: 72, ..cfg(1) }.validate_for_depth(4).is_err());
        cfg(1).validate_for_depth(4).unwrap();
    }
}
