//! Paired training samples, 2x2 patch tiling, holdout splits, and
//! training-time augmentation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, Channels, ColorMask, Label, LabelMap, Raster, WindowedImage};
use crate::morphology::BinaryMask;

/// Split ratios that reproduce the 562 / 169 / 112 allocation of 843 slices.
pub const CLINICAL_SPLIT_RATIOS: (f64, f64, f64) = (0.667, 0.201, 0.132);

/// Side-by-side composite: target on the left, input on the right.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedSample {
    composite: ColorMask,
}

impl PairedSample {
    pub fn from_composite(composite: ColorMask) -> Result<Self> {
        if composite.width() % 2 != 0 {
            return Err(Error::OddWidth(composite.width()));
        }
        Ok(Self { composite })
    }

    pub fn composite(&self) -> &ColorMask {
        &self.composite
    }

    /// Width of one half.
    pub fn half_width(&self) -> usize {
        self.composite.width() / 2
    }

    pub fn height(&self) -> usize {
        self.composite.height()
    }
}

pub fn compose_pair(target: &ColorMask, input: &WindowedImage) -> Result<PairedSample> {
    if target.width() != input.width() || target.height() != input.height() {
        return Err(Error::DimensionMismatch(format!(
            "target {}x{} vs input {}x{}",
            target.width(),
            target.height(),
            input.width(),
            input.height()
        )));
    }
    Ok(PairedSample { composite: join_halves(target, &ColorMask::from_gray(input)) })
}

fn join_halves(left: &ColorMask, right: &ColorMask) -> ColorMask {
    let (w, h) = (left.width(), left.height());
    let mut px = Vec::with_capacity(2 * w * h);
    for y in 0..h {
        px.extend_from_slice(&left.pixels()[y * w..(y + 1) * w]);
        px.extend_from_slice(&right.pixels()[y * w..(y + 1) * w]);
    }
    ColorMask::new(2 * w, h, px).expect("valid composite dims")
}

/// Splits a composite into `(target, input)` halves.
pub fn decompose_pair(p: &PairedSample) -> Result<(ColorMask, ColorMask)> {
    decompose_composite(&p.composite)
}

pub fn decompose_composite(c: &ColorMask) -> Result<(ColorMask, ColorMask)> {
    if c.width() % 2 != 0 {
        return Err(Error::OddWidth(c.width()));
    }
    let w = c.width() / 2;
    let h = c.height();
    let mut left = Vec::with_capacity(w * h);
    let mut right = Vec::with_capacity(w * h);
    for row in c.pixels().chunks_exact(2 * w) {
        left.extend_from_slice(&row[..w]);
        right.extend_from_slice(&row[w..]);
    }
    Ok((ColorMask::new(w, h, left)?, ColorMask::new(w, h, right)?))
}

/// Four equally sized quadrants in top-left, top-right, bottom-left,
/// bottom-right order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid<R> {
    pub patches: Vec<R>,
}

fn crop<R: Raster>(img: &R, x0: usize, y0: usize, w: usize, h: usize) -> R {
    let mut px = Vec::with_capacity(w * h);
    for y in y0..y0 + h {
        let row = y * img.width();
        px.extend_from_slice(&img.pixels()[row + x0..row + x0 + w]);
    }
    img.with_pixels(w, h, px)
}

pub fn split_patches<R: Raster>(img: &R) -> Result<PatchGrid<R>> {
    let (w, h) = (img.width(), img.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::OddDimensions { width: w, height: h });
    }
    let (pw, ph) = (w / 2, h / 2);
    let patches = [(0, 0), (pw, 0), (0, ph), (pw, ph)]
        .iter()
        .map(|&(x, y)| crop(img, x, y, pw, ph))
        .collect();
    Ok(PatchGrid { patches })
}

pub fn reassemble_patches<R: Raster>(grid: &PatchGrid<R>) -> Result<R> {
    if grid.patches.len() != 4 {
        return Err(Error::PatchCountMismatch(grid.patches.len()));
    }
    let (pw, ph) = (grid.patches[0].width(), grid.patches[0].height());
    if grid.patches.iter().any(|p| p.width() != pw || p.height() != ph) {
        return Err(Error::DimensionMismatch("patches differ in size".into()));
    }
    let mut px = Vec::with_capacity(4 * pw * ph);
    for band in grid.patches.chunks_exact(2) {
        for y in 0..ph {
            for patch in band {
                px.extend_from_slice(&patch.pixels()[y * pw..(y + 1) * pw]);
            }
        }
    }
    Ok(grid.patches[0].with_pixels(2 * pw, 2 * ph, px))
}

pub fn binarize_class(labels: &LabelMap, cls: Label) -> BinaryMask {
    let bits = labels.labels().iter().map(|&l| l == cls).collect();
    BinaryMask::new(labels.width(), labels.height(), bits).expect("label map dims are valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub ratios: (f64, f64, f64),
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitSpec {
    /// The three partitions in (train, val, test) order.
    pub fn partitions(&self) -> [&[String]; 3] {
        [&self.train_ids, &self.val_ids, &self.test_ids]
    }

    /// Cyclically reassigns roles: rotation `r` makes partition `r` the
    /// training set, `r + 1` validation and `r + 2` test (mod 3).
    pub fn rotated(&self, r: usize) -> SplitSpec {
        let parts = self.partitions();
        SplitSpec {
            seed: self.seed,
            ratios: self.ratios,
            train_ids: parts[r % 3].to_vec(),
            val_ids: parts[(r + 1) % 3].to_vec(),
            test_ids: parts[(r + 2) % 3].to_vec(),
        }
    }
}

/// Seeded shuffle, then floor-sized train and val partitions with the
/// remainder going to test.
pub fn make_split<S: AsRef<str>>(ids: &[S], ratios: (f64, f64, f64), seed: u64) -> Result<SplitSpec> {
    let (rt, rv, rs) = ratios;
    if ids.is_empty() {
        return Err(Error::BadRatios("no ids to split".into()));
    }
    if [rt, rv, rs].iter().any(|r| !r.is_finite() || *r < 0.0) || ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::BadRatios(format!("{rt} + {rv} + {rs} must sum to 1")));
    }
    let mut shuffled: Vec<String> = ids.iter().map(|s| s.as_ref().to_owned()).collect();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = shuffled.len() as f64;
    // the epsilon keeps exact products such as 3 * (1/3) from flooring down
    let n_train = ((n * rt + 1e-9).floor() as usize).min(shuffled.len());
    let n_val = ((n * rv + 1e-9).floor() as usize).min(shuffled.len() - n_train);
    let test_ids = shuffled.split_off(n_train + n_val);
    let val_ids = shuffled.split_off(n_train);
    Ok(SplitSpec { seed, ratios, train_ids: shuffled, val_ids, test_ids })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_enabled: bool,
    pub load_size: usize,
    pub crop_size: usize,
    pub flip_probability: f64,
}

impl AugmentConfig {
    pub fn new(flip_enabled: bool, load_size: usize, crop_size: usize) -> Self {
        Self { flip_enabled, load_size, crop_size, flip_probability: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 {
            return Err(Error::InvalidSize { width: 0, height: 0 });
        }
        if self.crop_size > self.load_size {
            return Err(Error::CropLargerThanLoad { load: self.load_size, crop: self.crop_size });
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::ConfigInvalid(format!("flip probability {}", self.flip_probability)));
        }
        Ok(())
    }
}

pub fn flip_horizontal<R: Raster>(img: &R) -> R {
    let w = img.width();
    let px = img
        .pixels()
        .chunks_exact(w)
        .flat_map(|row| row.iter().rev().copied())
        .collect();
    img.with_pixels(w, img.height(), px)
}

/// The geometric transform drawn for one augmented sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub offset_x: usize,
    pub offset_y: usize,
}

impl AugmentDraw {
    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let flip = cfg.flip_enabled && rng.random::<f64>() < cfg.flip_probability;
        let slack = cfg.load_size - cfg.crop_size;
        let offset_x = rng.random_range(0..=slack);
        let offset_y = rng.random_range(0..=slack);
        Self { flip, offset_x, offset_y }
    }

    pub fn apply<R>(&self, img: &R, cfg: &AugmentConfig) -> Result<R>
    where
        R: Raster,
        R::Pixel: Channels,
    {
        let img = if self.flip { flip_horizontal(img) } else { img.with_pixels(img.width(), img.height(), img.pixels().to_vec()) };
        let loaded = resize_bilinear(&img, cfg.load_size, cfg.load_size)?;
        Ok(crop(&loaded, self.offset_x, self.offset_y, cfg.crop_size, cfg.crop_size))
    }
}

/// Flip, resize to `load_size`, and crop to `crop_size`, with one draw
/// shared by both halves of the pair.
pub fn augment(sample: &PairedSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<PairedSample> {
    cfg.validate()?;
    let (target, input) = decompose_pair(sample)?;
    let draw = AugmentDraw::sample(cfg, rng);
    let target = draw.apply(&target, cfg)?;
    let input = draw.apply(&input, cfg)?;
    Ok(PairedSample { composite: join_halves(&target, &input) })
}

/// Experiment recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Both halves resized to a square working size, all classes.
    E1,
    /// Like E1 with the target reduced to epicardial fat only.
    E2,
    /// Native resolution, all classes.
    E3,
    /// Native image cut into four quadrants, trained and segmented per quadrant.
    E4,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::E1, Variant::E2, Variant::E3, Variant::E4];

    pub fn name(self) -> &'static str {
        match self {
            Variant::E1 => "e1",
            Variant::E2 => "e2",
            Variant::E3 => "e3",
            Variant::E4 => "e4",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn classes(self) -> &'static [Label] {
        match self {
            Variant::E2 => &[Label::Epicardial],
            _ => &Label::FOREGROUND,
        }
    }

    pub fn out_channels(self) -> usize {
        match self {
            Variant::E2 => 1,
            _ => 3,
        }
    }

    /// Side of the square the network sees, given the working size used
    /// by E1/E2 and the native slice side.
    pub fn network_size(self, working: usize, native: usize) -> usize {
        match self {
            Variant::E1 | Variant::E2 => working,
            Variant::E3 => native,
            Variant::E4 => native / 2,
        }
    }

    /// Side of the grid predictions and truth are compared on.
    pub fn eval_size(self, working: usize, native: usize) -> usize {
        match self {
            Variant::E1 | Variant::E2 => working,
            Variant::E3 | Variant::E4 => native,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
