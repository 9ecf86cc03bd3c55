//! Binary morphology for post-processing single-class predictions.
//!
//! Out-of-bounds pixels read as background in both dilation and erosion.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{ColorMask, Raster, Rgb, WindowedImage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidSize { width, height });
        }
        if width * height != bits.len() {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} mask needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![true; width * height])
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    /// Reads with zero padding outside the grid.
    pub fn get_padded(&self, x: isize, y: isize) -> bool {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            return false;
        }
        self.bits[y as usize * self.width + x as usize]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Thresholds a grayscale image: intensities `>= 128` become foreground.
    pub fn from_gray(img: &WindowedImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            bits: img.intensities().iter().map(|&v| v >= 128).collect(),
        }
    }

    /// Renders as 8-bit gray with `0 -> 0` and `1 -> 255`.
    pub fn to_gray(&self) -> WindowedImage {
        let px = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        WindowedImage::from_intensities(self.width, self.height, px).expect("valid dims")
    }
}

impl Raster for BinaryMask {
    type Pixel = bool;
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn pixels(&self) -> &[bool] {
        &self.bits
    }
    fn with_pixels(&self, width: usize, height: usize, pixels: Vec<bool>) -> Self {
        debug_assert_eq!(width * height, pixels.len());
        Self { width, height, bits: pixels }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuringElement {
    offsets: Vec<(isize, isize)>,
}

impl StructuringElement {
    pub fn new(mut offsets: Vec<(isize, isize)>) -> Result<Self> {
        if !offsets.contains(&(0, 0)) {
            return Err(Error::ConfigInvalid("structuring element must contain the origin".into()));
        }
        offsets.sort_unstable();
        offsets.dedup();
        Ok(Self { offsets })
    }

    /// The 3x3 cross: origin plus its four edge neighbours.
    pub fn cross() -> Self {
        Self::new(vec![(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]).unwrap()
    }

    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }

    pub fn reflected(&self) -> Self {
        Self::new(self.offsets.iter().map(|&(dx, dy)| (-dx, -dy)).collect()).unwrap()
    }
}

fn probe(m: &BinaryMask, offsets: &[(isize, isize)], any: bool) -> BinaryMask {
    let mut out = Vec::with_capacity(m.bits.len());
    for y in 0..m.height as isize {
        for x in 0..m.width as isize {
            let mut hits = offsets.iter().map(|&(dx, dy)| m.get_padded(x + dx, y + dy));
            out.push(if any { hits.any(|b| b) } else { hits.all(|b| b) });
        }
    }
    BinaryMask { width: m.width, height: m.height, bits: out }
}

pub fn dilate(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    probe(m, se.reflected().offsets(), true)
}

pub fn erode(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    probe(m, se.offsets(), false)
}

/// Dilation then erosion, evaluated on a canvas padded by the element's
/// reach so that set pixels on the border survive the erosion.
pub fn close(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let r = se.offsets().iter().map(|&(dx, dy)| dx.unsigned_abs().max(dy.unsigned_abs())).max().unwrap_or(0);
    let (w, h) = (m.width + 2 * r, m.height + 2 * r);
    let mut canvas = BinaryMask::empty(w, h).unwrap();
    for y in 0..m.height {
        for x in 0..m.width {
            canvas.set(x + r, y + r, m.get(x, y));
        }
    }
    let closed = erode(&dilate(&canvas, se), se);
    let bits = (0..m.height).flat_map(|y| (0..m.width).map(move |x| (x, y))).map(|(x, y)| closed.get(x + r, y + r)).collect();
    BinaryMask { width: m.width, height: m.height, bits }
}

/// Paints `color` over the grayscale CT wherever the mask is set.
pub fn overlay(ct: &WindowedImage, m: &BinaryMask, color: Rgb) -> Result<ColorMask> {
    if ct.width() != m.width || ct.height() != m.height {
        return Err(Error::DimensionMismatch(format!(
            "ct {}x{} vs mask {}x{}",
            ct.width(),
            ct.height(),
            m.width,
            m.height
        )));
    }
    let px = ct
        .intensities()
        .iter()
        .zip(&m.bits)
        .map(|(&v, &b)| if b { color } else { [v, v, v] })
        .collect();
    ColorMask::new(m.width, m.height, px)
}

pub fn load_mask_png(path: &Path) -> Result<BinaryMask> {
    Ok(BinaryMask::from_gray(&crate::imaging::load_gray_png(path)?))
}

pub fn save_mask_png(m: &BinaryMask, path: &Path) -> Result<()> {
    crate::imaging::save_gray_png(&m.to_gray(), path)
}
