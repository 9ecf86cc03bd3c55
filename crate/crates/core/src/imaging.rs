//! CT attenuation grids, Hounsfield windowing, and the RGB label encoding
//! used by the ground-truth masks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound of the fat window, in HU.
pub const FAT_WINDOW_LO: i32 = -200;
/// Upper bound of the fat window, in HU.
pub const FAT_WINDOW_HI: i32 = -30;

const HUIM_MAGIC: &[u8; 4] = b"HUIM";
const HUIM_VERSION: u8 = 0x01;
const HUIM_HEADER_LEN: usize = 4 + 1 + 4 + 4;

pub type Rgb = [u8; 3];

/// Row-major grid addressed by `(x, y)` with a top-left origin.
pub trait Raster: Sized {
    type Pixel: Copy;

    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn pixels(&self) -> &[Self::Pixel];

    /// Builds a raster of the same kind, inheriting any non-pixel metadata
    /// from `self`. `pixels.len()` must equal `width * height`.
    fn with_pixels(&self, width: usize, height: usize, pixels: Vec<Self::Pixel>) -> Self;

    fn pixel(&self, x: usize, y: usize) -> Self::Pixel {
        self.pixels()[y * self.width() + x]
    }
}

/// Pixel types that decompose into 8-bit channels.
pub trait Channels: Copy {
    const COUNT: usize;
    fn channel(&self, c: usize) -> u8;
    fn from_channels(f: impl FnMut(usize) -> u8) -> Self;
}

impl Channels for u8 {
    const COUNT: usize = 1;
    fn channel(&self, _c: usize) -> u8 {
        *self
    }
    fn from_channels(mut f: impl FnMut(usize) -> u8) -> Self {
        f(0)
    }
}

impl Channels for Rgb {
    const COUNT: usize = 3;
    fn channel(&self, c: usize) -> u8 {
        self[c]
    }
    fn from_channels(mut f: impl FnMut(usize) -> u8) -> Self {
        [f(0), f(1), f(2)]
    }
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidSize { width, height });
    }
    if width.checked_mul(height) != Some(len) {
        return Err(Error::DimensionMismatch(format!(
            "{width}x{height} grid needs {} values, got {len}",
            width * height
        )));
    }
    Ok(())
}

/// Signed CT attenuation in Hounsfield units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuImage {
    width: usize,
    height: usize,
    values: Vec<i16>,
}

impl HuImage {
    pub fn new(width: usize, height: usize, values: Vec<i16>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[i16] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> i16 {
        self.values[y * self.width + x]
    }
}

/// Decodes a HUIM container: `"HUIM"`, version `0x01`, `u32` LE width,
/// `u32` LE height, then `i16` LE samples in row-major order.
pub fn read_hu_raw(bytes: &[u8]) -> Result<HuImage> {
    if bytes.len() < HUIM_HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "header needs {HUIM_HEADER_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != HUIM_MAGIC {
        return Err(Error::MalformedHeader("bad magic".into()));
    }
    if bytes[4] != HUIM_VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {}", bytes[4])));
    }
    let width = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader(format!("zero dimension {width}x{height}")));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| Error::MalformedHeader("dimensions overflow".into()))?;
    let payload = &bytes[HUIM_HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload { expected, found: payload.len() });
    }
    let values = payload[..expected]
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect();
    HuImage::new(width, height, values)
}

pub fn write_hu_raw(img: &HuImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(HUIM_HEADER_LEN + img.values.len() * 2);
    out.extend_from_slice(HUIM_MAGIC);
    out.push(HUIM_VERSION);
    out.extend_from_slice(&(img.width as u32).to_le_bytes());
    out.extend_from_slice(&(img.height as u32).to_le_bytes());
    for v in &img.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn load_hu(path: &Path) -> Result<HuImage> {
    read_hu_raw(&std::fs::read(path)?)
}

pub fn save_hu(img: &HuImage, path: &Path) -> Result<()> {
    std::fs::write(path, write_hu_raw(img))?;
    Ok(())
}

/// 8-bit rendering of a HU grid through a `[window_lo, window_hi]` window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowedImage {
    width: usize,
    height: usize,
    intensities: Vec<u8>,
    window_lo: i32,
    window_hi: i32,
}

impl WindowedImage {
    /// Wraps already-windowed intensities, e.g. a grayscale PNG on disk.
    pub fn from_intensities(width: usize, height: usize, intensities: Vec<u8>) -> Result<Self> {
        Self::with_window(width, height, intensities, FAT_WINDOW_LO, FAT_WINDOW_HI)
    }

    pub fn with_window(
        width: usize,
        height: usize,
        intensities: Vec<u8>,
        window_lo: i32,
        window_hi: i32,
    ) -> Result<Self> {
        check_dims(width, height, intensities.len())?;
        if window_lo >= window_hi {
            return Err(Error::InvalidWindow { lo: window_lo, hi: window_hi });
        }
        Ok(Self { width, height, intensities, window_lo, window_hi })
    }

    pub fn intensities(&self) -> &[u8] {
        &self.intensities
    }

    pub fn window(&self) -> (i32, i32) {
        (self.window_lo, self.window_hi)
    }
}

impl Raster for WindowedImage {
    type Pixel = u8;
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn pixels(&self) -> &[u8] {
        &self.intensities
    }
    fn with_pixels(&self, width: usize, height: usize, pixels: Vec<u8>) -> Self {
        debug_assert_eq!(width * height, pixels.len());
        Self { width, height, intensities: pixels, window_lo: self.window_lo, window_hi: self.window_hi }
    }
}

/// Maps one HU value through the window, rounding half up.
pub fn window_value(v: i32, lo: i32, hi: i32) -> u8 {
    let span = i64::from(hi - lo);
    let c = i64::from(v.clamp(lo, hi) - lo);
    // floor(c * 255 / span + 1/2) in exact integer arithmetic
    ((2 * c * 255 + span) / (2 * span)) as u8
}

pub fn window_hu(img: &HuImage, lo: i32, hi: i32) -> Result<WindowedImage> {
    if lo >= hi {
        return Err(Error::InvalidWindow { lo, hi });
    }
    let intensities = img.values.iter().map(|&v| window_value(i32::from(v), lo, hi)).collect();
    WindowedImage::with_window(img.width, img.height, intensities, lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Background,
    Epicardial,
    Mediastinal,
    Pericardium,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Background, Label::Epicardial, Label::Mediastinal, Label::Pericardium];
    pub const FOREGROUND: [Label; 3] = [Label::Epicardial, Label::Mediastinal, Label::Pericardium];

    /// Order used when two palette entries are equally close to a color.
    const TIE_ORDER: [Label; 4] = [Label::Background, Label::Pericardium, Label::Mediastinal, Label::Epicardial];

    pub fn name(self) -> &'static str {
        match self {
            Label::Background => "background",
            Label::Epicardial => "epicardial",
            Label::Mediastinal => "mediastinal",
            Label::Pericardium => "pericardium",
        }
    }

    pub fn from_name(s: &str) -> Option<Label> {
        Label::ALL.into_iter().find(|l| l.name() == s)
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub background: Rgb,
    pub epicardial: Rgb,
    pub mediastinal: Rgb,
    pub pericardium: Rgb,
}

impl Palette {
    pub const CANONICAL: Palette = Palette {
        background: [0, 0, 0],
        epicardial: [255, 0, 0],
        mediastinal: [0, 255, 0],
        pericardium: [0, 0, 255],
    };

    pub fn new(background: Rgb, epicardial: Rgb, mediastinal: Rgb, pericardium: Rgb) -> Result<Self> {
        let p = Palette { background, epicardial, mediastinal, pericardium };
        for (i, a) in Label::ALL.iter().enumerate() {
            for b in &Label::ALL[i + 1..] {
                if p.color(*a) == p.color(*b) {
                    return Err(Error::ConfigInvalid(format!("palette colors for {a} and {b} coincide")));
                }
            }
        }
        Ok(p)
    }

    pub fn color(&self, label: Label) -> Rgb {
        match label {
            Label::Background => self.background,
            Label::Epicardial => self.epicardial,
            Label::Mediastinal => self.mediastinal,
            Label::Pericardium => self.pericardium,
        }
    }

    /// Nearest palette label by squared RGB distance.
    pub fn nearest(&self, rgb: Rgb) -> Label {
        let dist = |c: Rgb| -> u32 {
            (0..3)
                .map(|i| {
                    let d = i32::from(rgb[i]) - i32::from(c[i]);
                    (d * d) as u32
                })
                .sum()
        };
        let mut best = Label::TIE_ORDER[0];
        let mut best_d = dist(self.color(best));
        for &l in &Label::TIE_ORDER[1..] {
            let d = dist(self.color(l));
            if d < best_d {
                best = l;
                best_d = d;
            }
        }
        best
    }
}

impl Default for Palette {
    fn default() -> Self {
        Palette::CANONICAL
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<Label>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<Label>) -> Result<Self> {
        check_dims(width, height, labels.len())?;
        Ok(Self { width, height, labels })
    }

    pub fn filled(width: usize, height: usize, label: Label) -> Result<Self> {
        Self::new(width, height, vec![label; width * height])
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

impl Raster for LabelMap {
    type Pixel = Label;
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn pixels(&self) -> &[Label] {
        &self.labels
    }
    fn with_pixels(&self, width: usize, height: usize, pixels: Vec<Label>) -> Self {
        debug_assert_eq!(width * height, pixels.len());
        Self { width, height, labels: pixels }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorMask {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl ColorMask {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        check_dims(width, height, pixels.len())?;
        Ok(Self { width, height, pixels })
    }

    /// Replicates a grayscale image into the three channels.
    pub fn from_gray(img: &WindowedImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            pixels: img.intensities.iter().map(|&v| [v, v, v]).collect(),
        }
    }
}

impl Raster for ColorMask {
    type Pixel = Rgb;
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }
    fn with_pixels(&self, width: usize, height: usize, pixels: Vec<Rgb>) -> Self {
        debug_assert_eq!(width * height, pixels.len());
        Self { width, height, pixels }
    }
}

pub fn encode_labels(labels: &LabelMap, palette: &Palette) -> ColorMask {
    ColorMask {
        width: labels.width,
        height: labels.height,
        pixels: labels.labels.iter().map(|&l| palette.color(l)).collect(),
    }
}

pub fn decode_colors(mask: &ColorMask, palette: &Palette) -> LabelMap {
    LabelMap {
        width: mask.width,
        height: mask.height,
        labels: mask.pixels.iter().map(|&c| palette.nearest(c)).collect(),
    }
}

/// Bilinear resampling with half-pixel-center alignment and edge clamping.
pub fn resize_bilinear<R>(img: &R, out_w: usize, out_h: usize) -> Result<R>
where
    R: Raster,
    R::Pixel: Channels,
{
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidSize { width: out_w, height: out_h });
    }
    let (w, h) = (img.width(), img.height());
    let src = img.pixels();
    let taps = |out: usize, len: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * len as f64 / out as f64 - 0.5).clamp(0.0, (len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = taps(out_w, w);
    let ys = taps(out_h, h);
    let mut out = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p00 = src[y0 * w + x0];
            let p01 = src[y0 * w + x1];
            let p10 = src[y1 * w + x0];
            let p11 = src[y1 * w + x1];
            out.push(R::Pixel::from_channels(|c| {
                let top = f64::from(p00.channel(c)) * (1.0 - fx) + f64::from(p01.channel(c)) * fx;
                let bot = f64::from(p10.channel(c)) * (1.0 - fx) + f64::from(p11.channel(c)) * fx;
                let v = top * (1.0 - fy) + bot * fy;
                (v + 0.5).floor().clamp(0.0, 255.0) as u8
            }));
        }
    }
    Ok(img.with_pixels(out_w, out_h, out))
}

pub fn load_gray_png(path: &Path) -> Result<WindowedImage> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    WindowedImage::from_intensities(w as usize, h as usize, img.into_raw())
}

pub fn save_gray_png(img: &WindowedImage, path: &Path) -> Result<()> {
    image::save_buffer(
        path,
        &img.intensities,
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::L8,
    )?;
    Ok(())
}

pub fn load_rgb_png(path: &Path) -> Result<ColorMask> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.into_raw().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    ColorMask::new(w as usize, h as usize, pixels)
}

pub fn save_rgb_png(mask: &ColorMask, path: &Path) -> Result<()> {
    let raw: Vec<u8> = mask.pixels.iter().flatten().copied().collect();
    image::save_buffer(path, &raw, mask.width as u32, mask.height as u32, image::ExtendedColorType::Rgb8)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn huim(width: u32, height: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = b"HUIM\x01".to_vec();
        b.extend_from_slice(&width.to_le_bytes());
        b.extend_from_slice(&height.to_le_bytes());
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn decodes_single_pixel() {
        let img = read_hu_raw(&huim(1, 1, &(-100i16).to_le_bytes())).unwrap();
        assert_eq!((img.width(), img.height()), (1, 1));
        assert_eq!(img.values(), &[-100]);
    }

    #[test]
    fn short_payload_is_truncated() {
        let err = read_hu_raw(&huim(2, 1, &[0, 0])).unwrap_err();
        assert!(matches!(err, Error::TruncatedPayload { expected: 4, found: 2 }));
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let mut b = huim(1, 1, &[0, 0]);
        b[0] = b'X';
        assert!(matches!(read_hu_raw(&b), Err(Error::MalformedHeader(_))));
        let mut b = huim(1, 1, &[0, 0]);
        b[4] = 2;
        assert!(matches!(read_hu_raw(&b), Err(Error::MalformedHeader(_))));
        assert!(matches!(read_hu_raw(b"HUI"), Err(Error::MalformedHeader(_))));
    }

    fn window_oracle(v: i32, lo: i32, hi: i32) -> u8 {
        let c = f64::from(v.clamp(lo, hi) - lo);
        (c * 255.0 / f64::from(hi - lo) + 0.5).floor() as u8
    }

    #[test]
    fn window_examples() {
        assert_eq!(window_value(-200, -200, -30), 0);
        assert_eq!(window_value(-500, -200, -30), 0);
        assert_eq!(window_value(-115, -200, -30), 128);
        assert_eq!(window_value(-30, -200, -30), 255);
        assert_eq!(window_value(400, -200, -30), 255);
    }

    #[test]
    fn window_matches_scalar_oracle_over_sweep() {
        for v in -300..=100 {
            assert_eq!(window_value(v, -200, -30), window_oracle(v, -200, -30), "v = {v}");
        }
    }

    #[test]
    fn window_is_monotone_and_saturates() {
        let mut prev = 0u8;
        for v in -1024..=3071 {
            let i = window_value(v, FAT_WINDOW_LO, FAT_WINDOW_HI);
            assert!(i >= prev);
            if v <= FAT_WINDOW_LO {
                assert_eq!(i, 0);
            }
            if v >= FAT_WINDOW_HI {
                assert_eq!(i, 255);
            }
            prev = i;
        }
    }

    #[test]
    fn inverted_window_is_rejected() {
        let img = HuImage::new(1, 1, vec![0]).unwrap();
        assert!(matches!(window_hu(&img, -30, -200), Err(Error::InvalidWindow { .. })));
        assert!(matches!(window_hu(&img, 5, 5), Err(Error::InvalidWindow { .. })));
    }

    #[test]
    fn palette_examples() {
        let p = Palette::CANONICAL;
        assert_eq!(p.nearest([255, 0, 0]), Label::Epicardial);
        assert_eq!(p.nearest([0, 0, 0]), Label::Background);
        assert_eq!(p.nearest([130, 10, 10]), Label::Epicardial);
        // equidistant from red and green: mediastinal precedes epicardial
        assert_eq!(p.nearest([200, 200, 0]), Label::Mediastinal);
        // equidistant from red, green and blue: pericardium precedes the others
        assert_eq!(p.nearest([128, 128, 128]), Label::Pericardium);
    }

    #[test]
    fn nearest_agrees_with_brute_force_on_example() {
        let c = [130i32, 10, 10];
        let d: Vec<i32> = Label::ALL
            .iter()
            .map(|&l| {
                let p = Palette::CANONICAL.color(l);
                (0..3).map(|i| (c[i] - i32::from(p[i])).pow(2)).sum()
            })
            .collect();
        assert_eq!(d[1], 15825);
        assert!(d.iter().enumerate().all(|(i, &x)| i == 1 || x > d[1]));
    }

    #[test]
    fn single_epicardial_pixel_encodes_red() {
        let m = LabelMap::new(1, 1, vec![Label::Epicardial]).unwrap();
        assert_eq!(encode_labels(&m, &Palette::CANONICAL).pixels(), &[[255, 0, 0]]);
        let bg = LabelMap::filled(3, 2, Label::Background).unwrap();
        assert!(encode_labels(&bg, &Palette::CANONICAL).pixels().iter().all(|p| *p == [0, 0, 0]));
    }

    #[test]
    fn duplicate_palette_colors_are_rejected() {
        assert!(Palette::new([0, 0, 0], [1, 1, 1], [1, 1, 1], [2, 2, 2]).is_err());
    }

    #[test]
    fn resize_two_pixels_to_four_matches_oracle() {
        let img = WindowedImage::from_intensities(2, 1, vec![0, 255]).unwrap();
        let out = resize_bilinear(&img, 4, 1).unwrap();
        // hand evaluation at the sample centers x = -0.25, 0.25, 0.75, 1.25
        let src = [0.0f64, 255.0];
        let expected: Vec<u8> = (0..4)
            .map(|i| {
                let s = (i as f64 + 0.5) / 2.0 - 0.5;
                let s = s.max(0.0).min(1.0);
                let v = src[0] * (1.0 - s) + src[1] * s;
                (v + 0.5).floor() as u8
            })
            .collect();
        assert_eq!(expected, vec![0, 64, 191, 255]);
        assert_eq!(out.intensities(), expected.as_slice());
    }

    #[test]
    fn resize_rejects_zero_size() {
        let img = WindowedImage::from_intensities(2, 2, vec![1; 4]).unwrap();
        assert!(matches!(resize_bilinear(&img, 0, 3), Err(Error::InvalidSize { .. })));
    }

    fn arb_rgb_mask() -> impl Strategy<Value = ColorMask> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<[u8; 3]>(), w * h).prop_map(move |px| ColorMask::new(w, h, px).unwrap())
        })
    }

    fn arb_labels() -> impl Strategy<Value = LabelMap> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(proptest::sample::select(Label::ALL.to_vec()), w * h)
                .prop_map(move |l| LabelMap::new(w, h, l).unwrap())
        })
    }

    proptest! {
        #[test]
        fn huim_roundtrip(w in 1u32..9, h in 1u32..9, seed in any::<u64>()) {
            let n = (w * h) as usize;
            let values: Vec<i16> = (0..n).map(|i| (seed.wrapping_mul(i as u64 + 7) >> 17) as i16).collect();
            let img = HuImage::new(w as usize, h as usize, values).unwrap();
            let bytes = write_hu_raw(&img);
            prop_assert_eq!(read_hu_raw(&bytes).unwrap(), img);
            prop_assert_eq!(write_hu_raw(&read_hu_raw(&bytes).unwrap()), bytes);
        }

        #[test]
        fn label_roundtrip(m in arb_labels()) {
            let p = Palette::CANONICAL;
            prop_assert_eq!(decode_colors(&encode_labels(&m, &p), &p), m);
        }

        #[test]
        fn decode_is_idempotent_through_encode(m in arb_rgb_mask()) {
            let p = Palette::CANONICAL;
            let once = decode_colors(&m, &p);
            prop_assert_eq!(decode_colors(&encode_labels(&once, &p), &p), once);
        }

        #[test]
        fn resize_preserves_range(m in arb_rgb_mask(), ow in 1usize..20, oh in 1usize..20) {
            let out = resize_bilinear(&m, ow, oh).unwrap();
            prop_assert_eq!((out.width(), out.height()), (ow, oh));
            for c in 0..3 {
                let lo = m.pixels().iter().map(|p| p[c]).min().unwrap();
                let hi = m.pixels().iter().map(|p| p[c]).max().unwrap();
                prop_assert!(out.pixels().iter().all(|p| p[c] >= lo && p[c] <= hi));
            }
        }

        #[test]
        fn resize_identity_and_constants(m in arb_rgb_mask(), v in any::<u8>(), ow in 1usize..20) {
            prop_assert_eq!(resize_bilinear(&m, m.width(), m.height()).unwrap(), m.clone());
            let flat = WindowedImage::from_intensities(m.width(), m.height(), vec![v; m.width() * m.height()]).unwrap();
            let out = resize_bilinear(&flat, ow, 3).unwrap();
            prop_assert!(out.intensities().iter().all(|&x| x == v));
        }
    }
}
