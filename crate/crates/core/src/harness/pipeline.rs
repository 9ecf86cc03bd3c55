//! Inference path from a windowed slice to decoded labels, per variant.

use std::time::Instant;

use crate::datasetprep::{reassemble_patches, split_patches, PatchGrid, Variant};
use crate::error::{Error, Result};
use crate::imaging::{decode_colors, encode_labels, resize_bilinear, ColorMask, Label, LabelMap, Palette, Raster, WindowedImage};
use crate::model::{segment, Checkpoint};
use crate::morphology::{close, overlay, BinaryMask, StructuringElement};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: LabelMap,
    /// Overlay of the binary mask on the slice (E2 only).
    pub overlay: Option<ColorMask>,
    pub seconds: f64,
}

impl Prediction {
    /// Labels in the canonical palette.
    pub fn mask(&self) -> ColorMask {
        encode_labels(&self.labels, &Palette::CANONICAL)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Pipeline<'a> {
    pub checkpoint: &'a Checkpoint,
    pub variant: Variant,
    pub postprocess: bool,
}

fn resized(img: &WindowedImage, side: usize) -> Result<WindowedImage> {
    if img.width() == side && img.height() == side {
        Ok(img.clone())
    } else {
        resize_bilinear(img, side, side)
    }
}

/// Binary label map: `cls` where the mask is set, background elsewhere.
pub fn mask_labels(m: &BinaryMask, cls: Label) -> LabelMap {
    let labels = m.bits().iter().map(|&b| if b { cls } else { Label::Background }).collect();
    LabelMap::new(m.width(), m.height(), labels).expect("same dims")
}

impl<'a> Pipeline<'a> {
    /// Uses the variant stored in the checkpoint (E1 when absent).
    pub fn new(checkpoint: &'a Checkpoint, postprocess: bool) -> Result<Self> {
        let variant = checkpoint.variant.unwrap_or(Variant::E1);
        if postprocess && variant != Variant::E2 {
            return Err(Error::ConfigInvalid(format!("post-processing applies to e2 only, checkpoint is {variant}")));
        }
        Ok(Self { checkpoint, variant, postprocess })
    }

    fn crop(&self) -> usize {
        self.checkpoint.config.crop_size
    }

    fn labels_of(&self, img: &WindowedImage) -> Result<LabelMap> {
        let out = segment(self.checkpoint, img)?.mask;
        Ok(decode_colors(&out, &Palette::CANONICAL))
    }

    /// Thresholded single-channel output of an E2 network and the slice it
    /// was computed on, both at network resolution.
    pub fn predict_binary(&self, img: &WindowedImage) -> Result<(BinaryMask, WindowedImage)> {
        let ct = resized(img, self.crop())?;
        let out = segment(self.checkpoint, &ct)?.mask;
        let bits = out.pixels().iter().map(|p| p[0] >= 128).collect();
        Ok((BinaryMask::new(ct.width(), ct.height(), bits)?, ct))
    }

    /// Optional closing, then recoloring onto the slice.
    pub fn finish_binary(&self, m: &BinaryMask, ct: &WindowedImage) -> Result<(LabelMap, ColorMask)> {
        let m = if self.postprocess { close(m, &StructuringElement::cross()) } else { m.clone() };
        let painted = overlay(ct, &m, Palette::CANONICAL.color(Label::Epicardial))?;
        Ok((mask_labels(&m, Label::Epicardial), painted))
    }

    /// Full timed path: resize, network, decode, and any post-processing.
    pub fn run(&self, img: &WindowedImage) -> Result<Prediction> {
        let start = Instant::now();
        let (labels, overlay) = match self.variant {
            Variant::E1 | Variant::E3 => (self.labels_of(&resized(img, self.crop())?)?, None),
            Variant::E2 => {
                let (m, ct) = self.predict_binary(img)?;
                let (labels, painted) = self.finish_binary(&m, &ct)?;
                (labels, Some(painted))
            }
            Variant::E4 => {
                let full = resized(img, 2 * self.crop())?;
                let patches = split_patches(&full)?
                    .patches
                    .iter()
                    .map(|p| self.labels_of(p))
                    .collect::<Result<Vec<_>>>()?;
                (reassemble_patches(&PatchGrid { patches })?, None)
            }
        };
        Ok(Prediction { labels, overlay, seconds: start.elapsed().as_secs_f64() })
    }
}
