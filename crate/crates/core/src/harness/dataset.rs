//! Raw and prepared dataset layouts and the per-variant sample recipes.
//!
//! Raw layout: `hu/{id}.huim` slices and `masks/{id}.png` color targets.
//! Prepared layout: `manifest.json`, windowed `images/{id}.png`, native
//! `truth/{id}.png`, training composites under `pairs/`, and copies of the
//! held-out inputs under `test/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::phantom::PhantomSlice;
pub use crate::datasetprep::Variant;
use crate::datasetprep::{binarize_class, compose_pair, split_patches, PairedSample, SplitSpec};
use crate::error::{Error, Result};
use crate::imaging::{
    decode_colors, encode_labels, load_gray_png, load_hu, load_rgb_png, resize_bilinear, save_gray_png, save_rgb_png,
    window_hu, ColorMask, Label, LabelMap, Palette, Raster, WindowedImage, FAT_WINDOW_HI, FAT_WINDOW_LO,
};

/// Windowed slices and their color targets at native resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub images: Vec<WindowedImage>,
    pub truth: Vec<ColorMask>,
}

impl Dataset {
    pub fn from_phantom(slices: &[PhantomSlice]) -> Result<Self> {
        Self::from_hu(slices.iter().map(|s| (s.id.clone(), &s.hu, encode_labels(&s.labels, &Palette::CANONICAL))), (FAT_WINDOW_LO, FAT_WINDOW_HI))
    }

    fn from_hu<'a>(
        items: impl Iterator<Item = (String, &'a crate::imaging::HuImage, ColorMask)>,
        window: (i32, i32),
    ) -> Result<Self> {
        let mut d = Dataset { ids: vec![], images: vec![], truth: vec![] };
        for (id, hu, mask) in items {
            d.push(id, window_hu(hu, window.0, window.1)?, mask)?;
        }
        Ok(d)
    }

    fn push(&mut self, id: String, image: WindowedImage, truth: ColorMask) -> Result<()> {
        if (image.width(), image.height()) != (truth.width(), truth.height()) {
            return Err(Error::DimensionMismatch(format!("{id}: slice and mask differ in size")));
        }
        if let Some(first) = self.images.first() {
            if (first.width(), first.height()) != (image.width(), image.height()) {
                return Err(Error::DimensionMismatch(format!("{id}: slices differ in size")));
            }
        }
        self.ids.push(id);
        self.images.push(image);
        self.truth.push(truth);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.ids.iter().position(|i| i == id).ok_or_else(|| Error::DatasetMissing(PathBuf::from(id)))
    }

    /// Side of the (square) native slices.
    pub fn native_size(&self) -> Result<usize> {
        let first = self.images.first().ok_or(Error::EmptyDataset)?;
        if first.width() != first.height() {
            return Err(Error::ConfigInvalid(format!("slices are {}x{}, expected square", first.width(), first.height())));
        }
        Ok(first.width())
    }
}

fn sorted_stems(dir: &Path, ext: &str) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(Error::DatasetMissing(dir.to_path_buf()));
    }
    let mut ids: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    ids.sort();
    Ok(ids)
}

/// Loads a raw dataset directory and windows every slice.
pub fn load_raw(dir: &Path, window: (i32, i32)) -> Result<Dataset> {
    let ids = sorted_stems(&dir.join("hu"), "huim")?;
    if ids.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut d = Dataset { ids: vec![], images: vec![], truth: vec![] };
    for id in ids {
        let hu = load_hu(&dir.join("hu").join(format!("{id}.huim")))?;
        let mask_path = dir.join("masks").join(format!("{id}.png"));
        if !mask_path.is_file() {
            return Err(Error::DatasetMissing(mask_path));
        }
        let mask = load_rgb_png(&mask_path)?;
        d.push(id, window_hu(&hu, window.0, window.1)?, mask)?;
    }
    Ok(d)
}

fn resize_square<R>(img: &R, side: usize) -> Result<R>
where
    R: Raster,
    R::Pixel: crate::imaging::Channels,
{
    if img.width() == side && img.height() == side {
        Ok(img.with_pixels(side, side, img.pixels().to_vec()))
    } else {
        resize_bilinear(img, side, side)
    }
}

/// Target recolored for the variant: E2 keeps epicardial fat only.
pub fn variant_target(variant: Variant, mask: &ColorMask) -> ColorMask {
    let labels = decode_colors(mask, &Palette::CANONICAL);
    let labels = match variant {
        Variant::E2 => {
            let bits = binarize_class(&labels, Label::Epicardial);
            let ls = bits.bits().iter().map(|&b| if b { Label::Epicardial } else { Label::Background }).collect();
            LabelMap::new(labels.width(), labels.height(), ls).expect("same dims")
        }
        _ => labels,
    };
    encode_labels(&labels, &Palette::CANONICAL)
}

/// Ground truth labels on the grid the variant is scored on.
pub fn eval_truth(variant: Variant, mask: &ColorMask, working: usize) -> Result<LabelMap> {
    let side = variant.eval_size(working, mask.width());
    let resized = resize_square(mask, side)?;
    Ok(decode_colors(&variant_target(variant, &resized), &Palette::CANONICAL))
}

/// Training composites for one slice: one pair for E1-E3, four for E4,
/// named `{id}` or `{id}_p{k}`.
pub fn slice_pairs(variant: Variant, id: &str, image: &WindowedImage, mask: &ColorMask, working: usize) -> Result<Vec<(String, PairedSample)>> {
    let native = image.width();
    match variant {
        Variant::E4 => {
            let target = variant_target(variant, mask);
            let ti = split_patches(&target)?;
            let ii = split_patches(image)?;
            ti.patches
                .iter()
                .zip(&ii.patches)
                .enumerate()
                .map(|(k, (t, i))| Ok((format!("{id}_p{k}"), compose_pair(t, i)?)))
                .collect()
        }
        _ => {
            let side = variant.network_size(working, native);
            let target = variant_target(variant, &resize_square(mask, side)?);
            Ok(vec![(id.to_string(), compose_pair(&target, &resize_square(image, side)?)?)])
        }
    }
}

/// All composites for the given slice ids, in id order.
pub fn pairs_for(variant: Variant, data: &Dataset, ids: &[String], working: usize) -> Result<Vec<PairedSample>> {
    let mut out = Vec::new();
    for id in ids {
        let i = data.index_of(id)?;
        out.extend(slice_pairs(variant, id, &data.images[i], &data.truth[i], working)?.into_iter().map(|(_, p)| p));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub variant: Variant,
    pub working_size: usize,
    pub native_size: usize,
    pub window: (i32, i32),
    pub split: SplitSpec,
}

/// Writes the prepared layout for `variant` and returns its manifest.
pub fn write_prepared(dir: &Path, data: &Dataset, manifest: &Manifest) -> Result<()> {
    for sub in ["images", "truth", "pairs", "test"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    for (i, id) in data.ids.iter().enumerate() {
        save_gray_png(&data.images[i], &dir.join("images").join(format!("{id}.png")))?;
        save_rgb_png(&data.truth[i], &dir.join("truth").join(format!("{id}.png")))?;
        for (pid, pair) in slice_pairs(manifest.variant, id, &data.images[i], &data.truth[i], manifest.working_size)? {
            save_rgb_png(pair.composite(), &dir.join("pairs").join(format!("{pid}.png")))?;
        }
    }
    for id in &manifest.split.test_ids {
        let i = data.index_of(id)?;
        save_gray_png(&data.images[i], &dir.join("test").join(format!("{id}.png")))?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    if !path.is_file() {
        return Err(Error::DatasetMissing(path));
    }
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Reloads the slices and targets of a prepared directory.
pub fn load_prepared(dir: &Path) -> Result<(Manifest, Dataset)> {
    let manifest = read_manifest(dir)?;
    let mut d = Dataset { ids: vec![], images: vec![], truth: vec![] };
    for id in sorted_stems(&dir.join("images"), "png")? {
        let image = load_gray_png(&dir.join("images").join(format!("{id}.png")))?;
        let image = WindowedImage::with_window(image.width(), image.height(), image.intensities().to_vec(), manifest.window.0, manifest.window.1)?;
        let truth = load_rgb_png(&dir.join("truth").join(format!("{id}.png")))?;
        d.push(id, image, truth)?;
    }
    Ok((manifest, d))
}

/// Reads the stored composites for `ids` (E4 expands to quadrant pairs).
pub fn load_pairs(dir: &Path, variant: Variant, ids: &[String]) -> Result<Vec<PairedSample>> {
    let mut out = Vec::new();
    for id in ids {
        let names: Vec<String> = match variant {
            Variant::E4 => (0..4).map(|k| format!("{id}_p{k}")).collect(),
            _ => vec![id.clone()],
        };
        for n in names {
            let path = dir.join("pairs").join(format!("{n}.png"));
            if !path.is_file() {
                return Err(Error::DatasetMissing(path));
            }
            out.push(PairedSample::from_composite(load_rgb_png(&path)?)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasetprep::{decompose_pair, make_split, reassemble_patches, PatchGrid};
    use crate::harness::phantom::{generate_phantom, PhantomConfig};

    fn data(n: usize) -> Dataset {
        let cfg = PhantomConfig { n_images: n, size: 32, ..PhantomConfig::default() };
        Dataset::from_phantom(&generate_phantom(&cfg).unwrap()).unwrap()
    }

    #[test]
    fn variant_sizes() {
        assert_eq!(Variant::E1.network_size(256, 512), 256);
        assert_eq!(Variant::E3.network_size(256, 512), 512);
        assert_eq!(Variant::E4.network_size(256, 512), 256);
        assert_eq!(Variant::E4.eval_size(256, 512), 512);
        assert_eq!(Variant::parse("e3"), Some(Variant::E3));
        assert_eq!(Variant::parse("E3"), None);
    }

    #[test]
    fn e4_pairs_reassemble_to_the_slice() {
        let d = data(1);
        let pairs = slice_pairs(Variant::E4, "x", &d.images[0], &d.truth[0], 16).unwrap();
        assert_eq!(pairs.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(), ["x_p0", "x_p1", "x_p2", "x_p3"]);
        let halves: Vec<_> = pairs.iter().map(|(_, p)| decompose_pair(p).unwrap()).collect();
        let target = reassemble_patches(&PatchGrid { patches: halves.iter().map(|h| h.0.clone()).collect() }).unwrap();
        assert_eq!(target, d.truth[0]);
    }

    #[test]
    fn e2_targets_hold_only_epicardial_fat() {
        let d = data(2);
        let t = eval_truth(Variant::E2, &d.truth[1], 16).unwrap();
        assert_eq!((t.width(), t.height()), (16, 16));
        assert_eq!(t.count(Label::Mediastinal) + t.count(Label::Pericardium), 0);
        assert!(t.count(Label::Epicardial) > 0);
    }

    #[test]
    fn prepared_layout_roundtrips() {
        let d = data(6);
        let split = make_split(&d.ids, (0.5, 0.25, 0.25), 1).unwrap();
        let manifest = Manifest { variant: Variant::E1, working_size: 16, native_size: 32, window: (-200, -30), split };
        let dir = tempfile::tempdir().unwrap();
        write_prepared(dir.path(), &d, &manifest).unwrap();
        let (m, back) = load_prepared(dir.path()).unwrap();
        assert_eq!(m, manifest);
        assert_eq!(back, d);
        let stored = load_pairs(dir.path(), Variant::E1, &m.split.train_ids).unwrap();
        assert_eq!(stored, pairs_for(Variant::E1, &d, &m.split.train_ids, 16).unwrap());
        assert_eq!(fs::read_dir(dir.path().join("test")).unwrap().count(), m.split.test_ids.len());
    }

    #[test]
    fn missing_directories_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_raw(dir.path(), (-200, -30)), Err(Error::DatasetMissing(_))));
        assert!(matches!(load_prepared(dir.path()), Err(Error::DatasetMissing(_))));
    }
}
