use serde::{Deserialize, Serialize};

use super::networks::{DiscriminatorConfig, GeneratorConfig};
use crate::datasetprep::AugmentConfig;
use crate::error::{Error, Result};

/// Architecture scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 64x64 inputs, depth 4, 8 base channels: trains on a laptop CPU.
    Toy,
    /// 256x256 inputs, depth 8, 64 base channels.
    Paper,
}

impl Preset {
    pub fn image_size(self) -> usize {
        match self {
            Preset::Toy => 64,
            Preset::Paper => 256,
        }
    }

    pub fn generator(self, in_channels: usize, out_channels: usize) -> GeneratorConfig {
        let (depth, base_channels) = match self {
            Preset::Toy => (4, 8),
            Preset::Paper => (8, 64),
        };
        GeneratorConfig { depth, base_channels, in_channels, out_channels }
    }

    pub fn discriminator(self, in_channels: usize, out_channels: usize) -> DiscriminatorConfig {
        let base_channels = match self {
            Preset::Toy => 8,
            Preset::Paper => 64,
        };
        DiscriminatorConfig { layers: 3, base_channels, in_channels: in_channels + out_channels }
    }

    /// Load size for a given crop size: the paper preset keeps the
    /// 286/256 (and 572/512) ratio, the toy preset does not upscale.
    pub fn load_size_for(self, crop_size: usize) -> usize {
        match self {
            Preset::Toy => crop_size,
            Preset::Paper => crop_size + crop_size * 30 / 256,
        }
    }

    pub fn parse(s: &str) -> Option<Preset> {
        match s {
            "toy" => Some(Preset::Toy),
            "paper" => Some(Preset::Paper),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l1_weight: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub load_size: usize,
    pub crop_size: usize,
    pub flip_enabled: bool,
    pub flip_probability: f64,
    pub preset: Preset,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_preset(Preset::Toy)
    }
}

impl TrainConfig {
    pub fn for_preset(preset: Preset) -> Self {
        let crop = preset.image_size();
        Self {
            epochs: 30,
            batch_size: 1,
            learning_rate: 2e-4,
            l1_weight: 100.0,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            load_size: preset.load_size_for(crop),
            crop_size: crop,
            flip_enabled: true,
            flip_probability: 0.5,
            preset,
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            flip_enabled: self.flip_enabled,
            load_size: self.load_size,
            crop_size: self.crop_size,
            flip_probability: self.flip_probability,
        }
    }

    pub fn validate(&self, generator: &GeneratorConfig) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::ConfigInvalid("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.l1_weight >= 0.0) {
            return Err(Error::ConfigInvalid("learning rate must be positive and l1 weight nonnegative".into()));
        }
        if self.crop_size % generator.stride_product() != 0 {
            return Err(Error::ConfigInvalid(format!(
                "crop size {} is not divisible by 2^{}",
                self.crop_size, generator.depth
            )));
        }
        self.augment().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_load_sizes() {
        assert_eq!(Preset::Paper.load_size_for(256), 286);
        assert_eq!(Preset::Paper.load_size_for(512), 572);
        assert_eq!(Preset::Toy.load_size_for(64), 64);
    }

    #[test]
    fn defaults_validate() {
        for p in [Preset::Toy, Preset::Paper] {
            let cfg = TrainConfig::for_preset(p);
            cfg.validate(&p.generator(1, 3)).unwrap();
        }
        let mut cfg = TrainConfig::for_preset(Preset::Toy);
        cfg.crop_size = 60;
        cfg.load_size = 60;
        assert!(cfg.validate(&Preset::Toy.generator(1, 3)).is_err());
    }

    #[test]
    fn partial_json_falls_back_to_defaults() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "seed": 11}"#).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.l1_weight, 100.0);
    }
}
