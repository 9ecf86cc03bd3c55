//! Binary checkpoint format: `CFSG`, a version byte, a little-endian `u32`
//! header length, a JSON header, then every tensor as raw little-endian
//! `f32` in table order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::networks::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Parameterized};
use super::train::{Checkpoint, EpochRecord};
use crate::datasetprep::Variant;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CFSG";
pub const VERSION: u8 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    history: Vec<EpochRecord>,
    #[serde(default)]
    variant: Option<Variant>,
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    tensors: Vec<TensorEntry>,
}

fn named_tensors(c: &Checkpoint) -> Vec<(String, &super::tensor::Tensor<f32>)> {
    let mut all = c.generator.params();
    all.extend(c.discriminator.params());
    all
}

pub fn encode_checkpoint(c: &Checkpoint) -> Result<Vec<u8>> {
    let tensors = named_tensors(c);
    let mut offset = 0;
    let table = tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset };
            offset += t.len() * 4;
            e
        })
        .collect();
    let header = Header {
        config: c.config.clone(),
        epoch: c.epoch,
        history: c.history.clone(),
        variant: c.variant,
        generator: c.generator.config().clone(),
        discriminator: c.discriminator.config().clone(),
        tensors: table,
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::CorruptCheckpoint("header too large".into()))?;
    let mut out = Vec::with_capacity(9 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(corrupt(&format!("unsupported version {}", bytes[4])));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let json = bytes.get(9..9 + len).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(&format!("header: {e}")))?;
    let payload = &bytes[9 + len..];

    // Rebuild the architecture, then overwrite every tensor from the payload.
    header.generator.validate().map_err(|e| corrupt(&e.to_string()))?;
    header.discriminator.validate().map_err(|e| corrupt(&e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut generator = Generator::<f32>::init(header.generator, &mut rng)?;
    let mut discriminator = Discriminator::<f32>::init(header.discriminator, &mut rng)?;

    let names: Vec<(String, Vec<usize>)> = generator
        .params()
        .into_iter()
        .chain(discriminator.params())
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if names.len() != header.tensors.len() {
        return Err(corrupt("tensor table does not match the architecture"));
    }
    let mut expected_offset = 0;
    for ((name, shape), entry) in names.iter().zip(&header.tensors) {
        if *name != entry.name || *shape != entry.shape || entry.offset != expected_offset {
            return Err(corrupt(&format!("tensor table mismatch at {}", entry.name)));
        }
        expected_offset += shape.iter().product::<usize>() * 4;
    }
    if payload.len() != expected_offset {
        return Err(corrupt(&format!("payload is {} bytes, table needs {expected_offset}", payload.len())));
    }

    let mut slots = generator.params_mut();
    slots.extend(discriminator.params_mut());
    for (t, entry) in slots.into_iter().zip(&header.tensors) {
        let bytes = &payload[entry.offset..entry.offset + t.len() * 4];
        for (v, b) in t.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().unwrap());
        }
    }
    Ok(Checkpoint { generator, discriminator, config: header.config, epoch: header.epoch, history: header.history, variant: header.variant })
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(c)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
