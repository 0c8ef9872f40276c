//! Versioned binary checkpoints.
//!
//! Layout, byte-exact:
//!
//! ```text
//! "LTSCKPT1"                      8-byte magic
//! meta_len                        u32, little-endian
//! metadata                        meta_len bytes of UTF-8 key=value lines
//! arrays                          raw little-endian IEEE-754 f32 values
//! ```
//!
//! The metadata block carries the format version, every model configuration
//! field, the vocabulary in id order, and one manifest line per array
//! (`array=<name> shape=<dims> offset=<bytes>`) in canonical parameter
//! order. Values are stored in 32-bit precision; loading yields the
//! 32-bit-rounded parameters.

use std::fs;
use std::path::Path;

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LTSCKPT1";
const FORMAT_VERSION: u32 = 1;

/// Everything a checkpoint restores.
#[derive(Debug)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: ModelConfig,
    pub vocab: Vocab,
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    config: &ModelConfig,
    vocab: &Vocab,
) -> Result<()> {
    if vocab.size() != config.vocab_size {
        return Err(Error::Compatibility(format!(
            "vocabulary of {} tokens against config vocab_size {}",
            vocab.size(),
            config.vocab_size
        )));
    }
    let tensors = params.tensors();

    let mut meta = String::new();
    meta.push_str(&format!("version={FORMAT_VERSION}\n"));
    meta.push_str(&format!("first_word_mode={}\n", config.first_word_mode));
    meta.push_str(&format!("context_mode={}\n", config.context_mode));
    meta.push_str(&format!("readout={}\n", config.readout));
    meta.push_str(&format!("vocab_size={}\n", config.vocab_size));
    meta.push_str(&format!("embed_dim={}\n", config.embed_dim));
    meta.push_str(&format!("hidden_dim={}\n", config.hidden_dim));
    meta.push_str(&format!("vocab={}\n", vocab.tokens().join(" ")));
    let mut offset = 0usize;
    for (name, t) in &tensors {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        meta.push_str(&format!("array={name} shape={} offset={offset}\n", dims.join(",")));
        offset += t.len() * 4;
    }

    let mut bytes = Vec::with_capacity(8 + 4 + meta.len() + offset);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    bytes.extend_from_slice(meta.as_bytes());
    for (_, t) in &tensors {
        for v in t.values().iter() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(Error::Malformed("missing metadata length".to_string()));
    }
    let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let meta_end = 12 + meta_len;
    if bytes.len() < meta_end {
        return Err(Error::Malformed("metadata block truncated".to_string()));
    }
    let meta = std::str::from_utf8(&bytes[12..meta_end])
        .map_err(|_| Error::Malformed("metadata is not UTF-8".to_string()))?;

    let mut fields: Vec<(&str, &str)> = Vec::new();
    for line in meta.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Malformed(format!("metadata line without '=': {line:?}")))?;
        fields.push((key, value));
    }
    let lookup = |key: &str| -> Result<&str> {
        fields
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Malformed(format!("metadata key {key:?} missing")))
    };

    let version = lookup("version")?;
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::Version { found: version.to_string(), expected: FORMAT_VERSION });
    }
    let parse_count = |key: &str| -> Result<usize> {
        lookup(key)?
            .parse()
            .map_err(|_| Error::Malformed(format!("{key} is not a count")))
    };
    let config = ModelConfig {
        vocab_size: parse_count("vocab_size")?,
        embed_dim: parse_count("embed_dim")?,
        hidden_dim: parse_count("hidden_dim")?,
        first_word_mode: lookup("first_word_mode")?.parse()?,
        context_mode: lookup("context_mode")?.parse()?,
        readout: lookup("readout")?.parse()?,
    };
    config.validate().map_err(|e| Error::Malformed(e.to_string()))?;

    let tokens: Vec<String> = lookup("vocab")?.split(' ').map(str::to_string).collect();
    if tokens.len() != config.vocab_size {
        return Err(Error::Malformed(format!(
            "vocabulary lists {} tokens but vocab_size is {}",
            tokens.len(),
            config.vocab_size
        )));
    }
    let vocab = Vocab::from_full_list(tokens).map_err(|e| Error::Malformed(e.to_string()))?;

    // The manifest must match the census implied by the configuration.
    let params = ModelParams::zeros(&config)?;
    let tensors = params.tensors();
    let manifest: Vec<&str> = fields
        .iter()
        .filter(|(k, _)| *k == "array")
        .map(|(_, v)| *v)
        .collect();
    if manifest.len() != tensors.len() {
        return Err(Error::Malformed(format!(
            "manifest lists {} arrays, configuration implies {}",
            manifest.len(),
            tensors.len()
        )));
    }

    let data = &bytes[meta_end..];
    let mut expected_offset = 0usize;
    for (entry, (name, tensor)) in manifest.iter().zip(&tensors) {
        let mut parts = entry.split(' ');
        let entry_name = parts.next().unwrap_or_default();
        let shape_part = parts.next().unwrap_or_default();
        let offset_part = parts.next().unwrap_or_default();
        if parts.next().is_some() || entry_name != *name {
            return Err(Error::Malformed(format!(
                "manifest entry {entry:?} does not match expected array {name:?}"
            )));
        }
        let dims: Vec<usize> = shape_part
            .strip_prefix("shape=")
            .ok_or_else(|| Error::Malformed(format!("bad shape field in {entry:?}")))?
            .split(',')
            .map(|d| d.parse().map_err(|_| Error::Malformed(format!("bad shape in {entry:?}"))))
            .collect::<Result<_>>()?;
        if dims != tensor.shape() {
            return Err(Error::Malformed(format!(
                "array {name} has shape {dims:?}, expected {:?}",
                tensor.shape()
            )));
        }
        let offset: usize = offset_part
            .strip_prefix("offset=")
            .ok_or_else(|| Error::Malformed(format!("bad offset field in {entry:?}")))?
            .parse()
            .map_err(|_| Error::Malformed(format!("bad offset in {entry:?}")))?;
        if offset != expected_offset {
            return Err(Error::Malformed(format!(
                "array {name} at offset {offset}, expected {expected_offset}"
            )));
        }

        let byte_len = tensor.len() * 4;
        if offset + byte_len > data.len() {
            return Err(Error::Truncated { array: name.to_string() });
        }
        let values: Vec<f64> = data[offset..offset + byte_len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tensor.set_values(&values)?;
        expected_offset = offset + byte_len;
    }
    if expected_offset != data.len() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after the last array",
            data.len() - expected_offset
        )));
    }

    Ok(Checkpoint { params, config, vocab })
}
