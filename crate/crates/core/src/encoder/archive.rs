//! Weight archive: an 8-byte little-endian manifest length, a UTF-8 JSON
//! manifest, then the raw little-endian `f32` payload.
//!
//! ```text
//! [u64 LE: manifest bytes][manifest JSON][payload]
//! manifest = {"config": ModelConfig,
//!             "tensors": {name: {"dtype": "f32", "shape": [..],
//!                                "offset": bytes, "length": bytes}}}
//! ```
//!
//! Offsets are relative to the start of the payload. Decoding validates the
//! whole file before building anything, so a failed load never yields a
//! partially populated model.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelConfig, ModelError, Parameters, Params, Tensor};

const DTYPE_F32: &str = "f32";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("archive truncated: need {needed} bytes, have {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("invalid config in archive: {0}")]
    Config(#[from] ModelError),
    #[error("tensor {tensor}: manifest declares shape {declared:?} but config implies {expected:?}")]
    ShapeMismatch {
        tensor: String,
        declared: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("tensor {tensor}: declared length {declared} bytes, shape implies {expected}")]
    LengthMismatch {
        tensor: String,
        declared: u64,
        expected: u64,
    },
    #[error("tensor {tensor}: unsupported dtype `{dtype}`")]
    Dtype { tensor: String, dtype: String },
    #[error("tensor {0} missing from archive")]
    MissingTensor(String),
    #[error("unexpected tensor {0} in archive")]
    UnexpectedTensor(String),
    #[error("tensors {0} and {1} overlap in the payload")]
    Overlap(String, String),
    #[error("payload has {0} trailing bytes")]
    TrailingBytes(u64),
    #[error("tensor {0} holds non-finite values")]
    NonFinite(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: ModelConfig,
    tensors: BTreeMap<String, TensorEntry>,
}

/// Serializes parameters; rejects non-finite tensors.
pub fn encode_archive(params: &Parameters, config: &ModelConfig) -> Result<Vec<u8>, ArchiveError> {
    config.validate()?;
    params.check(config)?;
    let mut tensors = BTreeMap::new();
    let mut offset = 0u64;
    for (name, t) in params.named() {
        if !t.is_finite() {
            return Err(ArchiveError::NonFinite(name));
        }
        let length = (t.len() * 4) as u64;
        tensors.insert(
            name,
            TensorEntry {
                dtype: DTYPE_F32.to_owned(),
                shape: t.shape().to_vec(),
                offset,
                length,
            },
        );
        offset += length;
    }
    let manifest = serde_json::to_vec(&Manifest {
        config: *config,
        tensors,
    })
    .map_err(|e| ArchiveError::Manifest(e.to_string()))?;

    let mut out = Vec::with_capacity(8 + manifest.len() + offset as usize);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_archive(bytes: &[u8]) -> Result<(Parameters, ModelConfig), ArchiveError> {
    let available = bytes.len() as u64;
    if available < 8 {
        return Err(ArchiveError::Truncated { needed: 8, available });
    }
    let manifest_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
    let header_end = 8u64.saturating_add(manifest_len);
    if header_end > available {
        return Err(ArchiveError::Truncated {
            needed: header_end,
            available,
        });
    }
    let manifest_bytes = &bytes[8..header_end as usize];
    let manifest: Manifest =
        serde_json::from_slice(manifest_bytes).map_err(|e| ArchiveError::Manifest(e.to_string()))?;
    let config = manifest.config;
    config.validate()?;
    let payload = &bytes[header_end as usize..];
    let payload_len = payload.len() as u64;

    let expected = config.parameter_shapes();
    if let Some(extra) = manifest.tensors.keys().find(|k| !expected.iter().any(|(n, _)| n == *k)) {
        return Err(ArchiveError::UnexpectedTensor(extra.clone()));
    }

    let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let entry = manifest
            .tensors
            .get(name)
            .ok_or_else(|| ArchiveError::MissingTensor(name.clone()))?;
        if entry.dtype != DTYPE_F32 {
            return Err(ArchiveError::Dtype {
                tensor: name.clone(),
                dtype: entry.dtype.clone(),
            });
        }
        if &entry.shape != shape {
            return Err(ArchiveError::ShapeMismatch {
                tensor: name.clone(),
                declared: entry.shape.clone(),
                expected: shape.clone(),
            });
        }
        let want = shape.iter().product::<usize>() as u64 * 4;
        if entry.length != want {
            return Err(ArchiveError::LengthMismatch {
                tensor: name.clone(),
                declared: entry.length,
                expected: want,
            });
        }
        let end = entry.offset.saturating_add(entry.length);
        if end > payload_len {
            return Err(ArchiveError::Truncated {
                needed: header_end.saturating_add(end),
                available,
            });
        }
        spans.push((entry.offset, end, name));
    }
    spans.sort_unstable();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(ArchiveError::Overlap(pair[0].2.to_owned(), pair[1].2.to_owned()));
        }
    }
    let used_end = spans.last().map_or(0, |s| s.1);
    if used_end < payload_len {
        return Err(ArchiveError::TrailingBytes(payload_len - used_end));
    }

    let mut tensors = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let entry = &manifest.tensors[name];
        let raw = &payload[entry.offset as usize..(entry.offset + entry.length) as usize];
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ArchiveError::NonFinite(name.clone()));
        }
        tensors.push(Tensor::from_vec(shape, data));
    }
    let params = Params::from_ordered(&config, tensors)?;
    Ok((params, config))
}

/// Writes the archive atomically (temporary file, then rename).
pub fn save_weights(params: &Parameters, config: &ModelConfig, path: impl AsRef<Path>) -> Result<(), ArchiveError> {
    let path = path.as_ref();
    let bytes = encode_archive(params, config)?;
    let io_err = |source| ArchiveError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(io_err)?;
    f.write_all(&bytes).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(Parameters, ModelConfig), ArchiveError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ArchiveError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_archive(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (Parameters, ModelConfig) {
        let cfg = ModelConfig {
            num_layers: 1,
            hidden_dim: 8,
            num_heads: 2,
            ff_dim: 16,
            vocab_size: 12,
            max_positions: 6,
            dropout_rate: 0.1,
            pooling: Default::default(),
            num_classes: 2,
        };
        (Params::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3)), cfg)
    }

    fn with_manifest(bytes: &[u8], edit: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let mut m: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        edit(&mut m);
        let mj = serde_json::to_vec(&m).unwrap();
        let mut out = (mj.len() as u64).to_le_bytes().to_vec();
        out.extend_from_slice(&mj);
        out.extend_from_slice(&bytes[8 + len..]);
        out
    }

    #[test]
    fn layout_is_length_prefixed_json_then_payload() {
        let (p, cfg) = small();
        let bytes = encode_archive(&p, &cfg).unwrap();
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let m: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        assert_eq!(m["config"]["hidden_dim"], 8);
        assert_eq!(m["tensors"]["embeddings.token"]["dtype"], "f32");
        assert_eq!(m["tensors"]["embeddings.token"]["offset"], 0);
        assert_eq!(m["tensors"]["embeddings.token"]["length"], 12 * 8 * 4);
        assert_eq!(bytes.len() - 8 - len, cfg.parameter_count() * 4);
        let first = f32::from_le_bytes(bytes[8 + len..12 + len].try_into().unwrap());
        assert_eq!(first.to_bits(), p.token_emb.data()[0].to_bits());
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let (p, cfg) = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_weights(&p, &cfg, &path).unwrap();
        let (q, cfg2) = load_weights(&path).unwrap();
        assert_eq!(cfg, cfg2);
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn truncation_is_rejected() {
        let (p, cfg) = small();
        let bytes = encode_archive(&p, &cfg).unwrap();
        for cut in [0, 4, 8, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = decode_archive(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, ArchiveError::Truncated { .. } | ArchiveError::Manifest(_)),
                "cut {cut}: {err}"
            );
        }
    }

    #[test]
    fn shape_mismatch_names_the_tensor() {
        let (p, cfg) = small();
        let bytes = encode_archive(&p, &cfg).unwrap();
        let bad = with_manifest(&bytes, |m| {
            m["tensors"]["layers.0.attention.query.weight"]["shape"] = serde_json::json!([8, 16]);
        });
        let err = decode_archive(&bad).unwrap_err();
        assert!(
            matches!(err, ArchiveError::ShapeMismatch { ref tensor, .. } if tensor == "layers.0.attention.query.weight")
        );
        assert!(err.to_string().contains("layers.0.attention.query.weight"));
    }

    #[test]
    fn manifest_payload_disagreements_are_rejected() {
        let (p, cfg) = small();
        let bytes = encode_archive(&p, &cfg).unwrap();
        let bad = with_manifest(&bytes, |m| {
            m["tensors"]["classifier.bias"]["length"] = serde_json::json!(4);
        });
        assert!(matches!(decode_archive(&bad), Err(ArchiveError::LengthMismatch { .. })));
        let bad = with_manifest(&bytes, |m| {
            m["tensors"]["classifier.bias"]["offset"] = serde_json::json!(0);
        });
        assert!(matches!(decode_archive(&bad), Err(ArchiveError::Overlap(..))));
        let bad = with_manifest(&bytes, |m| {
            m["tensors"]["classifier.bias"]["dtype"] = serde_json::json!("f16");
        });
        assert!(matches!(decode_archive(&bad), Err(ArchiveError::Dtype { .. })));
        let bad = with_manifest(&bytes, |m| {
            m["tensors"].as_object_mut().unwrap().remove("classifier.bias");
        });
        assert!(matches!(decode_archive(&bad), Err(ArchiveError::MissingTensor(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_archive(&extra), Err(ArchiveError::TrailingBytes(1))));
    }

    #[test]
    fn non_finite_weights_cannot_be_saved() {
        let (mut p, cfg) = small();
        p.classifier_b.data_mut()[0] = f32::NAN;
        assert!(matches!(encode_archive(&p, &cfg), Err(ArchiveError::NonFinite(_))));
    }
}
