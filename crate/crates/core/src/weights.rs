//! Model weights and their binary container.
//!
//! Container layout: an 8-byte little-endian header length `N`, then `N` bytes
//! of JSON mapping tensor name -> `{dtype, shape, offset, length}` (offsets
//! relative to the payload that follows), then the raw little-endian tensor
//! data. Supported dtypes are `f32` and `f16`; f16 loads widen exactly to f32.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub attn_q: Tensor,
    pub attn_k: Tensor,
    pub attn_v: Tensor,
    pub attn_o: Tensor,
    pub ffn_up: Tensor,
    pub ffn_down: Tensor,
    pub norm_attn: Tensor,
    pub norm_ffn: Tensor,
}

#[derive(Debug, Clone)]
pub struct Weights {
    pub embed: Tensor,
    pub pos: Tensor,
    pub layers: Vec<LayerWeights>,
    pub norm_final: Tensor,
    pub lm_head: Tensor,
}

impl Weights {
    /// Check every matrix against the dimensions implied by `cfg`.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let hidden = cfg.hidden();
        let kv_dim = cfg.kv_heads * cfg.head_dim;
        let checks = self.named_tensors();
        for (name, tensor, _) in &checks {
            let want: Vec<usize> = match name.as_str() {
                "embed" => vec![cfg.vocab_size, hidden],
                "pos" => vec![cfg.max_positions, hidden],
                "lm_head" => vec![hidden, cfg.vocab_size],
                "norm.final" => vec![hidden],
                n if n.ends_with(".attn.q") => vec![hidden, hidden],
                n if n.ends_with(".attn.k") || n.ends_with(".attn.v") => vec![hidden, kv_dim],
                n if n.ends_with(".attn.o") => vec![hidden, hidden],
                n if n.ends_with(".ffn.up") => vec![hidden, cfg.ffn_dim],
                n if n.ends_with(".ffn.down") => vec![cfg.ffn_dim, hidden],
                n if n.ends_with(".norm.attn") || n.ends_with(".norm.ffn") => vec![hidden],
                other => {
                    return Err(Error::InvalidConfig(format!("unknown tensor slot {other}")))
                }
            };
            if tensor.shape() != want.as_slice() {
                return Err(Error::Dimension(format!(
                    "tensor {name}: expected shape {want:?}, got {:?}",
                    tensor.shape()
                )));
            }
        }
        if self.layers.len() != cfg.layers {
            return Err(Error::Dimension(format!(
                "expected {} layers, got {}",
                cfg.layers,
                self.layers.len()
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> u64 {
        self.named_tensors()
            .iter()
            .map(|(_, t, _)| t.numel() as u64)
            .sum()
    }

    /// Canonical `(name, tensor, is_linear)` listing in container order.
    fn named_tensors(&self) -> Vec<(String, &Tensor, bool)> {
        let mut out: Vec<(String, &Tensor, bool)> = vec![
            ("embed".to_string(), &self.embed, false),
            ("pos".to_string(), &self.pos, false),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.attn.q"), &l.attn_q, true));
            out.push((format!("layers.{i}.attn.k"), &l.attn_k, true));
            out.push((format!("layers.{i}.attn.v"), &l.attn_v, true));
            out.push((format!("layers.{i}.attn.o"), &l.attn_o, true));
            out.push((format!("layers.{i}.ffn.up"), &l.ffn_up, true));
            out.push((format!("layers.{i}.ffn.down"), &l.ffn_down, true));
            out.push((format!("layers.{i}.norm.attn"), &l.norm_attn, false));
            out.push((format!("layers.{i}.norm.ffn"), &l.norm_ffn, false));
        }
        out.push(("norm.final".to_string(), &self.norm_final, false));
        out.push(("lm_head".to_string(), &self.lm_head, true));
        out
    }

    /// Mutable references to every linear-layer matrix, keyed by canonical name.
    pub fn linear_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layers.{i}.attn.q"), &mut l.attn_q));
            out.push((format!("layers.{i}.attn.k"), &mut l.attn_k));
            out.push((format!("layers.{i}.attn.v"), &mut l.attn_v));
            out.push((format!("layers.{i}.attn.o"), &mut l.attn_o));
            out.push((format!("layers.{i}.ffn.up"), &mut l.ffn_up));
            out.push((format!("layers.{i}.ffn.down"), &mut l.ffn_down));
        }
        out.push(("lm_head".to_string(), &mut self.lm_head));
        out
    }

    /// Canonical names of the linear layers, in order.
    pub fn linear_names(cfg: &ModelConfig) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..cfg.layers {
            for slot in ["attn.q", "attn.k", "attn.v", "attn.o", "ffn.up", "ffn.down"] {
                out.push(format!("layers.{i}.{slot}"));
            }
        }
        out.push("lm_head".to_string());
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

/// Serialize weights to the binary container at `path` (all tensors as f32).
pub fn save_weights(path: &Path, weights: &Weights) -> Result<()> {
    let tensors = weights.named_tensors();
    let mut header = BTreeMap::new();
    let mut offset = 0u64;
    for (name, t, _) in &tensors {
        let length = (t.numel() * 4) as u64;
        header.insert(
            name.clone(),
            HeaderEntry {
                dtype: "f32".to_string(),
                shape: t.shape().to_vec(),
                offset,
                length,
            },
        );
        offset += length;
    }
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Container(e.to_string()))?;
    let mut file = File::create(path)?;
    file.write_all(&(header_json.len() as u64).to_le_bytes())?;
    file.write_all(&header_json)?;
    for (_, t, _) in &tensors {
        for v in t.data() {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn decode_tensor(entry: &HeaderEntry, payload: &[u8], name: &str) -> Result<Tensor> {
    let start = entry.offset as usize;
    let end = start + entry.length as usize;
    if end > payload.len() {
        return Err(Error::Container(format!(
            "tensor {name} extends past payload end ({end} > {})",
            payload.len()
        )));
    }
    let bytes = &payload[start..end];
    let numel: usize = entry.shape.iter().product();
    let data: Vec<f32> = match entry.dtype.as_str() {
        "f32" => {
            if bytes.len() != numel * 4 {
                return Err(Error::Container(format!(
                    "tensor {name}: {} bytes for {numel} f32 elements",
                    bytes.len()
                )));
            }
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        }
        "f16" => {
            if bytes.len() != numel * 2 {
                return Err(Error::Container(format!(
                    "tensor {name}: {} bytes for {numel} f16 elements",
                    bytes.len()
                )));
            }
            bytes
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
                .collect()
        }
        other => {
            return Err(Error::Container(format!(
                "tensor {name}: unsupported dtype {other} (expected f32 or f16)"
            )))
        }
    };
    Tensor::new(entry.shape.clone(), data)
}

/// Load weights for `cfg` from the container at `path`.
///
/// Missing or extra tensor names are reported together; shape mismatches name
/// the offending tensor with expected and actual shapes.
pub fn load_weights(path: &Path, cfg: &ModelConfig) -> Result<Weights> {
    let mut file = File::open(path)?;
    let file_len = file.metadata()?.len();
    let mut len_buf = [0u8; 8];
    file.read_exact(&mut len_buf)
        .map_err(|_| Error::Container("file too short for header length".to_string()))?;
    let header_len = u64::from_le_bytes(len_buf);
    if header_len.saturating_add(8) > file_len {
        return Err(Error::Container(format!(
            "header length {header_len} exceeds file size {file_len}"
        )));
    }
    let mut header_buf = vec![0u8; header_len as usize];
    file.read_exact(&mut header_buf)
        .map_err(|_| Error::Container("file too short for header".to_string()))?;
    let header: BTreeMap<String, HeaderEntry> = serde_json::from_slice(&header_buf)
        .map_err(|e| Error::Container(format!("malformed header: {e}")))?;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;

    let mut expected: Vec<String> = vec!["embed".into(), "pos".into()];
    for i in 0..cfg.layers {
        for slot in [
            "attn.q", "attn.k", "attn.v", "attn.o", "ffn.up", "ffn.down", "norm.attn", "norm.ffn",
        ] {
            expected.push(format!("layers.{i}.{slot}"));
        }
    }
    expected.push("norm.final".into());
    expected.push("lm_head".into());

    let missing: Vec<&String> = expected.iter().filter(|n| !header.contains_key(*n)).collect();
    let extra: Vec<&String> = header.keys().filter(|n| !expected.contains(n)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Container(format!(
            "tensor name mismatch: missing {missing:?}, extra {extra:?}"
        )));
    }

    let get = |name: &str| -> Result<Tensor> { decode_tensor(&header[name], &payload, name) };
    let mut layers = Vec::with_capacity(cfg.layers);
    for i in 0..cfg.layers {
        layers.push(LayerWeights {
            attn_q: get(&format!("layers.{i}.attn.q"))?,
            attn_k: get(&format!("layers.{i}.attn.k"))?,
            attn_v: get(&format!("layers.{i}.attn.v"))?,
            attn_o: get(&format!("layers.{i}.attn.o"))?,
            ffn_up: get(&format!("layers.{i}.ffn.up"))?,
            ffn_down: get(&format!("layers.{i}.ffn.down"))?,
            norm_attn: get(&format!("layers.{i}.norm.attn"))?,
            norm_ffn: get(&format!("layers.{i}.norm.ffn"))?,
        });
    }
    let weights = Weights {
        embed: get("embed")?,
        pos: get("pos")?,
        layers,
        norm_final: get("norm.final")?,
        lm_head: get("lm_head")?,
    };
    weights.validate(cfg)?;
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_model;

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let (cfg, weights) = random_model(0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_weights(&path, &weights).unwrap();
        let loaded = load_weights(&path, &cfg).unwrap();
        assert_eq!(weights.embed.data(), loaded.embed.data());
        assert_eq!(weights.lm_head.data(), loaded.lm_head.data());
        for (a, b) in weights.layers.iter().zip(&loaded.layers) {
            assert_eq!(a.attn_q.data(), b.attn_q.data());
            assert_eq!(a.ffn_down.data(), b.ffn_down.data());
            assert_eq!(a.norm_attn.data(), b.norm_attn.data());
        }
    }

    #[test]
    fn wrong_shape_error_names_the_tensor() {
        let (cfg, weights) = random_model(0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_weights(&path, &weights).unwrap();
        let mut bad_cfg = cfg.clone();
        bad_cfg.ffn_dim += 1;
        let err = load_weights(&path, &bad_cfg).unwrap_err().to_string();
        assert!(err.contains("ffn.up"), "unexpected error: {err}");
        assert!(err.contains("expected shape"), "unexpected error: {err}");
    }

    #[test]
    fn missing_and_extra_names_are_listed() {
        let (cfg, weights) = random_model(0);
        let mut two_layer_cfg = cfg.clone();
        two_layer_cfg.layers = 3;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_weights(&path, &weights).unwrap();
        let err = load_weights(&path, &two_layer_cfg).unwrap_err().to_string();
        assert!(err.contains("missing"), "unexpected error: {err}");
        assert!(err.contains("layers.2"), "unexpected error: {err}");
    }

    #[test]
    fn f16_payload_widens_exactly() {
        let (cfg, weights) = random_model(0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_weights(&path, &weights).unwrap();

        // Rewrite the container with the embedding stored as f16.
        let bytes = std::fs::read(&path).unwrap();
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let mut header: BTreeMap<String, HeaderEntry> =
            serde_json::from_slice(&bytes[8..8 + header_len]).unwrap();
        let payload = &bytes[8 + header_len..];

        let embed_f32: Vec<f32> = weights.embed.data().to_vec();
        let embed_f16: Vec<u8> = embed_f32
            .iter()
            .flat_map(|v| f16::from_f32(*v).to_le_bytes())
            .collect();

        // Rebuild payload: f16 embed first, then everything else repacked.
        let mut new_payload = embed_f16.clone();
        let mut moved: Vec<(String, Vec<u8>)> = Vec::new();
        for (name, entry) in header.iter() {
            if name != "embed" {
                let start = entry.offset as usize;
                let end = start + entry.length as usize;
                moved.push((name.clone(), payload[start..end].to_vec()));
            }
        }
        header.get_mut("embed").unwrap().dtype = "f16".to_string();
        header.get_mut("embed").unwrap().offset = 0;
        header.get_mut("embed").unwrap().length = embed_f16.len() as u64;
        for (name, data) in &moved {
            let e = header.get_mut(name).unwrap();
            e.offset = new_payload.len() as u64;
            e.length = data.len() as u64;
            new_payload.extend_from_slice(data);
        }
        let header_json = serde_json::to_vec(&header).unwrap();
        let mut out = (header_json.len() as u64).to_le_bytes().to_vec();
        out.extend_from_slice(&header_json);
        out.extend_from_slice(&new_payload);
        std::fs::write(&path, out).unwrap();

        let loaded = load_weights(&path, &cfg).unwrap();
        for (orig, got) in embed_f32.iter().zip(loaded.embed.data()) {
            assert_eq!(f16::from_f32(*orig).to_f32(), *got);
        }
    }

    #[test]
    fn malformed_header_is_container_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, [9u8, 0, 0, 0, 0, 0, 0, 0, b'n', b'o', b'p', b'e']).unwrap();
        let (cfg, _) = random_model(0);
        assert!(matches!(
            load_weights(&path, &cfg),
            Err(Error::Container(_))
        ));
    }
}
