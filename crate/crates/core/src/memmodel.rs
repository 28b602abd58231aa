//! Analytic total-memory accounting: model bytes + KV bytes + peak activation
//! bytes for any architecture and optimization configuration, independent of
//! simulation.
//!
//! Conventions chosen to reproduce published totals for the five reference
//! architectures shipped under `arch/`:
//! - KV bytes default to counting all attention heads (the reference tables
//!   are recoverable only under that accounting; a key-value-head mode exists
//!   for cross-checking the simulated cache, which stores `kv_heads`).
//! - Activation elements default to 2 bytes.
//! - Under chunked prefill the logit head materializes at most one chunk of
//!   rows; under flash attention at most one query block.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transformer architecture description, shipped as JSON data files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub name: String,
    pub param_count: u64,
    pub layers: usize,
    pub n_heads: usize,
    pub kv_heads: usize,
    pub head_dim: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub source: String,
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.param_count == 0
            || self.layers == 0
            || self.n_heads == 0
            || self.kv_heads == 0
            || self.head_dim == 0
            || self.vocab_size == 0
        {
            return Err(Error::InvalidConfig(format!(
                "architecture {} has a zero field",
                self.name
            )));
        }
        if !self.n_heads.is_multiple_of(self.kv_heads) {
            return Err(Error::InvalidConfig(format!(
                "architecture {}: kv_heads {} must divide n_heads {}",
                self.name, self.kv_heads, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: ArchSpec = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Attention execution regime for peak-memory purposes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AttentionKind {
    /// Full-prompt scaled-dot-product attention: scores are `n_heads * M * M`.
    Sdpa,
    /// Chunked prefill: scores cap at `n_heads * chunk * M`.
    ChunkedSdpa { chunk: usize },
    /// Flash kernel: a fixed working set of `bq^2 + 2*bkv^2 + workspace` elements.
    Flash { block_q: usize, block_kv: usize, workspace: u64 },
}

/// Which head count the KV formula uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KvHeadMode {
    /// All attention heads; matches the reference memory tables.
    AttentionHeads,
    /// Grouped key-value heads; matches what a GQA cache physically stores.
    KeyValueHeads,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemQuery {
    /// Context length M in tokens.
    pub context: usize,
    pub batch: usize,
    /// Effective bits per weight, group overhead already folded in if desired.
    pub weight_bits: f64,
    pub k_bits: u32,
    pub v_bits: u32,
    /// Group size used only for optional KV parameter overhead.
    pub group_size: usize,
    pub activation_bytes: u64,
    pub attention: AttentionKind,
    /// Charge stored scales and zero points against KV memory.
    pub count_group_overhead: bool,
    pub kv_head_mode: KvHeadMode,
}

impl MemQuery {
    /// Full-precision single-pass baseline at the given context length.
    pub fn bf16_baseline(context: usize) -> Self {
        Self {
            context,
            batch: 1,
            weight_bits: 16.0,
            k_bits: 16,
            v_bits: 16,
            group_size: 64,
            activation_bytes: 2,
            attention: AttentionKind::Sdpa,
            count_group_overhead: false,
            kv_head_mode: KvHeadMode::AttentionHeads,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryProfile {
    pub model_bytes: u64,
    pub kv_bytes: u64,
    pub peak_activation_bytes: u64,
    pub total_bytes: u64,
}

impl MemoryProfile {
    pub fn gib(bytes: u64) -> f64 {
        bytes as f64 / (1u64 << 30) as f64
    }

    /// Human-readable component breakdown.
    pub fn describe(&self) -> String {
        format!(
            "model {:>14} B ({:6.2} GiB)\nkv    {:>14} B ({:6.2} GiB)\npeak  {:>14} B ({:6.2} GiB)\ntotal {:>14} B ({:6.2} GiB)",
            self.model_bytes,
            Self::gib(self.model_bytes),
            self.kv_bytes,
            Self::gib(self.kv_bytes),
            self.peak_activation_bytes,
            Self::gib(self.peak_activation_bytes),
            self.total_bytes,
            Self::gib(self.total_bytes),
        )
    }
}

/// Effective bits per weight once per-group scale/zero storage is counted.
pub fn effective_weight_bits(bits: f64, group_size: usize, scale_bits: u32, zero_bits: u32) -> f64 {
    bits + f64::from(scale_bits + zero_bits) / group_size as f64
}

fn kv_heads_for(q: &MemQuery, a: &ArchSpec) -> u64 {
    match q.kv_head_mode {
        KvHeadMode::AttentionHeads => a.n_heads as u64,
        KvHeadMode::KeyValueHeads => a.kv_heads as u64,
    }
}

fn kv_side_bytes(q: &MemQuery, a: &ArchSpec, bits: u32) -> u64 {
    let elems = q.batch as u64
        * kv_heads_for(q, a)
        * q.context as u64
        * a.head_dim as u64
        * a.layers as u64;
    // Whole bytes for realistic shapes; rounds up for degenerate ones.
    let mut bytes = (elems * u64::from(bits)).div_ceil(8);
    // 16-bit sides are pass-through: no parameters are stored.
    if q.count_group_overhead && bits < 16 {
        bytes += elems * 4 / q.group_size as u64; // 16-bit scale + 16-bit zero per group
    }
    bytes
}

/// Cache bytes for K and V at the query's bit widths.
pub fn kv_bytes(q: &MemQuery, a: &ArchSpec) -> u64 {
    kv_side_bytes(q, a, q.k_bits) + kv_side_bytes(q, a, q.v_bits)
}

/// Peak bytes of the attention-score working set.
pub fn mha_peak(q: &MemQuery, a: &ArchSpec) -> u64 {
    let m = q.context as u64;
    let elems = match q.attention {
        AttentionKind::Sdpa => a.n_heads as u64 * m * m,
        AttentionKind::ChunkedSdpa { chunk } => a.n_heads as u64 * (chunk as u64).min(m) * m,
        AttentionKind::Flash {
            block_q,
            block_kv,
            workspace,
        } => (block_q as u64).pow(2) + 2 * (block_kv as u64).pow(2) + workspace,
    };
    elems * q.activation_bytes
}

/// Peak bytes of the logit head: rows materialized at once times vocab.
pub fn lm_head_peak(q: &MemQuery, a: &ArchSpec) -> u64 {
    let m = q.context as u64;
    let rows = match q.attention {
        AttentionKind::Sdpa => m,
        AttentionKind::ChunkedSdpa { chunk } => (chunk as u64).min(m),
        AttentionKind::Flash { block_q, .. } => (block_q as u64).min(m.max(1)),
    };
    rows * a.vocab_size as u64 * q.activation_bytes
}

/// Full breakdown: model + KV + max(attention, logit head).
pub fn total_memory(q: &MemQuery, a: &ArchSpec) -> MemoryProfile {
    let model_bytes = (a.param_count as f64 * q.weight_bits / 8.0).round() as u64;
    let kv = kv_bytes(q, a);
    let peak = mha_peak(q, a).max(lm_head_peak(q, a));
    MemoryProfile {
        model_bytes,
        kv_bytes: kv,
        peak_activation_bytes: peak,
        total_bytes: model_bytes + kv + peak,
    }
}

/// Percent reduction of `optimized` relative to `baseline`.
pub fn memory_reduction(baseline: &MemoryProfile, optimized: &MemoryProfile) -> f64 {
    100.0 * (1.0 - optimized.total_bytes as f64 / baseline.total_bytes as f64)
}
