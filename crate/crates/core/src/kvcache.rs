//! Append-only per-layer K/V store with quantize-on-write sealed segments and
//! a full-precision residual tail.
//!
//! Segments are immutable once written: earlier tokens are never re-quantized
//! when new ones arrive, so read-back of a span is stable under later appends.
//! For per-sequence grouping, tokens sit in the residual until a full group of
//! them can be sealed; the residual is charged at full precision.

use crate::error::{Error, Result};
use crate::quant::{dequantize, quantize, BlockPayload, Granularity, QuantSpec, QuantizedBlock};
use crate::tensor::Tensor;

/// Bytes charged per stored scale/zero pair when group overhead is counted
/// (16-bit scale + 16-bit zero point).
pub const GROUP_PARAM_BYTES: u64 = 4;

/// Bytes per element for full-precision accounting (the 16-bit baseline the
/// memory model uses; simulation numerics stay f32).
pub const FULL_PRECISION_BYTES: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct KVCacheConfig {
    pub k_spec: QuantSpec,
    pub v_spec: QuantSpec,
    pub layers: usize,
    pub heads_kv: usize,
    pub head_dim: usize,
}

impl KVCacheConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads_kv == 0 || self.head_dim == 0 {
            return Err(Error::InvalidConfig(
                "cache needs positive layer, head and dim counts".to_string(),
            ));
        }
        // K and V may differ in bits but must share granularity and grouping.
        if self.k_spec.granularity != self.v_spec.granularity
            || self.k_spec.group_size != self.v_spec.group_size
        {
            return Err(Error::InvalidConfig(
                "k and v specs must share granularity and group size".to_string(),
            ));
        }
        let spec = &self.k_spec;
        if spec.granularity == Granularity::PerTokenGroup
            && (spec.bits.is_quantized() || self.v_spec.bits.is_quantized())
            && !self.head_dim.is_multiple_of(spec.group_size)
        {
            return Err(Error::InvalidConfig(format!(
                "head dim {} not divisible by group size {}",
                self.head_dim, spec.group_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Segment {
    k: QuantizedBlock,
    v: QuantizedBlock,
    start: usize,
    len: usize,
}

#[derive(Debug, Clone)]
struct LayerStore {
    segments: Vec<Segment>,
    /// Residual tokens per head: `resid_k[h]` is `[tokens, head_dim]` row-major.
    resid_k: Vec<Vec<f32>>,
    resid_v: Vec<Vec<f32>>,
    resid_tokens: usize,
    token_count: usize,
}

impl LayerStore {
    fn new(heads: usize) -> Self {
        Self {
            segments: Vec::new(),
            resid_k: vec![Vec::new(); heads],
            resid_v: vec![Vec::new(); heads],
            resid_tokens: 0,
            token_count: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KVCache {
    cfg: KVCacheConfig,
    layers: Vec<LayerStore>,
}

impl KVCache {
    pub fn new(cfg: KVCacheConfig) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.layers).map(|_| LayerStore::new(cfg.heads_kv)).collect();
        Ok(Self { cfg, layers })
    }

    pub fn config(&self) -> &KVCacheConfig {
        &self.cfg
    }

    /// Tokens stored in a layer. At rest this is identical across layers.
    pub fn layer_token_count(&self, layer: usize) -> usize {
        self.layers[layer].token_count
    }

    /// Tokens stored, reading layer 0 as the representative.
    pub fn token_count(&self) -> usize {
        self.layers.first().map_or(0, |l| l.token_count)
    }

    pub fn is_empty(&self) -> bool {
        self.token_count() == 0
    }

    fn check_chunk(&self, t: &Tensor, what: &str) -> Result<usize> {
        if t.rank() != 3 || t.shape()[0] != self.cfg.heads_kv || t.shape()[2] != self.cfg.head_dim {
            return Err(Error::Dimension(format!(
                "{what} chunk {:?} does not match cache [{}, t, {}]",
                t.shape(),
                self.cfg.heads_kv,
                self.cfg.head_dim
            )));
        }
        Ok(t.shape()[1])
    }

    /// Quantize one chunk of new K/V states and append them to `layer`.
    pub fn append(&mut self, layer: usize, k_chunk: &Tensor, v_chunk: &Tensor) -> Result<()> {
        if layer >= self.cfg.layers {
            return Err(Error::Dimension(format!(
                "layer {layer} out of range ({} layers)",
                self.cfg.layers
            )));
        }
        let t_k = self.check_chunk(k_chunk, "k")?;
        let t_v = self.check_chunk(v_chunk, "v")?;
        if t_k != t_v {
            return Err(Error::Dimension(format!(
                "k and v chunks disagree on token count: {t_k} vs {t_v}"
            )));
        }

        let buffer_tokens = self.cfg.k_spec.granularity == Granularity::PerSequenceGroup
            && (self.cfg.k_spec.bits.is_quantized() || self.cfg.v_spec.bits.is_quantized());
        let (heads, dim) = (self.cfg.heads_kv, self.cfg.head_dim);
        let group = self.cfg.k_spec.group_size;
        let k_spec = self.cfg.k_spec;
        let v_spec = self.cfg.v_spec;
        let store = &mut self.layers[layer];

        if !buffer_tokens {
            // Per-token and per-tensor parameters never span chunks, so the
            // whole chunk seals immediately.
            let start = store.token_count;
            store.segments.push(Segment {
                k: quantize(k_chunk, &k_spec)?,
                v: quantize(v_chunk, &v_spec)?,
                start,
                len: t_k,
            });
            store.token_count += t_k;
            return Ok(());
        }

        // Per-sequence grouping: accumulate tokens, sealing one segment per
        // complete group of `group` tokens.
        for t in 0..t_k {
            for h in 0..heads {
                let base = (h * t_k + t) * dim;
                store.resid_k[h].extend_from_slice(&k_chunk.data()[base..base + dim]);
                store.resid_v[h].extend_from_slice(&v_chunk.data()[base..base + dim]);
            }
            store.resid_tokens += 1;
            store.token_count += 1;
            if store.resid_tokens == group {
                let seg_start = store.token_count - group;
                let mut k_data = Vec::with_capacity(heads * group * dim);
                let mut v_data = Vec::with_capacity(heads * group * dim);
                for h in 0..heads {
                    k_data.extend_from_slice(&store.resid_k[h]);
                    v_data.extend_from_slice(&store.resid_v[h]);
                    store.resid_k[h].clear();
                    store.resid_v[h].clear();
                }
                store.resid_tokens = 0;
                let k_t = Tensor::new(vec![heads, group, dim], k_data)?;
                let v_t = Tensor::new(vec![heads, group, dim], v_data)?;
                store.segments.push(Segment {
                    k: quantize(&k_t, &k_spec)?,
                    v: quantize(&v_t, &v_spec)?,
                    start: seg_start,
                    len: group,
                });
            }
        }
        Ok(())
    }

    /// Materialize the full per-layer K and V: dequantized sealed segments in
    /// append order followed by the residual verbatim.
    pub fn read(&self, layer: usize) -> Result<(Tensor, Tensor)> {
        if layer >= self.cfg.layers {
            return Err(Error::Dimension(format!(
                "layer {layer} out of range ({} layers)",
                self.cfg.layers
            )));
        }
        let store = &self.layers[layer];
        let (heads, dim) = (self.cfg.heads_kv, self.cfg.head_dim);
        let total = store.token_count;
        let mut k_out = vec![0.0f32; heads * total * dim];
        let mut v_out = vec![0.0f32; heads * total * dim];
        for seg in &store.segments {
            let k_dec = dequantize(&seg.k);
            let v_dec = dequantize(&seg.v);
            for h in 0..heads {
                for t in 0..seg.len {
                    let src = (h * seg.len + t) * dim;
                    let dst = (h * total + seg.start + t) * dim;
                    k_out[dst..dst + dim].copy_from_slice(&k_dec.data()[src..src + dim]);
                    v_out[dst..dst + dim].copy_from_slice(&v_dec.data()[src..src + dim]);
                }
            }
        }
        let resid_start = total - store.resid_tokens;
        for h in 0..heads {
            for t in 0..store.resid_tokens {
                let src = t * dim;
                let dst = (h * total + resid_start + t) * dim;
                k_out[dst..dst + dim].copy_from_slice(&store.resid_k[h][src..src + dim]);
                v_out[dst..dst + dim].copy_from_slice(&store.resid_v[h][src..src + dim]);
            }
        }
        Ok((
            Tensor::new(vec![heads, total, dim], k_out)?,
            Tensor::new(vec![heads, total, dim], v_out)?,
        ))
    }

    fn block_bytes(b: &QuantizedBlock, count_group_overhead: bool) -> u64 {
        let elems = b.numel() as u64;
        // Whole bytes for realistic shapes; rounds up for degenerate ones.
        let mut bytes = (elems * u64::from(b.bits.bits())).div_ceil(8);
        if count_group_overhead {
            if let BlockPayload::Codes { params, .. } = &b.payload {
                bytes += params.len() as u64 * GROUP_PARAM_BYTES;
            }
        }
        if let Some(means) = &b.means {
            bytes += means.len() as u64 * FULL_PRECISION_BYTES;
        }
        bytes
    }

    /// Logical bytes held by the cache: per-segment payload at each side's
    /// logical width, optional group parameters, smoothing means, and the
    /// residual at full precision.
    pub fn stored_bytes(&self, count_group_overhead: bool) -> u64 {
        let mut total = 0u64;
        for store in &self.layers {
            for seg in &store.segments {
                total += Self::block_bytes(&seg.k, count_group_overhead);
                total += Self::block_bytes(&seg.v, count_group_overhead);
            }
            let resid_elems =
                (store.resid_tokens * self.cfg.heads_kv * self.cfg.head_dim) as u64;
            total += 2 * resid_elems * FULL_PRECISION_BYTES; // K and V
        }
        total
    }
}
