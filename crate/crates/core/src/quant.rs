//! Signed asymmetric round-to-nearest quantization over three granularities,
//! plus key mean-smoothing.
//!
//! A group maps to one `(scale, zero_point)` pair. Scales always come from a
//! zero-extended range so 0 is exactly representable, and rounding is fixed to
//! half-to-even everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Expansion applied to a degenerate (max == min) range so scales stay positive.
pub const DEGENERATE_RANGE_EPS: f32 = 1e-8;

/// Logical storage width of a K or V element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BitWidth {
    Int2,
    Int4,
    Int8,
    /// Pass-through mode: values are stored verbatim and accounted at 16 bits.
    Full,
}

impl BitWidth {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            2 => Ok(BitWidth::Int2),
            4 => Ok(BitWidth::Int4),
            8 => Ok(BitWidth::Int8),
            16 => Ok(BitWidth::Full),
            other => Err(Error::InvalidConfig(format!(
                "unsupported bit width {other}; expected 2, 4, 8 or 16"
            ))),
        }
    }

    /// Logical bits per stored element, as charged by the memory model.
    pub fn bits(self) -> u32 {
        match self {
            BitWidth::Int2 => 2,
            BitWidth::Int4 => 4,
            BitWidth::Int8 => 8,
            BitWidth::Full => 16,
        }
    }

    pub fn is_quantized(self) -> bool {
        !matches!(self, BitWidth::Full)
    }

    pub fn q_min(self) -> i32 {
        debug_assert!(self.is_quantized());
        -(1 << (self.bits() - 1))
    }

    pub fn q_max(self) -> i32 {
        debug_assert!(self.is_quantized());
        (1 << (self.bits() - 1)) - 1
    }
}

/// Which tensor partition shares one `(scale, zero_point)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Granularity {
    /// Groups along the trailing (head) dimension of each token row.
    #[serde(rename = "per-token")]
    PerTokenGroup,
    /// Groups of whole tokens along the sequence axis of a `[heads, seq, dim]` tensor.
    #[serde(rename = "per-seq")]
    PerSequenceGroup,
    /// One global pair for the entire tensor.
    #[serde(rename = "per-tensor")]
    PerTensor,
}

impl Granularity {
    pub fn label(self) -> &'static str {
        match self {
            Granularity::PerTokenGroup => "per-token",
            Granularity::PerSequenceGroup => "per-seq",
            Granularity::PerTensor => "per-tensor",
        }
    }
}

/// A complete quantization recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits: BitWidth,
    pub granularity: Granularity,
    /// Elements (per-token) or tokens (per-sequence) sharing one parameter pair.
    /// Ignored for per-tensor.
    pub group_size: usize,
    /// Mean-center the sequence axis before quantizing and restore it after.
    pub smoothing: bool,
}

impl QuantSpec {
    pub fn new(bits: BitWidth, granularity: Granularity, group_size: usize, smoothing: bool) -> Self {
        Self {
            bits,
            granularity,
            group_size,
            smoothing,
        }
    }

    /// The distinguished no-rounding spec used to test cache machinery in isolation.
    pub fn passthrough() -> Self {
        Self {
            bits: BitWidth::Full,
            granularity: Granularity::PerTensor,
            group_size: 64,
            smoothing: false,
        }
    }

    pub fn is_passthrough(&self) -> bool {
        !self.bits.is_quantized()
    }
}

/// Scale and zero point for one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

/// Group structure of a quantized tensor: maps every group to its flat
/// element indices.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupLayout {
    /// `rows` rows of `row_len` trailing elements, each split into
    /// `row_len / group_size` groups. Exact division enforced.
    RowGroups {
        rows: usize,
        row_len: usize,
        group_size: usize,
    },
    /// `[heads, tokens, head_dim]`: tokens split into `ceil(tokens/group_size)`
    /// spans; a group covers its span across all heads and dims.
    TokenGroups {
        heads: usize,
        tokens: usize,
        head_dim: usize,
        group_size: usize,
    },
    /// Single global group.
    Whole { numel: usize },
}

impl GroupLayout {
    pub fn group_count(&self) -> usize {
        match *self {
            GroupLayout::RowGroups {
                rows,
                row_len,
                group_size,
            } => rows * (row_len / group_size),
            GroupLayout::TokenGroups {
                tokens, group_size, ..
            } => tokens.div_ceil(group_size),
            GroupLayout::Whole { .. } => 1,
        }
    }

    /// Visit every group as `(group_index, flat element indices)`.
    pub fn for_each_group(&self, mut f: impl FnMut(usize, &mut dyn Iterator<Item = usize>)) {
        match *self {
            GroupLayout::RowGroups {
                rows,
                row_len,
                group_size,
            } => {
                let per_row = row_len / group_size;
                for r in 0..rows {
                    for g in 0..per_row {
                        let start = r * row_len + g * group_size;
                        f(r * per_row + g, &mut (start..start + group_size));
                    }
                }
            }
            GroupLayout::TokenGroups {
                heads,
                tokens,
                head_dim,
                group_size,
            } => {
                let n_groups = tokens.div_ceil(group_size);
                for g in 0..n_groups {
                    let t0 = g * group_size;
                    let t1 = (t0 + group_size).min(tokens);
                    let mut iter = (0..heads).flat_map(move |h| {
                        (t0..t1).flat_map(move |t| {
                            let base = (h * tokens + t) * head_dim;
                            base..base + head_dim
                        })
                    });
                    f(g, &mut iter);
                }
            }
            GroupLayout::Whole { numel } => f(0, &mut (0..numel)),
        }
    }
}

/// Stored K/V payload: integer codes or verbatim floats for pass-through.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockPayload {
    Codes {
        codes: Vec<i8>,
        params: Vec<QuantParams>,
    },
    Raw(Vec<f32>),
}

/// A quantized tensor: codes plus the parameters and layout needed to decode it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBlock {
    pub logical_shape: Vec<usize>,
    pub layout: GroupLayout,
    pub payload: BlockPayload,
    /// Per-(batch, dim) means subtracted before quantization, stored at full
    /// precision and re-added on dequantization. Present only when smoothing ran.
    pub means: Option<Vec<f32>>,
    pub bits: BitWidth,
}

impl QuantizedBlock {
    pub fn numel(&self) -> usize {
        self.logical_shape.iter().product()
    }

    pub fn group_count(&self) -> usize {
        self.layout.group_count()
    }
}

fn round_half_even(x: f32) -> f32 {
    x.round_ties_even()
}

/// Scale and zero point over an arbitrary signed or unsigned code range.
///
/// The observed range is extended to include zero, and a degenerate range is
/// widened by [`DEGENERATE_RANGE_EPS`] so the scale stays positive.
pub fn compute_qparams_range(values: &[f32], q_min: i32, q_max: i32) -> Result<QuantParams> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("empty group".to_string()));
    }
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("group value {v}")));
        }
        min = min.min(v);
        max = max.max(v);
    }
    let min = min.min(0.0);
    let mut max = max.max(0.0);
    if max == min {
        max = min + DEGENERATE_RANGE_EPS;
    }
    let range = (q_max - q_min) as f32;
    let scale = (max - min) / range;
    // min/scale evaluated without the rounded intermediate scale, so exact
    // half-integer cases (e.g. [-1, 1] at 8 bits) round the way the formula
    // written in real arithmetic does.
    let zero_point = round_half_even(q_min as f32 - min * range / (max - min)) as i32;
    Ok(QuantParams {
        scale,
        zero_point: zero_point.clamp(q_min, q_max),
    })
}

/// Scale and zero point for one signed group at the given width.
pub fn compute_qparams(values: &[f32], bits: BitWidth) -> Result<QuantParams> {
    if !bits.is_quantized() {
        return Err(Error::InvalidConfig(
            "pass-through width has no quantization parameters".to_string(),
        ));
    }
    compute_qparams_range(values, bits.q_min(), bits.q_max())
}

fn encode(value: f32, p: QuantParams, q_min: i32, q_max: i32) -> i8 {
    let c = round_half_even(value / p.scale) as i32 + p.zero_point;
    c.clamp(q_min, q_max) as i8
}

fn layout_for(t: &Tensor, spec: &QuantSpec) -> Result<GroupLayout> {
    match spec.granularity {
        Granularity::PerTokenGroup => {
            let row_len = *t.shape().last().ok_or_else(|| {
                Error::Layout("per-token grouping needs at least one axis".to_string())
            })?;
            if spec.group_size == 0 || row_len % spec.group_size != 0 {
                return Err(Error::Layout(format!(
                    "head dim {row_len} not divisible by group size {}",
                    spec.group_size
                )));
            }
            Ok(GroupLayout::RowGroups {
                rows: t.numel() / row_len,
                row_len,
                group_size: spec.group_size,
            })
        }
        Granularity::PerSequenceGroup => {
            if t.rank() != 3 {
                return Err(Error::Layout(format!(
                    "per-sequence grouping needs [heads, seq, dim], got {:?}",
                    t.shape()
                )));
            }
            if spec.group_size == 0 {
                return Err(Error::Layout("group size must be positive".to_string()));
            }
            Ok(GroupLayout::TokenGroups {
                heads: t.shape()[0],
                tokens: t.shape()[1],
                head_dim: t.shape()[2],
                group_size: spec.group_size,
            })
        }
        Granularity::PerTensor => Ok(GroupLayout::Whole { numel: t.numel() }),
    }
}

/// Quantize a tensor under `spec`. With smoothing enabled the tensor must be
/// `[batch, seq, dim]`; the subtracted means are retained in the block.
pub fn quantize(t: &Tensor, spec: &QuantSpec) -> Result<QuantizedBlock> {
    let (work, means) = if spec.smoothing {
        let (smoothed, means) = smooth_k(t)?;
        (smoothed, Some(means.data().to_vec()))
    } else {
        (t.clone(), None)
    };

    if spec.is_passthrough() {
        return Ok(QuantizedBlock {
            logical_shape: t.shape().to_vec(),
            layout: GroupLayout::Whole { numel: t.numel() },
            payload: BlockPayload::Raw(work.data().to_vec()),
            means,
            bits: BitWidth::Full,
        });
    }

    let layout = layout_for(&work, spec)?;
    let (q_min, q_max) = (spec.bits.q_min(), spec.bits.q_max());
    let data = work.data();
    let mut codes = vec![0i8; data.len()];
    let mut params = Vec::with_capacity(layout.group_count());
    let mut scratch = Vec::new();
    let mut failed = None;
    layout.for_each_group(|_, idx| {
        scratch.clear();
        scratch.extend(idx.map(|i| data[i]));
        match compute_qparams_range(&scratch, q_min, q_max) {
            Ok(p) => params.push(p),
            Err(e) => failed = Some(e),
        }
    });
    if let Some(e) = failed {
        return Err(e);
    }
    layout.for_each_group(|g, idx| {
        let p = params[g];
        for i in idx {
            codes[i] = encode(data[i], p, q_min, q_max);
        }
    });
    Ok(QuantizedBlock {
        logical_shape: t.shape().to_vec(),
        layout,
        payload: BlockPayload::Codes { codes, params },
        means,
        bits: spec.bits,
    })
}

/// Decode a block back to floats, re-adding stored smoothing means if present.
pub fn dequantize(b: &QuantizedBlock) -> Tensor {
    let mut data = match &b.payload {
        BlockPayload::Raw(raw) => raw.clone(),
        BlockPayload::Codes { codes, params } => {
            let mut out = vec![0.0f32; codes.len()];
            b.layout.for_each_group(|g, idx| {
                let p = params[g];
                for i in idx {
                    out[i] = (i32::from(codes[i]) - p.zero_point) as f32 * p.scale;
                }
            });
            out
        }
    };
    if let Some(means) = &b.means {
        // means are [batch, dim] for a [batch, seq, dim] logical shape
        let (batch, seq, dim) = (
            b.logical_shape[0],
            b.logical_shape[1],
            b.logical_shape[2],
        );
        for bi in 0..batch {
            for s in 0..seq {
                let base = (bi * seq + s) * dim;
                for d in 0..dim {
                    data[base + d] += means[bi * dim + d];
                }
            }
        }
    }
    Tensor::new(b.logical_shape.clone(), data).expect("decoded block is well formed")
}

/// Quantize-then-dequantize: the simulator's error-injection primitive.
pub fn qdq(t: &Tensor, spec: &QuantSpec) -> Result<Tensor> {
    Ok(dequantize(&quantize(t, spec)?))
}

/// Subtract the per-(batch, dim) sequence mean from a `[batch, seq, dim]`
/// tensor. Returns the centered tensor and the `[batch, 1, dim]` means.
pub fn smooth_k(k: &Tensor) -> Result<(Tensor, Tensor)> {
    if k.rank() != 3 {
        return Err(Error::Layout(format!(
            "smoothing needs [batch, seq, dim], got {:?}",
            k.shape()
        )));
    }
    let (batch, seq, dim) = (k.shape()[0], k.shape()[1], k.shape()[2]);
    if seq == 0 {
        return Err(Error::Layout("cannot smooth an empty sequence".to_string()));
    }
    let mut means = vec![0.0f32; batch * dim];
    let data = k.data();
    for b in 0..batch {
        for s in 0..seq {
            let base = (b * seq + s) * dim;
            for d in 0..dim {
                means[b * dim + d] += data[base + d];
            }
        }
    }
    for m in means.iter_mut() {
        *m /= seq as f32;
    }
    let mut centered = data.to_vec();
    for b in 0..batch {
        for s in 0..seq {
            let base = (b * seq + s) * dim;
            for d in 0..dim {
                centered[base + d] -= means[b * dim + d];
            }
        }
    }
    Ok((
        Tensor::new(k.shape().to_vec(), centered)?,
        Tensor::new(vec![batch, 1, dim], means)?,
    ))
}

/// Pack codes at their logical width, 2/4/8 bits each, little-end first
/// within a byte. Codes are stored offset-binary (`code - q_min`).
pub fn pack_codes(codes: &[i8], bits: BitWidth) -> Result<Vec<u8>> {
    if !bits.is_quantized() {
        return Err(Error::InvalidConfig("cannot pack pass-through data".to_string()));
    }
    let width = bits.bits() as usize;
    let per_byte = 8 / width;
    let q_min = bits.q_min();
    let mut out = vec![0u8; codes.len().div_ceil(per_byte)];
    for (i, &c) in codes.iter().enumerate() {
        let u = (i32::from(c) - q_min) as u8;
        out[i / per_byte] |= u << ((i % per_byte) * width);
    }
    Ok(out)
}

/// Inverse of [`pack_codes`].
pub fn unpack_codes(packed: &[u8], bits: BitWidth, count: usize) -> Result<Vec<i8>> {
    if !bits.is_quantized() {
        return Err(Error::InvalidConfig("cannot unpack pass-through data".to_string()));
    }
    let width = bits.bits() as usize;
    let per_byte = 8 / width;
    if packed.len() < count.div_ceil(per_byte) {
        return Err(Error::Layout(format!(
            "packed buffer too short: {} bytes for {count} codes",
            packed.len()
        )));
    }
    let mask = ((1u16 << width) - 1) as u8;
    let q_min = bits.q_min();
    Ok((0..count)
        .map(|i| {
            let u = (packed[i / per_byte] >> ((i % per_byte) * width)) & mask;
            (i32::from(u) + q_min) as i8
        })
        .collect())
}
