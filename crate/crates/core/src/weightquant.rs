//! 4-bit weight-only quantization of linear layers: unsigned asymmetric RTN
//! with group size 128 along the input channel, optionally preceded by an
//! activation-aware per-channel scale search.
//!
//! The scale search rates each grid exponent alpha by the calibration-set MSE
//! of the layer output after scaling, quantizing, and folding the inverse
//! scales back; alpha = 0 is always in the grid, so the search can only match
//! or improve plain RTN on the calibration data.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kvcache::KVCache;
use crate::model::{forward_prefill_tapped, ChunkMode, ModelConfig, RunConfig, WeightMode};
use crate::quant::compute_qparams_range;
use crate::tensor::{matmul, Tensor};
use crate::weights::Weights;

/// Input channels sharing one scale/zero pair.
pub const WEIGHT_GROUP: usize = 128;
/// Unsigned 4-bit code range.
pub const W_QMIN: i32 = 0;
pub const W_QMAX: i32 = 15;

/// Default grid of scale exponents: 0, 0.125, ..., 1.0.
pub fn default_alpha_grid() -> Vec<f32> {
    (0..=8).map(|i| i as f32 / 8.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScalingMode {
    None,
    ActivationAware { grid: Vec<f32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightQuantSpec {
    pub scaling: ScalingMode,
}

impl WeightQuantSpec {
    pub fn rtn() -> Self {
        Self {
            scaling: ScalingMode::None,
        }
    }

    pub fn activation_aware() -> Self {
        Self {
            scaling: ScalingMode::ActivationAware {
                grid: default_alpha_grid(),
            },
        }
    }
}

/// Captured linear-layer inputs from full-precision forward passes.
#[derive(Debug, Clone, Default)]
pub struct CalibrationSet {
    /// Layer name -> stacked input rows `[rows, in_features]`.
    pub inputs: BTreeMap<String, Vec<Tensor>>,
}

impl CalibrationSet {
    /// Run `prompt_count` seeded prompts of `prompt_len` random tokens through
    /// the full-precision model, recording every linear layer's input.
    pub fn capture(
        cfg: &ModelConfig,
        weights: &Weights,
        prompt_count: usize,
        prompt_len: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut set = CalibrationSet::default();
        let run = RunConfig {
            chunk: ChunkMode::Full,
            kv: crate::kvcache::KVCacheConfig {
                k_spec: crate::quant::QuantSpec::passthrough(),
                v_spec: crate::quant::QuantSpec::passthrough(),
                layers: cfg.layers,
                heads_kv: cfg.kv_heads,
                head_dim: cfg.head_dim,
            },
            weight_mode: WeightMode::W16,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..prompt_count {
            let tokens: Vec<u32> = (0..prompt_len)
                .map(|_| rng.random_range(0..cfg.vocab_size as u32))
                .collect();
            let mut cache = KVCache::new(run.kv.clone())?;
            let mut tap = |name: &str, x: &Tensor| {
                set.inputs
                    .entry(name.to_string())
                    .or_default()
                    .push(x.clone());
            };
            forward_prefill_tapped(cfg, weights, &run, &tokens, &mut cache, &mut tap)?;
        }
        Ok(set)
    }

    /// All captured rows for one layer as a single `[rows, in]` matrix.
    pub fn stacked(&self, name: &str) -> Option<Tensor> {
        let tensors = self.inputs.get(name)?;
        let cols = *tensors.first()?.shape().last()?;
        let mut data = Vec::new();
        for t in tensors {
            data.extend_from_slice(t.data());
        }
        let rows = data.len() / cols;
        Some(Tensor::new(vec![rows, cols], data).expect("stacked calibration rows"))
    }
}

#[derive(Debug, Clone, Default)]
pub struct WeightQuantReport {
    /// Layers whose input-channel count needed zero padding to reach a
    /// multiple of the group size, with the padded remainder.
    pub padded: Vec<(String, usize)>,
    /// Chosen scale exponent per activation-aware layer.
    pub chosen_alpha: BTreeMap<String, f32>,
}

/// Groupwise unsigned-4-bit QDQ of a `[in, out]` matrix.
///
/// Groups run down the input-channel axis per output column. A trailing
/// partial group behaves as if zero-padded; the zero-extended range makes the
/// padding values exact, so no physical padding is needed.
pub fn qdq_weight(w: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 {
        return Err(Error::Dimension(format!(
            "weight QDQ expects [in, out], got {:?}",
            w.shape()
        )));
    }
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0f32; rows * cols];
    let mut group = Vec::with_capacity(WEIGHT_GROUP);
    for c in 0..cols {
        let mut r0 = 0usize;
        while r0 < rows {
            let r1 = (r0 + WEIGHT_GROUP).min(rows);
            group.clear();
            group.extend((r0..r1).map(|r| w.at2(r, c)));
            let p = compute_qparams_range(&group, W_QMIN, W_QMAX)?;
            for (i, r) in (r0..r1).enumerate() {
                let code = (group[i] / p.scale).round_ties_even() as i32 + p.zero_point;
                let code = code.clamp(W_QMIN, W_QMAX);
                out[r * cols + c] = (code - p.zero_point) as f32 * p.scale;
            }
            r0 = r1;
        }
    }
    Tensor::new(vec![rows, cols], out)
}

fn scale_rows(w: &Tensor, scales: &[f32]) -> Tensor {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    let mut out = w.data().to_vec();
    for r in 0..rows {
        for v in out[r * cols..(r + 1) * cols].iter_mut() {
            *v *= scales[r];
        }
    }
    Tensor::new(w.shape().to_vec(), out).expect("scaling preserves shape")
}

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    let mut sum = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        sum += f64::from(x - y) * f64::from(x - y);
    }
    sum / a.numel() as f64
}

/// Per-input-channel scales from the mean absolute activation, raised to each
/// grid exponent and normalized to geometric mean 1; returns the scales and
/// exponent minimizing calibration MSE of the folded QDQ output. Ties break
/// toward the smaller exponent.
pub fn search_scales(w: &Tensor, calib: &Tensor, grid: &[f32]) -> Result<(Vec<f32>, f32)> {
    if calib.rank() != 2 || calib.shape()[1] != w.shape()[0] {
        return Err(Error::Dimension(format!(
            "calibration {:?} does not feed weight {:?}",
            calib.shape(),
            w.shape()
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty alpha grid".to_string()));
    }
    let (rows, in_dim) = (calib.shape()[0], w.shape()[0]);
    let mut mean_abs = vec![0.0f32; in_dim];
    for r in 0..rows {
        for (m, &v) in mean_abs.iter_mut().zip(calib.row(r)) {
            *m += v.abs();
        }
    }
    for m in mean_abs.iter_mut() {
        *m = (*m / rows as f32).max(1e-8);
    }

    let reference = matmul(calib, w)?;
    let mut best: Option<(f64, f32, Vec<f32>)> = None;
    for &alpha in grid {
        let mut scales: Vec<f32> = mean_abs.iter().map(|m| m.powf(alpha)).collect();
        let log_mean: f32 =
            scales.iter().map(|s| s.ln()).sum::<f32>() / in_dim as f32;
        let gm = log_mean.exp();
        for s in scales.iter_mut() {
            *s /= gm;
        }
        let folded = apply_folded_qdq(w, &scales)?;
        let err = mse(&reference, &matmul(calib, &folded)?);
        let better = match &best {
            None => true,
            Some((b, _, _)) => err < *b,
        };
        if better {
            best = Some((err, alpha, scales));
        }
    }
    let (_, alpha, scales) = best.expect("grid is nonempty");
    Ok((scales, alpha))
}

/// `QDQ(W * diag(s))` with the inverse scales folded back into the matrix.
pub fn apply_folded_qdq(w: &Tensor, scales: &[f32]) -> Result<Tensor> {
    let scaled = scale_rows(w, scales);
    let q = qdq_weight(&scaled)?;
    let inv: Vec<f32> = scales.iter().map(|s| 1.0 / s).collect();
    Ok(scale_rows(&q, &inv))
}

/// Replace every linear-layer matrix with its 4-bit QDQ image; embeddings,
/// positions and norms are untouched.
pub fn quantize_weights(
    weights: &Weights,
    spec: &WeightQuantSpec,
    calib: Option<&CalibrationSet>,
) -> Result<(Weights, WeightQuantReport)> {
    let mut out = weights.clone();
    let mut report = WeightQuantReport::default();
    let grid = match &spec.scaling {
        ScalingMode::None => None,
        ScalingMode::ActivationAware { grid } => {
            if calib.is_none() {
                return Err(Error::InvalidConfig(
                    "activation-aware scaling needs a calibration set".to_string(),
                ));
            }
            Some(grid.clone())
        }
    };

    // (quantized matrix, chosen alpha, padded input channels)
    type Quantized = (Tensor, Option<f32>, usize);
    let targets: Vec<(String, Tensor)> = out
        .linear_tensors_mut()
        .into_iter()
        .map(|(name, w)| (name, w.clone()))
        .collect();
    let results: Vec<(String, Result<Quantized>)> = targets
        .par_iter()
        .map(|(name, w)| {
            let pad = w.shape()[0] % WEIGHT_GROUP;
            let quantized = match (&grid, calib) {
                (Some(grid), Some(calib)) => match calib.stacked(name) {
                    Some(x) => search_scales(w, &x, grid)
                        .and_then(|(scales, alpha)| {
                            apply_folded_qdq(w, &scales).map(|t| (t, Some(alpha), pad))
                        }),
                    None => Err(Error::InvalidConfig(format!(
                        "no calibration activations captured for {name}"
                    ))),
                },
                _ => qdq_weight(w).map(|t| (t, None, pad)),
            };
            (name.clone(), quantized)
        })
        .collect();

    let mut by_name: BTreeMap<String, (Tensor, Option<f32>, usize)> = BTreeMap::new();
    for (name, r) in results {
        by_name.insert(name, r?);
    }
    for (name, w) in out.linear_tensors_mut() {
        let (t, alpha, pad) = by_name.remove(&name).expect("every linear was quantized");
        if pad != 0 {
            report.padded.push((name.clone(), WEIGHT_GROUP - pad));
        }
        if let Some(a) = alpha {
            report.chosen_alpha.insert(name, a);
        }
        *w = t;
    }
    report.padded.sort();
    Ok((out, report))
}
