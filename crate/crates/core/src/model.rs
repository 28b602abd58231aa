//! Toy decoder-only transformer with grouped KV heads, full or chunked
//! prefill against a quantizing KV cache, and autoregressive decode.
//!
//! Also hosts the deterministic two-layer induction-head construction that
//! supplies the accuracy axis for configuration sweeps: layer 1 copies each
//! position's previous token into a reserved slot via rotary position
//! matching, layer 2 matches the current token against those slots and copies
//! the successor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kvcache::KVCache;
use crate::tensor::{matmul, sdpa, AttentionMask, Tensor};
use crate::weights::{LayerWeights, Weights};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub n_heads: usize,
    pub kv_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
}

impl ModelConfig {
    pub fn hidden(&self) -> usize {
        self.n_heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0
            || self.n_heads == 0
            || self.kv_heads == 0
            || self.head_dim == 0
            || self.ffn_dim == 0
            || self.vocab_size == 0
            || self.max_positions == 0
        {
            return Err(Error::InvalidConfig(
                "model dimensions must be positive".to_string(),
            ));
        }
        if !self.n_heads.is_multiple_of(self.kv_heads) {
            return Err(Error::InvalidConfig(format!(
                "kv_heads {} must divide n_heads {}",
                self.kv_heads, self.n_heads
            )));
        }
        Ok(())
    }
}

/// How prefill splits the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChunkMode {
    Full,
    Chunked(usize),
}

impl ChunkMode {
    pub fn chunk_len(self, total: usize) -> usize {
        match self {
            ChunkMode::Full => total.max(1),
            ChunkMode::Chunked(c) => c.max(1),
        }
    }

    pub fn label(self) -> String {
        match self {
            ChunkMode::Full => "full".to_string(),
            ChunkMode::Chunked(c) => c.to_string(),
        }
    }
}

/// Which weight variant a run uses. Forward passes take already-prepared
/// weights; this tag selects the variant during sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightMode {
    #[serde(rename = "w16")]
    W16,
    #[serde(rename = "w4")]
    W4Rtn,
    #[serde(rename = "w4awq")]
    W4Awq,
}

impl WeightMode {
    pub fn label(self) -> &'static str {
        match self {
            WeightMode::W16 => "w16a16",
            WeightMode::W4Rtn => "w4a16",
            WeightMode::W4Awq => "w4a16awq",
        }
    }

    pub fn weight_bits(self) -> u32 {
        match self {
            WeightMode::W16 => 16,
            _ => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub chunk: ChunkMode,
    pub kv: crate::kvcache::KVCacheConfig,
    pub weight_mode: WeightMode,
}

fn rms_norm_rows(x: &Tensor, gain: &Tensor) -> Tensor {
    let cols = *x.shape().last().unwrap();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(cols) {
        let mean_sq: f32 = row.iter().map(|v| v * v).sum::<f32>() / cols as f32;
        let inv = 1.0 / (mean_sq + 1e-5).sqrt();
        for (v, g) in row.iter_mut().zip(gain.data()) {
            *v = *v * inv * g;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("rms norm preserves shape")
}

fn squared_relu(x: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| if v > 0.0 { v * v } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("activation preserves shape")
}

fn add_rows(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("residual add preserves shape")
}

/// `[rows, heads*dim]` -> `[heads, rows, dim]`.
fn split_heads(rows: &Tensor, heads: usize, dim: usize) -> Tensor {
    let m = rows.shape()[0];
    let mut out = vec![0.0f32; heads * m * dim];
    for i in 0..m {
        for h in 0..heads {
            let src = i * heads * dim + h * dim;
            let dst = (h * m + i) * dim;
            out[dst..dst + dim].copy_from_slice(&rows.data()[src..src + dim]);
        }
    }
    Tensor::new(vec![heads, m, dim], out).expect("head split preserves element count")
}

/// `[heads, rows, dim]` -> `[rows, heads*dim]`.
fn merge_heads(t: &Tensor) -> Tensor {
    let (heads, m, dim) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut out = vec![0.0f32; heads * m * dim];
    for h in 0..heads {
        for i in 0..m {
            let src = (h * m + i) * dim;
            let dst = i * heads * dim + h * dim;
            out[dst..dst + dim].copy_from_slice(&t.data()[src..src + dim]);
        }
    }
    Tensor::new(vec![m, heads * dim], out).expect("head merge preserves element count")
}

/// Repeat each KV head `repeat` times so grouped caches serve every query head.
pub fn expand_kv(t: &Tensor, repeat: usize) -> Tensor {
    if repeat == 1 {
        return t.clone();
    }
    let (kv, n, d) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut out = vec![0.0f32; kv * repeat * n * d];
    for h_out in 0..kv * repeat {
        let h_in = h_out / repeat;
        let src = h_in * n * d;
        let dst = h_out * n * d;
        out[dst..dst + n * d].copy_from_slice(&t.data()[src..src + n * d]);
    }
    Tensor::new(vec![kv * repeat, n, d], out).expect("expansion preserves layout")
}

/// Index of the first maximal entry.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn embed_chunk(cfg: &ModelConfig, weights: &Weights, tokens: &[u32], start: usize) -> Result<Tensor> {
    let hidden = cfg.hidden();
    let mut x = vec![0.0f32; tokens.len() * hidden];
    for (i, &tok) in tokens.iter().enumerate() {
        let tok = tok as usize;
        if tok >= cfg.vocab_size {
            return Err(Error::InvalidConfig(format!(
                "token id {tok} out of vocabulary ({})",
                cfg.vocab_size
            )));
        }
        let pos = start + i;
        let e = &weights.embed.data()[tok * hidden..(tok + 1) * hidden];
        let p = &weights.pos.data()[pos * hidden..(pos + 1) * hidden];
        for ((o, a), b) in x[i * hidden..(i + 1) * hidden].iter_mut().zip(e).zip(p) {
            *o = a + b;
        }
    }
    Tensor::new(vec![tokens.len(), hidden], x)
}

/// One chunk through every layer, appending fresh K/V to the cache and
/// attending over the dequantized cache so far (just-appended chunk included).
/// `tap` fires with each linear layer's input before the multiply.
fn run_chunk(
    cfg: &ModelConfig,
    weights: &Weights,
    tokens: &[u32],
    start: usize,
    cache: &mut KVCache,
    tap: &mut dyn FnMut(&str, &Tensor),
) -> Result<Tensor> {
    let repeat = cfg.n_heads / cfg.kv_heads;
    let mut x = embed_chunk(cfg, weights, tokens, start)?;
    for (li, lw) in weights.layers.iter().enumerate() {
        let xn = rms_norm_rows(&x, &lw.norm_attn);
        tap(&format!("layers.{li}.attn.q"), &xn);
        tap(&format!("layers.{li}.attn.k"), &xn);
        tap(&format!("layers.{li}.attn.v"), &xn);
        let q = split_heads(&matmul(&xn, &lw.attn_q)?, cfg.n_heads, cfg.head_dim);
        let k = split_heads(&matmul(&xn, &lw.attn_k)?, cfg.kv_heads, cfg.head_dim);
        let v = split_heads(&matmul(&xn, &lw.attn_v)?, cfg.kv_heads, cfg.head_dim);
        cache.append(li, &k, &v)?;
        let (k_all, v_all) = cache.read(li)?;
        let attn = sdpa(
            &q,
            &expand_kv(&k_all, repeat),
            &expand_kv(&v_all, repeat),
            AttentionMask::CausalWithOffset(start),
        )?;
        let attn_rows = merge_heads(&attn);
        tap(&format!("layers.{li}.attn.o"), &attn_rows);
        x = add_rows(&x, &matmul(&attn_rows, &lw.attn_o)?);

        let hn = rms_norm_rows(&x, &lw.norm_ffn);
        tap(&format!("layers.{li}.ffn.up"), &hn);
        let act = squared_relu(&matmul(&hn, &lw.ffn_up)?);
        tap(&format!("layers.{li}.ffn.down"), &act);
        x = add_rows(&x, &matmul(&act, &lw.ffn_down)?);
    }
    Ok(x)
}

fn check_prefill(cfg: &ModelConfig, tokens: &[u32], cache: &KVCache) -> Result<()> {
    cfg.validate()?;
    if tokens.is_empty() {
        return Err(Error::InvalidConfig("empty prompt".to_string()));
    }
    if tokens.len() > cfg.max_positions {
        return Err(Error::InvalidConfig(format!(
            "prompt of {} tokens exceeds max positions {}",
            tokens.len(),
            cfg.max_positions
        )));
    }
    if !cache.is_empty() {
        return Err(Error::InvalidConfig(
            "prefill requires an empty cache".to_string(),
        ));
    }
    if cache.config().layers != cfg.layers
        || cache.config().heads_kv != cfg.kv_heads
        || cache.config().head_dim != cfg.head_dim
    {
        return Err(Error::Dimension(
            "cache dimensions do not match model".to_string(),
        ));
    }
    Ok(())
}

fn prefill_impl(
    cfg: &ModelConfig,
    weights: &Weights,
    run: &RunConfig,
    tokens: &[u32],
    cache: &mut KVCache,
    all_logits: bool,
    tap: &mut dyn FnMut(&str, &Tensor),
) -> Result<Tensor> {
    check_prefill(cfg, tokens, cache)?;
    let total = tokens.len();
    let chunk = run.chunk.chunk_len(total);
    let mut rows: Vec<f32> = Vec::new();
    let mut start = 0usize;
    while start < total {
        let end = (start + chunk).min(total);
        let x = run_chunk(cfg, weights, &tokens[start..end], start, cache, tap)?;
        let last_chunk = end == total;
        if all_logits {
            let ln = rms_norm_rows(&x, &weights.norm_final);
            tap("lm_head", &ln);
            let logits = matmul(&ln, &weights.lm_head)?;
            rows.extend_from_slice(logits.data());
        } else if last_chunk {
            let hidden = cfg.hidden();
            let m = end - start;
            let last = Tensor::new(
                vec![1, hidden],
                x.data()[(m - 1) * hidden..m * hidden].to_vec(),
            )?;
            let ln = rms_norm_rows(&last, &weights.norm_final);
            tap("lm_head", &ln);
            let logits = matmul(&ln, &weights.lm_head)?;
            rows.extend_from_slice(logits.data());
        }
        start = end;
    }
    let out_rows = if all_logits { total } else { 1 };
    Tensor::new(vec![out_rows, cfg.vocab_size], rows)
}

/// Prefill the prompt and return final-position logits `[1, vocab]`.
pub fn forward_prefill(
    cfg: &ModelConfig,
    weights: &Weights,
    run: &RunConfig,
    tokens: &[u32],
    cache: &mut KVCache,
) -> Result<Tensor> {
    prefill_impl(cfg, weights, run, tokens, cache, false, &mut |_, _| {})
}

/// Prefill the prompt and materialize logits for every position `[M, vocab]`.
pub fn forward_prefill_all(
    cfg: &ModelConfig,
    weights: &Weights,
    run: &RunConfig,
    tokens: &[u32],
    cache: &mut KVCache,
) -> Result<Tensor> {
    prefill_impl(cfg, weights, run, tokens, cache, true, &mut |_, _| {})
}

/// Prefill while reporting each linear layer's input, for calibration capture.
pub fn forward_prefill_tapped(
    cfg: &ModelConfig,
    weights: &Weights,
    run: &RunConfig,
    tokens: &[u32],
    cache: &mut KVCache,
    tap: &mut dyn FnMut(&str, &Tensor),
) -> Result<Tensor> {
    prefill_impl(cfg, weights, run, tokens, cache, true, tap)
}

/// Append one token's K/V per layer and return next-token logits `[1, vocab]`.
pub fn decode_step(
    cfg: &ModelConfig,
    weights: &Weights,
    run: &RunConfig,
    token: u32,
    cache: &mut KVCache,
) -> Result<Tensor> {
    if run.kv.layers != cfg.layers
        || run.kv.heads_kv != cfg.kv_heads
        || run.kv.head_dim != cfg.head_dim
    {
        return Err(Error::Dimension(
            "run cache config does not match model".to_string(),
        ));
    }
    let start = cache.token_count();
    if start + 1 > cfg.max_positions {
        return Err(Error::InvalidConfig(format!(
            "decode would exceed max positions {}",
            cfg.max_positions
        )));
    }
    let x = run_chunk(cfg, weights, &[token], start, cache, &mut |_, _| {})?;
    let ln = rms_norm_rows(&x, &weights.norm_final);
    matmul(&ln, &weights.lm_head)
}

/// Greedy continuation: prefill `prompt`, then decode `steps` tokens.
pub fn greedy_decode(
    cfg: &ModelConfig,
    weights: &Weights,
    run: &RunConfig,
    prompt: &[u32],
    steps: usize,
    cache: &mut KVCache,
) -> Result<Vec<u32>> {
    let logits = forward_prefill(cfg, weights, run, prompt, cache)?;
    let mut next = argmax(logits.row(0)) as u32;
    let mut out = vec![next];
    for _ in 1..steps {
        let logits = decode_step(cfg, weights, run, next, cache)?;
        next = argmax(logits.row(0)) as u32;
        out.push(next);
    }
    Ok(out)
}

/// Small random model for equivalence and plumbing tests.
pub fn random_model(seed: u64) -> (ModelConfig, Weights) {
    random_model_with(
        seed,
        ModelConfig {
            layers: 2,
            n_heads: 4,
            kv_heads: 2,
            head_dim: 16,
            ffn_dim: 96,
            vocab_size: 64,
            max_positions: 1200,
        },
    )
}

/// Random weights for an arbitrary config, scaled by fan-in.
pub fn random_model_with(seed: u64, cfg: ModelConfig) -> (ModelConfig, Weights) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = cfg.hidden();
    let kv_dim = cfg.kv_heads * cfg.head_dim;
    let mut mat = |rows: usize, cols: usize| {
        let mut t = Tensor::random_normal(vec![rows, cols], &mut rng);
        let scale = 1.0 / (rows as f32).sqrt();
        for v in t.data_mut() {
            *v *= scale;
        }
        t
    };
    let layers = (0..cfg.layers)
        .map(|_| LayerWeights {
            attn_q: mat(hidden, hidden),
            attn_k: mat(hidden, kv_dim),
            attn_v: mat(hidden, kv_dim),
            attn_o: mat(hidden, hidden),
            ffn_up: mat(hidden, cfg.ffn_dim),
            ffn_down: mat(cfg.ffn_dim, hidden),
            norm_attn: Tensor::new(vec![hidden], vec![1.0; hidden]).unwrap(),
            norm_ffn: Tensor::new(vec![hidden], vec![1.0; hidden]).unwrap(),
        })
        .collect();
    let weights = Weights {
        embed: mat(cfg.vocab_size, hidden),
        pos: mat(cfg.max_positions, hidden),
        layers,
        norm_final: Tensor::new(vec![hidden], vec![1.0; hidden]).unwrap(),
        lm_head: mat(hidden, cfg.vocab_size),
    };
    (cfg, weights)
}

// --- induction-head construction ----------------------------------------

/// Width of each hidden-state slot in the induction model.
const SLOT: usize = 64;
const TOK_SLOT: usize = 0;
const POS_SLOT: usize = SLOT;
const PREV_SLOT: usize = 2 * SLOT;
const OUT_SLOT: usize = 3 * SLOT;
const INDUCTION_HIDDEN: usize = 4 * SLOT;
/// Attention logit assigned to an exact match; mismatches sit near zero.
const MATCH_LOGIT: f32 = 300.0;
/// lm_head penalty on the query's own token, breaking the begin-of-sequence
/// self-match tie in favour of the copied successor.
const SELF_PENALTY: f32 = 0.75;
const FREQ_PAIRS: usize = SLOT / 2;
/// Rotation ladder for position codes. The slow top frequency leaves the
/// nearest-neighbour kernel sidelobe around 0.94, i.e. a deliberately slim
/// previous-token matching margin: exact at full precision, broken by int2
/// key noise, grazed by int4, untouched by int8.
const MAX_ROTATION: f32 = 1.2;
const MIN_ROTATION: f32 = std::f32::consts::TAU / 8192.0;

#[derive(Debug, Clone)]
pub struct InductionTemplate {
    pub max_positions: usize,
    /// Seed for the orthonormal token codebook.
    pub code_seed: u64,
}

impl Default for InductionTemplate {
    fn default() -> Self {
        Self {
            max_positions: 2048,
            code_seed: 0x1d0c,
        }
    }
}

fn rotation_freqs() -> Vec<f32> {
    let ratio = MIN_ROTATION / MAX_ROTATION;
    (0..FREQ_PAIRS)
        .map(|k| MAX_ROTATION * ratio.powf(k as f32 / (FREQ_PAIRS as f32 - 1.0)))
        .collect()
}

/// Unit-norm position code built from `FREQ_PAIRS` rotation pairs.
pub fn induction_position_code(p: usize) -> Vec<f32> {
    let freqs = rotation_freqs();
    let norm = 1.0 / (FREQ_PAIRS as f32).sqrt();
    let mut code = vec![0.0f32; SLOT];
    for (k, &f) in freqs.iter().enumerate() {
        let angle = f * p as f32;
        code[2 * k] = angle.cos() * norm;
        code[2 * k + 1] = angle.sin() * norm;
    }
    code
}

/// Dense orthonormal token codebook: seeded Gaussian rows, Gram-Schmidt.
fn token_codebook(vocab: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codes: Vec<Vec<f32>> = Vec::with_capacity(vocab);
    while codes.len() < vocab {
        let mut c = Tensor::random_normal(vec![SLOT], &mut rng).data().to_vec();
        for prev in &codes {
            let dot: f32 = c.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (v, p) in c.iter_mut().zip(prev) {
                *v -= dot * p;
            }
        }
        let norm: f32 = c.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm < 1e-3 {
            continue; // degenerate draw, take another
        }
        for v in c.iter_mut() {
            *v /= norm;
        }
        codes.push(c);
    }
    codes
}

/// Deterministic two-layer attention-only induction model.
///
/// For prompts where the final token has exactly one earlier occurrence, the
/// final-position argmax reproduces the token that followed that occurrence.
pub fn build_induction_model(
    vocab: usize,
    tmpl: &InductionTemplate,
) -> Result<(ModelConfig, Weights)> {
    if vocab < 4 {
        return Err(Error::InvalidConfig(format!(
            "induction model needs vocab >= 4, got {vocab}"
        )));
    }
    if vocab > SLOT {
        return Err(Error::InvalidConfig(format!(
            "induction model supports vocab <= {SLOT}, got {vocab}"
        )));
    }
    if tmpl.max_positions < 16 {
        return Err(Error::InvalidConfig(
            "induction model needs max_positions >= 16".to_string(),
        ));
    }
    let hidden = INDUCTION_HIDDEN;
    let cfg = ModelConfig {
        layers: 2,
        n_heads: 1,
        kv_heads: 1,
        head_dim: hidden,
        ffn_dim: SLOT,
        vocab_size: vocab,
        max_positions: tmpl.max_positions,
    };
    let d_sqrt = (hidden as f32).sqrt();
    let codes = token_codebook(vocab, tmpl.code_seed);
    let freqs = rotation_freqs();

    let mut embed = vec![0.0f32; vocab * hidden];
    for (v, code) in codes.iter().enumerate() {
        embed[v * hidden + TOK_SLOT..v * hidden + TOK_SLOT + SLOT].copy_from_slice(code);
    }
    let mut pos = vec![0.0f32; tmpl.max_positions * hidden];
    for p in 0..tmpl.max_positions {
        let code = induction_position_code(p);
        pos[p * hidden + POS_SLOT..p * hidden + POS_SLOT + SLOT].copy_from_slice(&code);
    }

    let zeros = |rows: usize, cols: usize| Tensor::zeros(vec![rows, cols]);
    let ones = Tensor::new(vec![hidden], vec![1.0; hidden]).unwrap();

    // Layer 1: previous-token head. Residual norm factor is sqrt(hidden/2)
    // (token + position slots hold one unit vector each), so the query scale
    // that lands an exact match at MATCH_LOGIT is beta * sqrt(d) * 2 / hidden.
    let cq = MATCH_LOGIT * d_sqrt * 2.0 / hidden as f32;
    let mut q1 = zeros(hidden, hidden);
    for (k, &f) in freqs.iter().enumerate() {
        let (c, s) = (f.cos(), f.sin());
        // Row-vector convention: out = xn * Q1, rotating pos(p) to pos(p - 1).
        q1.data_mut()[(POS_SLOT + 2 * k) * hidden + 2 * k] = cq * c;
        q1.data_mut()[(POS_SLOT + 2 * k + 1) * hidden + 2 * k] = cq * s;
        q1.data_mut()[(POS_SLOT + 2 * k) * hidden + 2 * k + 1] = -cq * s;
        q1.data_mut()[(POS_SLOT + 2 * k + 1) * hidden + 2 * k + 1] = cq * c;
    }
    let mut k1 = zeros(hidden, hidden);
    for a in 0..SLOT {
        k1.data_mut()[(POS_SLOT + a) * hidden + a] = 1.0;
    }
    let v1_gain = (2.0 / hidden as f32).sqrt();
    let mut v1 = zeros(hidden, hidden);
    for a in 0..SLOT {
        v1.data_mut()[(TOK_SLOT + a) * hidden + a] = v1_gain;
    }
    let mut o1 = zeros(hidden, hidden);
    for a in 0..SLOT {
        o1.data_mut()[a * hidden + PREV_SLOT + a] = 1.0;
    }

    // Layer 2: match current token against stored previous-token codes and
    // copy the matching position's own token. Norm factor is ~sqrt(hidden/3).
    let cg = MATCH_LOGIT * d_sqrt * 3.0 / hidden as f32;
    let mut q2 = zeros(hidden, hidden);
    for a in 0..SLOT {
        q2.data_mut()[(TOK_SLOT + a) * hidden + a] = cg;
    }
    let mut k2 = zeros(hidden, hidden);
    for a in 0..SLOT {
        k2.data_mut()[(PREV_SLOT + a) * hidden + a] = 1.0;
    }
    let v2_gain = (3.0 / hidden as f32).sqrt();
    let mut v2 = zeros(hidden, hidden);
    for a in 0..SLOT {
        v2.data_mut()[(TOK_SLOT + a) * hidden + a] = v2_gain;
    }
    let mut o2 = zeros(hidden, hidden);
    for a in 0..SLOT {
        o2.data_mut()[a * hidden + OUT_SLOT + a] = 1.0;
    }

    // Read the copied code out of OUT_SLOT, with a penalty on the query's own
    // token so a begin-of-sequence self match can never win the argmax.
    let mut lm = vec![0.0f32; hidden * vocab];
    for (v, code) in codes.iter().enumerate() {
        for a in 0..SLOT {
            lm[(OUT_SLOT + a) * vocab + v] = code[a];
            lm[(TOK_SLOT + a) * vocab + v] = -SELF_PENALTY * code[a];
        }
    }

    let layer = |q: Tensor, k: Tensor, v: Tensor, o: Tensor| LayerWeights {
        attn_q: q,
        attn_k: k,
        attn_v: v,
        attn_o: o,
        ffn_up: zeros(hidden, SLOT),
        ffn_down: zeros(SLOT, hidden),
        norm_attn: ones.clone(),
        norm_ffn: ones.clone(),
    };
    let weights = Weights {
        embed: Tensor::new(vec![vocab, hidden], embed)?,
        pos: Tensor::new(vec![tmpl.max_positions, hidden], pos)?,
        layers: vec![layer(q1, k1, v1, o1), layer(q2, k2, v2, o2)],
        norm_final: ones,
        lm_head: Tensor::new(vec![hidden, vocab], lm)?,
    };
    weights.validate(&cfg)?;
    Ok((cfg, weights))
}
