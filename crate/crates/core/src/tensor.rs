//! Dense row-major f32 tensors and the attention primitives used by the simulator.
//!
//! Everything here is deterministic: matmul and attention reductions run in a
//! fixed left-to-right order so repeated runs are bitwise identical.

use rand::Rng;

use crate::error::{Error, Result};

/// Logit value assigned to masked attention positions.
///
/// The most-negative finite f32 rather than `-inf`, so max-subtraction inside
/// softmax never produces `inf - inf = NaN`. `exp(MASKED - max)` still
/// underflows to exactly 0 for any realistic row maximum.
pub const MASKED_LOGIT: f32 = f32::MIN;

/// Contiguous row-major f32 tensor. No strides, no views.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Build a tensor, validating element count and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {bad}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
        }
    }

    /// Standard-normal entries drawn from `rng` in row-major order.
    pub fn random_normal<R: Rng>(shape: Vec<usize>, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        // Box-Muller keeps the dependency surface small and the stream stable.
        while data.len() < numel {
            let u1: f32 = rng.random::<f32>().max(1e-12);
            let u2: f32 = rng.random::<f32>();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f32::consts::PI * u2;
            data.push(r * theta.cos());
            if data.len() < numel {
                data.push(r * theta.sin());
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Element at `[i, j]` of a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> f32 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Element at `[h, i, j]` of a rank-3 tensor.
    pub fn at3(&self, h: usize, i: usize, j: usize) -> f32 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(h * self.shape[1] + i) * self.shape[2] + j]
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        debug_assert_eq!(self.rank(), 2);
        let n = self.shape[1];
        &self.data[i * n..(i + 1) * n]
    }
}

/// Causal attention mask, optionally offset by a count of previously cached
/// tokens: query row `i` may attend key positions `j <= offset + i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMask {
    Causal,
    CausalWithOffset(usize),
}

impl AttentionMask {
    pub fn offset(self) -> usize {
        match self {
            AttentionMask::Causal => 0,
            AttentionMask::CausalWithOffset(o) => o,
        }
    }
}

/// `[m,k] x [k,n] -> [m,n]` with a fixed left-to-right summation over `k`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Dimension(format!(
            "matmul expects rank-2 operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// Row-wise softmax with per-row max subtraction; rows are the last axis.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.rank() == 0 || x.shape[x.rank() - 1] == 0 {
        return Err(Error::Dimension(format!(
            "softmax over empty rows: {:?}",
            x.shape()
        )));
    }
    let n = x.shape[x.rank() - 1];
    let mut out = x.data.clone();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(Tensor {
        shape: x.shape.clone(),
        data: out,
    })
}

/// Masked scaled-dot-product attention over `[heads, seq, dim]` tensors.
///
/// `softmax(Q K^T / sqrt(d) + mask) V` per head; masked logits are set (not
/// added) to [`MASKED_LOGIT`].
pub fn sdpa(q: &Tensor, k: &Tensor, v: &Tensor, mask: AttentionMask) -> Result<Tensor> {
    for (name, t) in [("q", q), ("k", k), ("v", v)] {
        if t.rank() != 3 {
            return Err(Error::Dimension(format!(
                "sdpa expects [heads, seq, dim] for {name}, got {:?}",
                t.shape()
            )));
        }
    }
    let (h, m, d) = (q.shape[0], q.shape[1], q.shape[2]);
    let n = k.shape[1];
    if k.shape[0] != h || v.shape[0] != h {
        return Err(Error::Dimension(format!(
            "head count mismatch: q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if k.shape[2] != d || v.shape[2] != d || v.shape[1] != n {
        return Err(Error::Dimension(format!(
            "head dim or key count mismatch: q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let offset = mask.offset();
    let scale = 1.0 / (d as f32).sqrt();
    let mut out = vec![0.0f32; h * m * d];
    let mut scores = vec![0.0f32; n];
    for head in 0..h {
        for i in 0..m {
            let q_row = &q.data[(head * m + i) * d..(head * m + i + 1) * d];
            for (j, s) in scores.iter_mut().enumerate() {
                if j > offset + i {
                    *s = MASKED_LOGIT;
                } else {
                    let k_row = &k.data[(head * n + j) * d..(head * n + j + 1) * d];
                    let mut dot = 0.0f32;
                    for (a, b) in q_row.iter().zip(k_row) {
                        dot += a * b;
                    }
                    *s = dot * scale;
                }
            }
            let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            let out_row = &mut out[(head * m + i) * d..(head * m + i + 1) * d];
            for (j, s) in scores.iter().enumerate() {
                let w = s / sum;
                if w == 0.0 {
                    continue;
                }
                let v_row = &v.data[(head * n + j) * d..(head * n + j + 1) * d];
                for (o, &vv) in out_row.iter_mut().zip(v_row) {
                    *o += w * vv;
                }
            }
        }
    }
    Ok(Tensor {
        shape: vec![h, m, d],
        data: out,
    })
}
