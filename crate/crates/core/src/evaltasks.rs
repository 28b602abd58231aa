//! Synthetic long-context retrieval tasks and fidelity metrics.
//!
//! A task plants unique bigrams: a trigger token appears once early, followed
//! by its answer, then reappears at a query position spread across the depth
//! of the sequence. A model with working long-range retrieval predicts the
//! answer at each query position. Everything is seeded and replayable.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::argmax;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPoint {
    /// Position whose next-token prediction is scored.
    pub position: usize,
    /// Position of the planted earlier occurrence of the query token.
    pub bigram_position: usize,
    pub answer: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InductionTask {
    pub seed: u64,
    pub length: usize,
    pub vocab: usize,
    pub tokens: Vec<u32>,
    pub queries: Vec<QueryPoint>,
}

impl InductionTask {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

/// Number of scored query points for a sequence of `length` tokens.
pub fn query_count(length: usize) -> usize {
    (length / 16).max(1)
}

/// Deterministically generate a task of `length` tokens over `vocab` symbols.
///
/// Triggers come from the upper half of the vocabulary, fillers and answers
/// from the lower half, so every query token has exactly one earlier
/// occurrence. Position 0 is never a trigger. Query positions are spread
/// evenly, covering every depth decile once `length >= 160`.
pub fn generate_task(seed: u64, length: usize, vocab: usize) -> Result<InductionTask> {
    if vocab < 8 {
        return Err(Error::Infeasible(format!("vocab {vocab} < 8")));
    }
    if length < 16 {
        return Err(Error::Infeasible(format!("length {length} < 16")));
    }
    let n_queries = query_count(length);
    let trigger_base = vocab / 2;
    let n_triggers = vocab - trigger_base;
    if n_queries > n_triggers {
        return Err(Error::Infeasible(format!(
            "vocab {vocab} supplies {n_triggers} unique triggers but length {length} needs {n_queries}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filler = |rng: &mut ChaCha8Rng| rng.random_range(0..trigger_base as u32);

    // Evenly spaced query positions.
    let mut query_pos = Vec::with_capacity(n_queries);
    for j in 0..n_queries {
        let p = ((j + 1) * length) / (n_queries + 1);
        query_pos.push(p.clamp(3, length - 1));
    }
    query_pos.dedup();
    let n_queries = query_pos.len();

    let mut occupied: Vec<bool> = vec![false; length];
    for &p in &query_pos {
        occupied[p] = true;
    }

    // Draw each bigram position strictly before its query, never at 0, and
    // never colliding with another planted position.
    let mut bigram_pos = Vec::with_capacity(n_queries);
    for &qp in &query_pos {
        let mut placed = None;
        for _ in 0..10_000 {
            let p = rng.random_range(1..qp.max(2) - 1);
            if !occupied[p] && !occupied[p + 1] {
                occupied[p] = true;
                occupied[p + 1] = true;
                placed = Some(p);
                break;
            }
        }
        match placed {
            Some(p) => bigram_pos.push(p),
            None => {
                return Err(Error::Infeasible(format!(
                    "no room for a bigram before query position {qp}"
                )))
            }
        }
    }

    let mut tokens: Vec<u32> = (0..length).map(|_| filler(&mut rng)).collect();
    let mut queries = Vec::with_capacity(n_queries);
    for (j, (&qp, &bp)) in query_pos.iter().zip(&bigram_pos).enumerate() {
        let trigger = (trigger_base + j) as u32;
        let answer = tokens[bp + 1];
        tokens[bp] = trigger;
        tokens[qp] = trigger;
        queries.push(QueryPoint {
            position: qp,
            bigram_position: bp,
            answer,
        });
    }

    Ok(InductionTask {
        seed,
        length,
        vocab,
        tokens,
        queries,
    })
}

/// Fraction of query positions whose argmax logit matches the planted answer.
///
/// `logits` holds one row per prompt position.
pub fn score_exact_match(logits: &Tensor, task: &InductionTask) -> Result<f64> {
    if logits.rank() != 2 || logits.shape()[0] < task.length {
        return Err(Error::Dimension(format!(
            "need logits for all {} positions, got {:?}",
            task.length,
            logits.shape()
        )));
    }
    let hits = task
        .queries
        .iter()
        .filter(|q| argmax(logits.row(q.position)) as u32 == q.answer)
        .count();
    Ok(hits as f64 / task.queries.len() as f64)
}

/// Score from pre-computed argmax predictions, one per position.
pub fn score_predicted_tokens(predictions: &[u32], task: &InductionTask) -> f64 {
    let hits = task
        .queries
        .iter()
        .filter(|q| predictions[q.position] == q.answer)
        .count();
    hits as f64 / task.queries.len() as f64
}

/// Downstream-fidelity metrics of candidate logits against a baseline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// Fraction of prompts whose argmax agrees with the baseline.
    pub top1_agreement: f64,
    /// Mean over prompts of ||candidate - baseline|| / ||baseline||.
    pub mean_rel_logit_err: f64,
    /// Mean cosine similarity of the logit vectors.
    pub cosine_similarity: f64,
}

/// Compare final-position logits across a prompt set, row for row.
pub fn fidelity(baseline: &[Tensor], candidate: &[Tensor]) -> Result<FidelityReport> {
    if baseline.is_empty() || baseline.len() != candidate.len() {
        return Err(Error::Dimension(format!(
            "fidelity needs matching nonempty sets, got {} and {}",
            baseline.len(),
            candidate.len()
        )));
    }
    let mut agree = 0usize;
    let mut rel_err = 0.0f64;
    let mut cosine = 0.0f64;
    for (b, c) in baseline.iter().zip(candidate) {
        if b.shape() != c.shape() {
            return Err(Error::Dimension(format!(
                "logit shapes differ: {:?} vs {:?}",
                b.shape(),
                c.shape()
            )));
        }
        if argmax(b.data()) == argmax(c.data()) {
            agree += 1;
        }
        let mut diff_sq = 0.0f64;
        let mut b_sq = 0.0f64;
        let mut c_sq = 0.0f64;
        let mut dot = 0.0f64;
        for (&x, &y) in b.data().iter().zip(c.data()) {
            let (x, y) = (f64::from(x), f64::from(y));
            diff_sq += (y - x) * (y - x);
            b_sq += x * x;
            c_sq += y * y;
            dot += x * y;
        }
        rel_err += (diff_sq / b_sq.max(1e-30)).sqrt();
        cosine += dot / (b_sq.sqrt() * c_sq.sqrt()).max(1e-30);
    }
    let n = baseline.len() as f64;
    Ok(FidelityReport {
        top1_agreement: agree as f64 / n,
        mean_rel_logit_err: rel_err / n,
        cosine_similarity: cosine / n,
    })
}
