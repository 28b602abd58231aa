//! Configuration sweeps: enumerate the joint optimization space, evaluate each
//! configuration to a (total memory, accuracy) point, and extract the
//! non-dominated frontier.
//!
//! A point is dominated if another configuration reaches equal-or-better
//! accuracy at equal-or-lower memory with at least one strict inequality.
//! Exact duplicates keep the lexicographically smallest config name.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaltasks::{fidelity, generate_task, score_exact_match, FidelityReport, InductionTask};
use crate::kvcache::{KVCache, KVCacheConfig};
use crate::memmodel::{
    effective_weight_bits, total_memory, ArchSpec, AttentionKind, KvHeadMode, MemQuery,
    MemoryProfile,
};
use crate::model::{
    build_induction_model, forward_prefill_all, ChunkMode, InductionTemplate, ModelConfig,
    RunConfig, WeightMode,
};
use crate::quant::{BitWidth, Granularity, QuantSpec};
use crate::tensor::Tensor;
use crate::weightquant::{quantize_weights, CalibrationSet, WeightQuantSpec};
use crate::weights::{load_weights, Weights};

/// Chunk choice in a sweep file: a token count or the string `"full"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepChunk(pub ChunkMode);

impl Serialize for SweepChunk {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            ChunkMode::Full => s.serialize_str("full"),
            ChunkMode::Chunked(n) => s.serialize_u64(n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for SweepChunk {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(0) => Err(serde::de::Error::custom("chunk size must be at least 1")),
            Raw::Num(n) => Ok(SweepChunk(ChunkMode::Chunked(n))),
            Raw::Word(w) if w == "full" => Ok(SweepChunk(ChunkMode::Full)),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "chunk must be a token count or \"full\", got {w:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSource {
    /// Built-in deterministic induction model.
    Induction {
        vocab: usize,
        #[serde(default = "default_max_positions")]
        max_positions: usize,
    },
    /// Weights container plus a model-config JSON sidecar.
    File { weights: PathBuf, config: PathBuf },
}

fn default_max_positions() -> usize {
    2048
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub seeds: Vec<u64>,
    pub length: usize,
    pub vocab: usize,
}

fn default_context() -> usize {
    10_000
}

fn default_activation_bytes() -> u64 {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySpec {
    /// Architecture the memory axis is reported for; defaults to one derived
    /// from the simulated model.
    #[serde(default)]
    pub arch: Option<PathBuf>,
    /// Reporting context length for the memory axis.
    #[serde(default = "default_context")]
    pub context: usize,
    #[serde(default)]
    pub count_group_overhead: bool,
    #[serde(default = "default_activation_bytes")]
    pub activation_bytes: u64,
}

impl Default for MemorySpec {
    fn default() -> Self {
        Self {
            arch: None,
            context: default_context(),
            count_group_overhead: false,
            activation_bytes: default_activation_bytes(),
        }
    }
}

fn default_calib_prompts() -> usize {
    32
}

fn default_calib_length() -> usize {
    256
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibSpec {
    #[serde(default = "default_calib_prompts")]
    pub prompts: usize,
    #[serde(default = "default_calib_length")]
    pub length: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CalibSpec {
    fn default() -> Self {
        Self {
            prompts: default_calib_prompts(),
            length: default_calib_length(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// `(k_bits, v_bits)` pairs; 16/16 means pass-through KV.
    pub kv_precisions: Vec<(u32, u32)>,
    pub granularities: Vec<Granularity>,
    pub group_sizes: Vec<usize>,
    pub smoothing: Vec<bool>,
    pub chunks: Vec<SweepChunk>,
    pub weight_modes: Vec<WeightMode>,
    pub model: ModelSource,
    pub tasks: TaskSpec,
    #[serde(default)]
    pub memory: MemorySpec,
    #[serde(default)]
    pub calibration: CalibSpec,
    #[serde(default)]
    pub jobs: Option<usize>,
}

/// One enumerated configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigPoint {
    pub name: String,
    pub k_bits: u32,
    pub v_bits: u32,
    pub granularity: Granularity,
    pub group_size: usize,
    pub smoothing: bool,
    pub chunk: ChunkMode,
    pub weight_mode: WeightMode,
}

impl ConfigPoint {
    pub fn build(
        kv: (u32, u32),
        granularity: Granularity,
        group_size: usize,
        smoothing: bool,
        chunk: ChunkMode,
        weight_mode: WeightMode,
    ) -> Self {
        let gran_tag = match granularity {
            Granularity::PerTokenGroup => "pt",
            Granularity::PerSequenceGroup => "ps",
            Granularity::PerTensor => "ptr",
        };
        let chunk_tag = match chunk {
            ChunkMode::Full => "full".to_string(),
            ChunkMode::Chunked(c) => format!("pc{c}"),
        };
        let smooth_tag = if smoothing { "_ks" } else { "" };
        let name = format!(
            "{}_k{}v{}_{}_g{}{}_{}",
            weight_mode.label(),
            kv.0,
            kv.1,
            gran_tag,
            group_size,
            smooth_tag,
            chunk_tag
        );
        Self {
            name,
            k_bits: kv.0,
            v_bits: kv.1,
            granularity,
            group_size,
            smoothing,
            chunk,
            weight_mode,
        }
    }

    /// Cache configuration this point runs under. Smoothing applies to K only.
    pub fn cache_config(&self, model: &ModelConfig) -> Result<KVCacheConfig> {
        let k_spec = QuantSpec::new(
            BitWidth::from_bits(self.k_bits)?,
            self.granularity,
            self.group_size,
            self.smoothing,
        );
        let v_spec = QuantSpec::new(
            BitWidth::from_bits(self.v_bits)?,
            self.granularity,
            self.group_size,
            false,
        );
        Ok(KVCacheConfig {
            k_spec,
            v_spec,
            layers: model.layers,
            heads_kv: model.kv_heads,
            head_dim: model.head_dim,
        })
    }
}

/// Deterministic lexicographic enumeration of the cross-product, with invalid
/// combinations skipped and the reason recorded.
pub fn enumerate(spec: &SweepSpec, head_dim: usize) -> (Vec<ConfigPoint>, Vec<(String, String)>) {
    let mut configs = Vec::new();
    let mut skips = Vec::new();
    for &kv in &spec.kv_precisions {
        for &gran in &spec.granularities {
            for &group in &spec.group_sizes {
                for &smooth in &spec.smoothing {
                    for &chunk in &spec.chunks {
                        for &wm in &spec.weight_modes {
                            let cp = ConfigPoint::build(kv, gran, group, smooth, chunk.0, wm);
                            let quantized = kv.0 < 16 || kv.1 < 16;
                            if quantized
                                && gran == Granularity::PerTokenGroup
                                && !head_dim.is_multiple_of(group)
                            {
                                skips.push((
                                    cp.name,
                                    format!(
                                        "group {group} does not divide head dim {head_dim}"
                                    ),
                                ));
                                continue;
                            }
                            if kv.0 != 16 && !matches!(kv.0, 2 | 4 | 8)
                                || kv.1 != 16 && !matches!(kv.1, 2 | 4 | 8)
                            {
                                skips.push((
                                    cp.name,
                                    format!("unsupported precision pair {kv:?}"),
                                ));
                                continue;
                            }
                            configs.push(cp);
                        }
                    }
                }
            }
        }
    }
    (configs, skips)
}

/// One evaluated configuration: memory coordinates from the analytic model,
/// accuracy and fidelity from simulation.
#[derive(Debug, Clone, Serialize)]
pub struct EvalPoint {
    pub config: ConfigPoint,
    pub total_mem_bytes: u64,
    pub model_bytes: u64,
    pub kv_bytes: u64,
    pub peak_bytes: u64,
    pub accuracy: f64,
    pub fidelity: FidelityReport,
    /// Bytes the simulated cache actually held at the end of the last task.
    pub simulated_kv_bytes: u64,
    pub on_frontier: bool,
}

impl EvalPoint {
    pub fn bitwise_eq(&self, other: &EvalPoint) -> bool {
        self.config == other.config
            && self.total_mem_bytes == other.total_mem_bytes
            && self.model_bytes == other.model_bytes
            && self.kv_bytes == other.kv_bytes
            && self.peak_bytes == other.peak_bytes
            && self.accuracy.to_bits() == other.accuracy.to_bits()
            && self.fidelity.top1_agreement.to_bits() == other.fidelity.top1_agreement.to_bits()
            && self.fidelity.mean_rel_logit_err.to_bits()
                == other.fidelity.mean_rel_logit_err.to_bits()
            && self.simulated_kv_bytes == other.simulated_kv_bytes
    }
}

/// Shared state for evaluating many configurations of one sweep.
pub struct Evaluator {
    pub model_cfg: ModelConfig,
    weights_full: Weights,
    weights_w4: Option<Weights>,
    weights_w4awq: Option<Weights>,
    pub tasks: Vec<InductionTask>,
    baseline_final_logits: Vec<Tensor>,
    pub baseline_accuracy: f64,
    pub arch: ArchSpec,
    memory: MemorySpec,
}

fn identity_run(cfg: &ModelConfig) -> RunConfig {
    RunConfig {
        chunk: ChunkMode::Full,
        kv: KVCacheConfig {
            k_spec: QuantSpec::passthrough(),
            v_spec: QuantSpec::passthrough(),
            layers: cfg.layers,
            heads_kv: cfg.kv_heads,
            head_dim: cfg.head_dim,
        },
        weight_mode: WeightMode::W16,
    }
}

impl Evaluator {
    pub fn prepare(spec: &SweepSpec) -> Result<Self> {
        let (model_cfg, weights_full) = match &spec.model {
            ModelSource::Induction {
                vocab,
                max_positions,
            } => build_induction_model(
                *vocab,
                &InductionTemplate {
                    max_positions: *max_positions,
                    ..InductionTemplate::default()
                },
            )?,
            ModelSource::File { weights, config } => {
                let text = std::fs::read_to_string(config)?;
                let cfg: ModelConfig = serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", config.display())))?;
                cfg.validate()?;
                let w = load_weights(weights, &cfg)?;
                (cfg, w)
            }
        };
        if spec.tasks.vocab > model_cfg.vocab_size {
            return Err(Error::InvalidConfig(format!(
                "task vocab {} exceeds model vocab {}",
                spec.tasks.vocab, model_cfg.vocab_size
            )));
        }
        if spec.tasks.seeds.is_empty() {
            return Err(Error::InvalidConfig("no task seeds".to_string()));
        }

        let tasks: Vec<InductionTask> = spec
            .tasks
            .seeds
            .iter()
            .map(|&s| generate_task(s, spec.tasks.length, spec.tasks.vocab))
            .collect::<Result<_>>()?;

        // Weight variants used by the sweep, prepared once.
        let needs_w4 = spec.weight_modes.contains(&WeightMode::W4Rtn);
        let needs_awq = spec.weight_modes.contains(&WeightMode::W4Awq);
        let weights_w4 = if needs_w4 {
            Some(quantize_weights(&weights_full, &WeightQuantSpec::rtn(), None)?.0)
        } else {
            None
        };
        let weights_w4awq = if needs_awq {
            let calib = CalibrationSet::capture(
                &model_cfg,
                &weights_full,
                spec.calibration.prompts,
                spec.calibration.length.min(model_cfg.max_positions),
                spec.calibration.seed,
            )?;
            Some(
                quantize_weights(
                    &weights_full,
                    &WeightQuantSpec::activation_aware(),
                    Some(&calib),
                )?
                .0,
            )
        } else {
            None
        };

        // Full-precision baseline over the task set.
        let run = identity_run(&model_cfg);
        let mut baseline_final_logits = Vec::with_capacity(tasks.len());
        let mut acc_sum = 0.0f64;
        for task in &tasks {
            let mut cache = KVCache::new(run.kv.clone())?;
            let logits =
                forward_prefill_all(&model_cfg, &weights_full, &run, &task.tokens, &mut cache)?;
            acc_sum += score_exact_match(&logits, task)?;
            baseline_final_logits.push(final_row(&logits));
        }
        let baseline_accuracy = acc_sum / tasks.len() as f64;

        let arch = match &spec.memory.arch {
            Some(path) => ArchSpec::load(path)?,
            None => ArchSpec {
                name: "simulated-model".to_string(),
                param_count: weights_full.param_count(),
                layers: model_cfg.layers,
                n_heads: model_cfg.n_heads,
                kv_heads: model_cfg.kv_heads,
                head_dim: model_cfg.head_dim,
                vocab_size: model_cfg.vocab_size,
                source: "derived from the simulated model".to_string(),
            },
        };

        Ok(Self {
            model_cfg,
            weights_full,
            weights_w4,
            weights_w4awq,
            tasks,
            baseline_final_logits,
            baseline_accuracy,
            arch,
            memory: spec.memory.clone(),
        })
    }

    fn weights_for(&self, mode: WeightMode) -> &Weights {
        match mode {
            WeightMode::W16 => &self.weights_full,
            WeightMode::W4Rtn => self.weights_w4.as_ref().expect("w4 weights prepared"),
            WeightMode::W4Awq => self.weights_w4awq.as_ref().expect("awq weights prepared"),
        }
    }

    /// Analytic memory profile for a configuration at the reporting context.
    pub fn memory_profile(&self, cp: &ConfigPoint) -> MemoryProfile {
        let weight_bits = if cp.weight_mode == WeightMode::W16 {
            16.0
        } else if self.memory.count_group_overhead {
            effective_weight_bits(4.0, crate::weightquant::WEIGHT_GROUP, 16, 16)
        } else {
            4.0
        };
        let attention = match cp.chunk {
            ChunkMode::Full => AttentionKind::Sdpa,
            ChunkMode::Chunked(c) => AttentionKind::ChunkedSdpa { chunk: c },
        };
        let q = MemQuery {
            context: self.memory.context,
            batch: 1,
            weight_bits,
            k_bits: cp.k_bits,
            v_bits: cp.v_bits,
            group_size: cp.group_size,
            activation_bytes: self.memory.activation_bytes,
            attention,
            count_group_overhead: self.memory.count_group_overhead,
            kv_head_mode: KvHeadMode::AttentionHeads,
        };
        total_memory(&q, &self.arch)
    }

    /// Run the simulator over the task set under one configuration.
    pub fn evaluate(&self, cp: &ConfigPoint) -> Result<EvalPoint> {
        self.evaluate_inner(cp).map_err(|e| e.for_config(&cp.name))
    }

    fn evaluate_inner(&self, cp: &ConfigPoint) -> Result<EvalPoint> {
        let run = RunConfig {
            chunk: cp.chunk,
            kv: cp.cache_config(&self.model_cfg)?,
            weight_mode: cp.weight_mode,
        };
        let weights = self.weights_for(cp.weight_mode);
        let mut acc_sum = 0.0f64;
        let mut final_rows = Vec::with_capacity(self.tasks.len());
        let mut simulated_kv_bytes = 0u64;
        for task in &self.tasks {
            let mut cache = KVCache::new(run.kv.clone())?;
            let logits =
                forward_prefill_all(&self.model_cfg, weights, &run, &task.tokens, &mut cache)?;
            acc_sum += score_exact_match(&logits, task)?;
            final_rows.push(final_row(&logits));
            simulated_kv_bytes = cache.stored_bytes(self.memory.count_group_overhead);
        }
        let accuracy = acc_sum / self.tasks.len() as f64;
        let fid = fidelity(&self.baseline_final_logits, &final_rows)?;
        let profile = self.memory_profile(cp);
        Ok(EvalPoint {
            config: cp.clone(),
            total_mem_bytes: profile.total_bytes,
            model_bytes: profile.model_bytes,
            kv_bytes: profile.kv_bytes,
            peak_bytes: profile.peak_activation_bytes,
            accuracy,
            fidelity: fid,
            simulated_kv_bytes,
            on_frontier: false,
        })
    }
}

fn final_row(logits: &Tensor) -> Tensor {
    let rows = logits.shape()[0];
    Tensor::new(
        vec![1, logits.shape()[1]],
        logits.row(rows - 1).to_vec(),
    )
    .expect("final logit row")
}

/// Indices of the non-dominated points, sorted by memory ascending.
///
/// Accuracy is maximized, memory minimized. Exact (memory, accuracy)
/// duplicates keep only the lexicographically smallest name.
pub fn frontier_raw(points: &[(u64, f64, &str)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .cmp(&points[b].0)
            .then(
                points[b]
                    .1
                    .partial_cmp(&points[a].1)
                    .expect("accuracy is finite"),
            )
            .then(points[a].2.cmp(points[b].2))
    });
    let mut kept = Vec::new();
    let mut best_acc = f64::NEG_INFINITY;
    for idx in order {
        if points[idx].1 > best_acc {
            kept.push(idx);
            best_acc = points[idx].1;
        }
    }
    kept
}

/// Frontier over evaluated points; returns indices sorted by memory ascending.
pub fn frontier(points: &[EvalPoint]) -> Vec<usize> {
    let raw: Vec<(u64, f64, &str)> = points
        .iter()
        .map(|p| (p.total_mem_bytes, p.accuracy, p.config.name.as_str()))
        .collect();
    frontier_raw(&raw)
}

/// Results of one sweep, in enumeration order with frontier flags set.
#[derive(Debug, Serialize)]
pub struct SweepOutcome {
    pub points: Vec<EvalPoint>,
    pub skips: Vec<(String, String)>,
    pub baseline_accuracy: f64,
    pub arch_name: String,
}

/// Evaluate every enumerated configuration, in parallel, deterministically.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    let evaluator = Evaluator::prepare(spec)?;
    let (configs, skips) = enumerate(spec, evaluator.model_cfg.head_dim);
    let mut points: Vec<EvalPoint> = configs
        .par_iter()
        .map(|cp| evaluator.evaluate(cp))
        .collect::<Result<Vec<_>>>()?;
    for idx in frontier(&points) {
        points[idx].on_frontier = true;
    }
    Ok(SweepOutcome {
        points,
        skips,
        baseline_accuracy: evaluator.baseline_accuracy,
        arch_name: evaluator.arch.name.clone(),
    })
}

/// Exact column contract of the results CSV.
pub const CSV_HEADER: &str = "config,w_bits,k_bits,v_bits,granularity,group,smoothing,chunk,total_mem_bytes,model_bytes,kv_bytes,peak_bytes,accuracy,top1_agreement,rel_logit_err,on_frontier";

pub fn csv_row(p: &EvalPoint) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        p.config.name,
        p.config.weight_mode.weight_bits(),
        p.config.k_bits,
        p.config.v_bits,
        p.config.granularity.label(),
        p.config.group_size,
        u8::from(p.config.smoothing),
        p.config.chunk.label(),
        p.total_mem_bytes,
        p.model_bytes,
        p.kv_bytes,
        p.peak_bytes,
        p.accuracy,
        p.fidelity.top1_agreement,
        p.fidelity.mean_rel_logit_err,
        u8::from(p.on_frontier),
    )
}

pub fn results_csv(points: &[EvalPoint]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&csv_row(p));
        out.push('\n');
    }
    out
}

/// A parsed results-CSV row: the raw fields plus typed accessors for the
/// columns the frontier needs.
#[derive(Debug, Clone)]
pub struct ParsedRow {
    pub fields: Vec<String>,
}

impl ParsedRow {
    pub fn config(&self) -> &str {
        &self.fields[0]
    }

    pub fn total_mem_bytes(&self) -> Result<u64> {
        self.fields[8]
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad total_mem_bytes {}", self.fields[8])))
    }

    pub fn accuracy(&self) -> Result<f64> {
        self.fields[12]
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad accuracy {}", self.fields[12])))
    }

    pub fn line(&self) -> String {
        self.fields.join(",")
    }
}

/// Parse a results CSV produced by [`results_csv`], validating the header.
pub fn parse_results_csv(text: &str) -> Result<Vec<ParsedRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        Some(h) => {
            return Err(Error::InvalidConfig(format!(
                "unexpected CSV header: {h}"
            )))
        }
        None => return Err(Error::InvalidConfig("empty CSV".to_string())),
    }
    let want = CSV_HEADER.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != want {
            return Err(Error::InvalidConfig(format!(
                "row {}: {} fields, expected {want}",
                i + 2,
                fields.len()
            )));
        }
        rows.push(ParsedRow { fields });
    }
    Ok(rows)
}

/// Recompute the frontier from parsed CSV rows alone.
pub fn frontier_from_rows(rows: &[ParsedRow]) -> Result<Vec<usize>> {
    let mut raw = Vec::with_capacity(rows.len());
    for r in rows {
        raw.push((r.total_mem_bytes()?, r.accuracy()?, r.config()));
    }
    let raw_refs: Vec<(u64, f64, &str)> = raw.iter().map(|(m, a, n)| (*m, *a, *n)).collect();
    Ok(frontier_raw(&raw_refs))
}
