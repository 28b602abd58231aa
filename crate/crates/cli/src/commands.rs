//! Implementations of the four subcommands.

use std::path::PathBuf;

use serde::Serialize;

use kvpareto_core::error::Error as CoreError;
use kvpareto_core::memmodel::{
    effective_weight_bits, memory_reduction, total_memory, ArchSpec, AttentionKind, KvHeadMode,
    MemQuery, MemoryProfile,
};
use kvpareto_core::model::{ChunkMode, WeightMode};
use kvpareto_core::pareto::{
    frontier_from_rows, parse_results_csv, results_csv, run_sweep, CalibSpec, ConfigPoint,
    Evaluator, MemorySpec, ModelSource, SweepChunk, SweepSpec, TaskSpec, CSV_HEADER,
};
use kvpareto_core::quant::Granularity;

use crate::svg::{scatter_svg, PlotPoint};
use crate::{CliError, CliResult};

fn parse_kv_pair(s: &str) -> Result<(u32, u32), String> {
    let (k, v) = s
        .split_once(',')
        .ok_or_else(|| format!("expected K,V (e.g. 8,4), got {s:?}"))?;
    let k = k.trim().parse().map_err(|_| format!("bad K bits {k:?}"))?;
    let v = v.trim().parse().map_err(|_| format!("bad V bits {v:?}"))?;
    for b in [k, v] {
        if !matches!(b, 2 | 4 | 8 | 16) {
            return Err(format!("bits must be one of 2, 4, 8, 16; got {b}"));
        }
    }
    Ok((k, v))
}

fn parse_chunk(s: &str) -> Result<ChunkMode, String> {
    if s == "full" {
        return Ok(ChunkMode::Full);
    }
    let n: usize = s
        .parse()
        .map_err(|_| format!("chunk must be a token count or 'full', got {s:?}"))?;
    if n == 0 {
        return Err("chunk size must be at least 1".to_string());
    }
    Ok(ChunkMode::Chunked(n))
}

fn parse_granularity(s: &str) -> Result<Granularity, String> {
    match s {
        "per-token" => Ok(Granularity::PerTokenGroup),
        "per-seq" => Ok(Granularity::PerSequenceGroup),
        "per-tensor" => Ok(Granularity::PerTensor),
        other => Err(format!(
            "granularity must be per-token, per-seq or per-tensor; got {other:?}"
        )),
    }
}

fn parse_weights(s: &str) -> Result<WeightMode, String> {
    match s {
        "w16" => Ok(WeightMode::W16),
        "w4" => Ok(WeightMode::W4Rtn),
        "w4awq" => Ok(WeightMode::W4Awq),
        other => Err(format!("weights must be w16, w4 or w4awq; got {other:?}")),
    }
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected on or off, got {other:?}")),
    }
}

#[derive(clap::Args, Debug)]
pub struct SweepArgs {
    /// Sweep definition file (JSON).
    #[arg(long = "sweep")]
    pub sweep: PathBuf,
    /// Output directory for results.csv and summary.json.
    #[arg(long = "out")]
    pub out: PathBuf,
    /// Worker threads; falls back to KVPARETO_JOBS, then the sweep file, then
    /// all cores. Never changes results.
    #[arg(long = "jobs")]
    pub jobs: Option<usize>,
}

fn resolve_jobs(cli: Option<usize>, from_file: Option<usize>) -> usize {
    cli.or_else(|| {
        std::env::var("KVPARETO_JOBS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .or(from_file)
    .unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(usize::from)
            .unwrap_or(1)
    })
    .max(1)
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    arch: &'a str,
    baseline_accuracy: f64,
    configs: usize,
    frontier: Vec<&'a str>,
    skipped: &'a [(String, String)],
    points: &'a [kvpareto_core::pareto::EvalPoint],
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.sweep)
        .map_err(|e| CliError::parse(format!("{}: {e}", args.sweep.display())))?;
    let spec: SweepSpec = serde_json::from_str(&text).map_err(|e| {
        CliError::parse(format!(
            "{}: {} (line {}, column {})",
            args.sweep.display(),
            e,
            e.line(),
            e.column()
        ))
    })?;

    let jobs = resolve_jobs(args.jobs, spec.jobs);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::parse(format!("cannot build worker pool: {e}")))?;
    let outcome = pool.install(|| run_sweep(&spec)).map_err(CliError::from)?;

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::parse(e.to_string()))?;
    let csv_path = args.out.join("results.csv");
    std::fs::write(&csv_path, results_csv(&outcome.points))
        .map_err(|e| CliError::parse(e.to_string()))?;

    let frontier: Vec<&str> = outcome
        .points
        .iter()
        .filter(|p| p.on_frontier)
        .map(|p| p.config.name.as_str())
        .collect();
    let summary = SweepSummary {
        arch: &outcome.arch_name,
        baseline_accuracy: outcome.baseline_accuracy,
        configs: outcome.points.len(),
        frontier: frontier.clone(),
        skipped: &outcome.skips,
        points: &outcome.points,
    };
    let summary_path = args.out.join("summary.json");
    std::fs::write(
        &summary_path,
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )
    .map_err(|e| CliError::parse(e.to_string()))?;

    println!(
        "evaluated {} configs ({} skipped), {} on the frontier",
        outcome.points.len(),
        outcome.skips.len(),
        frontier.len()
    );
    println!("results: {}", csv_path.display());
    println!("summary: {}", summary_path.display());
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct MemoryArgs {
    /// Architecture description file.
    #[arg(long = "arch")]
    pub arch: PathBuf,
    /// Context length in tokens.
    #[arg(long = "context")]
    pub context: usize,
    /// K,V bit widths (2|4|8|16 each).
    #[arg(long = "kv", value_parser = parse_kv_pair, default_value = "16,16")]
    pub kv: (u32, u32),
    /// Group size for KV parameter overhead accounting.
    #[arg(long = "group", default_value_t = 64)]
    pub group: usize,
    /// Prefill chunk size or 'full'.
    #[arg(long = "chunk", value_parser = parse_chunk, default_value = "full")]
    pub chunk: ChunkMode,
    /// Weight mode: w16, w4 or w4awq.
    #[arg(long = "weights", value_parser = parse_weights, default_value = "w16")]
    pub weights: WeightMode,
    /// Count stored scale/zero pairs against KV and weight memory.
    #[arg(long = "overhead", value_parser = parse_on_off, default_value = "off", action = clap::ArgAction::Set)]
    pub overhead: bool,
    /// Use a flash-attention working set instead: BQ,BKV[,WORKSPACE].
    #[arg(long = "flash")]
    pub flash: Option<String>,
    /// Activation element size in bytes.
    #[arg(long = "act-bytes", default_value_t = 2)]
    pub act_bytes: u64,
    /// Write the profile as JSON here.
    #[arg(long = "json")]
    pub json: Option<PathBuf>,
}

#[derive(Serialize)]
struct MemoryReport {
    arch: String,
    context: usize,
    k_bits: u32,
    v_bits: u32,
    weight_bits: f64,
    chunk: String,
    profile: MemoryProfile,
    baseline: MemoryProfile,
    reduction_pct: f64,
}

pub fn memory_query(args: &MemoryArgs) -> CliResult<(ArchSpec, MemQuery)> {
    let arch = ArchSpec::load(&args.arch).map_err(CliError::from)?;
    let attention = match &args.flash {
        Some(spec) => {
            let parts: Vec<&str> = spec.split(',').collect();
            if parts.len() < 2 || parts.len() > 3 {
                return Err(CliError::parse(format!(
                    "--flash expects BQ,BKV[,WORKSPACE], got {spec:?}"
                )));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| CliError::parse(format!("bad flash block {s:?}")))
            };
            AttentionKind::Flash {
                block_q: parse(parts[0])? as usize,
                block_kv: parse(parts[1])? as usize,
                workspace: if parts.len() == 3 { parse(parts[2])? } else { 0 },
            }
        }
        None => match args.chunk {
            ChunkMode::Full => AttentionKind::Sdpa,
            ChunkMode::Chunked(c) => AttentionKind::ChunkedSdpa { chunk: c },
        },
    };
    let weight_bits = match args.weights {
        WeightMode::W16 => 16.0,
        _ if args.overhead => {
            effective_weight_bits(4.0, kvpareto_core::weightquant::WEIGHT_GROUP, 16, 16)
        }
        _ => 4.0,
    };
    let q = MemQuery {
        context: args.context,
        batch: 1,
        weight_bits,
        k_bits: args.kv.0,
        v_bits: args.kv.1,
        group_size: args.group,
        activation_bytes: args.act_bytes,
        attention,
        count_group_overhead: args.overhead,
        kv_head_mode: KvHeadMode::AttentionHeads,
    };
    Ok((arch, q))
}

pub fn cmd_memory(args: &MemoryArgs) -> CliResult<()> {
    let (arch, q) = memory_query(args)?;
    let profile = total_memory(&q, &arch);
    let baseline = total_memory(&MemQuery::bf16_baseline(args.context), &arch);
    let reduction = memory_reduction(&baseline, &profile);

    println!("{} @ {} tokens", arch.name, args.context);
    println!(
        "config: k{}v{} weights {:.3} bits/param {}",
        q.k_bits,
        q.v_bits,
        q.weight_bits,
        match q.attention {
            AttentionKind::Sdpa => "sdpa".to_string(),
            AttentionKind::ChunkedSdpa { chunk } => format!("pc{chunk}"),
            AttentionKind::Flash { block_q, block_kv, .. } =>
                format!("flash({block_q},{block_kv})"),
        }
    );
    println!("{}", profile.describe());
    println!(
        "bf16 single-pass baseline: {} B ({:.2} GiB)",
        baseline.total_bytes,
        MemoryProfile::gib(baseline.total_bytes)
    );
    println!("reduction vs baseline: {reduction:.2}%");

    if let Some(path) = &args.json {
        let report = MemoryReport {
            arch: arch.name.clone(),
            context: args.context,
            k_bits: q.k_bits,
            v_bits: q.v_bits,
            weight_bits: q.weight_bits,
            chunk: args.chunk.label(),
            profile,
            baseline,
            reduction_pct: reduction,
        };
        std::fs::write(
            path,
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )
        .map_err(|e| CliError::parse(e.to_string()))?;
    }
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct FrontierArgs {
    /// Results CSV produced by `sweep`.
    pub results: PathBuf,
    /// Output directory for frontier.csv.
    #[arg(long = "out")]
    pub out: PathBuf,
    /// Also write an SVG scatter here.
    #[arg(long = "svg")]
    pub svg: Option<PathBuf>,
    /// Log-scale the memory axis of the SVG.
    #[arg(long = "log-x", default_value_t = false)]
    pub log_x: bool,
}

pub fn cmd_frontier(args: &FrontierArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.results)
        .map_err(|e| CliError::parse(format!("{}: {e}", args.results.display())))?;
    let rows = parse_results_csv(&text).map_err(CliError::from)?;
    let kept = frontier_from_rows(&rows).map_err(CliError::from)?;
    if rows.is_empty() {
        eprintln!("warning: no data rows; frontier is empty");
    }

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::parse(e.to_string()))?;
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for &i in &kept {
        let mut fields = rows[i].fields.clone();
        let last = fields.len() - 1;
        fields[last] = "1".to_string();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    let path = args.out.join("frontier.csv");
    std::fs::write(&path, out).map_err(|e| CliError::parse(e.to_string()))?;
    println!("{} frontier rows: {}", kept.len(), path.display());

    if let Some(svg_path) = &args.svg {
        let mut points = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            points.push(PlotPoint {
                mem_bytes: r.total_mem_bytes().map_err(CliError::from)?,
                accuracy: r.accuracy().map_err(CliError::from)?,
                on_frontier: kept.contains(&i),
                name: r.config().to_string(),
            });
        }
        // Baseline line: the full-prefill pass-through row, when present.
        let baseline = rows
            .iter()
            .find(|r| r.config().starts_with("w16a16_k16v16") && r.config().ends_with("_full"))
            .map(|r| r.accuracy())
            .transpose()
            .map_err(CliError::from)?;
        std::fs::write(svg_path, scatter_svg(&points, baseline, args.log_x))
            .map_err(|e| CliError::parse(e.to_string()))?;
        println!("plot: {}", svg_path.display());
    }
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// K,V bit widths.
    #[arg(long = "kv", value_parser = parse_kv_pair, default_value = "16,16")]
    pub kv: (u32, u32),
    #[arg(long = "granularity", value_parser = parse_granularity, default_value = "per-token")]
    pub granularity: Granularity,
    #[arg(long = "group", default_value_t = 32)]
    pub group: usize,
    /// Key mean-smoothing before quantization.
    #[arg(long = "smooth", value_parser = parse_on_off, default_value = "off", action = clap::ArgAction::Set)]
    pub smooth: bool,
    #[arg(long = "chunk", value_parser = parse_chunk, default_value = "full")]
    pub chunk: ChunkMode,
    #[arg(long = "weights", value_parser = parse_weights, default_value = "w16")]
    pub weights: WeightMode,
    /// First task seed.
    #[arg(long = "seed", default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive task seeds to evaluate.
    #[arg(long = "num-seeds", default_value_t = 5)]
    pub num_seeds: u64,
    /// Task length in tokens.
    #[arg(long = "task-len", default_value_t = 512)]
    pub task_len: usize,
    /// Task vocabulary size.
    #[arg(long = "task-vocab", default_value_t = 64)]
    pub task_vocab: usize,
    /// Weight container to evaluate instead of the built-in induction model.
    #[arg(long = "weights-file", requires = "model_config")]
    pub weights_file: Option<PathBuf>,
    /// Model config JSON accompanying --weights-file.
    #[arg(long = "model-config")]
    pub model_config: Option<PathBuf>,
    /// Reporting context for the memory axis.
    #[arg(long = "context", default_value_t = 10_000)]
    pub context: usize,
    /// Write the evaluation as JSON here.
    #[arg(long = "json")]
    pub json: Option<PathBuf>,
    /// Dump the generated task files into this directory.
    #[arg(long = "dump-tasks")]
    pub dump_tasks: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalReport<'a> {
    config: &'a str,
    accuracy: f64,
    baseline_accuracy: f64,
    fidelity: &'a kvpareto_core::evaltasks::FidelityReport,
    total_mem_bytes: u64,
    simulated_kv_bytes: u64,
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let model = match (&args.weights_file, &args.model_config) {
        (Some(w), Some(c)) => ModelSource::File {
            weights: w.clone(),
            config: c.clone(),
        },
        _ => ModelSource::Induction {
            vocab: args.task_vocab.max(8),
            max_positions: (args.task_len + 64).max(2048),
        },
    };
    let spec = SweepSpec {
        kv_precisions: vec![args.kv],
        granularities: vec![args.granularity],
        group_sizes: vec![args.group],
        smoothing: vec![args.smooth],
        chunks: vec![SweepChunk(args.chunk)],
        weight_modes: vec![args.weights],
        model,
        tasks: TaskSpec {
            seeds: (args.seed..args.seed + args.num_seeds.max(1)).collect(),
            length: args.task_len,
            vocab: args.task_vocab,
        },
        memory: MemorySpec {
            context: args.context,
            ..MemorySpec::default()
        },
        calibration: CalibSpec::default(),
        jobs: None,
    };
    let evaluator = Evaluator::prepare(&spec).map_err(CliError::from)?;
    if let Some(dir) = &args.dump_tasks {
        std::fs::create_dir_all(dir).map_err(|e| CliError::parse(e.to_string()))?;
        for task in &evaluator.tasks {
            task.save(&dir.join(format!("task-{}.json", task.seed)))
                .map_err(CliError::from)?;
        }
    }
    let cp = ConfigPoint::build(
        args.kv,
        args.granularity,
        args.group,
        args.smooth,
        args.chunk,
        args.weights,
    );
    let point = evaluator.evaluate(&cp).map_err(CliError::from)?;

    println!("config: {}", point.config.name);
    println!("accuracy: {:.6} (baseline {:.6})", point.accuracy, evaluator.baseline_accuracy);
    println!(
        "fidelity: top1 {:.4}, rel logit err {:.6e}, cosine {:.6}",
        point.fidelity.top1_agreement,
        point.fidelity.mean_rel_logit_err,
        point.fidelity.cosine_similarity
    );
    println!(
        "memory @ {} tokens: {} B total, simulated kv {} B",
        args.context, point.total_mem_bytes, point.simulated_kv_bytes
    );
    if let Some(path) = &args.json {
        let report = EvalReport {
            config: &point.config.name,
            accuracy: point.accuracy,
            baseline_accuracy: evaluator.baseline_accuracy,
            fidelity: &point.fidelity,
            total_mem_bytes: point.total_mem_bytes,
            simulated_kv_bytes: point.simulated_kv_bytes,
        };
        std::fs::write(
            path,
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )
        .map_err(|e| CliError::parse(e.to_string()))?;
    }
    Ok(())
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = if matches!(e, CoreError::Eval { .. }) { 3 } else { 2 };
        CliError {
            message: format!("{e}"),
            code,
        }
    }
}
