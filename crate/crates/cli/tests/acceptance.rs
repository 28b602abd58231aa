//! Acceptance suite: one test per release criterion, each printing a PASS
//! line with the measured values. Run with
//! `cargo test -p kvpareto-cli --test acceptance -- --nocapture`.

use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kvpareto_core::evaltasks::generate_task;
use kvpareto_core::kvcache::{KVCache, KVCacheConfig};
use kvpareto_core::memmodel::{
    effective_weight_bits, kv_bytes, memory_reduction, total_memory, ArchSpec, AttentionKind,
    KvHeadMode, MemQuery,
};
use kvpareto_core::model::{
    forward_prefill_all, greedy_decode, random_model, ChunkMode, RunConfig, WeightMode,
};
use kvpareto_core::pareto::{
    frontier_raw, parse_results_csv, CalibSpec, ConfigPoint, Evaluator, MemorySpec, ModelSource,
    SweepChunk, SweepSpec, TaskSpec, CSV_HEADER,
};
use kvpareto_core::quant::{
    dequantize, quantize, smooth_k, BitWidth, BlockPayload, Granularity, QuantSpec,
};
use kvpareto_core::tensor::{sdpa, AttentionMask, Tensor};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_kvpareto")
}

fn arch_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../arch")
        .join(name)
}

/// (arch file, baseline GiB, (k bits, v bits, group), reduction %).
type ReferenceRow = (&'static str, f64, (u32, u32, usize), f64);

/// The five reference architectures with their published baseline totals,
/// frontier configuration and reduction.
const REFERENCE_TABLE: [ReferenceRow; 5] = [
    ("qwen2.5-3b-instruct.json", 11.49, (4, 4, 32), 73.0),
    ("llama3.2-3b-instruct.json", 14.10, (4, 4, 32), 76.0),
    ("qwen2.5-7b-instruct.json", 24.90, (8, 8, 64), 68.0),
    ("llama3.1-8b-instruct.json", 26.91, (8, 2, 64), 75.0),
    ("mistral-v0.3-7b-instruct.json", 24.34, (4, 4, 64), 78.0),
];

fn cmd_memory_reduction(name: &str, k: u32, v: u32, group: usize) -> (f64, f64) {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("mem.json");
    let out = Command::new(bin())
        .args([
            "memory",
            "--arch",
            arch_path(name).to_str().unwrap(),
            "--context",
            "10000",
            "--kv",
            &format!("{k},{v}"),
            "--group",
            &group.to_string(),
            "--chunk",
            "256",
            "--weights",
            "w4",
            "--overhead",
            "on",
            "--json",
            json.to_str().unwrap(),
        ])
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "cmd_memory failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let baseline_gib =
        report["baseline"]["total_bytes"].as_u64().unwrap() as f64 / (1u64 << 30) as f64;
    let reduction = report["reduction_pct"].as_f64().unwrap();
    (baseline_gib, reduction)
}

#[test]
fn acceptance_01_memory_table_reproduction() {
    for (name, ref_base_gib, (k, v, g), ref_reduction) in REFERENCE_TABLE {
        let (base_gib, reduction) = cmd_memory_reduction(name, k, v, g);
        let base_err_pct = 100.0 * (base_gib / ref_base_gib - 1.0);
        assert!(
            base_err_pct.abs() <= 15.0,
            "{name}: baseline {base_gib:.2} GiB vs reference {ref_base_gib} ({base_err_pct:+.1}%)"
        );
        let delta_pp = reduction - ref_reduction;
        assert!(
            delta_pp.abs() <= 8.0,
            "{name}: reduction {reduction:.2}% vs reference {ref_reduction}% ({delta_pp:+.2} pp)"
        );
        println!(
            "ACCEPTANCE 1 PASS: {name} baseline {base_gib:.2} GiB ({base_err_pct:+.1}% of {ref_base_gib}), reduction {reduction:.2}% ({delta_pp:+.2} pp of {ref_reduction}%)"
        );
    }
}

#[test]
fn acceptance_02_reduction_band() {
    for (name, _, (k, v, g), _) in REFERENCE_TABLE {
        let (_, reduction) = cmd_memory_reduction(name, k, v, g);
        assert!(
            (60.0..=86.0).contains(&reduction),
            "{name}: reduction {reduction:.2}% outside [60, 86]"
        );
        println!("ACCEPTANCE 2 PASS: {name} frontier reduction {reduction:.2}% within [60%, 86%]");
    }
}

#[test]
fn acceptance_03_128k_ordering() {
    let m = 128 * 1024;
    for (name, ..) in REFERENCE_TABLE {
        let arch = ArchSpec::load(&arch_path(name)).unwrap();
        let w4 = effective_weight_bits(4.0, 128, 16, 16);
        let q = |weight_bits: f64, kvb: u32, attention: AttentionKind| MemQuery {
            weight_bits,
            k_bits: kvb,
            v_bits: kvb,
            group_size: 64,
            attention,
            count_group_overhead: true,
            ..MemQuery::bf16_baseline(m)
        };
        let w16_sdpa = total_memory(&q(16.0, 16, AttentionKind::Sdpa), &arch).total_bytes;
        let w4_k8_pc = total_memory(
            &q(w4, 8, AttentionKind::ChunkedSdpa { chunk: 1024 }),
            &arch,
        )
        .total_bytes;
        let w4_k4_pc = total_memory(
            &q(w4, 4, AttentionKind::ChunkedSdpa { chunk: 1024 }),
            &arch,
        )
        .total_bytes;
        let w4_k4_flash = total_memory(
            &q(
                w4,
                4,
                AttentionKind::Flash {
                    block_q: 128,
                    block_kv: 128,
                    workspace: 0,
                },
            ),
            &arch,
        )
        .total_bytes;
        assert!(
            w16_sdpa > w4_k8_pc && w4_k8_pc > w4_k4_pc && w4_k4_pc > w4_k4_flash,
            "{name}: ordering violated: {w16_sdpa} > {w4_k8_pc} > {w4_k4_pc} > {w4_k4_flash}"
        );
        let w4_k8_sdpa = total_memory(&q(w4, 8, AttentionKind::Sdpa), &arch).total_bytes;
        let savings = 100.0 * (1.0 - w4_k8_pc as f64 / w4_k8_sdpa as f64);
        assert!(
            savings >= 15.0,
            "{name}: PC saves only {savings:.1}% under w4 k8v8"
        );
        println!(
            "ACCEPTANCE 3 PASS: {name} @128k ordering holds, PC saves {savings:.1}% >= 15% under w4 k8v8"
        );
    }
}

#[test]
fn acceptance_04_rtn_property_suite() {
    let widths = [BitWidth::Int2, BitWidth::Int4, BitWidth::Int8];
    let grans = [
        Granularity::PerTokenGroup,
        Granularity::PerSequenceGroup,
        Granularity::PerTensor,
    ];
    let groups = [32usize, 64, 128];
    let mut total_groups = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    let mut combo_seed = 0u64;
    while total_groups < 10_000 {
        for &bits in &widths {
            for &gran in &grans {
                for &group in &groups {
                    combo_seed += 1;
                    let t = Tensor::random_normal(vec![2, 4, 128], &mut rng);
                    let spec = QuantSpec::new(bits, gran, group, false);
                    let block = quantize(&t, &spec).unwrap();
                    let decoded = dequantize(&block);
                    let (codes, params) = match &block.payload {
                        BlockPayload::Codes { codes, params } => (codes.clone(), params.clone()),
                        BlockPayload::Raw(_) => unreachable!(),
                    };
                    total_groups += block.group_count();

                    // Roundtrip bound per group.
                    let data = t.data().to_vec();
                    let dec = decoded.data().to_vec();
                    block.layout.for_each_group(|g, idx| {
                        let s = params[g].scale;
                        for i in idx {
                            assert!(
                                (data[i] - dec[i]).abs() <= s,
                                "seed {combo_seed}: roundtrip bound broken"
                            );
                        }
                    });

                    // Idempotence: re-quantization reproduces codes exactly.
                    let again = quantize(&decoded, &spec).unwrap();
                    match &again.payload {
                        BlockPayload::Codes { codes: c2, .. } => {
                            assert_eq!(&codes, c2, "seed {combo_seed}: codes drifted")
                        }
                        BlockPayload::Raw(_) => unreachable!(),
                    }

                    // Monotonicity inside each group.
                    block.layout.for_each_group(|_, idx| {
                        let members: Vec<usize> = idx.collect();
                        let mut order = members.clone();
                        order.sort_by(|&a, &b| data[a].partial_cmp(&data[b]).unwrap());
                        for w in order.windows(2) {
                            assert!(codes[w[0]] <= codes[w[1]]);
                        }
                    });
                }
            }
        }
    }
    // Zero preservation on tensors salted with exact zeros.
    for &bits in &widths {
        let mut t = Tensor::random_normal(vec![2, 4, 128], &mut rng);
        for i in (0..t.numel()).step_by(7) {
            let shape = t.shape().to_vec();
            let mut data = t.data().to_vec();
            data[i] = 0.0;
            t = Tensor::new(shape, data).unwrap();
        }
        let spec = QuantSpec::new(bits, Granularity::PerTokenGroup, 32, false);
        let out = dequantize(&quantize(&t, &spec).unwrap());
        for (x, y) in t.data().iter().zip(out.data()) {
            if *x == 0.0 {
                assert_eq!(*y, 0.0, "zero not preserved at {bits:?}");
            }
        }
    }
    println!(
        "ACCEPTANCE 4 PASS: roundtrip bound, exact idempotence, zero preservation and monotonicity over {total_groups} groups"
    );
}

#[test]
fn acceptance_05_k_smoothing_suite() {
    // Hand-checked smoothing example.
    let k = Tensor::new(vec![1, 2, 2], vec![1.0, 3.0, 3.0, 5.0]).unwrap();
    let (centered, means) = smooth_k(&k).unwrap();
    assert_eq!(means.data(), &[2.0, 4.0]);
    assert_eq!(centered.data(), &[-1.0, -1.0, 1.0, 1.0]);

    // Zero column means within 1e-6.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let k = Tensor::random_normal(vec![2, 24, 16], &mut rng);
        let (centered, _) = smooth_k(&k).unwrap();
        for b in 0..2 {
            for d in 0..16 {
                let mut sum = 0.0f64;
                for s in 0..24 {
                    sum += f64::from(centered.at3(b, s, d));
                }
                assert!((sum / 24.0).abs() < 1e-6);
            }
        }
    }

    // Single-segment attention invariance without quantization: centering the
    // keys shifts every logit of a query row equally, so outputs agree.
    let mut worst = 0.0f32;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Tensor::random_normal(vec![1, 12, 16], &mut rng);
        let k = Tensor::random_normal(vec![1, 12, 16], &mut rng);
        let v = Tensor::random_normal(vec![1, 12, 16], &mut rng);
        let (centered, _) = smooth_k(&k).unwrap();
        let a = sdpa(&q, &k, &v, AttentionMask::Causal).unwrap();
        let b = sdpa(&q, &centered, &v, AttentionMask::Causal).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst < 1e-5, "attention shifted by {worst}");
    println!(
        "ACCEPTANCE 5 PASS: smoothing hand example exact, column means < 1e-6, attention invariance {worst:.2e} < 1e-5"
    );
}

#[test]
fn acceptance_06_chunked_prefill_equivalence() {
    let (cfg, weights) = random_model(0);
    let run = |chunk| RunConfig {
        chunk,
        kv: KVCacheConfig {
            k_spec: QuantSpec::passthrough(),
            v_spec: QuantSpec::passthrough(),
            layers: cfg.layers,
            heads_kv: cfg.kv_heads,
            head_dim: cfg.head_dim,
        },
        weight_mode: WeightMode::W16,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f32;
    for m in [128usize, 512, 1024] {
        let tokens: Vec<u32> = (0..m)
            .map(|_| rng.random_range(0..cfg.vocab_size as u32))
            .collect();
        let full_run = run(ChunkMode::Full);
        let mut cache = KVCache::new(full_run.kv.clone()).unwrap();
        let full = forward_prefill_all(&cfg, &weights, &full_run, &tokens, &mut cache).unwrap();
        for c in [64usize, 128, 256] {
            let chunk_run = run(ChunkMode::Chunked(c));
            let mut cache = KVCache::new(chunk_run.kv.clone()).unwrap();
            let chunked =
                forward_prefill_all(&cfg, &weights, &chunk_run, &tokens, &mut cache).unwrap();
            for (a, b) in full.data().iter().zip(chunked.data()) {
                worst = worst.max((a - b).abs());
            }
            assert!(worst <= 1e-4, "M={m} c={c}: max logit delta {worst}");
        }
    }

    // Greedy decode after full vs chunked prefill: 64 identical steps.
    let prompt: Vec<u32> = (0..512)
        .map(|_| rng.random_range(0..cfg.vocab_size as u32))
        .collect();
    let full_run = run(ChunkMode::Full);
    let mut cache_full = KVCache::new(full_run.kv.clone()).unwrap();
    let reference = greedy_decode(&cfg, &weights, &full_run, &prompt, 64, &mut cache_full).unwrap();
    for c in [64usize, 128, 256] {
        let chunk_run = run(ChunkMode::Chunked(c));
        let mut cache = KVCache::new(chunk_run.kv.clone()).unwrap();
        let seq = greedy_decode(&cfg, &weights, &chunk_run, &prompt, 64, &mut cache).unwrap();
        assert_eq!(seq, reference, "greedy decode diverged at chunk {c}");
    }
    println!(
        "ACCEPTANCE 6 PASS: chunked prefill within {worst:.2e} <= 1e-4 of full; 64-step greedy decode identical for c in {{64,128,256}}"
    );
}

#[test]
fn acceptance_07_induction_baseline_and_ordering() {
    let spec = SweepSpec {
        kv_precisions: vec![(16, 16)],
        granularities: vec![Granularity::PerTokenGroup],
        group_sizes: vec![32],
        smoothing: vec![false],
        chunks: vec![SweepChunk(ChunkMode::Full)],
        weight_modes: vec![WeightMode::W16],
        model: ModelSource::Induction {
            vocab: 64,
            max_positions: 2048,
        },
        tasks: TaskSpec {
            seeds: (0..20).collect(),
            length: 512,
            vocab: 64,
        },
        memory: MemorySpec::default(),
        calibration: CalibSpec::default(),
        jobs: None,
    };
    let evaluator = Evaluator::prepare(&spec).unwrap();
    assert!(
        evaluator.baseline_accuracy >= 0.99,
        "full-precision accuracy {} < 0.99",
        evaluator.baseline_accuracy
    );

    let eval_bits = |bits: u32| {
        let cp = ConfigPoint::build(
            (bits, bits),
            Granularity::PerTokenGroup,
            32,
            false,
            ChunkMode::Full,
            WeightMode::W16,
        );
        evaluator.evaluate(&cp).unwrap().accuracy
    };
    let k8 = eval_bits(8);
    let k4 = eval_bits(4);
    let k2 = eval_bits(2);
    assert!(
        (k8 - evaluator.baseline_accuracy).abs() <= 0.02,
        "k8v8 accuracy {k8} not within 2pp of baseline {}",
        evaluator.baseline_accuracy
    );
    assert!(
        k8 >= k4 && k4 >= k2,
        "accuracy ordering violated: k8v8 {k8}, k4v4 {k4}, k2v2 {k2}"
    );
    println!(
        "ACCEPTANCE 7 PASS: baseline {:.4} >= 0.99; k8v8 {k8:.4} within 2pp; ordering k8v8 {k8:.4} >= k4v4 {k4:.4} >= k2v2 {k2:.4}",
        evaluator.baseline_accuracy
    );
}

#[test]
fn acceptance_08_frontier_oracle_equivalence() {
    // Hand example.
    let hand = [
        (10u64, 0.90f64, "a"),
        (8, 0.90, "b"),
        (8, 0.85, "c"),
        (12, 0.95, "d"),
        (7, 0.50, "e"),
    ];
    let kept = frontier_raw(&hand);
    assert_eq!(kept.len(), 3);

    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = (0..1000).map(|i| format!("cfg{i:04}")).collect();
        let pts: Vec<(u64, f64, &str)> = names
            .iter()
            .map(|n| {
                (
                    rng.random_range(0u64..256),
                    f64::from(rng.random_range(0u32..256)) / 255.0,
                    n.as_str(),
                )
            })
            .collect();
        let kept = frontier_raw(&pts);

        // O(n^2) dominance oracle with the same duplicate tie-break.
        let mut oracle: Vec<usize> = (0..pts.len())
            .filter(|&i| {
                !pts.iter().enumerate().any(|(j, q)| {
                    j != i
                        && q.0 <= pts[i].0
                        && q.1 >= pts[i].1
                        && (q.0 < pts[i].0 || q.1 > pts[i].1)
                })
            })
            .collect();
        oracle.retain(|&i| {
            !pts.iter()
                .enumerate()
                .any(|(j, q)| j != i && q.0 == pts[i].0 && q.1 == pts[i].1 && q.2 < pts[i].2)
        });
        let mut got: Vec<usize> = kept.clone();
        got.sort_unstable();
        oracle.sort_unstable();
        assert_eq!(got, oracle, "seed {seed}: frontier differs from oracle");

        // Antichain + strictly increasing staircase.
        for w in kept.windows(2) {
            assert!(pts[w[0]].0 < pts[w[1]].0);
            assert!(pts[w[0]].1 < pts[w[1]].1);
        }
    }
    println!("ACCEPTANCE 8 PASS: frontier matches the quadratic oracle over 10 seeds x 1000 points; hand example yields 3 points");
}

fn write_smoke_sweep(dir: &Path) -> PathBuf {
    let sweep = dir.join("sweep.json");
    std::fs::write(
        &sweep,
        r#"{
  "kv_precisions": [[16,16],[8,8],[2,2]],
  "granularities": ["per-token"],
  "group_sizes": [32],
  "smoothing": [false],
  "chunks": ["full", 256],
  "weight_modes": ["w16", "w4"],
  "model": {"kind": "induction", "vocab": 64},
  "tasks": {"seeds": [0, 1, 2], "length": 512, "vocab": 64}
}"#,
    )
    .unwrap();
    sweep
}

fn run_sweep_cmd(sweep: &Path, out: &Path, jobs: &str) {
    let status = Command::new(bin())
        .args([
            "sweep",
            "--sweep",
            sweep.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--jobs",
            jobs,
        ])
        .status()
        .expect("binary runs");
    assert!(status.success());
}

#[test]
fn acceptance_09_sweep_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = write_smoke_sweep(dir.path());

    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    let out3 = dir.path().join("run3");
    run_sweep_cmd(&sweep, &out1, "2");
    run_sweep_cmd(&sweep, &out2, "2");
    run_sweep_cmd(&sweep, &out3, "1");

    let csv1 = std::fs::read(out1.join("results.csv")).unwrap();
    let csv2 = std::fs::read(out2.join("results.csv")).unwrap();
    let csv3 = std::fs::read(out3.join("results.csv")).unwrap();
    assert_eq!(csv1, csv2, "rerun changed the CSV");
    assert_eq!(csv1, csv3, "job count changed the CSV");

    let text = String::from_utf8(csv1).unwrap();
    let rows = parse_results_csv(&text).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(rows.len(), 12, "12-config sweep emits 12 rows");

    let frontier_rows = rows
        .iter()
        .filter(|r| r.fields.last().map(String::as_str) == Some("1"))
        .count();
    assert!(frontier_rows >= 2, "only {frontier_rows} frontier rows");

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out1.join("summary.json")).unwrap()).unwrap();
    let baseline = summary["baseline_accuracy"].as_f64().unwrap();
    let identity = rows
        .iter()
        .find(|r| r.config() == "w16a16_k16v16_pt_g32_full")
        .expect("identity config present");
    assert_eq!(
        identity.accuracy().unwrap(),
        baseline,
        "identity config accuracy differs from baseline"
    );
    println!(
        "ACCEPTANCE 9 PASS: 12-row CSV byte-identical across reruns and jobs, {frontier_rows} frontier rows, identity matches baseline {baseline}"
    );
}

#[test]
fn acceptance_10_cross_module_byte_consistency() {
    // Full-group per-token runs at three sizes: the simulated cache and the
    // analytic model must agree exactly, in both overhead modes.
    let sizes = [
        (1usize, 1usize, 32usize, 64usize, 8u32, 8u32),
        (2, 2, 64, 128, 8, 4),
        (3, 4, 128, 256, 4, 2),
    ];
    for (layers, heads, dim, tokens, kb, vb) in sizes {
        let cfg = KVCacheConfig {
            k_spec: QuantSpec::new(
                BitWidth::from_bits(kb).unwrap(),
                Granularity::PerTokenGroup,
                32,
                false,
            ),
            v_spec: QuantSpec::new(
                BitWidth::from_bits(vb).unwrap(),
                Granularity::PerTokenGroup,
                32,
                false,
            ),
            layers,
            heads_kv: heads,
            head_dim: dim,
        };
        let mut cache = KVCache::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(tokens as u64);
        let chunk = tokens / 2;
        for layer in 0..layers {
            for _ in 0..2 {
                let k = Tensor::random_normal(vec![heads, chunk, dim], &mut rng);
                let v = Tensor::random_normal(vec![heads, chunk, dim], &mut rng);
                cache.append(layer, &k, &v).unwrap();
            }
        }
        let arch = ArchSpec {
            name: "sim".to_string(),
            param_count: 1,
            layers,
            n_heads: heads,
            kv_heads: heads,
            head_dim: dim,
            vocab_size: 1,
            source: String::new(),
        };
        for overhead in [false, true] {
            let q = MemQuery {
                context: tokens,
                k_bits: kb,
                v_bits: vb,
                group_size: 32,
                count_group_overhead: overhead,
                kv_head_mode: KvHeadMode::KeyValueHeads,
                ..MemQuery::bf16_baseline(tokens)
            };
            assert_eq!(
                cache.stored_bytes(overhead),
                kv_bytes(&q, &arch),
                "L{layers} h{heads} d{dim} M{tokens} overhead={overhead}"
            );
        }
    }
    println!("ACCEPTANCE 10 PASS: cache bytes equal the analytic kv formula at three sizes, both overhead modes");
}

#[test]
fn acceptance_guard_reduction_formula() {
    // memory_reduction anchors: identical profiles and a 4x shrink.
    let arch = ArchSpec::load(&arch_path("mistral-v0.3-7b-instruct.json")).unwrap();
    let base = total_memory(&MemQuery::bf16_baseline(10_000), &arch);
    assert_eq!(memory_reduction(&base, &base), 0.0);

    // Sanity on the task generator used throughout the suite.
    let task = generate_task(0, 512, 64).unwrap();
    assert_eq!(task.length, 512);
    assert!(!task.queries.is_empty());
}
