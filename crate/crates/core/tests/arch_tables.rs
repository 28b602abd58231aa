//! The shipped architecture files against their published memory totals.

use std::path::Path;

use kvpareto_core::memmodel::{
    effective_weight_bits, memory_reduction, total_memory, ArchSpec, AttentionKind, MemQuery,
    MemoryProfile,
};

fn load(name: &str) -> ArchSpec {
    ArchSpec::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../arch").join(name)).unwrap()
}

fn frontier_query(k: u32, v: u32, group: usize) -> MemQuery {
    MemQuery {
        weight_bits: effective_weight_bits(4.0, 128, 16, 16),
        k_bits: k,
        v_bits: v,
        group_size: group,
        attention: AttentionKind::ChunkedSdpa { chunk: 256 },
        count_group_overhead: true,
        ..MemQuery::bf16_baseline(10_000)
    }
}

#[test]
fn all_arch_files_load_and_validate() {
    for name in [
        "qwen2.5-3b-instruct.json",
        "qwen2.5-7b-instruct.json",
        "llama3.2-3b-instruct.json",
        "llama3.1-8b-instruct.json",
        "mistral-v0.3-7b-instruct.json",
    ] {
        let arch = load(name);
        assert!(arch.n_heads >= arch.kv_heads);
        assert!(!arch.source.is_empty(), "{name} should note its source");
    }
}

#[test]
fn qwen3b_baseline_and_frontier_reduction() {
    let arch = load("qwen2.5-3b-instruct.json");
    let baseline = total_memory(&MemQuery::bf16_baseline(10_000), &arch);
    let gib = MemoryProfile::gib(baseline.total_bytes);
    assert!((gib / 11.49 - 1.0).abs() <= 0.15, "baseline {gib:.2} GiB");

    let opt = total_memory(&frontier_query(4, 4, 32), &arch);
    let reduction = memory_reduction(&baseline, &opt);
    assert!((reduction - 73.0).abs() <= 8.0, "reduction {reduction:.2}%");
}

#[test]
fn mistral_baseline_and_frontier_reduction() {
    let arch = load("mistral-v0.3-7b-instruct.json");
    let baseline = total_memory(&MemQuery::bf16_baseline(10_000), &arch);
    let gib = MemoryProfile::gib(baseline.total_bytes);
    assert!((gib / 24.34 - 1.0).abs() <= 0.15, "baseline {gib:.2} GiB");

    let opt = total_memory(&frontier_query(4, 4, 64), &arch);
    let reduction = memory_reduction(&baseline, &opt);
    assert!((reduction - 78.0).abs() <= 8.0, "reduction {reduction:.2}%");
}
