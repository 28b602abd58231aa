use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use kvpareto_core::kvcache::{KVCache, KVCacheConfig};
use kvpareto_core::memmodel::{total_memory, ArchSpec, MemQuery};
use kvpareto_core::pareto::frontier_raw;
use kvpareto_core::quant::{qdq, BitWidth, Granularity, QuantSpec};
use kvpareto_core::tensor::{matmul, sdpa, AttentionMask, Tensor};

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = Tensor::random_normal(vec![128, 128], &mut rng);
    let b = Tensor::random_normal(vec![128, 128], &mut rng);
    c.bench_function("matmul_128", |bench| {
        bench.iter(|| matmul(black_box(&a), black_box(&b)).unwrap())
    });
}

fn bench_sdpa(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = Tensor::random_normal(vec![4, 64, 32], &mut rng);
    let k = Tensor::random_normal(vec![4, 512, 32], &mut rng);
    let v = Tensor::random_normal(vec![4, 512, 32], &mut rng);
    c.bench_function("sdpa_4h_64q_512k", |bench| {
        bench.iter(|| {
            sdpa(
                black_box(&q),
                black_box(&k),
                black_box(&v),
                AttentionMask::CausalWithOffset(448),
            )
            .unwrap()
        })
    });
}

fn bench_qdq(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = Tensor::random_normal(vec![4, 256, 128], &mut rng);
    let spec = QuantSpec::new(BitWidth::Int4, Granularity::PerTokenGroup, 64, false);
    c.bench_function("qdq_int4_per_token", |bench| {
        bench.iter(|| qdq(black_box(&t), black_box(&spec)).unwrap())
    });
}

fn bench_cache_roundtrip(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = KVCacheConfig {
        k_spec: QuantSpec::new(BitWidth::Int8, Granularity::PerTokenGroup, 32, false),
        v_spec: QuantSpec::new(BitWidth::Int4, Granularity::PerTokenGroup, 32, false),
        layers: 2,
        heads_kv: 2,
        head_dim: 64,
    };
    let chunk_k = Tensor::random_normal(vec![2, 256, 64], &mut rng);
    let chunk_v = Tensor::random_normal(vec![2, 256, 64], &mut rng);
    c.bench_function("cache_append_read_256", |bench| {
        bench.iter(|| {
            let mut cache = KVCache::new(cfg.clone()).unwrap();
            cache.append(0, black_box(&chunk_k), black_box(&chunk_v)).unwrap();
            black_box(cache.read(0).unwrap());
        })
    });
}

fn bench_frontier(c: &mut Criterion) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let names: Vec<String> = (0..1000).map(|i| format!("cfg{i:04}")).collect();
    let pts: Vec<(u64, f64, &str)> = names
        .iter()
        .map(|n| {
            (
                rng.random_range(0u64..1_000_000),
                f64::from(rng.random::<f32>()),
                n.as_str(),
            )
        })
        .collect();
    c.bench_function("frontier_1000", |bench| {
        bench.iter(|| frontier_raw(black_box(&pts)))
    });
}

fn bench_memmodel(c: &mut Criterion) {
    let arch = ArchSpec {
        name: "bench".to_string(),
        param_count: 7_000_000_000,
        layers: 32,
        n_heads: 32,
        kv_heads: 8,
        head_dim: 128,
        vocab_size: 128_000,
        source: String::new(),
    };
    let q = MemQuery::bf16_baseline(10_000);
    c.bench_function("total_memory", |bench| {
        bench.iter(|| total_memory(black_box(&q), black_box(&arch)))
    });
}

criterion_group!(
    benches,
    bench_matmul,
    bench_sdpa,
    bench_qdq,
    bench_cache_roundtrip,
    bench_frontier,
    bench_memmodel
);
criterion_main!(benches);
