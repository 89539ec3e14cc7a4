//! Sequential versus rayon paths of the heavy kernels.
//!
//! ```text
//! cargo bench -p aitm-core --bench kernels
//! RAYON_NUM_THREADS=4 cargo bench -p aitm-core --bench kernels
//! ```

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aitm_core::kernels::{gemm_seq, Operand};
use aitm_core::model::PREDICT_CHUNK;
use aitm_core::{ArchitectureConfig, Model, ModelVariant};

fn random(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Tower layer shapes at the default batch size.
const SHAPES: [(usize, usize, usize); 3] = [(2000, 40, 128), (2000, 128, 64), (2000, 64, 32)];

fn bench_gemm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("gemm");
    for (m, k, n) in SHAPES {
        let a = random(m * k, &mut rng);
        let b = random(k * n, &mut rng);
        let mut out = vec![0.0; m * n];
        let label = format!("{m}x{k}x{n}");
        group.bench_with_input(BenchmarkId::new("sequential", &label), &(), |bench, _| {
            bench.iter(|| gemm_seq(m, k, n, Operand::normal(&a, k), Operand::normal(&b, n), black_box(&mut out)))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", &label), &(), |bench, _| {
            bench.iter(|| {
                aitm_core::kernels::gemm_par(m, k, n, Operand::normal(&a, k), Operand::normal(&b, n), black_box(&mut out))
            })
        });
    }
    group.finish();
}

fn bench_predict(c: &mut Criterion) {
    let fields = 8;
    let vocab = 1200;
    let rows = 8 * PREDICT_CHUNK;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::new(ModelVariant::Aitm, ArchitectureConfig::new(4, fields), vocab, &mut rng).unwrap();
    let ids: Vec<usize> = (0..rows * fields).map(|_| rng.gen_range(0..vocab)).collect();

    let mut group = c.benchmark_group("predict");
    group.sample_size(10);
    // One chunk at a time on this thread.
    group.bench_function("sequential", |bench| {
        bench.iter(|| {
            for chunk in ids.chunks(PREDICT_CHUNK * fields) {
                black_box(model.predict(chunk).unwrap());
            }
        })
    });
    // Chunks spread over the pool when the feature is on.
    group.bench_function("parallel", |bench| bench.iter(|| black_box(model.predict(&ids).unwrap())));
    group.finish();
}

criterion_group!(benches, bench_gemm, bench_predict);
criterion_main!(benches);
