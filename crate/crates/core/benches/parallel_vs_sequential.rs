//! Compares the rayon-parallel inner loops against the sequential
//! fallback on the two hot paths: kernel matrix assembly and per-row
//! latent expectations.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use mpcvm::kernel::{self, KernelConfig};
use mpcvm::probit::{self, Potentials};
use mpcvm::Execution;

fn bench_gram(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("gram");
    for &n in &[200usize, 600] {
        let points = DMatrix::from_fn(n, 8, |_, _| rng.random_range(-2.0..2.0));
        let config = KernelConfig::rbf(1.0).unwrap();
        for (label, exec) in [
            ("sequential", Execution::Sequential),
            ("parallel", Execution::Parallel),
        ] {
            group.bench_with_input(BenchmarkId::new(label, n), &points, |b, pts| {
                b.iter(|| kernel::gram_with(config, pts, exec).unwrap());
            });
        }
    }
    group.finish();
}

fn bench_expected_z(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let rule = probit::gauss_hermite(64).unwrap();
    let mut group = c.benchmark_group("expected_z_batch");
    for &(n, classes) in &[(200usize, 4usize), (400, 10)] {
        let potentials = Potentials {
            values: DMatrix::from_fn(n, classes, |_, _| rng.random_range(-2.0..2.0)),
        };
        let labels: Vec<usize> = (0..n).map(|i| 1 + i % classes).collect();
        for (label, exec) in [
            ("sequential", Execution::Sequential),
            ("parallel", Execution::Parallel),
        ] {
            group.bench_with_input(
                BenchmarkId::new(label, format!("{n}x{classes}")),
                &potentials,
                |b, pots| {
                    b.iter(|| {
                        probit::expected_z_batch_with(pots, &labels, &rule, exec).unwrap()
                    });
                },
            );
        }
    }
    group.finish();
}

criterion_group!(benches, bench_gram, bench_expected_z);
criterion_main!(benches);
