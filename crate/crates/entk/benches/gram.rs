//! Benchmarks of the data-parallel hot paths.
//!
//! With the default `parallel` feature the suite reports both the rayon
//! path (global pool) and a single-threaded pool as the sequential
//! baseline; built with `--no-default-features` it measures the plain
//! sequential fallback.
//!
//! Run with `cargo bench -p entk` (and optionally
//! `cargo bench -p entk --no-default-features`).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use entk::data::{probe_sample, synth_blobs, Dataset, ProbeSet};
use entk::nn::{init_model, Activation, ArchSpec, LossKind, ModelState, ReadoutRule};
use entk::ntk::entk_gram;
use entk::train::evaluate;

struct Fixture {
    model: ModelState,
    data: Dataset,
    probe: ProbeSet,
}

fn fixture(width: usize, probe_size: usize) -> Fixture {
    let data = synth_blobs(7, 120, 64, 10, 0.5).expect("blobs");
    let arch = ArchSpec::mlp(64, vec![width, 10], Activation::Relu);
    let model = init_model(&arch, 3).expect("init");
    let probe = probe_sample(&data, probe_size, 1, true).expect("probe");
    Fixture { model, data, probe }
}

fn bench_impl(c: &mut Criterion, tag: &str, run: &dyn Fn(&(dyn Fn() + Sync))) {
    let fx = fixture(256, 32);

    let mut group = c.benchmark_group("entk_gram");
    for &chunk in &[4usize, 16] {
        group.bench_with_input(
            BenchmarkId::new(format!("{tag}/chunk"), chunk),
            &chunk,
            |b, &chunk| {
                b.iter(|| {
                    run(&|| {
                        entk_gram(&fx.model, &fx.probe, ReadoutRule::TrueClass, chunk)
                            .expect("gram");
                    })
                })
            },
        );
    }
    group.finish();

    let mut group = c.benchmark_group("batch_grad");
    let xs: Vec<&[f64]> = (0..64).map(|i| fx.data.input(i)).collect();
    let ys: Vec<usize> = (0..64).map(|i| fx.data.label(i)).collect();
    group.bench_function(format!("{tag}/batch64"), |b| {
        b.iter(|| {
            run(&|| {
                entk::nn::loss_and_grad(&fx.model, &xs, &ys, LossKind::CrossEntropy)
                    .expect("grad");
            })
        })
    });
    group.finish();

    let mut group = c.benchmark_group("evaluate");
    group.bench_function(format!("{tag}/n1200"), |b| {
        b.iter(|| {
            run(&|| {
                evaluate(&fx.model, &fx.data).expect("evaluate");
            })
        })
    });
    group.finish();
}

#[cfg(feature = "parallel")]
fn benches(c: &mut Criterion) {
    bench_impl(c, "parallel", &|f| f());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("single-thread pool");
    bench_impl(c, "sequential", &|f| pool.install(f));
}

#[cfg(not(feature = "parallel"))]
fn benches(c: &mut Criterion) {
    bench_impl(c, "sequential", &|f| f());
}

criterion_group!(gram_benches, benches);
criterion_main!(gram_benches);
