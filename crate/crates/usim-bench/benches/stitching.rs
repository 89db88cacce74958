//! Head training and stitching throughput: the gradient-descent hot path.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use usim_bench::{affine_pair, warp_pair};
use usim_core::functional::{stitch_directed, train_head, TrainConfig};
use usim_core::PredictiveFamily;

fn bench_head(c: &mut Criterion) {
    let mut group = c.benchmark_group("head");
    group.sample_size(20);
    for (n, d, classes) in [(400, 16, 4), (1000, 16, 20)] {
        let pair = affine_pair(n, d, classes, 13);
        group.bench_function(format!("train_{n}x{d}_c{classes}"), |b| {
            b.iter(|| train_head(black_box(&pair.src), &TrainConfig::head(13)).unwrap())
        });
    }
    group.finish();
}

fn bench_stitch(c: &mut Criterion) {
    let mut group = c.benchmark_group("stitch");
    group.sample_size(10);
    let realizable = affine_pair(400, 16, 4, 17);
    let warped = warp_pair(400, 16, 4, 17);
    for (label, pair) in [("affine_twin", &realizable), ("warped", &warped)] {
        for fam in [
            PredictiveFamily::orthogonal(),
            PredictiveFamily::orthogonal_scale(),
            PredictiveFamily::affine(),
        ] {
            group.bench_function(format!("{label}_{}_400x16", fam.kind.name()), |b| {
                b.iter(|| {
                    stitch_directed(
                        black_box(&pair.src),
                        black_box(&pair.dst),
                        fam,
                        &TrainConfig::head(17),
                        &TrainConfig::stitcher(17),
                    )
                    .unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_head, bench_stitch);
criterion_main!(benches);
