use std::hint::black_box;

use cachequeue::{
    build_network, closed_form_bound, hit_ratio_knee, throughput_upper_bound, Policy, ServiceParams,
};
use criterion::{criterion_group, criterion_main, Criterion};

fn grid() -> Vec<f64> {
    (0..=1000).map(|i| f64::from(i) / 1000.0).collect()
}

fn bound(c: &mut Criterion) {
    let params = ServiceParams::default();
    let grid = grid();
    let mut g = c.benchmark_group("bound");
    for policy in [Policy::Lru, Policy::Fifo, Policy::Clock, Policy::ProbLru { q: 0.5 }] {
        g.bench_function(format!("engine/{policy}/1001 points"), |b| {
            b.iter(|| {
                grid.iter()
                    .map(|&p| {
                        let net = build_network(&policy, p, &params, 72).unwrap();
                        throughput_upper_bound(black_box(&net)).x_upper
                    })
                    .sum::<f64>()
            })
        });
    }
    g.bench_function("closed form/LRU/1001 points", |b| {
        b.iter(|| {
            grid.iter()
                .map(|&p| closed_form_bound(&Policy::Lru, black_box(p), 100.0, 72).unwrap())
                .sum::<f64>()
        })
    });
    g.bench_function("knee/LRU", |b| {
        b.iter(|| hit_ratio_knee(&Policy::Lru, black_box(&params), 72).unwrap())
    });
    g.finish();
}

criterion_group!(benches, bound);
criterion_main!(benches);
