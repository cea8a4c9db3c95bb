use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ctseg_core::metrics::evaluate_case_with;
use ctseg_core::phantom::{generate, Geometry, GridSpec, PhantomSpec, Shape, StructureKey};
use ctseg_core::resample::{build_target_grid, resample_volume_with, Interpolation};
use ctseg_core::stats::{bootstrap_percentile_ci_with, mean, BootstrapConfig};
use ctseg_core::{Execution, StructureRegistry};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn phantom(shift: f64) -> ctseg_core::phantom::Phantom {
    let shapes = (0..8)
        .map(|i| Shape {
            structure: StructureKey::Id(i + 1),
            geometry: Geometry::Sphere { radius_mm: 9.0 },
            center_mm: [
                16.0 + 32.0 * (i % 2) as f64 + shift,
                16.0 + 32.0 * ((i / 2) % 2) as f64,
                16.0 + 32.0 * (i / 4) as f64,
            ],
            hu: 40.0 + i as f64,
        })
        .collect();
    let spec = PhantomSpec {
        grid: GridSpec { dims: [64; 3], spacing_mm: [1.0; 3], origin_mm: [0.0; 3] },
        shapes,
        noise_sd: 10.0,
        seed: 1,
    };
    generate(&spec, StructureRegistry::global()).unwrap()
}

fn bench(c: &mut Criterion) {
    let x: Vec<f64> = (0..65).map(|i| 0.8 + 0.002 * ((i * 37) % 97) as f64).collect();
    let cfg = BootstrapConfig { iterations: 10_000, level: 0.95, seed: 0 };
    let mut g = c.benchmark_group("bootstrap_10k_65");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| bootstrap_percentile_ci_with(black_box(&x), mean, &cfg, exec).unwrap())
        });
    }
    g.finish();

    let gt = phantom(0.0);
    let pred = phantom(1.5);
    let ids: Vec<u16> = (1..=8).collect();
    let mut g = c.benchmark_group("evaluate_case_64");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_case_with("c", &gt.labels, &pred.labels, &ids, 3.0, exec).unwrap())
        });
    }
    g.finish();

    let target = build_target_grid(gt.ct.grid(), 0.75).unwrap().into_grid();
    let mut g = c.benchmark_group("resample_trilinear_64_to_0.75mm");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| resample_volume_with(&gt.ct, &target, Interpolation::Trilinear, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
