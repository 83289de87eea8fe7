//! Hot loops with one worker versus the whole pool. Build with
//! `--no-default-features` to time the purely sequential code path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use poclab::activation::Activation;
use poclab::domain::DomainSpec;
use poclab::dynamics::ParticleSystem;
use poclab::ensemble::{sample_init, InitKind};
use poclab::euler::{build_grid, grid_velocity, target_density, ArccosConvolver, DensityKind, VmfComponent};
use poclab::kernel::network_outputs;
use poclab::par;
use poclab::rng::RngSpec;
use poclab::targets::{data_circle, sobolev_coeffs};

/// One worker against the full pool (at least two, so the pool overhead
/// shows up even on a single core).
fn worker_counts() -> Vec<usize> {
    vec![1, par::current_workers().max(2)]
}

fn particle_step(c: &mut Criterion) {
    let target = sobolev_coeffs(8.0, 128).expect("valid target");
    let data = data_circle(&target, 256).expect("n > 0");
    let dom = DomainSpec::euclidean(2).expect("d >= 1");
    let act = Activation::smoothed(0.1);
    let mut group = c.benchmark_group("gd_step_m8192_n256");
    for workers in worker_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            let e = sample_init(dom, 8192, InitKind::gaussian(1.0), RngSpec::new(0, 0)).expect("init");
            let mut sys = ParticleSystem::new(e, &data, act, 0.1).expect("valid system");
            par::with_workers(w, || b.iter(|| sys.step().expect("finite")));
        });
    }
    group.finish();

    let mut group = c.benchmark_group("forward_m65536_n256");
    let e = sample_init(dom, 65536, InitKind::gaussian(1.0), RngSpec::new(0, 0)).expect("init");
    for workers in worker_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            par::with_workers(w, || b.iter(|| network_outputs(&data, act, &e)));
        });
    }
    group.finish();
}

fn euler_velocity(c: &mut Criterion) {
    let grid = build_grid(32, 64).expect("valid grid");
    let conv = ArccosConvolver::new(&grid);
    let target = target_density(
        &DensityKind::VmfMixture { components: vec![VmfComponent { mean: [0.0, 0.0, 1.0], kappa: 3.0, weight: 1.0 }] },
        &grid,
    )
    .expect("valid target");
    let rho = target_density(&DensityKind::Uniform, &grid).expect("valid init");
    let mut group = c.benchmark_group("euler_velocity_32x64");
    for workers in worker_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            par::with_workers(w, || b.iter(|| grid_velocity(&grid, &conv, &rho, &target).expect("same grid")));
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = particle_step, euler_velocity
}
criterion_main!(benches);
