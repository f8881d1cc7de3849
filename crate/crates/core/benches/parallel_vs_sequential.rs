use criterion::{criterion_group, criterion_main, Criterion};
use lyapcert::certcheck::{check_decrease, CandidateFunction, SampleGrid};
use lyapcert::dynsys::{DynSystem, SlowFastSystem};
use lyapcert::linearize::{certify_local_autonomous, validate_basin, LocalOptions};
use lyapcert::timescales::{certify_semiglobal, pair_samples, verify_composite, TimescaleOptions};
use lyapcert::{Matrix, Vector};
use rayon::ThreadPool;

fn pools() -> [(&'static str, ThreadPool); 2] {
    [
        ("rayon", rayon::ThreadPoolBuilder::new().build().unwrap()),
        ("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
    ]
}

fn decrease(c: &mut Criterion) {
    let sys = DynSystem::new(3, true, |_, x| x * 0.5 + Vector::from_element(3, x.norm_squared() * 0.1)).unwrap();
    let v = CandidateFunction::new(3, false, |_, x| x.norm_squared()).unwrap();
    let grid = SampleGrid::shells(3, 1.0, 40, 500, &[0], &[]);
    let mut g = c.benchmark_group("check_decrease");
    for (name, pool) in pools() {
        g.bench_function(name, |b| {
            b.iter(|| pool.install(|| check_decrease(&v, &sys, &grid, true).unwrap()))
        });
    }
    g.finish();
}

fn basin(c: &mut Criterion) {
    let sys = DynSystem::new(1, true, |_, x| x * 0.5 + x.component_mul(x)).unwrap();
    let cert = certify_local_autonomous(&sys, &Matrix::identity(1, 1), &LocalOptions::default()).unwrap();
    let mut g = c.benchmark_group("validate_basin");
    for (name, pool) in pools() {
        g.bench_function(name, |b| {
            b.iter(|| pool.install(|| validate_basin(&sys, &cert, 2000, 200, 1).unwrap()))
        });
    }
    g.finish();
}

fn composite(c: &mut Criterion) {
    let sys = SlowFastSystem::new(1, 1, |_, x, y| -x + y, |_, y, _| y * 0.5, |_| Vector::zeros(1), 0.01).unwrap();
    let v = CandidateFunction::new(1, false, |_, x| x[0] * x[0]).unwrap();
    let cert = certify_semiglobal(&sys, 1.0, &v, &TimescaleOptions::default()).unwrap();
    let samples = pair_samples(1, 1, cert.ell.r0, 4000, 3);
    let eps = [cert.eps_r / 4.0, cert.eps_r / 2.0];
    let mut g = c.benchmark_group("verify_composite");
    g.sample_size(20);
    for (name, pool) in pools() {
        g.bench_function(name, |b| {
            b.iter(|| pool.install(|| verify_composite(&sys, &cert, &samples, &eps).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, decrease, basin, composite);
criterion_main!(benches);
