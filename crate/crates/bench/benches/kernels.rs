use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;
use std::hint::black_box;

use starhum::observability::GramianOperator;
use starhum::propagator::{eigenmode_state, CnStepper};
use starhum::*;

fn unit_star() -> StarGraphConfig {
    StarGraphConfig::symmetric(3, 1.0)
}

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble");
    for ne in [8, 16, 32] {
        let space = build_space(&unit_star(), ne, true).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(ne), &space, |b, s| b.iter(|| assemble(black_box(s))));
    }
    group.finish();
}

fn stepping(c: &mut Criterion) {
    let space = build_space(&unit_star(), 16, false).unwrap();
    let m = assemble(&space);
    let u0 = eigenmode_state(&space, &m, 0).unwrap();
    let tau = 1e-3;
    let cn = CnStepper::new(&m, tau).unwrap();
    let prop = Propagator::new(&m, tau).unwrap();
    let mut group = c.benchmark_group("step_ne16");
    group.bench_function("direct", |b| b.iter(|| cn.step(black_box(&u0), None).unwrap()));
    group.bench_function("modal", |b| {
        let mut c0 = prop.to_modal(&u0.coeffs);
        b.iter(|| prop.step_modal(black_box(&mut c0), true))
    });
    group.finish();
}

fn gramian(c: &mut Criterion) {
    let space = build_space(&unit_star(), 16, true).unwrap();
    let m = assemble(&space);
    let op = GramianOperator::new(&m, 5.0, 4000).unwrap();
    let v = eigenmode_state(&space, &m, 1).unwrap().scaled(Complex64::new(0.3, 1.0));
    c.bench_function("gramian_apply_ne16_4000", |b| b.iter(|| op.apply(black_box(&v.coeffs))));
}

criterion_group!(benches, assembly, stepping, gramian);
criterion_main!(benches);
