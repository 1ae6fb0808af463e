use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nalgebra::DVector;

use symplext::embedding::{PhaseMap, SymplecticMap};
use symplext::extension::LipschitzSample;
use symplext::flow::{extend_embedding, integrate, oracles, IntegratorConfig, PipelineConfig};
use symplext::geometry::{CoreSpec, StarlikeDomain};
use symplext::hamiltonian::HamiltonianField;
use symplext::homotopy::HomotopyPath;
use symplext::mapdsl::parse;
use symplext::sampling::halton;
use symplext::verify::{area_obstruction, circle_loop};

const SHEAR: &str = "x1, y1 + x1^2";
const ANNULUS: &str = "x1 * sqrt(1 + 16/(x1^2 + y1^2)), y1 * sqrt(1 + 16/(x1^2 + y1^2))";

fn p(x: f64, y: f64) -> DVector<f64> {
    DVector::from_vec(vec![x, y])
}

fn mapdsl(c: &mut Criterion) {
    let m = parse(ANNULUS, 1).unwrap();
    c.bench_function("mapdsl/eval_jac", |b| b.iter(|| m.eval_jac(black_box(&p(0.7, -0.4))).unwrap()));
    c.bench_function("mapdsl/parse", |b| b.iter(|| parse(black_box(ANNULUS), 1).unwrap()));
}

fn envelope(c: &mut Criterion) {
    let pts: Vec<_> = (1..=2000).map(|k| halton(k, 2) * 10.0).collect();
    let vals: Vec<f64> = pts.iter().map(|x| (x[0] - 5.0).abs() + 0.5 * x[1]).collect();
    let env = LipschitzSample::new(pts, vals, 2.0).unwrap().envelope();
    let mut k = 5000;
    c.bench_function("mcshane/eval_2000", |b| {
        b.iter(|| {
            k += 1;
            env.eval(&(halton(k, 2) * 12.0))
        })
    });
}

fn integrator(c: &mut Criterion) {
    let osc = oracles::oscillator(2);
    let cfg = IntegratorConfig::default();
    c.bench_function("flow/oscillator_midpoint", |b| b.iter(|| integrate(&osc, black_box(&p(1.0, 0.5)), &cfg).unwrap()));
}

fn hamiltonian(c: &mut Criterion) {
    let psi: Arc<dyn PhaseMap> = Arc::new(parse(SHEAR, 1).unwrap());
    let field = HamiltonianField::new(HomotopyPath::new(psi, StarlikeDomain::ball(1, 3.0)), 32);
    c.bench_function("hamiltonian/grad_h", |b| b.iter(|| field.grad_h(0.7, black_box(&p(0.9, 0.3)), &mut None).unwrap()));
    c.bench_function("hamiltonian/value", |b| b.iter(|| field.ham_value(0.7, black_box(&p(0.9, 0.3)), &mut None).unwrap()));
}

fn area(c: &mut Criterion) {
    let dom = StarlikeDomain::new(1, symplext::geometry::Shape::Annulus { inner: 0.0, outer: 3.0 }, DVector::zeros(2)).unwrap();
    let map = SymplecticMap::new(Arc::new(parse(ANNULUS, 1).unwrap()), dom);
    let loop_pts = circle_loop([0.0, 0.0], 1.0, 8192);
    c.bench_function("area/annulus_8192", |b| b.iter(|| area_obstruction(&map, &loop_pts, 1e-5).unwrap()));
}

fn pipeline(c: &mut Criterion) {
    let map = SymplecticMap::new(Arc::new(parse(SHEAR, 1).unwrap()), StarlikeDomain::ball(1, 3.0));
    let core = CoreSpec::new(1.0 / 3.0, f64::INFINITY, 0.8);
    let phi = extend_embedding(&map, core, &PipelineConfig::default()).unwrap();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    // Fresh points each time: endpoints are cached per point.
    let mut k = 0;
    group.bench_function("apply_in_core", |b| {
        b.iter_batched(
            || {
                k += 1;
                halton(k, 2) * 1.2 - p(0.6, 0.6)
            },
            |z| phi.apply(&z).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, mapdsl, envelope, integrator, hamiltonian, area, pipeline);
criterion_main!(benches);
