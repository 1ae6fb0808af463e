use std::sync::Arc;

use nalgebra::DVector;
use proptest::prelude::*;

use symplext::embedding::SymplecticMap;
use symplext::extension::LipschitzSample;
use symplext::flow::{extend_embedding, integrate, oracles, IntegratorConfig, PipelineConfig};
use symplext::geometry::{CoreSpec, StarlikeDomain};
use symplext::homotopy::eta;
use symplext::linalg::Point;
use symplext::mapdsl::parse;
use symplext::verify::{area_obstruction, build_ledger, circle_loop, run_bound_suite, shoelace, AreaVerdict, ConstantLedger, SuiteConfig};

fn points(dim: usize, max: usize) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), 1..max).prop_map(|v| v.into_iter().map(DVector::from_vec).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn envelope_is_lipschitz_and_exact(
        pts in points(2, 40),
        lambda in 0.1f64..20.0,
        slope in -1.0f64..1.0,
        queries in prop::collection::vec((-8.0f64..8.0, -8.0f64..8.0), 2..40),
    ) {
        let vals: Vec<f64> = pts.iter().map(|x| 0.7 * lambda * (slope * x[0] + (1.0 - slope.abs()) * x[1].abs())).collect();
        let sample = LipschitzSample::new(pts.clone(), vals.clone(), lambda).unwrap();
        let env = sample.envelope();
        for (x, v) in pts.iter().zip(&vals) {
            prop_assert_eq!(env.eval(x), *v);
        }
        let qs: Vec<Point> = queries.iter().map(|(a, b)| DVector::from_vec(vec![*a, *b])).collect();
        for pair in qs.windows(2) {
            let d = (&pair[0] - &pair[1]).norm();
            let diff = (env.eval(&pair[0]) - env.eval(&pair[1])).abs();
            prop_assert!(diff <= lambda * d * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn raised_value_is_rejected(pts in points(2, 20), lambda in 0.5f64..5.0, k in 0usize..20) {
        prop_assume!(pts.len() >= 2);
        let k = k % pts.len();
        let other = (k + 1) % pts.len();
        let d = (&pts[k] - &pts[other]).norm();
        prop_assume!(d > 1e-6);
        let mut vals = vec![0.0; pts.len()];
        vals[k] = 2.0 * lambda * d;
        prop_assert!(LipschitzSample::new(pts, vals, lambda).is_err());
    }

    #[test]
    fn shoelace_is_rigid(
        verts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 3..30),
        angle in 0.0f64..6.3,
        shift in (-10.0f64..10.0, -10.0f64..10.0),
    ) {
        let poly: Vec<[f64; 2]> = verts.iter().map(|(x, y)| [*x, *y]).collect();
        let (c, s) = (angle.cos(), angle.sin());
        let moved: Vec<[f64; 2]> = poly.iter().map(|[x, y]| [c * x - s * y + shift.0, s * x + c * y + shift.1]).collect();
        let reversed: Vec<[f64; 2]> = poly.iter().rev().cloned().collect();
        let a = shoelace(&poly);
        prop_assert!((shoelace(&moved) - a).abs() <= 1e-9 * (1.0 + a.abs()) + 1e-9);
        prop_assert!((shoelace(&reversed) + a).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn midpoint_conserves_oscillator_energy(x in -4.0f64..4.0, y in -4.0f64..4.0) {
        let w = DVector::from_vec(vec![x, y]);
        let out = integrate(&oracles::oscillator(2), &w, &IntegratorConfig::default()).unwrap();
        prop_assert!((out.endpoint.norm_squared() - w.norm_squared()).abs() <= 1e-10 * (1.0 + w.norm_squared()));
    }

    #[test]
    fn ledger_round_trips_bit_for_bit(
        l in 0.01f64..1.0, lambda in 1.0f64..5.0, eps in 0.1f64..5.0, m1 in 1e-6f64..10.0, m2 in 1e-6f64..10.0,
    ) {
        let ledger = build_ledger(l, lambda, eps, m1, m2).unwrap();
        let back: ConstantLedger = serde_json::from_str(&serde_json::to_string(&ledger).unwrap()).unwrap();
        prop_assert_eq!(back, ledger);
        prop_assert_eq!(ledger.rebuild().unwrap(), ledger);
    }

    #[test]
    fn eta_is_increasing(a in 0.021f64..1.0, b in 0.021f64..1.0) {
        prop_assume!(a < b);
        prop_assert!(eta(a).unwrap() < eta(b).unwrap());
    }

    #[test]
    fn map_printing_round_trips(a in -3.0f64..3.0, b in 0.1f64..2.0, x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let src = format!("x1 + {a} * sin(y1)^2, y1 - {b} * x1 / (1 + x1^2)");
        let m = parse(&src, 1).unwrap();
        let again = parse(&m.pretty_print(), 1).unwrap();
        prop_assert_eq!(m.evaluate(&[x, y]).unwrap(), again.evaluate(&[x, y]).unwrap());
    }

    #[test]
    fn symplectic_maps_preserve_loop_area(cx in -1.0f64..1.0, cy in -1.0f64..1.0, r in 0.05f64..1.0, k in -2.0f64..2.0) {
        let map = SymplecticMap::new(Arc::new(parse(&format!("x1, y1 + {k} * sin(x1)"), 1).unwrap()), StarlikeDomain::ball(1, 3.0));
        let rep = area_obstruction(&map, &circle_loop([cx, cy], r, 4096), 1e-5).unwrap();
        prop_assert!(rep.relative_difference <= 1e-5);
        prop_assert_eq!(rep.verdict, AreaVerdict::NoObstruction);
    }
}

#[test]
fn bound_suite_is_monotone_in_sampling() {
    let map = SymplecticMap::new(Arc::new(parse("x1, y1 + x1^2", 1).unwrap()), StarlikeDomain::ball(1, 3.0));
    let mut cfg = PipelineConfig::default();
    cfg.hypotheses.samples = 400;
    let phi = extend_embedding(&map, CoreSpec::new(1.0 / 3.0, f64::INFINITY, 0.8), &cfg).unwrap();
    let suite = |samples| SuiteConfig { t_grid: vec![0.5, 1.0], samples, ..Default::default() };
    let few = run_bound_suite(phi.generator(), phi.ledger(), &suite(10)).unwrap();
    let more = run_bound_suite(phi.generator(), phi.ledger(), &suite(40)).unwrap();
    for (a, b) in few.records.iter().zip(&more.records) {
        assert_eq!(a.check, b.check);
        assert!(b.worst_ratio >= a.worst_ratio, "{}: {} then {}", a.check, a.worst_ratio, b.worst_ratio);
    }
}
