//! Closed-form references for the numerical pieces.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use symplext::embedding::{PhaseMap, SymplecticMap};
use symplext::extension::{bump, kernel_mass, LipschitzSample, KERNEL_MASS_2D, KERNEL_MASS_4D};
use symplext::flow::{integrate, oracles, IntegratorConfig, Scheme};
use symplext::geometry::{Shape, StarlikeDomain};
use symplext::hamiltonian::{taper, HamiltonianField};
use symplext::homotopy::{eta, eta_dot, HomotopyPath};
use symplext::linalg::Point;
use symplext::mapdsl::parse;
use symplext::quadrature::GaussLegendre;
use symplext::verify::{area_obstruction, circle_loop, shoelace, AreaVerdict};

fn p(x: f64, y: f64) -> Point {
    DVector::from_vec(vec![x, y])
}

fn field(src: &str) -> HamiltonianField {
    let psi: Arc<dyn PhaseMap> = Arc::new(parse(src, 1).unwrap());
    HamiltonianField::new(HomotopyPath::new(psi, StarlikeDomain::ball(1, 3.0)), 32)
}

#[test]
fn eta_values() {
    assert_eq!(eta(1.0).unwrap(), 1.0);
    assert!((eta(0.5).unwrap() - (-2.0f64).exp()).abs() < 1e-16);
    for t in [0.1, 0.4, 0.9] {
        let e = eta(t).unwrap();
        assert!((eta_dot(t).unwrap() - 2.0 * e / (t * t)).abs() <= 1e-14 * e / (t * t));
    }
}

#[test]
fn shear_hamiltonian_is_cubic() {
    // φ_t(x, y) = (x, y + η x²) is generated by H_t(w) = η'(t) w_x³ / 3.
    let f = field("x1, y1 + x1^2");
    for t in [0.3, 0.7, 1.0] {
        let ed = eta_dot(t).unwrap();
        for w in [p(0.5, 0.2), p(-1.2, 0.9), p(1.5, 0.5), p(0.0, 1.5)] {
            let h = f.ham_value(t, &w, &mut None).unwrap();
            let g = f.grad_h(t, &w, &mut None).unwrap();
            let x = w[0];
            assert!((h - ed * x.powi(3) / 3.0).abs() <= 1e-9 * (1.0 + ed), "t={t} w={w:?}: {h}");
            assert!((&g - p(ed * x * x, 0.0)).norm() <= 1e-9 * (1.0 + ed), "t={t} w={w:?}: {g:?}");
        }
    }
}

#[test]
fn linear_maps_have_zero_hamiltonian() {
    // (1/η) S(η z) = S z for every t, so the path is constant.
    let f = field("x1 + 2*y1, y1");
    for t in [0.2, 0.6, 1.0] {
        for w in [p(1.0, 0.3), p(-0.4, -0.7)] {
            assert!(f.ham_value(t, &w, &mut None).unwrap().abs() <= 1e-12);
            assert!(f.grad_h(t, &w, &mut None).unwrap().norm() <= 1e-12);
        }
    }
}

#[test]
fn gauss_legendre_exactness() {
    let gl = GaussLegendre::new(5);
    assert!((gl.integrate(|x| x.powi(9)) - 0.1).abs() < 1e-15);
    let gl = GaussLegendre::new(20);
    assert!((gl.integrate(|x| (PI * x).sin()) - 2.0 / PI).abs() < 1e-15);
}

#[test]
fn kernel_masses_match_reference() {
    assert!((kernel_mass(2) - KERNEL_MASS_2D).abs() < 1e-14);
    assert!((kernel_mass(4) - KERNEL_MASS_4D).abs() < 1e-14);
    assert_eq!(bump(1.0), (0.0, 0.0));
    assert!((bump(0.0).0 - (-1.0f64).exp()).abs() < 1e-16);
}

#[test]
fn taper_pieces_join() {
    assert_eq!(taper(0.25), (1.0, 0.0));
    assert_eq!(taper(0.5), (1.0, 0.0));
    let (g, dg) = taper(1.5 - 1e-12);
    assert!((g - 1.5).abs() < 1e-11 && (dg - 1.0).abs() < 1e-11);
    assert_eq!(taper(4.0), (4.0, 1.0));
}

#[test]
fn map_jacobians_are_exact() {
    let m = parse("x1 * cos(y1), y1 + exp(x1)", 1).unwrap();
    let (x, y) = (0.3f64, -1.1f64);
    let (v, j) = m.evaluate_with_jacobian(&[x, y]).unwrap();
    assert_eq!(v, p(x * y.cos(), y + x.exp()));
    let exact = DMatrix::from_row_slice(2, 2, &[y.cos(), -x * y.sin(), x.exp(), 1.0]);
    assert!((j - exact).norm() < 1e-15);
}

#[test]
fn flow_oracles() {
    let cfg = IntegratorConfig::default();
    let shear = oracles::cubic_shear(2);
    for (x, y) in [(0.0, 0.0), (1.3, -0.2), (-2.5, 4.0)] {
        let out = integrate(&shear, &p(x, y), &cfg).unwrap();
        assert!((out.endpoint - p(x, y + x * x)).norm() <= 1e-8);
    }
    let osc = oracles::oscillator(2);
    for scheme in [Scheme::ImplicitMidpoint, Scheme::Rk4] {
        let cfg = IntegratorConfig { scheme, ..Default::default() };
        let w = p(0.2, -1.7);
        let out = integrate(&osc, &w, &cfg).unwrap();
        assert!((out.endpoint - oracles::rotation(&w, 1.0)).norm() <= 1e-8, "{scheme:?}");
    }
}

#[test]
fn annulus_map_areas() {
    let dom = StarlikeDomain::new(1, Shape::Annulus { inner: 0.0, outer: 3.0 }, DVector::zeros(2)).unwrap();
    let map = SymplecticMap::new(
        Arc::new(parse("x1 * sqrt(1 + 16/(x1^2 + y1^2)), y1 * sqrt(1 + 16/(x1^2 + y1^2))", 1).unwrap()),
        dom,
    );
    for (r, area) in [(1.0, 17.0 * PI), (2.0, 20.0 * PI), (2.9, (2.9 * 2.9 + 16.0) * PI)] {
        let rep = area_obstruction(&map, &circle_loop([0.0, 0.0], r, 8192), 1e-5).unwrap();
        assert!((rep.area_after - area).abs() <= 1e-6 * area, "r={r}: {}", rep.area_after);
        assert_eq!(rep.verdict, AreaVerdict::ExtensionImpossible);
    }
}

#[test]
fn shoelace_of_polygons() {
    assert_eq!(shoelace(&[[0.0, 0.0], [2.0, 0.0], [2.0, 3.0], [0.0, 3.0]]), 6.0);
    assert_eq!(shoelace(&[[0.0, 0.0], [0.0, 3.0], [2.0, 3.0], [2.0, 0.0]]), -6.0);
    assert_eq!(shoelace(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), 0.5);
}

#[test]
fn mcshane_closed_form() {
    let s = LipschitzSample::new(vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])], vec![0.0, 1.0], 2.0).unwrap();
    let env = s.envelope();
    for (x, want) in [(-1.0, 2.0), (0.0, 0.0), (0.25, 0.5), (0.5, 1.0), (1.0, 1.0), (3.0, 5.0)] {
        assert_eq!(env.eval(&DVector::from_vec(vec![x])), want, "x={x}");
    }
}
