//! The sets `A = closure(c·U) ∩ B(R_A)` and `V`, and the signed margin
//! feeding the cutoff `f`.
//!
//! With `s = |z - p|`, `u = (z - p)/s` and `ρ_A(u) = min(c ρ(u), R_A)`:
//!
//! ```text
//! m(z) = δ - max(0, s - ρ_A(u))
//! ```
//!
//! so `m = δ` on `A`, `m` drops with unit slope along rays, and
//! `V = { m > 0 }` is the radial δ-enlargement of `A`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{GeometryError, StarlikeDomain};
use crate::linalg::Point;
use crate::sampling;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreSpec {
    /// Scale `c ∈ (0, 1)`.
    pub scale: f64,
    /// Radius cap `R_A`, possibly infinite.
    pub radius_cap: f64,
    /// Margin `δ > 0`.
    pub margin: f64,
}

impl CoreSpec {
    pub fn new(scale: f64, radius_cap: f64, margin: f64) -> Self {
        CoreSpec { scale, radius_cap, margin }
    }

    /// Check ranges and that `closure(V) ⊂ U` along sampled rays.
    pub fn validate(&self, domain: &StarlikeDomain) -> Result<(), GeometryError> {
        if !(self.scale > 0.0 && self.scale < 1.0) {
            return Err(GeometryError::InvalidCore(format!("scale {} not in (0, 1)", self.scale)));
        }
        if !(self.radius_cap > 0.0) {
            return Err(GeometryError::InvalidCore(format!("radius cap {} not positive", self.radius_cap)));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(GeometryError::InvalidCore(format!("margin {} not positive", self.margin)));
        }
        let count = if domain.dim() == 2 { 720 } else { 2048 };
        for u in sampling::sphere_directions(domain.dim(), count, 11) {
            let rho = domain.radial_support(&u);
            let rho_a = (self.scale * rho).min(self.radius_cap);
            if !rho_a.is_finite() {
                return Err(GeometryError::InvalidCore("A is unbounded; set a finite radius cap".into()));
            }
            if rho_a + self.margin >= rho {
                return Err(GeometryError::InvalidCore(format!(
                    "closure of V leaves U in direction {:?}: rho_A + delta = {} >= rho = {}",
                    u.as_slice(),
                    rho_a + self.margin,
                    rho
                )));
            }
        }
        Ok(())
    }

    fn core_radius(&self, domain: &StarlikeDomain, u: &DVector<f64>) -> f64 {
        (self.scale * domain.radial_support(u)).min(self.radius_cap)
    }

    /// Signed margin `m(z)`.
    pub fn margin_at(&self, domain: &StarlikeDomain, z: &Point) -> f64 {
        let d = z - domain.center();
        let s = d.norm();
        if s == 0.0 {
            return self.margin;
        }
        self.margin - (s - self.core_radius(domain, &d)).max(0.0)
    }

    /// Central-difference gradient of the margin.
    pub fn margin_gradient(&self, domain: &StarlikeDomain, z: &Point) -> DVector<f64> {
        let h = 1e-6 * (1.0 + z.norm());
        let mut g = DVector::zeros(z.len());
        for k in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            g[k] = (self.margin_at(domain, &zp) - self.margin_at(domain, &zm)) / (2.0 * h);
        }
        g
    }

    /// `z ∈ A` (closed).
    pub fn in_core(&self, domain: &StarlikeDomain, z: &Point) -> bool {
        let d = z - domain.center();
        let s = d.norm();
        s == 0.0 || s <= self.core_radius(domain, &d)
    }

    /// `z ∈ V`.
    pub fn in_enlargement(&self, domain: &StarlikeDomain, z: &Point) -> bool {
        self.margin_at(domain, z) > 0.0
    }

    pub fn profile(&self) -> CutoffProfile {
        CutoffProfile { margin: self.margin }
    }

    /// Points of `A`: Halton points of the bounding box kept by rejection.
    pub fn sample_core(&self, domain: &StarlikeDomain, count: usize, seed: u64) -> Vec<Point> {
        let reach = (self.scale * domain.extent(1e12)).min(self.radius_cap).min(1e6);
        let dim = domain.dim();
        let c = domain.center();
        let mut out = Vec::with_capacity(count);
        let mut idx = seed.wrapping_mul(104_729) % 1_000_000;
        let mut tries = 0;
        while out.len() < count && tries < 1000 * count {
            let h = sampling::halton(idx, dim);
            idx += 1;
            tries += 1;
            let z = &c + (h * 2.0 - DVector::from_element(dim, 1.0)) * reach;
            if self.in_core(domain, &z) && domain.contains(&z) {
                out.push(z);
            }
        }
        out
    }
}

/// `χ(m)`: smooth step rising from 0 at `m = δ/4` to 1 at `m = 3δ/4`,
/// `χ = ψ(x) / (ψ(x) + ψ(1 − x))` with `ψ(x) = e^{−1/x}`. It is `C^∞`, so
/// the compactly supported generator `f H` is as smooth as `H`.
#[derive(Debug, Clone, Copy)]
pub struct CutoffProfile {
    margin: f64,
}

impl CutoffProfile {
    /// Largest slope of the unit step, attained at `x = 1/2`.
    pub const UNIT_MAX_SLOPE: f64 = 2.0;

    /// `(χ(m), χ'(m))`.
    pub fn eval(&self, m: f64) -> (f64, f64) {
        let width = 0.5 * self.margin;
        let x = (m - 0.25 * self.margin) / width;
        if x <= 0.0 {
            (0.0, 0.0)
        } else if x >= 1.0 {
            (1.0, 0.0)
        } else {
            // χ = 1/(1 + e^q), q = 1/x − 1/(1 − x); χ' = χ(1 − χ)(1/x² + 1/(1 − x)²).
            let q = 1.0 / x - 1.0 / (1.0 - x);
            let v = 1.0 / (1.0 + q.exp());
            let d = v * (1.0 - v) * (1.0 / (x * x) + 1.0 / ((1.0 - x) * (1.0 - x))) / width;
            (v, d)
        }
    }

    /// `max χ' = 2 · 2/δ`.
    pub fn max_slope(&self) -> f64 {
        Self::UNIT_MAX_SLOPE / (0.5 * self.margin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Shape, StarlikeDomain};

    fn p(x: f64, y: f64) -> Point {
        DVector::from_vec(vec![x, y])
    }

    #[test]
    fn margin_on_ball() {
        let u = StarlikeDomain::ball(1, 3.0);
        let core = CoreSpec::new(1.0 / 3.0, f64::INFINITY, 0.8);
        core.validate(&u).unwrap();
        assert_eq!(core.margin_at(&u, &p(0.5, 0.5)), 0.8);
        assert!(core.in_core(&u, &p(1.0, 0.0)));
        assert!(core.margin_at(&u, &p(0.0, 1.0 + 1e-12)) >= 0.8 - 1e-9);
        assert!(core.margin_at(&u, &p(0.0, 1.81)) <= 0.0);
        let mid = core.margin_at(&u, &p(-1.4, 0.0));
        assert!((mid - 0.4).abs() <= 0.04);
        let g = core.margin_gradient(&u, &p(0.0, 1.4));
        assert!((g[1] + 1.0).abs() < 1e-6 && g[0].abs() < 1e-6);
    }

    #[test]
    fn core_with_radius_cap() {
        let u = StarlikeDomain::ball(1, 3.0);
        let core = CoreSpec::new(0.9, 1.0, 0.5);
        core.validate(&u).unwrap();
        assert!(core.in_core(&u, &p(1.0, 0.0)));
        assert!(!core.in_core(&u, &p(1.01, 0.0)));
    }

    #[test]
    fn rejects_bad_core() {
        let u = StarlikeDomain::ball(1, 3.0);
        assert!(CoreSpec::new(0.9, f64::INFINITY, 0.5).validate(&u).is_err());
        assert!(CoreSpec::new(1.5, 1.0, 0.5).validate(&u).is_err());
        let strip = StarlikeDomain::new(1, Shape::Strip { lower: -1.0, upper: 0.0 }, p(0.0, -0.5)).unwrap();
        assert!(CoreSpec::new(0.5, f64::INFINITY, 0.1).validate(&strip).is_err());
    }

    #[test]
    fn profile_limits() {
        let prof = CoreSpec::new(0.3, 1.0, 0.8).profile();
        assert_eq!(prof.eval(0.8), (1.0, 0.0));
        assert_eq!(prof.eval(0.0), (0.0, 0.0));
        let (v, d) = prof.eval(0.4);
        assert!((v - 0.5).abs() < 1e-15);
        assert!((d - prof.max_slope()).abs() < 1e-12);
        let mut prev = 0.0;
        for k in 1..2000 {
            let m = 0.2 + 0.4 * k as f64 / 2000.0;
            let (v, d) = prof.eval(m);
            assert!(v >= prev && d <= prof.max_slope() * (1.0 + 1e-12));
            let (vp, _) = prof.eval(m + 1e-7);
            let (vm, _) = prof.eval(m - 1e-7);
            assert!(((vp - vm) / 2e-7 - d).abs() <= 1e-6 * prof.max_slope());
            prev = v;
        }
    }

    #[test]
    fn core_samples() {
        let u = StarlikeDomain::ball(1, 3.0);
        let core = CoreSpec::new(1.0 / 3.0, f64::INFINITY, 0.8);
        let pts = core.sample_core(&u, 400, 2);
        assert_eq!(pts.len(), 400);
        assert!(pts.iter().all(|z| z.norm() <= 1.0 + 1e-12));
        assert!(pts.iter().any(|z| z.norm() > 0.95));
    }
}
