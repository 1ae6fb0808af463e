//! The scaling homotopy `φ_t(z) = ψ(η(t) z) / η(t)`, `η(t) = e² e^{-2/t}`,
//! its time derivative and Newton inversion.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use nalgebra::DVector;
use parking_lot::Mutex;
use thiserror::Error;

use crate::embedding::PhaseMap;
use crate::geometry::StarlikeDomain;
use crate::linalg::{Matrix, Point};
use crate::mapdsl::EvalError;

/// Below this time `η(t) < 3e-43`; `φ_t` is the identity and the field is zero.
pub const T_CUTOFF: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HomotopyError {
    #[error("t = {0} is outside the admissible range")]
    InvalidT(f64),
    #[error("point {0:?} is outside the domain")]
    OutsideDomain(Vec<f64>),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("Newton inversion did not converge (best residual {best_residual:e})")]
    NoConvergence { best_residual: f64 },
    #[error("point {0:?} is not in the image of the domain")]
    NotInImage(Vec<f64>),
}

/// `η(t) = e² e^{-2/t}`, `η(0) = 0`.
pub fn eta(t: f64) -> Result<f64, HomotopyError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(HomotopyError::InvalidT(t));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 - 2.0 / t).exp())
}

/// `η'(t) = η(t) · 2/t²`.
pub fn eta_dot(t: f64) -> Result<f64, HomotopyError> {
    if t == 0.0 {
        return eta(t);
    }
    Ok(eta(t)? * 2.0 / (t * t))
}

/// Bounded map from coarse `(t, w)` cells to previous Newton solutions.
#[derive(Debug)]
pub struct InversionCache {
    capacity: usize,
    inner: Mutex<(HashMap<Vec<i64>, Point>, VecDeque<Vec<i64>>)>,
}

impl InversionCache {
    const T_BUCKET: f64 = 1e-3;
    const W_CELL: f64 = 0.05;

    pub fn new(capacity: usize) -> Self {
        InversionCache { capacity, inner: Mutex::new((HashMap::new(), VecDeque::new())) }
    }

    fn key(t: f64, w: &Point) -> Vec<i64> {
        let mut k = Vec::with_capacity(w.len() + 1);
        k.push((t / Self::T_BUCKET).round() as i64);
        k.extend(w.iter().map(|v| (v / Self::W_CELL).floor() as i64));
        k
    }

    pub fn get(&self, t: f64, w: &Point) -> Option<Point> {
        self.inner.lock().0.get(&Self::key(t, w)).cloned()
    }

    pub fn insert(&self, t: f64, w: &Point, z: Point) {
        let key = Self::key(t, w);
        let mut guard = self.inner.lock();
        let (map, order) = &mut *guard;
        if map.insert(key.clone(), z).is_none() {
            order.push_back(key);
            while order.len() > self.capacity {
                if let Some(old) = order.pop_front() {
                    map.remove(&old);
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `φ_t` for a normalized embedding `ψ` on the normalized domain `U`.
#[derive(Debug, Clone)]
pub struct HomotopyPath {
    psi: Arc<dyn PhaseMap>,
    domain: StarlikeDomain,
    cache: Arc<InversionCache>,
}

impl HomotopyPath {
    pub fn new(psi: Arc<dyn PhaseMap>, domain: StarlikeDomain) -> Self {
        HomotopyPath { psi, domain, cache: Arc::new(InversionCache::new(1 << 16)) }
    }

    pub fn psi(&self) -> &Arc<dyn PhaseMap> {
        &self.psi
    }

    pub fn domain(&self) -> &StarlikeDomain {
        &self.domain
    }

    pub fn cache(&self) -> &InversionCache {
        &self.cache
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn check(&self, t: f64, z: &Point) -> Result<f64, HomotopyError> {
        let s = eta(t)?;
        if !self.domain.contains(z) {
            return Err(HomotopyError::OutsideDomain(z.iter().cloned().collect()));
        }
        Ok(s)
    }

    pub fn phi_t(&self, t: f64, z: &Point) -> Result<Point, HomotopyError> {
        let s = self.check(t, z)?;
        if t <= T_CUTOFF {
            return Ok(z.clone());
        }
        Ok(self.psi.eval(&(z * s))? / s)
    }

    /// `(φ_t(z), dφ_t(z))` with `dφ_t(z) = dψ(η z)`.
    pub fn phi_t_jac(&self, t: f64, z: &Point) -> Result<(Point, Matrix), HomotopyError> {
        let s = self.check(t, z)?;
        if t <= T_CUTOFF {
            return Ok((z.clone(), Matrix::identity(z.len(), z.len())));
        }
        let (w, jac) = self.psi.eval_jac(&(z * s))?;
        Ok((w / s, jac))
    }

    /// `(2/t²)(−φ_t(z) + dψ(η z) z)`; zero for `t ≤ T_CUTOFF`.
    pub fn dphi_dt(&self, t: f64, z: &Point) -> Result<Point, HomotopyError> {
        if t == 0.0 {
            return Err(HomotopyError::InvalidT(t));
        }
        let s = self.check(t, z)?;
        if t <= T_CUTOFF {
            return Ok(DVector::zeros(z.len()));
        }
        let (w, jac) = self.psi.eval_jac(&(z * s))?;
        Ok((jac * z - w / s) * (2.0 / (t * t)))
    }

    /// Solve `φ_t(z) = w` for `z ∈ U`.
    pub fn invert_phi_t(&self, t: f64, w: &Point, guess: Option<&Point>) -> Result<Point, HomotopyError> {
        let s = eta(t)?;
        if t <= T_CUTOFF {
            return if self.domain.contains(w) { Ok(w.clone()) } else { Err(HomotopyError::NotInImage(w.iter().cloned().collect())) };
        }
        let tol = 1e-12 * (1.0 + w.norm());
        let mut seeds: Vec<Point> = Vec::with_capacity(3);
        if let Some(g) = guess {
            seeds.push(g.clone());
        }
        if let Some(c) = self.cache.get(t, w) {
            seeds.push(c);
        }
        seeds.push(w.clone());
        let mut best = f64::INFINITY;
        let mut converged_outside = false;
        for seed in seeds {
            match self.newton(s, w, seed, tol) {
                Ok(z) => {
                    if self.domain.contains(&z) {
                        self.cache.insert(t, w, z.clone());
                        return Ok(z);
                    }
                    converged_outside = true;
                }
                Err(r) => best = best.min(r),
            }
        }
        if converged_outside {
            Err(HomotopyError::NotInImage(w.iter().cloned().collect()))
        } else {
            Err(HomotopyError::NoConvergence { best_residual: best })
        }
    }

    /// Inversion from a nearby preimage, bypassing the cache; falls back to
    /// [`Self::invert_phi_t`] when Newton from `guess` fails.
    pub fn invert_near(&self, t: f64, w: &Point, guess: &Point) -> Result<Point, HomotopyError> {
        let s = eta(t)?;
        if t > T_CUTOFF {
            if let Ok(z) = self.newton(s, w, guess.clone(), 1e-12 * (1.0 + w.norm())) {
                if self.domain.contains(&z) {
                    return Ok(z);
                }
            }
        }
        self.invert_phi_t(t, w, Some(guess))
    }

    /// Damped Newton; returns the best residual on failure.
    fn newton(&self, s: f64, w: &Point, mut z: Point, tol: f64) -> Result<Point, f64> {
        let eval = |z: &Point| -> Option<(Point, Matrix)> {
            let (v, jac) = self.psi.eval_jac(&(z * s)).ok()?;
            Some((v / s - w, jac))
        };
        let Some((mut r, mut jac)) = eval(&z) else { return Err(f64::INFINITY) };
        let mut rn = r.norm();
        let mut polished = false;
        for _ in 0..60 {
            let Some(step) = jac.clone().lu().solve(&r) else { return Err(rn) };
            let mut lambda = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let zc = &z - &step * lambda;
                if let Some((rc, jc)) = eval(&zc) {
                    let rcn = rc.norm();
                    if rcn < rn || rcn <= tol {
                        accepted = Some((zc, rc, jc, rcn));
                        break;
                    }
                }
                lambda *= 0.5;
            }
            let Some((zc, rc, jc, rcn)) = accepted else {
                return if rn <= tol { Ok(z) } else { Err(rn) };
            };
            z = zc;
            r = rc;
            jac = jc;
            rn = rcn;
            if rn <= tol {
                if polished || rn == 0.0 {
                    return Ok(z);
                }
                polished = true;
            }
        }
        if rn <= tol {
            Ok(z)
        } else {
            Err(rn)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapdsl::parse;

    fn p(x: f64, y: f64) -> Point {
        DVector::from_vec(vec![x, y])
    }

    fn path(src: &str) -> HomotopyPath {
        HomotopyPath::new(Arc::new(parse(src, 1).unwrap()), StarlikeDomain::ball(1, 3.0))
    }

    #[test]
    fn eta_values() {
        assert_eq!(eta(1.0).unwrap(), 1.0);
        assert_eq!(eta(0.0).unwrap(), 0.0);
        assert!((eta(0.5).unwrap() - (-2.0f64).exp()).abs() < 1e-16);
        assert!((eta(0.5).unwrap() - 0.135335).abs() < 1e-6);
        assert!(eta(T_CUTOFF).unwrap() < 3e-43);
        assert!(eta(-0.1).is_err() && eta(1.1).is_err());
        let mut prev = 0.0;
        for k in 1..=100 {
            let v = eta(k as f64 / 100.0).unwrap();
            assert!(v > prev);
            prev = v;
        }
        assert_eq!(eta_dot(1.0).unwrap(), 2.0);
    }

    #[test]
    fn phi_t_endpoints() {
        let h = path("x1, y1 + x1^2");
        let z = p(1.0, 0.0);
        assert_eq!(h.phi_t(0.0, &z).unwrap(), z);
        assert_eq!(h.phi_t(1.0, &z).unwrap(), p(1.0, 1.0));
        let half = h.phi_t(0.5, &z).unwrap();
        assert!((half - p(1.0, (-2.0f64).exp())).norm() < 1e-15);
        assert_eq!(h.phi_t(0.7, &p(0.0, 0.0)).unwrap(), p(0.0, 0.0));
        assert!(h.phi_t(0.5, &p(5.0, 0.0)).is_err());
    }

    #[test]
    fn dphi_dt_values() {
        let id = path("x1, y1");
        assert_eq!(id.dphi_dt(0.4, &p(1.0, 2.0)).unwrap(), p(0.0, 0.0));
        let h = path("x1, y1 + x1^2");
        assert!((h.dphi_dt(1.0, &p(1.0, 0.0)).unwrap() - p(0.0, 2.0)).norm() < 1e-14);
        assert!(h.dphi_dt(0.0, &p(1.0, 0.0)).is_err());
        assert_eq!(h.dphi_dt(0.01, &p(1.0, 0.0)).unwrap(), p(0.0, 0.0));
        let (t, z, dt) = (0.7, p(1.0, 0.5), 1e-5);
        let fd = (h.phi_t(t + dt, &z).unwrap() - h.phi_t(t - dt, &z).unwrap()) / (2.0 * dt);
        assert!((fd - h.dphi_dt(t, &z).unwrap()).norm() < 1e-6);
    }

    #[test]
    fn inversion() {
        let h = path("x1, y1 + x1^2");
        let z = h.invert_phi_t(1.0, &p(1.0, 1.0), None).unwrap();
        assert!((z - p(1.0, 0.0)).norm() < 1e-12);
        let id = path("x1, y1");
        assert_eq!(id.invert_phi_t(0.5, &p(0.3, 0.1), None).unwrap(), p(0.3, 0.1));
        assert!(matches!(h.invert_phi_t(1.0, &p(50.0, 0.0), None), Err(HomotopyError::NotInImage(_))));
        for z in StarlikeDomain::ball(1, 3.0).sample_points(200, 3.0, 9) {
            for t in [0.1, 0.35, 0.8, 1.0] {
                let w = h.phi_t(t, &z).unwrap();
                let back = h.invert_phi_t(t, &w, None).unwrap();
                assert!((back - &z).norm() < 1e-10, "t={t} z={z:?}");
            }
        }
        assert!(!h.cache().is_empty());
    }

    #[test]
    fn inversion_independent_of_seed() {
        let h = path("x1 + 0.1*sin(y1), y1 + x1^2");
        let w = h.phi_t(0.9, &p(0.7, -0.4)).unwrap();
        let a = h.invert_phi_t(0.9, &w, Some(&p(0.0, 0.0))).unwrap();
        let b = h.invert_phi_t(0.9, &w, Some(&p(0.69, -0.41))).unwrap();
        assert!((a - b).norm() < 1e-14);
    }

    #[test]
    fn cache_is_bounded() {
        let c = InversionCache::new(4);
        for k in 0..10 {
            c.insert(0.5, &p(k as f64, 0.0), p(0.0, 0.0));
        }
        assert_eq!(c.len(), 4);
        assert!(c.get(0.5, &p(0.0, 0.0)).is_none());
        assert!(c.get(0.5, &p(9.0, 0.0)).is_some());
    }
}
