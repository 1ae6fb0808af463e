//! The generating Hamiltonian `H_t` of the homotopy (gauge `H_t(0) = 0`),
//! the taper `g`, and `G_t = H_t / g(|w|)`.

use nalgebra::DVector;

use crate::homotopy::{HomotopyError, HomotopyPath, T_CUTOFF};
use crate::linalg::{j_inv_apply, Matrix, Point};
use crate::quadrature::GaussLegendre;

/// `(g(r), g'(r))`: flat on `[0, 1/2]`, cubic-ramp derivative `3x² − 2x³`
/// (`x = r − 1/2`) on `[1/2, 3/2]`, and `g(r) = r` beyond.
pub fn taper(r: f64) -> (f64, f64) {
    if r <= 0.5 {
        (1.0, 0.0)
    } else if r < 1.5 {
        let x = r - 0.5;
        let x2 = x * x;
        (1.0 + x2 * x - 0.5 * x2 * x2, 3.0 * x2 - 2.0 * x2 * x)
    } else {
        (r, 1.0)
    }
}

/// Values of the local Hamiltonian data at one point.
#[derive(Debug, Clone)]
pub struct LocalH {
    /// Preimage `z = φ_t^{-1}(w)`.
    pub z: Point,
    pub h: f64,
    pub grad: Point,
    /// `dφ_t(z)`.
    pub dphi: Matrix,
}

#[derive(Debug, Clone)]
pub struct HamiltonianField {
    path: HomotopyPath,
    quadrature_nodes: usize,
    max_nodes: usize,
    rel_tol: f64,
}

impl HamiltonianField {
    pub fn new(path: HomotopyPath, quadrature_nodes: usize) -> Self {
        HamiltonianField { path, quadrature_nodes: quadrature_nodes.max(2), max_nodes: 1024, rel_tol: 1e-10 }
    }

    pub fn path(&self) -> &HomotopyPath {
        &self.path
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    /// `∇H_t(w) = −J · ∂_t φ_t(φ_t^{-1}(w))`.
    pub fn grad_h(&self, t: f64, w: &Point, hint: &mut Option<Point>) -> Result<Point, HomotopyError> {
        if t == 0.0 {
            return Ok(DVector::zeros(w.len()));
        }
        let z = self.path.invert_phi_t(t, w, hint.as_ref())?;
        let g = j_inv_apply(&self.path.dphi_dt(t, &z)?);
        *hint = Some(z);
        Ok(g)
    }

    /// `∇H_t(φ_t(z))` with the image point, without inversion.
    pub fn grad_h_at_preimage(&self, t: f64, z: &Point) -> Result<(Point, Point), HomotopyError> {
        let w = self.path.phi_t(t, z)?;
        if t == 0.0 {
            return Ok((w, DVector::zeros(z.len())));
        }
        Ok((w, j_inv_apply(&self.path.dphi_dt(t, z)?)))
    }

    /// `H_t(w)` by Gauss–Legendre along `s -> φ_t(s z)`, nodes doubled until
    /// successive values agree to the relative tolerance.
    pub fn ham_value(&self, t: f64, w: &Point, hint: &mut Option<Point>) -> Result<f64, HomotopyError> {
        if t == 0.0 || t <= T_CUTOFF {
            if t > 0.0 && !self.path.domain().contains(w) {
                return Err(HomotopyError::NotInImage(w.iter().cloned().collect()));
            }
            return Ok(0.0);
        }
        let z = self.path.invert_phi_t(t, w, hint.as_ref())?;
        *hint = Some(z.clone());
        self.ham_value_at_preimage(t, &z)
    }

    /// `(∫f, ∫|f|, ∫scale)` where `scale` bounds the magnitude of the
    /// cancelling terms in `f`, so roundoff in `f` is a few ulps of it.
    fn line_integral(&self, t: f64, z: &Point, nodes: usize) -> Result<(f64, f64, f64), HomotopyError> {
        let eta = crate::homotopy::eta(t)?;
        let psi = self.path.psi();
        let gl = GaussLegendre::cached(nodes);
        let c = 2.0 / (t * t);
        let (mut sum, mut abs, mut scale) = (0.0, 0.0, 0.0);
        for (&s, &wt) in gl.nodes.iter().zip(&gl.weights) {
            let x = z * (s * eta);
            let (v, jac) = psi.eval_jac(&x)?;
            let jz = &jac * z;
            // ∇H at φ_t(sz) is −J (2/t²)(dψ(ηsz)·sz − ψ(ηsz)/η).
            let field = j_inv_apply(&((&jz * s - &v / eta) * c));
            let f = field.dot(&jz);
            sum += wt * f;
            abs += wt * f.abs();
            scale += wt * c * (jz.norm() * s + v.norm() / eta) * jz.norm();
        }
        Ok((sum, abs, scale))
    }

    pub fn ham_value_at_preimage(&self, t: f64, z: &Point) -> Result<f64, HomotopyError> {
        if t <= T_CUTOFF || z.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        let mut n = self.quadrature_nodes;
        let (mut prev, _, _) = self.line_integral(t, z, n)?;
        loop {
            n *= 2;
            let (cur, abs, scale) = self.line_integral(t, z, n)?;
            let tol = self.rel_tol * cur.abs() + 1e-15 * abs + 1e-13 * scale;
            if (cur - prev).abs() <= tol || n >= self.max_nodes {
                return Ok(cur);
            }
            prev = cur;
        }
    }

    /// `H`, `∇H`, preimage and `dφ_t` at `w`.
    pub fn local(&self, t: f64, w: &Point, hint: &mut Option<Point>) -> Result<LocalH, HomotopyError> {
        let z = if t <= T_CUTOFF {
            if !self.path.domain().contains(w) {
                return Err(HomotopyError::NotInImage(w.iter().cloned().collect()));
            }
            w.clone()
        } else {
            self.path.invert_phi_t(t, w, hint.as_ref())?
        };
        *hint = Some(z.clone());
        self.local_at_preimage(t, &z)
    }

    pub fn local_at_preimage(&self, t: f64, z: &Point) -> Result<LocalH, HomotopyError> {
        let (_, dphi) = self.path.phi_t_jac(t, z)?;
        let grad = if t <= T_CUTOFF { DVector::zeros(z.len()) } else { j_inv_apply(&self.path.dphi_dt(t, z)?) };
        let h = self.ham_value_at_preimage(t, z)?;
        Ok(LocalH { z: z.clone(), h, grad, dphi })
    }

    /// `(G_t(w), ∇G_t(w))`.
    pub fn normalized_g(&self, t: f64, w: &Point, hint: &mut Option<Point>) -> Result<(f64, Point), HomotopyError> {
        let loc = self.local(t, w, hint)?;
        Ok(normalize_h(w, loc.h, &loc.grad))
    }
}

/// `G = H/g(|w|)`, `∇G = −(g'/g²)(w/|w|) H + ∇H/g`.
pub fn normalize_h(w: &Point, h: f64, grad_h: &Point) -> (f64, Point) {
    let r = w.norm();
    let (g, gp) = taper(r);
    let mut grad = grad_h / g;
    if gp > 0.0 {
        grad -= w * (gp / (g * g) * h / r);
    }
    (h / g, grad)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::geometry::StarlikeDomain;
    use crate::homotopy::eta_dot;
    use crate::mapdsl::parse;

    fn p(x: f64, y: f64) -> Point {
        DVector::from_vec(vec![x, y])
    }

    fn field(src: &str) -> HamiltonianField {
        let path = HomotopyPath::new(Arc::new(parse(src, 1).unwrap()), StarlikeDomain::ball(1, 3.0));
        HamiltonianField::new(path, 32)
    }

    #[test]
    fn taper_values() {
        assert_eq!(taper(0.3), (1.0, 0.0));
        assert_eq!(taper(5.0), (5.0, 1.0));
        let (g, gp) = taper(1.0);
        assert_eq!(g, 1.09375);
        assert_eq!(gp, 0.5);
        assert!((taper(2f64.sqrt()).0 - 1.41482).abs() < 1e-5);
        assert_eq!(taper(2.0), (2.0, 1.0));
        let mut r = 0.0;
        while r < 4.0 {
            let (g, gp) = taper(r);
            assert!(g >= 1.0 && g <= r + 2.0 && (0.0..=1.0).contains(&gp));
            r += 1e-3;
        }
        for knot in [0.5, 1.5, 2.0] {
            let (_, a) = taper(knot - 1e-9);
            let (_, b) = taper(knot + 1e-9);
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn identity_field_vanishes() {
        let f = field("x1, y1");
        let mut hint = None;
        let w = p(0.4, -1.0);
        assert!(f.grad_h(0.6, &w, &mut hint).unwrap().norm() < 1e-14);
        assert!(f.ham_value(0.6, &w, &mut hint).unwrap().abs() < 1e-14);
        let (g, dg) = f.normalized_g(0.6, &w, &mut hint).unwrap();
        assert!(g.abs() < 1e-14 && dg.norm() < 1e-14);
    }

    #[test]
    fn shear_oracle() {
        let f = field("x1, y1 + x1^2");
        let mut hint = None;
        let w = p(1.0, 1.0);
        assert!((f.grad_h(1.0, &w, &mut hint).unwrap() - p(2.0, 0.0)).norm() < 1e-12);
        assert!((f.ham_value(1.0, &w, &mut hint).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let (g, _) = f.normalized_g(1.0, &w, &mut hint).unwrap();
        assert!((g - (2.0 / 3.0) / taper(2f64.sqrt()).0).abs() < 1e-12);
        assert!((g - 0.4713).abs() < 1e-4);
        // H_t(X, Y) = η'(t) X³ / 3 at other times.
        for (t, x) in [(0.3, 0.7), (0.55, -1.9), (0.8, 2.5)] {
            let z = p(x, 0.2);
            let w = f.path().phi_t(t, &z).unwrap();
            let h = f.ham_value(t, &w, &mut None).unwrap();
            let exact = eta_dot(t).unwrap() * w[0].powi(3) / 3.0;
            assert!((h - exact).abs() <= 1e-10 * exact.abs().max(1e-300), "t={t}: {h} vs {exact}");
        }
    }

    #[test]
    fn gauge_and_consistency() {
        let f = field("x1 + 0.3*sin(y1 + x1^2), y1 + x1^2");
        let zero = p(0.0, 0.0);
        for t in [0.1, 0.5, 1.0] {
            assert_eq!(f.ham_value(t, &zero, &mut None).unwrap(), 0.0);
        }
        let pts = StarlikeDomain::ball(1, 2.5).sample_points(60, 3.0, 4);
        for (k, z) in pts.iter().enumerate() {
            let t = 0.3 + 0.7 * (k as f64 / pts.len() as f64);
            let w = f.path().phi_t(t, z).unwrap();
            let g = f.grad_h(t, &w, &mut None).unwrap();
            let h = 1e-5;
            for d in 0..2 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[d] += h;
                wm[d] -= h;
                let fd = (f.ham_value(t, &wp, &mut None).unwrap() - f.ham_value(t, &wm, &mut None).unwrap()) / (2.0 * h);
                assert!((fd - g[d]).abs() <= 1e-5 * (1.0 + g.norm()), "t={t} z={z:?}: {fd} vs {}", g[d]);
            }
        }
    }
}
