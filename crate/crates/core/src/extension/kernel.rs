//! Radial bump kernel `K(v) = exp(−1/(1−|v|²))` on the unit ball and the
//! quadrature rules used to convolve with its rescalings.

use std::f64::consts::PI;

use nalgebra::DVector;

use super::ExtensionError;
use crate::linalg::Point;
use crate::quadrature::GaussLegendre;

/// `∫_{B(1)} K` in dimension 2.
pub const KERNEL_MASS_2D: f64 = 0.466_512_393_178_330_07;
/// `∫_{B(1)} K` in dimension 4.
pub const KERNEL_MASS_4D: f64 = 0.382_975_584_998_471_9;

/// `(K, K'(ρ))` as functions of the radius.
pub fn bump(rho: f64) -> (f64, f64) {
    if rho >= 1.0 {
        return (0.0, 0.0);
    }
    let s = 1.0 - rho * rho;
    let k = (-1.0 / s).exp();
    (k, -2.0 * rho * k / (s * s))
}

/// Kernel mass in dimension `dim` by radial Gauss–Legendre quadrature.
pub fn kernel_mass(dim: usize) -> f64 {
    let sphere = 2.0 * PI.powf(dim as f64 / 2.0) / gamma_half(dim);
    // Four panels, the integrand is flat near ρ = 1.
    let gl = GaussLegendre::cached(48);
    let edges = [0.0, 0.5, 0.8, 0.95, 1.0];
    let mut sum = 0.0;
    for w in edges.windows(2) {
        let h = w[1] - w[0];
        for (x, wt) in gl.nodes.iter().zip(&gl.weights) {
            let r = w[0] + h * x;
            sum += h * wt * bump(r).0 * r.powi(dim as i32 - 1);
        }
    }
    sphere * sum
}

/// `Γ(dim/2)` for integer `dim ≥ 1`.
fn gamma_half(dim: usize) -> f64 {
    if dim % 2 == 0 {
        (1..dim / 2).map(|k| k as f64).product()
    } else {
        let mut g = PI.sqrt();
        let mut x = 0.5;
        while x < dim as f64 / 2.0 - 0.25 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

/// Nodes `o_k` in the unit ball with value weights `a_k = ω_k K(o_k)` and
/// gradient weights `b_k = ω_k ∇K(o_k)`. The rule is antipodally symmetric
/// (node `k + half` is the exact negation of node `k`) and isotropic, so the
/// normalizations below make constants and linear functions exact.
#[derive(Debug, Clone)]
pub struct MollifierRule {
    pub dim: usize,
    pub offsets: Vec<Point>,
    pub value_weights: Vec<f64>,
    pub grad_weights: Vec<Point>,
    /// `Σ a_k`.
    pub n0: f64,
    /// `−(1/dim) Σ ω_k ⟨o_k, ∇K(o_k)⟩`.
    pub n1: f64,
    /// Planar polar rules only; node `m · radii.len() + j` is
    /// `radii[j] · directions[m]`.
    pub polar: Option<PolarLayout>,
}

#[derive(Debug, Clone)]
pub struct PolarLayout {
    pub radii: Vec<f64>,
    pub directions: Vec<Point>,
}

impl MollifierRule {
    /// Polar product rule in the plane: Gauss–Legendre in the radius times
    /// the trapezoid rule in the angle.
    pub fn polar(radial: usize, angular: usize) -> Result<Self, ExtensionError> {
        if radial < 2 || angular < 8 || angular % 2 != 0 {
            return Err(ExtensionError::InvalidRule(format!("polar rule needs radial >= 2 and even angular >= 8, got {radial}x{angular}")));
        }
        let gl = GaussLegendre::cached(radial);
        let half = angular / 2;
        let mut dirs = Vec::with_capacity(angular);
        for m in 0..half {
            let th = 2.0 * PI * (m as f64 + 0.5) / angular as f64;
            dirs.push((th.cos(), th.sin()));
        }
        for m in 0..half {
            let (c, s) = dirs[m];
            dirs.push((-c, -s));
        }
        let mut nodes = Vec::with_capacity(radial * angular);
        for &(c, s) in &dirs {
            for (rho, w) in gl.nodes.iter().zip(&gl.weights) {
                let omega = w * rho * 2.0 * PI / angular as f64;
                nodes.push((DVector::from_vec(vec![rho * c, rho * s]), omega));
            }
        }
        let mut rule = Self::from_nodes(2, nodes);
        rule.polar = Some(PolarLayout {
            radii: gl.nodes.clone(),
            directions: dirs.iter().map(|&(c, s)| DVector::from_vec(vec![c, s])).collect(),
        });
        Ok(rule)
    }

    /// Tensor Gauss–Legendre rule on the cube `[−1, 1]^dim`, restricted to
    /// the ball.
    pub fn tensor(dim: usize, per_axis: usize, budget: usize) -> Result<Self, ExtensionError> {
        if per_axis < 2 || per_axis % 2 != 0 {
            return Err(ExtensionError::InvalidRule(format!("tensor rule needs an even per-axis count, got {per_axis}")));
        }
        let total = (per_axis as f64).powi(dim as i32);
        if total > budget as f64 {
            return Err(ExtensionError::QuadratureBudgetExceeded { nodes: total as usize, budget });
        }
        let gl = GaussLegendre::cached(per_axis);
        // Symmetric 1D nodes on [−1, 1] by exact negation of the upper half.
        let mut x1 = Vec::with_capacity(per_axis);
        let mut w1 = Vec::with_capacity(per_axis);
        for k in per_axis / 2..per_axis {
            x1.push(2.0 * gl.nodes[k] - 1.0);
            w1.push(2.0 * gl.weights[k]);
        }
        for k in 0..per_axis / 2 {
            x1.push(-x1[k]);
            w1.push(w1[k]);
        }
        let mut nodes = Vec::new();
        let mut idx = vec![0usize; dim];
        loop {
            let o = DVector::from_iterator(dim, idx.iter().map(|&i| x1[i]));
            if o.norm() < 1.0 {
                nodes.push((o, idx.iter().map(|&i| w1[i]).product()));
            }
            let mut k = 0;
            loop {
                if k == dim {
                    return Ok(Self::from_nodes(dim, nodes));
                }
                idx[k] += 1;
                if idx[k] < per_axis {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    fn from_nodes(dim: usize, nodes: Vec<(Point, f64)>) -> Self {
        let mut offsets = Vec::with_capacity(nodes.len());
        let mut value_weights = Vec::with_capacity(nodes.len());
        let mut grad_weights = Vec::with_capacity(nodes.len());
        let (mut n0, mut n1) = (0.0, 0.0);
        for (o, omega) in nodes {
            let rho = o.norm();
            let (k, dk) = bump(rho);
            let grad = if rho > 0.0 { &o * (dk / rho) } else { DVector::zeros(dim) };
            n0 += omega * k;
            n1 -= omega * o.dot(&grad) / dim as f64;
            value_weights.push(omega * k);
            grad_weights.push(grad * omega);
            offsets.push(o);
        }
        MollifierRule { dim, offsets, value_weights, grad_weights, n0, n1, polar: None }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Combine node values `Ĝ(w − r o_k)` into `(value, gradient)`.
    pub fn combine(&self, radius: f64, node_values: &[f64]) -> (f64, Point) {
        let mut v = 0.0;
        let mut g = DVector::zeros(self.dim);
        for k in 0..node_values.len() {
            v += self.value_weights[k] * node_values[k];
            g.axpy(node_values[k], &self.grad_weights[k], 1.0);
        }
        (v / self.n0, g / (radius * self.n1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masses_match_reference() {
        assert!((kernel_mass(2) - KERNEL_MASS_2D).abs() < 1e-12);
        assert!((kernel_mass(4) - KERNEL_MASS_4D).abs() < 1e-12);
    }

    #[test]
    fn polar_rule_is_antipodal_and_normalized() {
        let rule = MollifierRule::polar(7, 16).unwrap();
        let half = rule.len() / 2;
        for k in 0..half {
            assert_eq!(rule.offsets[k], -&rule.offsets[k + half]);
        }
        // The mass is recovered closely; exactness does not depend on it.
        assert!((rule.n0 - KERNEL_MASS_2D).abs() < 2e-3 * KERNEL_MASS_2D);
        assert!((rule.n1 - KERNEL_MASS_2D).abs() < 3e-2 * KERNEL_MASS_2D);
        assert!(MollifierRule::polar(7, 9).is_err());
    }

    #[test]
    fn linear_reproduction() {
        let w = DVector::from_vec(vec![0.3, -1.2]);
        let a = DVector::from_vec(vec![1.7, -0.4]);
        for rule in [MollifierRule::polar(6, 12).unwrap(), MollifierRule::tensor(2, 10, 1000).unwrap()] {
            let r = 0.05;
            let vals: Vec<f64> = rule.offsets.iter().map(|o| 2.0 + a.dot(&(&w - o * r))).collect();
            let (v, g) = rule.combine(r, &vals);
            assert!((v - (2.0 + a.dot(&w))).abs() < 1e-13);
            assert!((&g - &a).norm() < 1e-12, "{g:?}");
        }
    }

    #[test]
    fn tensor_rule_in_four_dimensions() {
        let rule = MollifierRule::tensor(4, 8, 5000).unwrap();
        assert!((rule.n0 - KERNEL_MASS_4D).abs() < 2e-2 * KERNEL_MASS_4D);
        let a = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
        let vals: Vec<f64> = rule.offsets.iter().map(|o| -a.dot(o)).collect();
        let (v, g) = rule.combine(1.0, &vals);
        assert!(v.abs() < 1e-13 && (g - a).norm() < 1e-12);
        assert!(matches!(MollifierRule::tensor(4, 8, 100), Err(ExtensionError::QuadratureBudgetExceeded { .. })));
    }
}
