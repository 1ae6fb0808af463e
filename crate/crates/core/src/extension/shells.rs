//! Finite radial-shell partition of unity with per-shell mollification
//! radii.

use nalgebra::DVector;

use super::ExtensionError;
use crate::linalg::Point;

/// Shells `[b_i, b_{i+1})` in `|w|` (with `b_0 = 0`, last shell unbounded)
/// blended by quintic smoothsteps of width `blend` centred on each inner
/// boundary; `θ_i = s_i − s_{i+1}` telescopes to 1.
#[derive(Debug, Clone)]
pub struct ShellPartition {
    boundaries: Vec<f64>,
    blend: f64,
    radii: Vec<f64>,
}

fn smoothstep(x: f64) -> (f64, f64) {
    if x <= 0.0 {
        (0.0, 0.0)
    } else if x >= 1.0 {
        (1.0, 0.0)
    } else {
        (x * x * x * (x * (6.0 * x - 15.0) + 10.0), 30.0 * x * x * (1.0 - x) * (1.0 - x))
    }
}

impl ShellPartition {
    /// `boundaries` are the inner radii `b_1 < … < b_{k-1}`; `radii` has one
    /// entry per shell.
    pub fn new(boundaries: Vec<f64>, blend: f64, radii: Vec<f64>) -> Result<Self, ExtensionError> {
        if radii.len() != boundaries.len() + 1 {
            return Err(ExtensionError::InvalidShells(format!("{} radii for {} shells", radii.len(), boundaries.len() + 1)));
        }
        if !(blend > 0.0) || radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(ExtensionError::InvalidShells("blend width and radii must be positive".into()));
        }
        let mut prev = 0.0;
        for &b in &boundaries {
            if !(b - 0.5 * blend > prev) {
                return Err(ExtensionError::InvalidShells(format!("boundary {b} overlaps the previous blend zone")));
            }
            prev = b + 0.5 * blend;
        }
        Ok(ShellPartition { boundaries, blend, radii })
    }

    /// Shells for a cutoff whose gradient is bounded by `grad_bound` on
    /// `B(reach)` and vanishes outside it: the first shell covers
    /// `B(reach + radius_cap)` with radius `min(radius_cap, 1/grad_bound)`,
    /// later shells double outward with radius `radius_cap`.
    pub fn for_cutoff(reach: f64, grad_bound: f64, radius_cap: f64, shells: usize, blend: f64) -> Result<Self, ExtensionError> {
        let inner = if grad_bound > 0.0 { radius_cap.min(1.0 / grad_bound) } else { radius_cap };
        let mut boundaries = Vec::new();
        let mut b = reach + radius_cap + blend;
        for _ in 1..shells.max(1) {
            boundaries.push(b);
            b *= 2.0;
        }
        let mut radii = vec![radius_cap; boundaries.len() + 1];
        radii[0] = inner;
        Self::new(boundaries, blend, radii)
    }

    pub fn count(&self) -> usize {
        self.radii.len()
    }

    pub fn radius(&self, shell: usize) -> f64 {
        self.radii[shell]
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Largest radius of any shell that is active at `|w| = rho`.
    pub fn radius_at(&self, rho: f64) -> f64 {
        let w = DVector::from_vec(vec![rho]);
        self.weights(&w).iter().map(|(i, _, _)| self.radii[*i]).fold(0.0, f64::max)
    }

    /// Nonzero `(shell, θ_i(w), ∇θ_i(w))`.
    pub fn weights(&self, w: &Point) -> Vec<(usize, f64, Point)> {
        let rho = w.norm();
        let unit = if rho > 0.0 { w / rho } else { DVector::zeros(w.len()) };
        // s_i and s_i' for i = 0..=k with s_0 = 1, s_k = 0.
        let k = self.radii.len();
        let mut s = vec![(1.0, 0.0); k + 1];
        s[k] = (0.0, 0.0);
        for (i, &b) in self.boundaries.iter().enumerate() {
            let (v, d) = smoothstep((rho - b) / self.blend + 0.5);
            s[i + 1] = (v, d / self.blend);
        }
        let mut out = Vec::new();
        for i in 0..k {
            let theta = s[i].0 - s[i + 1].0;
            if theta > 0.0 {
                out.push((i, theta, &unit * (s[i].1 - s[i + 1].1)));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        let p = ShellPartition::new(vec![1.0, 2.5, 6.0], 0.4, vec![0.01, 0.05, 0.1, 0.2]).unwrap();
        let mut rho = 0.0;
        while rho < 10.0 {
            let w = DVector::from_vec(vec![rho * 0.6, -rho * 0.8]);
            let ws = p.weights(&w);
            let sum: f64 = ws.iter().map(|x| x.1).sum();
            let grad: Point = ws.iter().fold(DVector::zeros(2), |acc, x| acc + &x.2);
            assert!((sum - 1.0).abs() < 1e-14 && grad.norm() < 1e-12);
            assert!(ws.len() <= 2);
            rho += 0.01;
        }
    }

    #[test]
    fn gradient_matches_difference() {
        let p = ShellPartition::new(vec![1.0], 0.5, vec![0.03, 0.1]).unwrap();
        let w = DVector::from_vec(vec![0.9, 0.3]);
        let h = 1e-6;
        let theta = |v: &Point| p.weights(v).iter().find(|x| x.0 == 1).map(|x| x.1).unwrap_or(0.0);
        let g = p.weights(&w).iter().find(|x| x.0 == 1).unwrap().2.clone();
        for k in 0..2 {
            let mut a = w.clone();
            let mut b = w.clone();
            a[k] += h;
            b[k] -= h;
            assert!(((theta(&a) - theta(&b)) / (2.0 * h) - g[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn cutoff_shells() {
        let p = ShellPartition::for_cutoff(12.0, 32.0, 0.1, 2, 0.25).unwrap();
        assert_eq!(p.count(), 2);
        assert_eq!(p.radius(0), 1.0 / 32.0);
        assert_eq!(p.radius_at(5.0), 1.0 / 32.0);
        assert_eq!(p.radius_at(40.0), 0.1);
        assert!(ShellPartition::new(vec![0.1], 0.5, vec![1.0, 1.0]).is_err());
    }
}
