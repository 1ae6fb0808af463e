//! Concrete domain shapes in base coordinates.

use nalgebra::DVector;

use crate::mapdsl::AngleExpression;

/// A planar or higher-dimensional region given by explicit inequalities.
#[derive(Debug, Clone)]
pub enum Shape {
    /// Open Euclidean ball in `R^{2n}`.
    Ball { center: DVector<f64>, radius: f64 },
    /// Planar strip `{ lower < y < upper }`.
    Strip { lower: f64, upper: f64 },
    /// Planar square `(-a, a)^2` minus the wedge `{ x >= b, |y| <= k (x - b) }`.
    Notch { half_width: f64, apex: f64, slope: f64 },
    /// Planar annulus `{ inner < |z| < outer }` about the origin.
    Annulus { inner: f64, outer: f64 },
    /// Planar region `{ |z - c| < rho(theta) }` with `rho` an expression of the angle.
    Radial { center: DVector<f64>, support: AngleExpression },
    /// All of `R^{2n}`.
    Whole,
}

impl Shape {
    pub fn is_planar_only(&self) -> bool {
        !matches!(self, Shape::Ball { .. } | Shape::Whole)
    }

    /// Convex shapes have intrinsic distance equal to the Euclidean one.
    pub fn is_convex(&self) -> bool {
        matches!(self, Shape::Ball { .. } | Shape::Strip { .. } | Shape::Whole)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Ball { .. } => "ball",
            Shape::Strip { .. } => "strip",
            Shape::Notch { .. } => "notch",
            Shape::Annulus { .. } => "annulus",
            Shape::Radial { .. } => "radial",
            Shape::Whole => "whole",
        }
    }

    pub fn inside(&self, b: &DVector<f64>) -> bool {
        match self {
            Shape::Ball { center, radius } => (b - center).norm() < *radius,
            Shape::Strip { lower, upper } => *lower < b[1] && b[1] < *upper,
            Shape::Notch { half_width, apex, slope } => {
                let (x, y) = (b[0], b[1]);
                let in_square = x.abs() < *half_width && y.abs() < *half_width;
                let in_wedge = x >= *apex && y.abs() <= slope * (x - apex);
                in_square && !in_wedge
            }
            Shape::Annulus { inner, outer } => {
                let r = b[0].hypot(b[1]);
                *inner < r && r < *outer
            }
            Shape::Radial { center, support } => {
                let d = b - center;
                let r = d[0].hypot(d[1]);
                if r == 0.0 {
                    return true;
                }
                support.evaluate(d[1].atan2(d[0])).map(|rho| r < rho).unwrap_or(false)
            }
            Shape::Whole => true,
        }
    }

    /// Smallest `s > 0` at which the ray `o + s v` leaves the shape, for `o`
    /// inside. `f64::INFINITY` if it never does.
    pub fn ray_exit(&self, o: &DVector<f64>, v: &DVector<f64>) -> f64 {
        match self {
            Shape::Ball { center, radius } => {
                let d = o - center;
                let a = v.norm_squared();
                let b = d.dot(v);
                let c = d.norm_squared() - radius * radius;
                let disc = (b * b - a * c).max(0.0);
                (-b + disc.sqrt()) / a
            }
            Shape::Strip { lower, upper } => {
                if v[1] > 0.0 {
                    (upper - o[1]) / v[1]
                } else if v[1] < 0.0 {
                    (lower - o[1]) / v[1]
                } else {
                    f64::INFINITY
                }
            }
            Shape::Notch { half_width, apex, slope } => {
                let mut s = f64::INFINITY;
                for k in 0..2 {
                    if v[k] > 0.0 {
                        s = s.min((half_width - o[k]) / v[k]);
                    } else if v[k] < 0.0 {
                        s = s.min((-half_width - o[k]) / v[k]);
                    }
                }
                // Entry into the convex wedge: clip against y <= k(x-b) and -y <= k(x-b).
                let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
                for sign in [1.0, -1.0] {
                    // g(s) = sign*y - k(x - b) <= 0
                    let g0 = sign * o[1] - slope * (o[0] - apex);
                    let dg = sign * v[1] - slope * v[0];
                    if dg == 0.0 {
                        if g0 > 0.0 {
                            hi = -1.0;
                        }
                    } else if dg > 0.0 {
                        hi = hi.min(-g0 / dg);
                    } else {
                        lo = lo.max(-g0 / dg);
                    }
                }
                if lo <= hi {
                    s = s.min(lo);
                }
                s
            }
            Shape::Annulus { inner, outer } => {
                let a = v.norm_squared();
                let b = o.dot(v);
                let mut s = {
                    let c = o.norm_squared() - outer * outer;
                    (-b + (b * b - a * c).max(0.0).sqrt()) / a
                };
                let c = o.norm_squared() - inner * inner;
                let disc = b * b - a * c;
                if disc > 0.0 {
                    let s_in = (-b - disc.sqrt()) / a;
                    if s_in > 0.0 {
                        s = s.min(s_in);
                    }
                }
                s
            }
            Shape::Radial { support, .. } => {
                let theta = v[1].atan2(v[0]);
                support.evaluate(theta).unwrap_or(0.0) / v.norm()
            }
            Shape::Whole => f64::INFINITY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    #[test]
    fn notch_exit_hits_wedge() {
        let s = Shape::Notch { half_width: 2.0, apex: 0.5, slope: 1.0 };
        assert!((s.ray_exit(&p(0.0, 0.0), &p(1.0, 0.0)) - 0.5).abs() < 1e-15);
        assert!((s.ray_exit(&p(0.0, 0.0), &p(0.0, 1.0)) - 2.0).abs() < 1e-15);
        // Ray with slope 2 > k misses the wedge apex region until the square edge.
        let e = s.ray_exit(&p(0.0, 0.0), &p(0.5, 1.0));
        assert!((e - 2.0).abs() < 1e-15);
        assert!(!s.inside(&p(1.5, 0.1)));
        assert!(s.inside(&p(1.5, 1.2)));
    }

    #[test]
    fn strip_exit() {
        let s = Shape::Strip { lower: -1.0, upper: 0.0 };
        let o = p(0.0, -0.5);
        assert_eq!(s.ray_exit(&o, &p(1.0, 0.0)), f64::INFINITY);
        assert!((s.ray_exit(&o, &p(0.0, -1.0)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn annulus_ray_from_inside_ring() {
        let s = Shape::Annulus { inner: 0.5, outer: 3.0 };
        let o = p(1.0, 0.0);
        assert!((s.ray_exit(&o, &p(-1.0, 0.0)) - 0.5).abs() < 1e-15);
        assert!((s.ray_exit(&o, &p(1.0, 0.0)) - 2.0).abs() < 1e-15);
    }
}
