//! Starlike domains by radial support, intrinsic distance on a grid,
//! truncations `U_t`, and the core sets `A ⊂ V ⊂ U`.

mod core_set;
mod grid;
mod shape;

pub use core_set::{CoreSpec, CutoffProfile};
pub use grid::{estimate_lipschitz, intrinsic_distance, GridMetric, LipschitzEstimate};
pub use shape::Shape;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::linalg::{op_norm, Point};
use crate::sampling;

/// Radial cap used in place of `(ε/e) e^{1/t}` once that exceeds it.
pub const R_MAX: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("domain is not starlike about its center {center:?}: {reason}")]
    NotStarlikeAboutCenter { center: Vec<f64>, reason: String },
    #[error("no grid path between the points; refine h")]
    Disconnected,
    #[error("point {0:?} lies outside the grid window or the domain")]
    OutOfWindow(Vec<f64>),
    #[error("t = {0} is outside (0, 1]")]
    InvalidT(f64),
    #[error("invalid core specification: {0}")]
    InvalidCore(String),
    #[error("shape '{0}' is only defined in the plane")]
    PlanarOnly(&'static str),
    #[error("degenerate domain data: {0}")]
    Degenerate(String),
}

/// Linear change of coordinates `own = D (base - base_center)`.
#[derive(Debug, Clone)]
struct Frame {
    d: DMatrix<f64>,
    d_inv: DMatrix<f64>,
}

/// Domain starlike about `center`, represented through its radial support.
#[derive(Debug, Clone)]
pub struct StarlikeDomain {
    n: usize,
    shape: Arc<Shape>,
    base_center: Point,
    frame: Option<Arc<Frame>>,
    cap: f64,
    declared_lipschitz: Option<f64>,
}

impl StarlikeDomain {
    /// `shape` in `R^{2n}` with star center `center`.
    pub fn new(n: usize, shape: Shape, center: Point) -> Result<Self, GeometryError> {
        if center.len() != 2 * n {
            return Err(GeometryError::Degenerate(format!("center has dimension {}, expected {}", center.len(), 2 * n)));
        }
        if n != 1 && shape.is_planar_only() {
            return Err(GeometryError::PlanarOnly(shape.name()));
        }
        match &shape {
            Shape::Ball { center: c, radius } if c.len() != 2 * n || !(*radius > 0.0) => {
                return Err(GeometryError::Degenerate("ball needs matching center and positive radius".into()));
            }
            Shape::Strip { lower, upper } if !(lower < upper) => {
                return Err(GeometryError::Degenerate("strip needs lower < upper".into()));
            }
            Shape::Notch { half_width, apex, slope } if !(*half_width > 0.0 && *slope > 0.0 && apex.abs() < *half_width) => {
                return Err(GeometryError::Degenerate("notch needs a > 0, k > 0, |b| < a".into()));
            }
            Shape::Annulus { inner, outer } if !(*inner >= 0.0 && inner < outer) => {
                return Err(GeometryError::Degenerate("annulus needs 0 <= inner < outer".into()));
            }
            _ => {}
        }
        Ok(StarlikeDomain {
            n,
            shape: Arc::new(shape),
            base_center: center,
            frame: None,
            cap: f64::INFINITY,
            declared_lipschitz: None,
        })
    }

    pub fn ball(n: usize, radius: f64) -> Self {
        let c = DVector::zeros(2 * n);
        StarlikeDomain::new(n, Shape::Ball { center: c.clone(), radius }, c).expect("valid ball")
    }

    pub fn whole(n: usize) -> Self {
        StarlikeDomain::new(n, Shape::Whole, DVector::zeros(2 * n)).expect("valid")
    }

    pub fn with_declared_lipschitz(mut self, lambda: f64) -> Self {
        self.declared_lipschitz = Some(lambda);
        self
    }

    pub fn declared_lipschitz(&self) -> Option<f64> {
        self.declared_lipschitz
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Star center in this domain's own coordinates.
    pub fn center(&self) -> Point {
        match &self.frame {
            None => self.base_center.clone(),
            Some(_) => DVector::zeros(self.dim()),
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.frame.is_some()
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    /// True when every direction has finite radial support.
    pub fn is_bounded(&self) -> bool {
        self.cap.is_finite() || matches!(*self.shape, Shape::Ball { .. } | Shape::Notch { .. } | Shape::Annulus { .. } | Shape::Radial { .. })
    }

    /// Convex in base coordinates (and hence in any linear frame).
    pub fn is_convex(&self) -> bool {
        self.shape.is_convex()
    }

    fn to_base(&self, z: &DVector<f64>) -> Point {
        match &self.frame {
            None => z.clone(),
            Some(f) => &f.d_inv * z + &self.base_center,
        }
    }

    fn dir_to_base(&self, u: &DVector<f64>) -> Point {
        match &self.frame {
            None => u.clone(),
            Some(f) => &f.d_inv * u,
        }
    }

    /// Whether the star center lies in the domain.
    pub fn center_inside(&self) -> bool {
        self.shape.inside(&self.base_center)
    }

    /// Points removed from an otherwise simply connected region. Only the
    /// annulus has one; every other shape is starlike and hence contractible.
    pub fn holes(&self) -> Vec<Point> {
        match &*self.shape {
            Shape::Annulus { .. } => {
                let origin = DVector::zeros(self.dim());
                vec![match &self.frame {
                    None => origin,
                    Some(f) => &f.d * (origin - &self.base_center),
                }]
            }
            _ => vec![],
        }
    }

    pub fn contains(&self, z: &DVector<f64>) -> bool {
        if z.len() != self.dim() || z.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let b = self.to_base(z);
        if !self.shape.inside(&b) {
            return false;
        }
        self.cap.is_infinite() || (z - self.center()).norm() < self.cap
    }

    /// `rho(u)`: distance from the center to the boundary along direction `u` (any length).
    pub fn radial_support(&self, u: &DVector<f64>) -> f64 {
        let norm = u.norm();
        let v = self.dir_to_base(&(u / norm));
        self.shape.ray_exit(&self.base_center, &v).min(self.cap)
    }

    /// Check that the center is inside and rays meet the domain in intervals.
    pub fn check_starlike(&self, directions: usize) -> Result<(), GeometryError> {
        let center = self.center();
        if !self.center_inside() {
            return Err(GeometryError::NotStarlikeAboutCenter {
                center: center.iter().cloned().collect(),
                reason: "center is not in the domain".into(),
            });
        }
        for u in sampling::sphere_directions(self.dim(), directions, 17) {
            let rho = self.radial_support(&u);
            if !(rho > 0.0) {
                return Err(GeometryError::NotStarlikeAboutCenter {
                    center: center.iter().cloned().collect(),
                    reason: format!("zero radial support in direction {:?}", u.as_slice()),
                });
            }
            let reach = if rho.is_finite() { rho } else { 100.0 };
            for k in 1..20 {
                let s = reach * k as f64 / 20.0;
                if !self.contains(&(&center + &u * s)) {
                    return Err(GeometryError::NotStarlikeAboutCenter {
                        center: center.iter().cloned().collect(),
                        reason: format!("ray leaves the domain before its radial support at s = {s}"),
                    });
                }
            }
            if rho.is_finite() {
                for k in 1..=20 {
                    let s = rho * (1.0 + 0.1 * k as f64);
                    if self.contains(&(&center + &u * s)) {
                        return Err(GeometryError::NotStarlikeAboutCenter {
                            center: center.iter().cloned().collect(),
                            reason: format!("ray re-enters the domain at s = {s}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// `0.99 * min_u rho(u)` over sampled directions.
    pub fn inscribed_radius(&self) -> Result<f64, GeometryError> {
        if !self.center_inside() {
            return Err(GeometryError::NotStarlikeAboutCenter {
                center: self.center().iter().cloned().collect(),
                reason: "center is not in the domain".into(),
            });
        }
        let count = if self.dim() == 2 { 1440 } else { 4096 };
        let min = sampling::sphere_directions(self.dim(), count, 5)
            .iter()
            .map(|u| self.radial_support(u))
            .fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(GeometryError::NotStarlikeAboutCenter {
                center: self.center().iter().cloned().collect(),
                reason: "radial support vanishes".into(),
            });
        }
        Ok(0.99 * min)
    }

    /// `U_t = U ∩ B((ε/e) e^{1/t})`, radius clamped at [`R_MAX`].
    pub fn truncated(&self, eps: f64, t: f64) -> Result<StarlikeDomain, GeometryError> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(GeometryError::InvalidT(t));
        }
        let mut out = self.clone();
        out.cap = self.cap.min(truncation_radius(eps, t));
        Ok(out)
    }

    /// The domain `(D ∘ τ_{-p})(U)` in coordinates centered at the star point.
    pub fn normalized(&self, d: &DMatrix<f64>, d_inv: &DMatrix<f64>) -> StarlikeDomain {
        let (d, d_inv) = match &self.frame {
            None => (d.clone(), d_inv.clone()),
            Some(f) => (d * &f.d, &f.d_inv * d_inv),
        };
        let lambda = self.declared_lipschitz.map(|l| l * op_norm(&d) * op_norm(&d_inv));
        StarlikeDomain {
            n: self.n,
            shape: self.shape.clone(),
            base_center: self.base_center.clone(),
            frame: Some(Arc::new(Frame { d, d_inv })),
            cap: f64::INFINITY,
            declared_lipschitz: lambda,
        }
    }

    /// Largest finite radial support over sampled directions, capped by `window`.
    pub fn extent(&self, window: f64) -> f64 {
        let count = if self.dim() == 2 { 720 } else { 2048 };
        sampling::sphere_directions(self.dim(), count, 9)
            .iter()
            .map(|u| self.radial_support(u).min(window))
            .fold(0.0, f64::max)
    }

    /// Quasi-uniform points of `U ∩ B(center, window)`: Halton points by rejection,
    /// followed by points hugging the boundary along sampled rays.
    pub fn sample_points(&self, count: usize, window: f64, seed: u64) -> Vec<Point> {
        let dim = self.dim();
        let center = self.center();
        let reach = self.extent(window);
        let mut out = Vec::with_capacity(count);
        let boundary = count / 5;
        let interior = count - boundary;
        let offset = seed.wrapping_mul(7919) % 100_000;
        let mut idx = offset;
        let mut tries = 0usize;
        while out.len() < interior && tries < 200 * count.max(1) {
            let h = sampling::halton(idx, dim);
            idx += 1;
            tries += 1;
            let z = &center + (h * 2.0 - DVector::from_element(dim, 1.0)) * reach;
            if (&z - &center).norm() < window && self.contains(&z) {
                out.push(z);
            }
        }
        let mut r = sampling::rng(seed ^ 0x5eed);
        let dirs = sampling::sphere_directions(dim, boundary.max(1) * 3, seed.wrapping_add(1));
        for u in dirs {
            if out.len() >= count {
                break;
            }
            let rho = self.radial_support(&u).min(window);
            let frac = 1.0 - 10f64.powf(-r.gen_range(2.0..6.0));
            let z = &center + &u * (rho * frac);
            if self.contains(&z) {
                out.push(z);
            }
        }
        out
    }
}

/// `(ε/e) e^{1/t}`, clamped at [`R_MAX`].
pub fn truncation_radius(eps: f64, t: f64) -> f64 {
    let log_r = eps.ln() - 1.0 + 1.0 / t;
    if log_r >= R_MAX.ln() {
        R_MAX
    } else {
        log_r.exp()
    }
}
