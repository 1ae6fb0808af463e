//! Symplectic embeddings: residual checks, the expansion bound `L`, and the
//! normalization `ψ = τ_{-φ(p)} ∘ φ ∘ τ_p ∘ D^{-1}`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{GeometryError, StarlikeDomain};
use crate::linalg::{min_singular_direction, op_norm, symplectic_defect, Matrix, Point};
use crate::mapdsl::{EvalError, MapExpression};
use crate::sampling;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("need at least two distinct sample points")]
    DegenerateSamples,
    #[error("linearization at the star point is singular")]
    SingularLinearization,
}

/// A smooth map `R^{2n} -> R^{2n}` with exact Jacobian.
pub trait PhaseMap: Send + Sync + std::fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, z: &Point) -> Result<Point, EvalError>;
    fn eval_jac(&self, z: &Point) -> Result<(Point, Matrix), EvalError>;
}

impl PhaseMap for MapExpression {
    fn dim(&self) -> usize {
        self.arity_in()
    }

    fn eval(&self, z: &Point) -> Result<Point, EvalError> {
        self.evaluate(z.as_slice())
    }

    fn eval_jac(&self, z: &Point) -> Result<(Point, Matrix), EvalError> {
        self.evaluate_with_jacobian(z.as_slice())
    }
}

/// The piecewise asymptotic map on the strip `R × (-1, 0)`:
/// identity for `x >= 1` and the rotation `(x, y) -> (-x, -y)` for `x <= -1`.
/// Undefined on `|x| < 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StripTrap;

impl PhaseMap for StripTrap {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, z: &Point) -> Result<Point, EvalError> {
        Ok(self.eval_jac(z)?.0)
    }

    fn eval_jac(&self, z: &Point) -> Result<(Point, Matrix), EvalError> {
        if z[0] >= 1.0 {
            Ok((z.clone(), DMatrix::identity(2, 2)))
        } else if z[0] <= -1.0 {
            Ok((-z.clone(), -DMatrix::identity(2, 2)))
        } else {
            Err(EvalError::Domain("strip-trap map is only specified for |x| >= 1".into()))
        }
    }
}

/// A map together with the domain it embeds.
#[derive(Debug, Clone)]
pub struct SymplecticMap {
    pub forward: Arc<dyn PhaseMap>,
    pub domain: StarlikeDomain,
}

impl SymplecticMap {
    pub fn new(forward: Arc<dyn PhaseMap>, domain: StarlikeDomain) -> Self {
        assert_eq!(forward.dim(), domain.dim(), "map and domain dimensions differ");
        SymplecticMap { forward, domain }
    }

    pub fn n(&self) -> usize {
        self.domain.n()
    }
}

/// `‖dφ(z)^T J dφ(z) − J‖`.
pub fn symplectic_residual(map: &dyn PhaseMap, z: &Point) -> Result<f64, EvalError> {
    let (_, jac) = map.eval_jac(z)?;
    Ok(symplectic_defect(&jac))
}

/// Largest residual over `count` domain samples.
pub fn max_symplectic_residual(map: &SymplecticMap, count: usize, window: f64, seed: u64) -> Result<(f64, Point), EvalError> {
    let mut worst = (0.0, map.domain.center());
    for z in map.domain.sample_points(count, window, seed) {
        let r = symplectic_residual(map.forward.as_ref(), &z)?;
        if r > worst.0 {
            worst = (r, z);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpanDiagnostic {
    /// Radius of the window the pairs were drawn at.
    pub radius: f64,
    pub min_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionBound {
    /// `min |φ(z) − φ(z')| / |z − z'|` over the sampled pairs.
    pub l_hat: f64,
    pub sample_count: usize,
    pub worst_pair: (Vec<f64>, Vec<f64>),
    /// Smallest ratio among antipodal pairs at each window radius.
    pub spans: Vec<SpanDiagnostic>,
    /// `l_hat < threshold`.
    pub hypothesis_failure: bool,
    pub threshold: f64,
}

impl ExpansionBound {
    /// Fold in more pairs; `l_hat` can only decrease.
    pub fn absorb(&mut self, map: &dyn PhaseMap, pairs: &[(Point, Point)]) -> Result<(), EmbeddingError> {
        for (a, b) in pairs {
            let d = (a - b).norm();
            if d == 0.0 {
                continue;
            }
            let ratio = (map.eval(a)? - map.eval(b)?).norm() / d;
            self.sample_count += 1;
            if ratio < self.l_hat {
                self.l_hat = ratio;
                self.worst_pair = (a.iter().cloned().collect(), b.iter().cloned().collect());
            }
        }
        self.hypothesis_failure = self.l_hat < self.threshold;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExpansionConfig {
    pub samples: usize,
    /// Sampling window radius about the star center (matters for unbounded domains).
    pub window: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig { samples: 2000, window: 100.0, threshold: 0.02, seed: 1 }
    }
}

/// Pairs at the extremes of nested windows: `c ± ρ u` along sampled directions.
pub fn extreme_pairs(domain: &StarlikeDomain, window: f64, directions: usize) -> Vec<(f64, Point, Point)> {
    let c = domain.center();
    let mut out = Vec::new();
    let mut radius = window;
    while radius >= 0.5 && out.len() < 64 * directions {
        for u in sampling::sphere_directions(domain.dim(), directions, 3) {
            let a = &c + &u * (0.999 * domain.radial_support(&u).min(radius));
            let b = &c - &u * (0.999 * domain.radial_support(&(-&u)).min(radius));
            out.push((radius, a, b));
        }
        radius *= 0.5;
    }
    out
}

/// Estimate `L` from random pairs, near-coincident pairs along the weakest
/// direction of `dφ`, and antipodal window-extreme pairs.
pub fn estimate_expansion_bound(map: &SymplecticMap, cfg: &ExpansionConfig) -> Result<ExpansionBound, EmbeddingError> {
    let pts = map.domain.sample_points(cfg.samples, cfg.window, cfg.seed);
    estimate_expansion_bound_on(map.forward.as_ref(), &map.domain, &pts, cfg)
}

/// As [`estimate_expansion_bound`] but over a caller-supplied point set.
pub fn estimate_expansion_bound_on(
    map: &dyn PhaseMap,
    domain: &StarlikeDomain,
    pts: &[Point],
    cfg: &ExpansionConfig,
) -> Result<ExpansionBound, EmbeddingError> {
    if pts.len() < 2 {
        return Err(EmbeddingError::DegenerateSamples);
    }
    let mut rng = sampling::rng(cfg.seed ^ 0xe4);
    let mut pairs = Vec::with_capacity(3 * pts.len());
    for _ in 0..2 * pts.len() {
        let i = rng.gen_range(0..pts.len());
        let j = rng.gen_range(0..pts.len());
        if i != j {
            pairs.push((pts[i].clone(), pts[j].clone()));
        }
    }
    if pairs.iter().all(|(a, b)| a == b) {
        return Err(EmbeddingError::DegenerateSamples);
    }
    for z in pts {
        let (_, jac) = map.eval_jac(z)?;
        let v = min_singular_direction(&jac);
        let h = 1e-6 * (1.0 + z.norm());
        for s in [1.0, -1.0] {
            let zp = z + &v * (s * h);
            if domain.contains(&zp) {
                pairs.push((z.clone(), zp));
                break;
            }
        }
    }
    let mut bound = ExpansionBound {
        l_hat: f64::INFINITY,
        sample_count: 0,
        worst_pair: (vec![], vec![]),
        spans: vec![],
        hypothesis_failure: false,
        threshold: cfg.threshold,
    };
    bound.absorb(map, &pairs)?;
    let extremes: Vec<_> = extreme_pairs(domain, cfg.window, if domain.dim() == 2 { 16 } else { 32 })
        .into_iter()
        .filter(|(_, a, b)| map.eval(a).is_ok() && map.eval(b).is_ok())
        .collect();
    let mut radii: Vec<f64> = extremes.iter().map(|e| e.0).collect();
    radii.dedup();
    for r in radii {
        let group: Vec<(Point, Point)> = extremes.iter().filter(|e| e.0 == r).map(|e| (e.1.clone(), e.2.clone())).collect();
        let mut local = bound.clone();
        local.l_hat = f64::INFINITY;
        local.absorb(map, &group)?;
        bound.spans.push(SpanDiagnostic { radius: r, min_ratio: local.l_hat });
        bound.absorb(map, &group)?;
    }
    Ok(bound)
}

/// `ψ = τ_{-φ(p)} ∘ φ ∘ τ_p ∘ D^{-1}` with `D = dφ(p)`.
#[derive(Debug, Clone)]
pub struct NormalizedEmbedding {
    pub base: Arc<dyn PhaseMap>,
    pub star_point: Point,
    pub image_point: Point,
    pub linearization: Matrix,
    pub linearization_inv: Matrix,
}

impl PhaseMap for NormalizedEmbedding {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, z: &Point) -> Result<Point, EvalError> {
        let x = &self.star_point + &self.linearization_inv * z;
        Ok(self.base.eval(&x)? - &self.image_point)
    }

    fn eval_jac(&self, z: &Point) -> Result<(Point, Matrix), EvalError> {
        let x = &self.star_point + &self.linearization_inv * z;
        let (w, jac) = self.base.eval_jac(&x)?;
        Ok((w - &self.image_point, jac * &self.linearization_inv))
    }
}

impl NormalizedEmbedding {
    /// `Φ = τ_{φ(p)} ∘ Ψ ∘ D ∘ τ_{-p}`, given the normalized-frame map `Ψ`.
    pub fn recompose(&self, psi_value: &Point) -> Point {
        psi_value + &self.image_point
    }

    /// Source point to the normalized frame: `D (z − p)`.
    pub fn to_normalized(&self, z: &Point) -> Point {
        &self.linearization * (z - &self.star_point)
    }

    /// Normalized frame back to the source: `p + D^{-1} ζ`.
    pub fn from_normalized(&self, zeta: &Point) -> Point {
        &self.star_point + &self.linearization_inv * zeta
    }

    pub fn d_norm(&self) -> f64 {
        op_norm(&self.linearization)
    }

    pub fn d_inv_norm(&self) -> f64 {
        op_norm(&self.linearization_inv)
    }
}

#[derive(Debug, Clone)]
pub struct Normalization {
    pub embedding: NormalizedEmbedding,
    pub domain: StarlikeDomain,
}

impl Normalization {
    /// `λ' = ‖D‖ ‖D^{-1}‖ λ`.
    pub fn transformed_lipschitz(&self, lambda: f64) -> f64 {
        self.embedding.d_norm() * self.embedding.d_inv_norm() * lambda
    }

    /// `L' = L / ‖D‖`.
    pub fn transformed_expansion(&self, l: f64) -> f64 {
        l / self.embedding.d_norm()
    }
}

pub fn normalize(map: &SymplecticMap) -> Result<Normalization, EmbeddingError> {
    let p = map.domain.center();
    let (image, d) = map.forward.eval_jac(&p)?;
    let det = d.determinant();
    if !(det.abs() > 1e-12) {
        return Err(EmbeddingError::SingularLinearization);
    }
    let d_inv = d.clone().try_inverse().ok_or(EmbeddingError::SingularLinearization)?;
    let domain = map.domain.normalized(&d, &d_inv);
    let embedding = NormalizedEmbedding {
        base: map.forward.clone(),
        star_point: p,
        image_point: image,
        linearization: d,
        linearization_inv: d_inv,
    };
    Ok(Normalization { embedding, domain })
}

/// Taylor constants of `ψ` on `B(ε)`: `|ψ(x) − x| ≤ M₁|x|²`, `‖dψ(x) − Id‖ ≤ M₂|x|`.
pub fn estimate_taylor_constants(psi: &dyn PhaseMap, domain: &StarlikeDomain, eps: f64, samples: usize, seed: u64) -> Result<(f64, f64), EvalError> {
    let dim = psi.dim();
    let id = DMatrix::<f64>::identity(dim, dim);
    let (mut m1, mut m2) = (0.0f64, 0.0f64);
    let dirs = sampling::sphere_directions(dim, samples.max(8), seed);
    let mut rng = sampling::rng(seed);
    for u in dirs {
        for scale in [1.0, 0.5, 0.1, 0.01] {
            let r = eps * scale * rng.gen_range(0.5..1.0);
            let x: DVector<f64> = &u * r;
            if !domain.contains(&x) {
                continue;
            }
            let (w, jac) = psi.eval_jac(&x)?;
            m1 = m1.max((w - &x).norm() / (r * r));
            m2 = m2.max(op_norm(&(jac - &id)) / r);
        }
    }
    Ok((m1, m2))
}
