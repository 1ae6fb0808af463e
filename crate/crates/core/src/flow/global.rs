//! Assembly of `Φ_A`: hypotheses, normalization, constants, generator, flow.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::RwLock;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{integrate_from_level, integrate_on_grid, time_grid, FlowError, FlowOutcome, HamiltonianVectorField, IntegratorConfig};
use crate::embedding::{estimate_taylor_constants, normalize, EmbeddingError, NormalizedEmbedding, PhaseMap, SymplecticMap};
use crate::extension::{Cutoff, ExtendedGenerator, ExtensionConfig, ExtensionError};
use crate::geometry::{CoreSpec, GeometryError};
use crate::hamiltonian::HamiltonianField;
use crate::homotopy::{HomotopyPath, T_CUTOFF};
use crate::linalg::{symplectic_defect, Matrix, Point};
use crate::mapdsl::EvalError;
use crate::verify::{build_ledger, hypothesis_report, ConstantLedger, HypothesisClause, HypothesisConfig, HypothesisReport, LedgerError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Initial Gauss–Legendre node count for the line integral of `H`.
    pub quadrature_nodes: usize,
    /// The ledger uses `expansion_safety · L̂` to absorb sampling error in `L̂`.
    pub expansion_safety: f64,
    /// Directions for the Taylor constants `M₁`, `M₂`.
    pub taylor_samples: usize,
    pub integrator: IntegratorConfig,
    pub extension: ExtensionConfig,
    pub hypotheses: HypothesisConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            quadrature_nodes: 32,
            expansion_safety: 0.9,
            taylor_samples: 256,
            integrator: IntegratorConfig { newton_tol: 3e-7, ..IntegratorConfig::default() },
            extension: ExtensionConfig::default(),
            hypotheses: HypothesisConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("hypothesis failure: {clause}")]
    HypothesisFailure { clause: HypothesisClause, report: Box<HypothesisReport> },
    #[error("the bounded construction needs a bounded domain")]
    UnboundedDomain,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Extension(#[from] ExtensionError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

const M_FLOOR: f64 = 1e-6;

impl PipelineError {
    pub fn clause(&self) -> Option<HypothesisClause> {
        match self {
            PipelineError::HypothesisFailure { clause, .. } => Some(*clause),
            _ => None,
        }
    }
}

/// Which Hamiltonian generates the flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtensionKind {
    /// `H̃`, defined on all of `R^{2n}`.
    Global,
    /// `f H`, compactly supported.
    Bounded,
}

/// Inputs and derived quantities recorded with every `Φ_A`.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineMetadata {
    pub kind: ExtensionKind,
    pub l_hat: f64,
    pub lambda_hat: f64,
    /// `L` and `λ` after the change to the normalized frame; `l_used` enters the ledger.
    pub l_normalized: f64,
    pub l_used: f64,
    pub lambda_normalized: f64,
    pub epsilon: f64,
    pub m1: f64,
    pub m2: f64,
    pub reach: f64,
    pub cutoff_gradient_bound: f64,
    /// Bounded kind: `Φ_A` is affine (`z ↦ φ(p) + D(z − p)`) for `|z − p|` beyond this.
    pub support_radius: Option<f64>,
    pub star_point: Vec<f64>,
    pub image_point: Vec<f64>,
    pub linearization: Vec<Vec<f64>>,
}

struct Generated {
    generator: Arc<ExtendedGenerator>,
    kind: ExtensionKind,
}

impl HamiltonianVectorField for Generated {
    fn dim(&self) -> usize {
        self.generator.dim()
    }

    fn gradient(&self, t: f64, w: &Point, hint: &mut Option<Point>) -> Result<Point, String> {
        let g = match self.kind {
            ExtensionKind::Global => self.generator.h_tilde_gradient(t, w, hint),
            ExtensionKind::Bounded => self.generator.bounded_gradient(t, w, hint),
        };
        g.map_err(|e| e.to_string())
    }

    fn quiet_until(&self) -> Option<f64> {
        Some(T_CUTOFF)
    }
}

/// The time-1 map `Φ_A` of the generated flow, in source coordinates.
pub struct GlobalSymplectomorphism {
    field: Generated,
    embedding: NormalizedEmbedding,
    integrator: IntegratorConfig,
    metadata: PipelineMetadata,
    hypotheses: HypothesisReport,
    ledger: ConstantLedger,
    cache: RwLock<HashMap<Vec<u64>, FlowOutcome>>,
}

/// Numerical Jacobian of `Φ_A` and its defects.
#[derive(Debug, Clone)]
pub struct JacobianReport {
    pub matrix: Matrix,
    pub residual: f64,
    pub determinant: f64,
    pub level: usize,
    pub step: f64,
}

fn key(z: &Point) -> Vec<u64> {
    z.iter().map(|v| v.to_bits()).collect()
}

impl GlobalSymplectomorphism {
    pub fn kind(&self) -> ExtensionKind {
        self.field.kind
    }

    pub fn generator(&self) -> &ExtendedGenerator {
        &self.field.generator
    }

    pub fn embedding(&self) -> &NormalizedEmbedding {
        &self.embedding
    }

    pub fn integrator(&self) -> &IntegratorConfig {
        &self.integrator
    }

    pub fn metadata(&self) -> &PipelineMetadata {
        &self.metadata
    }

    pub fn hypotheses(&self) -> &HypothesisReport {
        &self.hypotheses
    }

    pub fn ledger(&self) -> &ConstantLedger {
        &self.ledger
    }

    pub fn support_radius(&self) -> Option<f64> {
        self.metadata.support_radius
    }

    /// The generating field in the normalized frame.
    pub fn field(&self) -> &dyn HamiltonianVectorField {
        &self.field
    }

    pub fn cached_points(&self) -> usize {
        self.cache.read().len()
    }

    /// `Φ_A(z)` with adaptive step doubling, cached per input point.
    pub fn apply(&self, z: &Point) -> Result<Point, FlowError> {
        Ok(self.apply_detailed(z)?.endpoint)
    }

    /// As [`apply`](Self::apply) with the refinement level and drift.
    pub fn apply_detailed(&self, z: &Point) -> Result<FlowOutcome, FlowError> {
        let k = key(z);
        if let Some(hit) = self.cache.read().get(&k) {
            return Ok(hit.clone());
        }
        let zeta = self.embedding.to_normalized(z);
        let mut out = integrate_from_level(&self.field, &zeta, &self.integrator, 0)?;
        out.endpoint = self.embedding.recompose(&out.endpoint);
        self.cache.write().entry(k).or_insert_with(|| out.clone());
        Ok(out)
    }

    /// `Φ_A(z)` on the fixed grid of refinement `level`, uncached.
    pub fn apply_at_level(&self, z: &Point, level: usize) -> Result<Point, FlowError> {
        let grid = time_grid(&self.integrator, self.field.quiet_until(), level);
        let zeta = self.embedding.to_normalized(z);
        Ok(self.embedding.recompose(&integrate_on_grid(&self.field, &zeta, &grid, &self.integrator)?))
    }

    /// Evaluate many points in parallel.
    pub fn apply_many(&self, points: &[Point]) -> Vec<Result<FlowOutcome, FlowError>> {
        points.par_iter().map(|z| self.apply_detailed(z)).collect()
    }
}

/// Central-difference Jacobian of `Φ_A` at `z`. All stencil trajectories
/// use the refinement level chosen for `z`, so the differences see one map.
pub fn flow_jacobian(phi: &GlobalSymplectomorphism, z: &Point) -> Result<JacobianReport, FlowError> {
    let level = phi.apply_detailed(z)?.level;
    let dim = z.len();
    let h = 1e-5 * (1.0 + z.norm());
    let cols: Vec<Result<Point, FlowError>> = (0..dim)
        .into_par_iter()
        .map(|k| {
            let mut a = z.clone();
            let mut b = z.clone();
            a[k] += h;
            b[k] -= h;
            Ok((phi.apply_at_level(&a, level)? - phi.apply_at_level(&b, level)?) / (2.0 * h))
        })
        .collect();
    let mut m = Matrix::zeros(dim, dim);
    for (k, c) in cols.into_iter().enumerate() {
        m.set_column(k, &c?);
    }
    Ok(JacobianReport { residual: symplectic_defect(&m), determinant: m.determinant(), matrix: m, level, step: h })
}

fn build(map: &SymplecticMap, core: CoreSpec, config: &PipelineConfig, kind: ExtensionKind) -> Result<GlobalSymplectomorphism, PipelineError> {
    config.integrator.validate().map_err(PipelineError::Config)?;
    if !(config.expansion_safety > 0.0 && config.expansion_safety <= 1.0) {
        return Err(PipelineError::Config(format!("expansion_safety = {} not in (0, 1]", config.expansion_safety)));
    }
    let report = hypothesis_report(map, &config.hypotheses);
    if let Some(clause) = report.failing {
        return Err(PipelineError::HypothesisFailure { clause, report: Box::new(report) });
    }
    if kind == ExtensionKind::Bounded && !map.domain.is_bounded() {
        return Err(PipelineError::UnboundedDomain);
    }
    core.validate(&map.domain)?;
    let (l_hat, lambda_hat) = (report.l_hat().unwrap_or(0.0), report.lambda_hat().unwrap_or(1.0));

    let norm = normalize(map)?;
    let l_normalized = norm.transformed_expansion(l_hat);
    let l_used = config.expansion_safety * l_normalized;
    let lambda_normalized = norm.transformed_lipschitz(lambda_hat);
    let epsilon = norm.domain.inscribed_radius()?;
    let psi: Arc<dyn PhaseMap> = Arc::new(norm.embedding.clone());
    let (m1, m2) = estimate_taylor_constants(psi.as_ref(), &norm.domain, epsilon, config.taylor_samples, config.hypotheses.seed)?;
    // Exact linear maps give zero and the ledger needs positive inputs. The
    // floor sits well above sampling roundoff so the bounds stay checkable;
    // a larger M only loosens every bound.
    let (m1, m2) = (m1.max(M_FLOOR), m2.max(M_FLOOR));
    let ledger = build_ledger(l_used, lambda_normalized, epsilon, m1, m2)?;

    let field = HamiltonianField::new(HomotopyPath::new(psi, norm.domain.clone()), config.quadrature_nodes);
    let cutoff = Cutoff::new(map.domain.clone(), core, norm.embedding.clone());
    let reach = cutoff.reach(l_used);
    let cutoff_gradient_bound = cutoff.gradient_bound(l_used);
    let generator = ExtendedGenerator::new(field, ledger.clone(), cutoff, config.extension.clone())?;
    let e = &norm.embedding;
    let metadata = PipelineMetadata {
        kind,
        l_hat,
        lambda_hat,
        l_normalized,
        l_used,
        lambda_normalized,
        epsilon,
        m1,
        m2,
        reach,
        cutoff_gradient_bound,
        support_radius: (kind == ExtensionKind::Bounded).then(|| reach * e.d_inv_norm()),
        star_point: e.star_point.iter().cloned().collect(),
        image_point: e.image_point.iter().cloned().collect(),
        linearization: e.linearization.row_iter().map(|r| r.iter().cloned().collect()).collect(),
    };
    Ok(GlobalSymplectomorphism {
        field: Generated { generator: Arc::new(generator), kind },
        embedding: norm.embedding,
        integrator: config.integrator.clone(),
        metadata,
        hypotheses: report,
        ledger,
        cache: RwLock::new(HashMap::new()),
    })
}

/// `Φ_A` from the flow of `H̃`.
pub fn extend_embedding(map: &SymplecticMap, core: CoreSpec, config: &PipelineConfig) -> Result<GlobalSymplectomorphism, PipelineError> {
    build(map, core, config, ExtensionKind::Global)
}

/// `Φ_A` from the flow of the compactly supported `f H`.
pub fn extend_bounded(map: &SymplecticMap, core: CoreSpec, config: &PipelineConfig) -> Result<GlobalSymplectomorphism, PipelineError> {
    build(map, core, config, ExtensionKind::Bounded)
}

#[cfg(test)]
mod tests {
    use nalgebra::DVector;

    use super::*;
    use crate::geometry::{Shape, StarlikeDomain};
    use crate::mapdsl::parse;

    fn p(x: f64, y: f64) -> Point {
        DVector::from_vec(vec![x, y])
    }

    fn quick() -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.hypotheses.samples = 400;
        c
    }

    fn ball_map(src: &str) -> SymplecticMap {
        SymplecticMap::new(Arc::new(parse(src, 1).unwrap()), StarlikeDomain::ball(1, 3.0))
    }

    fn core() -> CoreSpec {
        CoreSpec::new(1.0 / 3.0, f64::INFINITY, 0.8)
    }

    #[test]
    fn identity_extends_to_identity() {
        let phi = extend_embedding(&ball_map("x1, y1"), core(), &quick()).unwrap();
        for z in [p(0.0, 0.0), p(0.9, -0.3), p(1.7, 0.2), p(-2.0, 2.0)] {
            assert!((phi.apply(&z).unwrap() - &z).norm() <= 1e-9);
        }
        let j = flow_jacobian(&phi, &p(0.3, 1.5)).unwrap();
        assert!(j.residual <= 1e-8);
    }

    #[test]
    fn shear_agrees_on_core() {
        let phi = extend_embedding(&ball_map("x1, y1 + x1^2"), core(), &quick()).unwrap();
        assert_eq!(phi.kind(), ExtensionKind::Global);
        assert_eq!(phi.ledger().l, phi.metadata().l_used);
        for (x, y) in [(0.5, 0.5), (-0.9, 0.1), (0.0, -0.99), (0.3, 0.8)] {
            let out = phi.apply(&p(x, y)).unwrap();
            assert!((out - p(x, y + x * x)).norm() <= 1e-6);
        }
        let z = p(0.2, -0.4);
        phi.apply(&z).unwrap();
        assert_eq!(phi.cached_points(), 5);
        let j = flow_jacobian(&phi, &z).unwrap();
        let exact = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.4, 1.0]);
        assert!((j.matrix - exact).norm() <= 1e-5);
    }

    #[test]
    fn hypothesis_failures_surface() {
        let dom = StarlikeDomain::new(1, Shape::Annulus { inner: 0.0, outer: 3.0 }, DVector::zeros(2)).unwrap();
        let map = SymplecticMap::new(Arc::new(parse("x1, y1", 1).unwrap()), dom);
        let err = extend_embedding(&map, core(), &quick()).err().unwrap();
        assert_eq!(err.clause(), Some(HypothesisClause::NotStarlike));
        let whole = SymplecticMap::new(Arc::new(parse("x1 + y1, y1", 1).unwrap()), StarlikeDomain::whole(1));
        let core = CoreSpec::new(0.5, 1.0, 0.5);
        assert!(matches!(extend_bounded(&whole, core, &quick()), Err(PipelineError::UnboundedDomain)));
    }

    #[test]
    fn bounded_is_identity_outside_support() {
        let phi = extend_bounded(&ball_map("x1, y1 + x1^2"), core(), &quick()).unwrap();
        let r = phi.support_radius().unwrap();
        assert!(r.is_finite() && r > 1.8);
        for k in 0..6 {
            let th = k as f64;
            let z = p(th.cos(), th.sin()) * (r * (1.0 + 0.1 * k as f64));
            assert_eq!(phi.apply(&z).unwrap(), z);
        }
        let out = phi.apply(&p(0.5, -0.5)).unwrap();
        assert!((out - p(0.5, -0.25)).norm() <= 1e-6);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = quick();
        c.integrator.steps = 1;
        assert!(matches!(extend_embedding(&ball_map("x1, y1"), core(), &c), Err(PipelineError::Config(_))));
    }
}
