//! Time stepping for `ẇ = J ∇H_t(w)` on `[0, 1]`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::FlowError;
use crate::linalg::{j_apply, Matrix, Point};

/// A time-dependent Hamiltonian given through its gradient.
pub trait HamiltonianVectorField: Sync {
    fn dim(&self) -> usize;

    /// `∇H_t(w)`; `hint` carries per-trajectory state between calls.
    fn gradient(&self, t: f64, w: &Point, hint: &mut Option<Point>) -> Result<Point, String>;

    /// The field is identically zero on `[0, t0]` when this returns `Some(t0)`;
    /// the time grid then refines geometrically toward `t0`.
    fn quiet_until(&self) -> Option<f64> {
        None
    }
}

/// An autonomous field from a gradient closure.
pub struct AutonomousField<F> {
    dim: usize,
    grad: F,
}

impl<F: Fn(&Point) -> Point + Sync> AutonomousField<F> {
    pub fn new(dim: usize, grad: F) -> Self {
        AutonomousField { dim, grad }
    }
}

impl<F: Fn(&Point) -> Point + Sync> HamiltonianVectorField for AutonomousField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn gradient(&self, _t: f64, w: &Point, _hint: &mut Option<Point>) -> Result<Point, String> {
        Ok((self.grad)(w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ImplicitMidpoint,
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    /// Uniform steps on `[0, 1]` before refinement.
    pub steps: usize,
    /// Ratio of consecutive steps in the geometric part near a quiet start.
    pub geometric_ratio: f64,
    /// Endpoint agreement required between two successive step doublings,
    /// relative to `1 + |w|`.
    pub newton_tol: f64,
    /// Newton tolerance of each implicit solve, relative to `1 + |w|`.
    pub solve_tol: f64,
    pub max_refinements: usize,
    /// Local step halvings allowed when an implicit solve fails.
    pub max_step_failures: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            scheme: Scheme::ImplicitMidpoint,
            steps: 64,
            geometric_ratio: 1.15,
            newton_tol: 1e-9,
            solve_tol: 1e-14,
            max_refinements: 10,
            max_step_failures: 8,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.steps < 16 {
            return Err(format!("steps = {} must be at least 16", self.steps));
        }
        if !(self.geometric_ratio > 1.0) {
            return Err(format!("geometric_ratio = {} must exceed 1", self.geometric_ratio));
        }
        if !(self.newton_tol > 0.0 && self.solve_tol > 0.0) {
            return Err("tolerances must be positive".into());
        }
        Ok(())
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowOutcome {
    pub endpoint: Point,
    /// Refinement level used (grid intervals split into `2^level`).
    pub level: usize,
    pub steps: usize,
    /// Distance to the previous level's endpoint.
    pub drift: f64,
}

/// Ascending time nodes ending at 1. With a quiet start `t0` the grid begins
/// at `t0` with steps `min(1/N, (1 − 1/ratio) t)`; otherwise it is uniform on
/// `[0, 1]`. Every interval is split into `2^level` equal parts.
pub fn time_grid(config: &IntegratorConfig, quiet: Option<f64>, level: usize) -> Vec<f64> {
    let n = config.steps as f64;
    let mut base = Vec::new();
    match quiet {
        None => base.extend((0..=config.steps).map(|k| k as f64 / n)),
        Some(t0) => {
            let shrink = 1.0 - 1.0 / config.geometric_ratio;
            let mut t = 1.0;
            base.push(t);
            while t > t0 {
                let h = (1.0 / n).min(shrink * t);
                t -= h;
                if t - t0 < 0.25 * h {
                    t = t0;
                }
                base.push(t.max(t0));
            }
            base.reverse();
        }
    }
    let split = 1usize << level;
    let mut out = Vec::with_capacity((base.len() - 1) * split + 1);
    for w in base.windows(2) {
        for k in 0..split {
            out.push(w[0] + (w[1] - w[0]) * k as f64 / split as f64);
        }
    }
    out.push(1.0);
    out
}

fn eval(field: &dyn HamiltonianVectorField, t: f64, w: &Point, hint: &mut Option<Point>) -> Result<Point, FlowError> {
    field
        .gradient(t, w, hint)
        .map(|g| j_apply(&g))
        .map_err(|message| FlowError::FieldEvaluation { t, w: w.iter().cloned().collect(), message })
}

/// Forward-difference Jacobian of the vector field `J∇H` at `w`.
fn field_jacobian(field: &dyn HamiltonianVectorField, t: f64, w: &Point, x0: &Point, hint: &mut Option<Point>) -> Option<Matrix> {
    let dim = w.len();
    let e = 1e-7 * (1.0 + w.norm());
    let mut jac = Matrix::zeros(dim, dim);
    for k in 0..dim {
        let mut wk = w.clone();
        wk[k] += e;
        let xk = j_apply(&field.gradient(t, &wk, hint).ok()?);
        jac.set_column(k, &((xk - x0) / e));
    }
    Some(jac)
}

/// Solve `δ = h X(t + h/2, w + δ/2)` by simplified Newton. `None` asks the
/// caller to halve the step.
/// Updates stagnating below `STALL_FACTOR · tol` count as converged.
const STALL_FACTOR: f64 = 1e4;

fn midpoint_step(
    field: &dyn HamiltonianVectorField,
    t: f64,
    h: f64,
    w: &Point,
    hint: &mut Option<Point>,
    config: &IntegratorConfig,
) -> Result<Option<Point>, FlowError> {
    let tm = t + 0.5 * h;
    let tol = config.solve_tol * (1.0 + w.norm());
    let dim = w.len();
    let mut delta = eval(field, tm, w, hint)? * h;
    let mut lu = None;
    let mut prev = f64::INFINITY;
    let mut growth = 0;
    for _ in 0..50 {
        let mid = w + &delta * 0.5;
        let x = match field.gradient(tm, &mid, hint) {
            Ok(g) => j_apply(&g),
            Err(_) => return Ok(None),
        };
        let residual = &delta - &x * h;
        if residual.norm() <= tol {
            return Ok(Some(w + delta));
        }
        if lu.is_none() {
            let Some(jac) = field_jacobian(field, tm, &mid, &x, hint) else { return Ok(None) };
            lu = Some((Matrix::identity(dim, dim) - jac * (0.5 * h)).lu());
        }
        let Some(update) = lu.as_ref().and_then(|m| m.solve(&residual)) else { return Ok(None) };
        let size = update.norm();
        delta -= update;
        if size <= tol {
            return Ok(Some(w + delta));
        }
        if size >= prev && prev <= STALL_FACTOR * tol {
            // Stalled at the evaluation noise floor of the field.
            return Ok(Some(w + delta));
        }
        if size > 0.5 * prev {
            // Slow or diverging: refresh the Jacobian at the new iterate.
            lu = None;
            if size >= prev {
                growth += 1;
                if growth >= 3 {
                    return Ok(None);
                }
            }
        }
        prev = size;
    }
    Ok(None)
}

fn rk4_step(field: &dyn HamiltonianVectorField, t: f64, h: f64, w: &Point, hint: &mut Option<Point>) -> Result<Point, FlowError> {
    let k1 = eval(field, t, w, hint)?;
    let k2 = eval(field, t + 0.5 * h, &(w + &k1 * (0.5 * h)), hint)?;
    let k3 = eval(field, t + 0.5 * h, &(w + &k2 * (0.5 * h)), hint)?;
    let k4 = eval(field, t + h, &(w + &k3 * h), hint)?;
    Ok(w + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

fn step(
    field: &dyn HamiltonianVectorField,
    t: f64,
    h: f64,
    w: &Point,
    hint: &mut Option<Point>,
    config: &IntegratorConfig,
    depth: usize,
) -> Result<Point, FlowError> {
    match config.scheme {
        Scheme::Rk4 => rk4_step(field, t, h, w, hint),
        Scheme::ImplicitMidpoint => {
            if let Some(next) = midpoint_step(field, t, h, w, hint, config)? {
                return Ok(next);
            }
            if depth >= config.max_step_failures {
                return Err(FlowError::StepLimitExceeded { t, w: w.iter().cloned().collect(), reason: "implicit solve failed at the smallest allowed step".into() });
            }
            let half = step(field, t, 0.5 * h, w, hint, config, depth + 1)?;
            step(field, t + 0.5 * h, 0.5 * h, &half, hint, config, depth + 1)
        }
    }
}

/// Integrate over a fixed grid.
pub fn integrate_on_grid(field: &dyn HamiltonianVectorField, w0: &Point, grid: &[f64], config: &IntegratorConfig) -> Result<Point, FlowError> {
    if w0.iter().any(|v| !v.is_finite()) {
        return Err(FlowError::NonFinite(w0.iter().cloned().collect()));
    }
    let mut w = w0.clone();
    let mut hint = None;
    for pair in grid.windows(2) {
        w = step(field, pair[0], pair[1] - pair[0], &w, &mut hint, config, 0)?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite(w.iter().cloned().collect()));
        }
    }
    Ok(w)
}

/// Integrate with step doubling until two successive endpoints agree within
/// `newton_tol · (1 + |w|)`.
pub fn integrate(field: &dyn HamiltonianVectorField, w0: &Point, config: &IntegratorConfig) -> Result<FlowOutcome, FlowError> {
    integrate_from_level(field, w0, config, 0)
}

pub fn integrate_from_level(field: &dyn HamiltonianVectorField, w0: &Point, config: &IntegratorConfig, start: usize) -> Result<FlowOutcome, FlowError> {
    config.validate().map_err(FlowError::Config)?;
    let quiet = field.quiet_until();
    let grid = time_grid(config, quiet, start);
    let mut prev = integrate_on_grid(field, w0, &grid, config)?;
    let mut drift = f64::INFINITY;
    for level in start + 1..=start + config.max_refinements {
        let grid = time_grid(config, quiet, level);
        let next = integrate_on_grid(field, w0, &grid, config)?;
        drift = (&next - &prev).norm();
        if drift <= config.newton_tol * (1.0 + next.norm()) {
            return Ok(FlowOutcome { endpoint: next, level, steps: grid.len() - 1, drift });
        }
        prev = next;
    }
    Err(FlowError::StepLimitExceeded {
        t: 1.0,
        w: w0.iter().cloned().collect(),
        reason: format!("no agreement after {} refinements (last drift {drift:.3e})", config.max_refinements),
    })
}

/// Closed-form oracles.
pub mod oracles {
    use super::*;

    /// `H = X³/3` in the first conjugate pair; time-1 map `(x, y) -> (x, y + x²)`.
    pub fn cubic_shear(dim: usize) -> AutonomousField<impl Fn(&Point) -> Point + Sync> {
        AutonomousField::new(dim, move |w: &Point| {
            let mut g = DVector::zeros(w.len());
            g[0] = w[0] * w[0];
            g
        })
    }

    /// `H = |w|²/2`; time-1 map is rotation by one radian in each pair.
    pub fn oscillator(dim: usize) -> AutonomousField<impl Fn(&Point) -> Point + Sync> {
        AutonomousField::new(dim, |w: &Point| w.clone())
    }

    pub fn rotation(w: &Point, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        let mut out = w.clone();
        for k in 0..w.len() / 2 {
            let (x, y) = (w[2 * k], w[2 * k + 1]);
            out[2 * k] = c * x - s * y;
            out[2 * k + 1] = s * x + c * y;
        }
        out
    }
}
