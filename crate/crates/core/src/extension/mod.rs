//! Extension of `G_t` to all of `R^{2n}`: two-stage McShane envelope `Ĝ`,
//! shell mollification `G*`, cutoff interpolation `G̃` and `H̃ = g(|w|) G̃`.
//!
//! All points here live in the normalized frame.

mod kernel;
mod mcshane;
mod shells;

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, OnceLock};

use nalgebra::DVector;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kernel::{bump, kernel_mass, MollifierRule, PolarLayout, KERNEL_MASS_2D, KERNEL_MASS_4D};
pub use mcshane::{mcshane_extend, Envelope, LipschitzSample};
pub use shells::ShellPartition;

use crate::embedding::NormalizedEmbedding;
use crate::geometry::{CoreSpec, CutoffProfile, StarlikeDomain, R_MAX};
use crate::hamiltonian::{normalize_h, taper, HamiltonianField};
use crate::homotopy::{HomotopyError, T_CUTOFF};
use crate::linalg::{j_inv_apply, Matrix, Point};
use crate::quadrature::GaussLegendre;
use crate::sampling;
use crate::verify::ConstantLedger;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtensionError {
    #[error("empty Lipschitz sample")]
    EmptySample,
    #[error("Lipschitz constant {0} must be positive and finite")]
    InvalidConstant(f64),
    #[error("inconsistent sample: pair {first:?}, {second:?} has ratio {ratio} to the constant")]
    InconsistentSample { first: Vec<f64>, second: Vec<f64>, ratio: f64 },
    #[error("invalid quadrature rule: {0}")]
    InvalidRule(String),
    #[error("quadrature needs {nodes} nodes, budget is {budget}")]
    QuadratureBudgetExceeded { nodes: usize, budget: usize },
    #[error("invalid shell partition: {0}")]
    InvalidShells(String),
    #[error(transparent)]
    Homotopy(#[from] HomotopyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtensionConfig {
    /// Interior samples per envelope stage.
    pub stage_samples: usize,
    /// Target spacing of boundary chains in the image (planar case).
    pub chain_spacing: f64,
    pub chain_max_vertices: usize,
    /// Source-side window for unbounded domains.
    pub sample_window: f64,
    pub kernel_radial_nodes: usize,
    pub kernel_angular_nodes: usize,
    /// Per-axis nodes of the tensor rule used when `2n > 2`.
    pub kernel_axis_nodes: usize,
    pub quadrature_budget: usize,
    pub shell_count: usize,
    pub shell_radius_cap: f64,
    pub shell_blend: f64,
    pub inflation: f64,
    pub envelope_cache: usize,
    pub seed: u64,
}

impl Default for ExtensionConfig {
    fn default() -> Self {
        ExtensionConfig {
            stage_samples: 4096,
            chain_spacing: 0.01,
            chain_max_vertices: 20_000,
            sample_window: 100.0,
            kernel_radial_nodes: 4,
            kernel_angular_nodes: 8,
            kernel_axis_nodes: 8,
            quadrature_budget: 5000,
            shell_count: 2,
            shell_radius_cap: 0.1,
            shell_blend: 0.25,
            inflation: 1.05,
            envelope_cache: 16,
            seed: 7,
        }
    }
}

/// `f(t, w) = χ(m(z))` with `z` the source-frame preimage of `w`.
#[derive(Debug, Clone)]
pub struct Cutoff {
    domain: StarlikeDomain,
    core: CoreSpec,
    embedding: NormalizedEmbedding,
    profile: CutoffProfile,
    margin_slope: f64,
}

impl Cutoff {
    pub fn new(domain: StarlikeDomain, core: CoreSpec, embedding: NormalizedEmbedding) -> Self {
        let profile = core.profile();
        let margin_slope = Self::sample_margin_slope(&domain, &core);
        Cutoff { domain, core, embedding, profile, margin_slope }
    }

    /// `max |∇m|` over the transition band, sampled along rays (10% slack).
    fn sample_margin_slope(domain: &StarlikeDomain, core: &CoreSpec) -> f64 {
        let c = domain.center();
        let mut worst: f64 = 1.0;
        let count = if domain.dim() == 2 { 360 } else { 1024 };
        for u in sampling::sphere_directions(domain.dim(), count, 5) {
            let rho_a = (core.scale * domain.radial_support(&u)).min(core.radius_cap);
            for k in 1..8 {
                let z = &c + &u * (rho_a + core.margin * k as f64 / 8.0);
                worst = worst.max(core.margin_gradient(domain, &z).norm());
            }
        }
        1.1 * worst
    }

    pub fn core(&self) -> &CoreSpec {
        &self.core
    }

    pub fn source_domain(&self) -> &StarlikeDomain {
        &self.domain
    }

    /// Bound on `|∇_w f|` given `‖dφ_t^{-1}‖ ≤ 1/l`.
    pub fn gradient_bound(&self, l: f64) -> f64 {
        self.profile.max_slope() * self.margin_slope * self.embedding.d_inv_norm() / l
    }

    /// Radius of a ball containing `φ_t(V)` for all `t`, given `‖dφ_t‖ ≤ 1/l`.
    pub fn reach(&self, l: f64) -> f64 {
        let c = self.domain.center();
        let count = if self.domain.dim() == 2 { 720 } else { 2048 };
        let mut far: f64 = 0.0;
        for u in sampling::sphere_directions(self.domain.dim(), count, 3) {
            let rho_a = (self.core.scale * self.domain.radial_support(&u)).min(self.core.radius_cap);
            let z = &c + &u * (rho_a + self.core.margin);
            far = far.max(self.embedding.to_normalized(&z).norm());
        }
        1.01 * far / l
    }

    /// `(f, ∇_w f)` at the normalized preimage `zeta` with `dφ_t(zeta)`.
    pub fn at_preimage(&self, zeta: &Point, dphi: &Matrix) -> (f64, Point) {
        let z = self.embedding.from_normalized(zeta);
        let m = self.core.margin_at(&self.domain, &z);
        let (chi, dchi) = self.profile.eval(m);
        if dchi == 0.0 {
            return (chi, DVector::zeros(zeta.len()));
        }
        let gm = self.core.margin_gradient(&self.domain, &z);
        let v = self.embedding.linearization_inv.transpose() * gm * dchi;
        let grad = dphi.transpose().lu().solve(&v).unwrap_or_else(|| DVector::zeros(zeta.len()));
        (chi, grad)
    }

    /// Whether the normalized preimage lies where `f = 1` and `∇f = 0`.
    pub fn is_flat_one(&self, zeta: &Point) -> bool {
        let z = self.embedding.from_normalized(zeta);
        self.profile.eval(self.core.margin_at(&self.domain, &z)) == (1.0, 0.0)
    }
}

/// Which piece of `Ĝ` produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Image,
    Stage1,
    Stage2,
}

/// Envelopes for one time.
#[derive(Debug)]
pub struct Stages {
    pub t: f64,
    pub r_t: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub stage1: Envelope,
    pub stage2: Envelope,
}

type StageSlot = Arc<OnceLock<Result<Arc<Stages>, ExtensionError>>>;

#[derive(Debug, Default)]
struct StageCache {
    slots: HashMap<u64, StageSlot>,
    order: VecDeque<u64>,
}

/// `Ĝ`, `G*`, `G̃` and `H̃` for one normalized embedding.
#[derive(Debug)]
pub struct ExtendedGenerator {
    field: HamiltonianField,
    ledger: ConstantLedger,
    config: ExtensionConfig,
    cutoff: Cutoff,
    shells: ShellPartition,
    rule: MollifierRule,
    stages: Mutex<StageCache>,
}

impl ExtendedGenerator {
    pub fn new(field: HamiltonianField, ledger: ConstantLedger, cutoff: Cutoff, config: ExtensionConfig) -> Result<Self, ExtensionError> {
        let dim = field.dim();
        let rule = if dim == 2 {
            MollifierRule::polar(config.kernel_radial_nodes, config.kernel_angular_nodes)?
        } else {
            MollifierRule::tensor(dim, config.kernel_axis_nodes, config.quadrature_budget)?
        };
        if dim == 2 && rule.len() > config.quadrature_budget {
            return Err(ExtensionError::QuadratureBudgetExceeded { nodes: rule.len(), budget: config.quadrature_budget });
        }
        let shells = ShellPartition::for_cutoff(
            cutoff.reach(ledger.l),
            cutoff.gradient_bound(ledger.l),
            config.shell_radius_cap,
            config.shell_count,
            config.shell_blend,
        )?;
        Ok(ExtendedGenerator { field, ledger, config, cutoff, shells, rule, stages: Mutex::new(StageCache::default()) })
    }

    pub fn field(&self) -> &HamiltonianField {
        &self.field
    }

    pub fn ledger(&self) -> &ConstantLedger {
        &self.ledger
    }

    pub fn cutoff(&self) -> &Cutoff {
        &self.cutoff
    }

    pub fn shells(&self) -> &ShellPartition {
        &self.shells
    }

    pub fn rule(&self) -> &MollifierRule {
        &self.rule
    }

    pub fn config(&self) -> &ExtensionConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    /// `R_t = (L/2)(ε/e) e^{1/t}`, clamped at [`R_MAX`].
    pub fn r_t(&self, t: f64) -> f64 {
        let e = std::f64::consts::E;
        let x = 0.5 * self.ledger.l * self.ledger.epsilon / e;
        if 1.0 / t > (R_MAX / x).ln() {
            R_MAX
        } else {
            x * (1.0 / t).exp()
        }
    }

    /// Inflated stage constants `(c₄ e^{-1/t}/t², C₅/t²)`.
    pub fn stage_constants(&self, t: f64) -> (f64, f64) {
        let k = self.config.inflation / (t * t);
        (k * self.ledger.small_c4 * (-1.0 / t).exp(), k * self.ledger.big_c5)
    }

    fn invert(&self, t: f64, w: &Point, hint: &mut Option<Point>) -> Option<Point> {
        let z = match hint.as_ref() {
            Some(g) => self.field.path().invert_near(t, w, g),
            None => self.field.path().invert_phi_t(t, w, None),
        }
        .ok()?;
        *hint = Some(z.clone());
        Some(z)
    }

    fn g_at_preimage(&self, t: f64, z: &Point, w: &Point) -> Result<f64, ExtensionError> {
        let h = self.field.ham_value_at_preimage(t, z)?;
        Ok(h / taper(w.norm()).0)
    }

    /// `Ĝ_t(w)` and the branch used.
    pub fn g_hat_branch(&self, t: f64, w: &Point, hint: &mut Option<Point>) -> Result<(f64, Branch), ExtensionError> {
        if t <= T_CUTOFF {
            return Ok((0.0, Branch::Image));
        }
        if let Some(z) = self.invert(t, w, hint) {
            return Ok((self.g_at_preimage(t, &z, w)?, Branch::Image));
        }
        let st = self.stages(t)?;
        if w.norm() <= st.r_t {
            Ok((st.stage1.eval(w), Branch::Stage1))
        } else {
            Ok((st.stage2.eval(w), Branch::Stage2))
        }
    }

    pub fn g_hat(&self, t: f64, w: &Point) -> Result<f64, ExtensionError> {
        Ok(self.g_hat_branch(t, w, &mut None)?.0)
    }

    /// Stage envelopes at `t`, built once per distinct `t` and cached.
    pub fn stages(&self, t: f64) -> Result<Arc<Stages>, ExtensionError> {
        let key = t.to_bits();
        let slot = {
            let mut cache = self.stages.lock();
            if let Some(s) = cache.slots.get(&key) {
                s.clone()
            } else {
                let s: StageSlot = Arc::new(OnceLock::new());
                cache.slots.insert(key, s.clone());
                cache.order.push_back(key);
                while cache.order.len() > self.config.envelope_cache.max(1) {
                    if let Some(old) = cache.order.pop_front() {
                        cache.slots.remove(&old);
                    }
                }
                s
            }
        };
        slot.get_or_init(|| self.build_stages(t).map(Arc::new)).clone()
    }

    /// Sampled boundary of `U` (slightly inside), as a closed chain of
    /// preimages in the plane or a point cloud otherwise.
    fn boundary_preimages(&self, t: f64, window: f64) -> Result<(Vec<Point>, Vec<Point>, bool), ExtensionError> {
        let path = self.field.path();
        let domain = path.domain();
        let c = domain.center();
        let inside = |u: &Point| -> Point {
            let rho = domain.radial_support(u).min(window);
            let mut s = rho * (1.0 - 1e-9);
            let mut z = &c + u * s;
            while !domain.contains(&z) && s > 0.0 {
                s *= 1.0 - 1e-6;
                z = &c + u * s;
            }
            z
        };
        if self.dim() != 2 {
            let dirs = sampling::sphere_directions(self.dim(), self.config.stage_samples / 2, self.config.seed);
            let zs: Vec<Point> = dirs.iter().map(|u| inside(u)).collect();
            let ws = zs.iter().map(|z| path.phi_t(t, z)).collect::<Result<Vec<_>, _>>()?;
            return Ok((zs, ws, false));
        }
        let at = |th: f64| -> Result<(Point, Point), ExtensionError> {
            let z = inside(&DVector::from_vec(vec![th.cos(), th.sin()]));
            let w = path.phi_t(t, &z)?;
            Ok((z, w))
        };
        let n0 = 256;
        let mut pts: Vec<(f64, Point, Point)> = Vec::new();
        for k in 0..n0 {
            let th = 2.0 * std::f64::consts::PI * k as f64 / n0 as f64;
            let (z, w) = at(th)?;
            pts.push((th, z, w));
        }
        // Bisect until neighbouring images are within the spacing.
        let h = self.config.chain_spacing;
        let max = self.config.chain_max_vertices;
        let mut k = 0;
        while k < pts.len() && pts.len() < max {
            let next = if k + 1 == pts.len() { 0 } else { k + 1 };
            let th_b = if next == 0 { 2.0 * std::f64::consts::PI } else { pts[next].0 };
            if (&pts[k].2 - &pts[next].2).norm() > h && th_b - pts[k].0 > 1e-12 {
                let th = 0.5 * (pts[k].0 + th_b);
                let (z, w) = at(th)?;
                pts.insert(k + 1, (th, z, w));
            } else {
                k += 1;
            }
        }
        let (zs, ws) = pts.into_iter().map(|(_, z, w)| (z, w)).unzip();
        Ok((zs, ws, true))
    }

    fn build_stages(&self, t: f64) -> Result<Stages, ExtensionError> {
        let path = self.field.path();
        let domain = path.domain();
        let r_t = self.r_t(t);
        let (lambda1, lambda2) = self.stage_constants(t);
        let l = self.ledger.l;
        let window = self.config.sample_window;
        let n = self.config.stage_samples;
        let values = |zs: &[Point], ws: &[Point]| -> Result<Vec<f64>, ExtensionError> {
            use rayon::prelude::*;
            zs.par_iter().zip(ws.par_iter()).map(|(z, w)| self.g_at_preimage(t, z, w)).collect()
        };
        let image_of = |zs: Vec<Point>| -> Result<(Vec<Point>, Vec<Point>), ExtensionError> {
            let ws = zs.iter().map(|z| path.phi_t(t, z)).collect::<Result<Vec<_>, _>>()?;
            Ok((zs, ws))
        };

        // Stage 1: φ_t(U) ∩ B(2R_t), preimages in U ∩ B(2R_t / L).
        let reach1 = (2.0 * r_t / l).min(window);
        let (z1, w1) = image_of(domain.sample_points(n, reach1, self.config.seed))?;
        let (bz, bw, chained) = self.boundary_preimages(t, window)?;
        let bvals = values(&bz, &bw)?;
        let mut p1 = vec![DVector::zeros(self.dim())];
        let mut v1 = vec![0.0];
        let keep: Vec<usize> = (0..w1.len()).filter(|&i| w1[i].norm() < 2.0 * r_t).collect();
        let kz: Vec<Point> = keep.iter().map(|&i| z1[i].clone()).collect();
        let kw: Vec<Point> = keep.iter().map(|&i| w1[i].clone()).collect();
        v1.extend(values(&kz, &kw)?);
        p1.extend(kw);
        let mut chain_index = vec![usize::MAX; bw.len()];
        for (i, w) in bw.iter().enumerate() {
            if w.norm() < 2.0 * r_t {
                chain_index[i] = p1.len();
                p1.push(w.clone());
                v1.push(bvals[i]);
            }
        }
        let mut segs1 = Vec::new();
        if chained {
            for i in 0..bw.len() {
                let j = (i + 1) % bw.len();
                if chain_index[i] != usize::MAX && chain_index[j] != usize::MAX {
                    segs1.push((chain_index[i], chain_index[j]));
                }
            }
        }
        let stage1 = Envelope::build(lambda1, &p1, &v1, &segs1)?;

        // Stage 2: φ_t(U) ∪ B(R_t) with G on the image and the stage-1
        // envelope on the rest of the ball.
        let (z2, w2) = image_of(domain.sample_points(n, window, self.config.seed + 1))?;
        let mut p2 = w2.clone();
        let mut v2 = values(&z2, &w2)?;
        let chain0 = p2.len();
        p2.extend(bw.iter().cloned());
        v2.extend(bvals.iter().cloned());
        let mut segs2: Vec<(usize, usize)> = Vec::new();
        if chained {
            segs2.extend((0..bw.len()).map(|i| (chain0 + i, chain0 + (i + 1) % bw.len())));
        }
        // Every image point has |w| ≤ |z| / L.
        let image_reach = domain.extent(window) / l;
        // |φ_t(z)| ≥ L|z| puts B(Lε) inside every image.
        let image_core = 0.99 * l * self.ledger.epsilon;
        let outside = |x: &Point| -> bool {
            let r = x.norm();
            r > image_reach || (r >= image_core && path.invert_phi_t(t, x, None).is_err())
        };
        let ring_n = if self.dim() == 2 {
            ((2.0 * std::f64::consts::PI * r_t / self.config.chain_spacing) as usize).clamp(64, 2048)
        } else {
            n / 4
        };
        let ring: Vec<Point> = if self.dim() == 2 {
            (0..ring_n)
                .map(|k| {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / ring_n as f64;
                    DVector::from_vec(vec![r_t * th.cos(), r_t * th.sin()])
                })
                .collect()
        } else {
            sampling::sphere_directions(self.dim(), ring_n, self.config.seed).into_iter().map(|u| u * r_t).collect()
        };
        let ring_out: Vec<bool> = ring.iter().map(|x| outside(x)).collect();
        let mut ring_index = vec![usize::MAX; ring.len()];
        for (i, x) in ring.iter().enumerate() {
            if ring_out[i] {
                ring_index[i] = p2.len();
                v2.push(stage1.eval(x));
                p2.push(x.clone());
            }
        }
        if self.dim() == 2 {
            for i in 0..ring.len() {
                let j = (i + 1) % ring.len();
                if ring_index[i] != usize::MAX && ring_index[j] != usize::MAX {
                    segs2.push((ring_index[i], ring_index[j]));
                }
            }
        }
        let mut idx = self.config.seed * 131 + 17;
        // n/4 quasi-uniform candidates in B(R_t); those off the image are kept.
        let mut tried = 0;
        while tried < n / 4 {
            let hpt = sampling::halton(idx, self.dim());
            idx += 1;
            let x = (hpt * 2.0 - DVector::from_element(self.dim(), 1.0)) * r_t;
            if x.norm() < r_t {
                tried += 1;
                if outside(&x) {
                    v2.push(stage1.eval(&x));
                    p2.push(x);
                }
            }
        }
        let stage2 = Envelope::build(lambda2, &p2, &v2, &segs2)?;
        Ok(Stages { t, r_t, lambda1, lambda2, stage1, stage2 })
    }

    /// `(Ĝ_t * K_r)(w)` and its gradient.
    pub fn mollify(&self, t: f64, w: &Point, radius: f64, hint: &mut Option<Point>) -> Result<(f64, Point), ExtensionError> {
        let vals = match self.ray_values(t, w, radius, hint)? {
            Some(v) => v,
            None => self
                .rule
                .offsets
                .iter()
                .map(|o| self.g_hat(t, &(w - o * radius)))
                .collect::<Result<Vec<_>, _>>()?,
        };
        Ok(self.rule.combine(radius, &vals))
    }

    /// Node values by integrating `∇H` along the rays of the polar rule;
    /// `None` when a ray leaves the image.
    fn ray_values(&self, t: f64, w: &Point, radius: f64, hint: &mut Option<Point>) -> Result<Option<Vec<f64>>, ExtensionError> {
        let Some(layout) = self.rule.polar.as_ref() else { return Ok(None) };
        let Some(z0) = self.invert(t, w, hint) else { return Ok(None) };
        let h0 = self.field.ham_value_at_preimage(t, &z0)?;
        let walker = RayWalker::new(&self.field, t)?;
        let gl = GaussLegendre::cached(3);
        let nr = layout.radii.len();
        let mut out = vec![0.0; nr * layout.directions.len()];
        let start = walker.state(&z0)?;
        for (m, e) in layout.directions.iter().enumerate() {
            let mut state = start.clone();
            let mut h = h0;
            let mut s_prev = 0.0;
            for (j, rho) in layout.radii.iter().enumerate() {
                let s_next = rho * radius;
                let len = s_next - s_prev;
                for (x, wt) in gl.nodes.iter().zip(&gl.weights) {
                    let p = [w[0] - e[0] * (s_prev + len * x), w[1] - e[1] * (s_prev + len * x)];
                    let Some(next) = walker.step(&state, p)? else { return Ok(None) };
                    state = next;
                    h -= len * wt * (state.grad[0] * e[0] + state.grad[1] * e[1]);
                }
                let node = w - e * s_next;
                out[m * nr + j] = h / taper(node.norm()).0;
                s_prev = s_next;
            }
        }
        Ok(Some(out))
    }

    /// `G*_t(w)` and its gradient.
    pub fn g_star(&self, t: f64, w: &Point, hint: &mut Option<Point>) -> Result<(f64, Point), ExtensionError> {
        if t <= T_CUTOFF {
            return Ok((0.0, DVector::zeros(w.len())));
        }
        let weights = self.shells.weights(w);
        let mut done: Vec<(f64, (f64, Point))> = Vec::new();
        let mut value = 0.0;
        let mut grad = DVector::zeros(w.len());
        for (i, theta, dtheta) in weights {
            let r = self.shells.radius(i);
            let (v, g) = match done.iter().find(|(rr, _)| *rr == r) {
                Some((_, vg)) => vg.clone(),
                None => {
                    let vg = self.mollify(t, w, r, hint)?;
                    done.push((r, vg.clone()));
                    vg
                }
            };
            value += theta * v;
            grad += g * theta + dtheta * v;
        }
        Ok((value, grad))
    }

    /// `(f, ∇f)` at `w`; zero where `w` is not in the image.
    pub fn cutoff_f(&self, t: f64, w: &Point) -> (f64, Point) {
        let mut hint = None;
        match self.invert(t, w, &mut hint) {
            Some(z) => match self.field.path().phi_t_jac(t, &z) {
                Ok((_, dphi)) => self.cutoff.at_preimage(&z, &dphi),
                Err(_) => (0.0, DVector::zeros(w.len())),
            },
            None => (0.0, DVector::zeros(w.len())),
        }
    }

    /// `G̃ = f Ĝ + (1 − f) G*` and its gradient.
    pub fn g_tilde(&self, t: f64, w: &Point, hint: &mut Option<Point>) -> Result<(f64, Point), ExtensionError> {
        if t <= T_CUTOFF {
            return Ok((0.0, DVector::zeros(w.len())));
        }
        match self.invert(t, w, hint) {
            Some(z) => {
                let loc = self.field.local_at_preimage(t, &z)?;
                let (g, dg) = normalize_h(w, loc.h, &loc.grad);
                let (f, df) = self.cutoff.at_preimage(&z, &loc.dphi);
                if f == 1.0 && df.iter().all(|v| *v == 0.0) {
                    return Ok((g, dg));
                }
                let (gs, dgs) = self.g_star(t, w, hint)?;
                Ok((f * g + (1.0 - f) * gs, &df * (g - gs) + dg * f + dgs * (1.0 - f)))
            }
            None => self.g_star(t, w, hint),
        }
    }

    /// `H̃ = g(|w|) G̃` and its gradient.
    pub fn h_tilde(&self, t: f64, w: &Point, hint: &mut Option<Point>) -> Result<(f64, Point), ExtensionError> {
        let (gt, dgt) = self.g_tilde(t, w, hint)?;
        Ok(retaper(w, gt, &dgt))
    }

    /// `∇H̃` only; skips the value of `H` where `f ≡ 1`.
    pub fn h_tilde_gradient(&self, t: f64, w: &Point, hint: &mut Option<Point>) -> Result<Point, ExtensionError> {
        if t <= T_CUTOFF {
            return Ok(DVector::zeros(w.len()));
        }
        if let Some(z) = self.invert(t, w, hint) {
            if self.cutoff.is_flat_one(&z) {
                return Ok(j_inv_apply(&self.field.path().dphi_dt(t, &z)?));
            }
        }
        Ok(self.h_tilde(t, w, hint)?.1)
    }

    /// `∇(f H)`, the compactly supported field: zero off `φ_t(V)`.
    pub fn bounded_gradient(&self, t: f64, w: &Point, hint: &mut Option<Point>) -> Result<Point, ExtensionError> {
        let zero = DVector::zeros(w.len());
        if t <= T_CUTOFF {
            return Ok(zero);
        }
        let Some(z) = self.invert(t, w, hint) else { return Ok(zero) };
        if self.cutoff.is_flat_one(&z) {
            return Ok(j_inv_apply(&self.field.path().dphi_dt(t, &z)?));
        }
        let (_, dphi) = self.field.path().phi_t_jac(t, &z)?;
        let (f, df) = self.cutoff.at_preimage(&z, &dphi);
        if f == 0.0 && df.iter().all(|v| *v == 0.0) {
            return Ok(zero);
        }
        let loc = self.field.local_at_preimage(t, &z)?;
        Ok(loc.grad * f + df * loc.h)
    }
}

/// Planar continuation of `φ_t^{-1}` along a ray: tangent predictor from
/// the last Jacobian, Newton corrector, and `∇H` from the final evaluation.
struct RayWalker<'a> {
    field: &'a HamiltonianField,
    eta: f64,
    scale: f64,
}

#[derive(Clone)]
struct RayState {
    z: [f64; 2],
    image: [f64; 2],
    jac: [[f64; 2]; 2],
    grad: [f64; 2],
}

impl<'a> RayWalker<'a> {
    fn new(field: &'a HamiltonianField, t: f64) -> Result<Self, ExtensionError> {
        Ok(RayWalker { field, eta: crate::homotopy::eta(t)?, scale: 2.0 / (t * t) })
    }

    fn state(&self, z: &Point) -> Result<RayState, ExtensionError> {
        let zz = [z[0], z[1]];
        self.eval(zz).ok_or_else(|| HomotopyError::OutsideDomain(z.iter().cloned().collect()).into())
    }

    fn eval(&self, z: [f64; 2]) -> Option<RayState> {
        let zp = DVector::from_vec(vec![z[0], z[1]]);
        if !self.field.path().domain().contains(&zp) {
            return None;
        }
        let (v, jac) = self.field.path().psi().eval_jac(&(zp * self.eta)).ok()?;
        let image = [v[0] / self.eta, v[1] / self.eta];
        let jac = [[jac[(0, 0)], jac[(0, 1)]], [jac[(1, 0)], jac[(1, 1)]]];
        // ∂_t φ_t = (2/t²)(dψ z − φ_t), ∇H = −J ∂_t φ_t with J(a, b) = (−b, a).
        let d0 = self.scale * (jac[0][0] * z[0] + jac[0][1] * z[1] - image[0]);
        let d1 = self.scale * (jac[1][0] * z[0] + jac[1][1] * z[1] - image[1]);
        Some(RayState { z, image, jac, grad: [d1, -d0] })
    }

    fn solve(jac: &[[f64; 2]; 2], r: [f64; 2]) -> Option<[f64; 2]> {
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some([(jac[1][1] * r[0] - jac[0][1] * r[1]) / det, (jac[0][0] * r[1] - jac[1][0] * r[0]) / det])
    }

    fn step(&self, from: &RayState, target: [f64; 2]) -> Result<Option<RayState>, ExtensionError> {
        let tol = 1e-12 * (1.0 + target[0].hypot(target[1]));
        let mut state = from.clone();
        for _ in 0..12 {
            let r = [target[0] - state.image[0], target[1] - state.image[1]];
            if r[0].hypot(r[1]) <= tol {
                return Ok(Some(state));
            }
            let Some(dz) = Self::solve(&state.jac, r) else { return Ok(None) };
            let Some(next) = self.eval([state.z[0] + dz[0], state.z[1] + dz[1]]) else { return Ok(None) };
            let rn = [target[0] - next.image[0], target[1] - next.image[1]];
            let done = rn[0].hypot(rn[1]) <= tol;
            state = next;
            if done {
                return Ok(Some(state));
            }
        }
        Ok(None)
    }
}

/// `(g G̃, g'(w/|w|) G̃ + g ∇G̃)`.
fn retaper(w: &Point, gt: f64, dgt: &Point) -> (f64, Point) {
    let r = w.norm();
    let (g, gp) = taper(r);
    let mut grad = dgt * g;
    if gp > 0.0 {
        grad += w * (gp * gt / r);
    }
    (g * gt, grad)
}

#[cfg(test)]
mod tests {
    use std::time::Instant;

    use rand::Rng;

    use super::*;
    use crate::embedding::{normalize, SymplecticMap};
    use crate::homotopy::HomotopyPath;
    use crate::mapdsl::parse;
    use crate::verify::build_ledger;

    fn p(x: f64, y: f64) -> Point {
        DVector::from_vec(vec![x, y])
    }

    fn generator(src: &str) -> ExtendedGenerator {
        let map = SymplecticMap::new(Arc::new(parse(src, 1).unwrap()), StarlikeDomain::ball(1, 3.0));
        let norm = normalize(&map).unwrap();
        let path = HomotopyPath::new(Arc::new(norm.embedding.clone()), norm.domain.clone());
        let field = HamiltonianField::new(path, 32);
        let ledger = build_ledger(0.13, 1.0, 2.97, 1.0, 2.0).unwrap();
        let cutoff = Cutoff::new(map.domain.clone(), CoreSpec::new(1.0 / 3.0, f64::INFINITY, 0.8), norm.embedding);
        ExtendedGenerator::new(field, ledger, cutoff, ExtensionConfig::default()).unwrap()
    }

    #[test]
    fn g_hat_branches() {
        let g = generator("x1, y1 + x1^2");
        let w = p(1.0, 1.0);
        let (v, b) = g.g_hat_branch(1.0, &w, &mut None).unwrap();
        assert_eq!(b, Branch::Image);
        assert_eq!(v, g.field().normalized_g(1.0, &w, &mut None).unwrap().0);
        assert_eq!(g.g_hat(0.01, &p(50.0, 3.0)).unwrap(), 0.0);
        // The image of ball(3) at t = 1 does not reach (0, −20).
        let (_, b) = g.g_hat_branch(1.0, &p(0.0, -20.0), &mut None).unwrap();
        assert_eq!(b, Branch::Stage2);
    }

    #[test]
    fn small_time_decay() {
        let g = generator("x1, y1 + x1^2");
        let t: f64 = 0.2;
        let bound = g.ledger().small_c4 * (-1.0 / t).exp() / (t * t);
        let mut r = crate::sampling::rng(2);
        for _ in 0..200 {
            let w = p(r.gen_range(-4.0..4.0), r.gen_range(-4.0..4.0));
            let v = g.g_hat(t, &w).unwrap();
            assert!(v.abs() <= bound * w.norm(), "{w:?}: {v}");
        }
    }

    #[test]
    fn envelope_is_lipschitz_across_pieces() {
        let g = generator("x1, y1 + x1^2");
        let t = 1.0;
        let lam = g.stage_constants(t).1;
        let mut r = crate::sampling::rng(5);
        let mut worst: f64 = 0.0;
        for _ in 0..400 {
            let a = p(r.gen_range(-6.0..6.0), r.gen_range(-6.0..12.0));
            let b = &a + p(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
            let ga = g.g_hat(t, &a).unwrap();
            let gb = g.g_hat(t, &b).unwrap();
            worst = worst.max((ga - gb).abs() / (lam * (&a - &b).norm()));
        }
        assert!(worst <= 1.0, "worst ratio {worst}");
    }

    #[test]
    fn cutoff_values() {
        let g = generator("x1, y1 + x1^2");
        for t in [0.3, 1.0] {
            let path = g.field().path();
            let inside = path.phi_t(t, &p(0.6, -0.7)).unwrap();
            assert_eq!(g.cutoff_f(t, &inside), (1.0, p(0.0, 0.0)));
            let outside = path.phi_t(t, &p(-1.7, 0.5)).unwrap();
            assert_eq!(g.cutoff_f(t, &outside).0, 0.0);
            let mid = path.phi_t(t, &p(0.0, 1.4)).unwrap();
            let (f, df) = g.cutoff_f(t, &mid);
            assert!(f > 0.0 && f < 1.0);
            assert!(df.norm() <= g.cutoff().gradient_bound(g.ledger().l));
            let h = 1e-6;
            for k in 0..2 {
                let mut a = mid.clone();
                let mut b = mid.clone();
                a[k] += h;
                b[k] -= h;
                let fd = (g.cutoff_f(t, &a).0 - g.cutoff_f(t, &b).0) / (2.0 * h);
                assert!((fd - df[k]).abs() < 1e-4, "{fd} vs {}", df[k]);
            }
        }
    }

    #[test]
    fn mollified_generator_is_close() {
        let g = generator("x1, y1 + x1^2");
        let t = 0.8;
        let c5 = g.ledger().big_c5 / (t * t);
        let path = g.field().path();
        let start = Instant::now();
        let mut count = 0;
        for (x, y) in [(0.3, 0.2), (-1.2, 0.9), (1.9, -1.0), (0.0, 2.5)] {
            let w = path.phi_t(t, &p(x, y)).unwrap();
            let (gs, dgs) = g.g_star(t, &w, &mut None).unwrap();
            let (gv, dg) = g.field().normalized_g(t, &w, &mut None).unwrap();
            let r = g.shells().radius_at(w.norm());
            assert!((gs - gv).abs() <= c5 * r);
            // Deep inside the image the mollifier is a small perturbation.
            assert!((gs - gv).abs() <= 1e-2 * (1.0 + gv.abs()), "{gs} vs {gv}");
            assert!((&dgs - &dg).norm() <= 5e-2 * (1.0 + dg.norm()), "{dgs:?} vs {dg:?}");
            count += 1;
        }
        let per = start.elapsed().as_secs_f64() / count as f64;
        assert!(per < 0.05, "{per} s per evaluation");
    }

    #[test]
    fn h_tilde_matches_h_on_core() {
        let g = generator("x1, y1 + x1^2");
        for t in [0.4, 1.0] {
            let w = g.field().path().phi_t(t, &p(0.5, 0.6)).unwrap();
            let (h, dh) = g.h_tilde(t, &w, &mut None).unwrap();
            let hv = g.field().ham_value(t, &w, &mut None).unwrap();
            assert!((h - hv).abs() <= 1e-9 * (1.0 + hv.abs()));
            assert!((g.h_tilde_gradient(t, &w, &mut None).unwrap() - dh).norm() < 1e-12);
        }
        assert_eq!(g.h_tilde(0.0, &p(1.0, 1.0), &mut None).unwrap(), (0.0, p(0.0, 0.0)));
        assert_eq!(g.h_tilde(0.7, &p(0.0, 0.0), &mut None).unwrap().0, 0.0);
    }

    #[test]
    fn h_tilde_gradient_in_transition() {
        let g = generator("x1 + 0.3*sin(y1 + x1^2), y1 + x1^2");
        let t = 0.7;
        let w = g.field().path().phi_t(t, &p(0.2, -1.45)).unwrap();
        let (f, _) = g.cutoff_f(t, &w);
        assert!(f > 0.0 && f < 1.0);
        let grad = g.h_tilde_gradient(t, &w, &mut None).unwrap();
        let h = 1e-5;
        for k in 0..2 {
            let mut a = w.clone();
            let mut b = w.clone();
            a[k] += h;
            b[k] -= h;
            let fd = (g.h_tilde(t, &a, &mut None).unwrap().0 - g.h_tilde(t, &b, &mut None).unwrap().0) / (2.0 * h);
            assert!((fd - grad[k]).abs() <= 1e-5 * (1.0 + grad.norm()), "{fd} vs {}", grad[k]);
        }
    }
}
