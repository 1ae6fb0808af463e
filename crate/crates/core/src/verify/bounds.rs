//! Sampled checks of every derivative and flow bound against the constant ledger.
//!
//! Each record holds the worst `observed / bound` ratio over a fixed time
//! grid. Samples are prefixes of one deterministic sequence, so raising the
//! sample count can only raise a worst ratio.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extension::ExtendedGenerator;
use crate::geometry::StarlikeDomain;
use crate::hamiltonian::{normalize_h, taper};
use crate::linalg::{op_norm, Point};
use crate::sampling::{halton, radical_inverse};

use super::ConstantLedger;

/// Every clause, in report order.
pub const CLAUSES: [&str; 15] = [
    "la:0(i)",
    "la:0(ii)",
    "la:1(i)",
    "la:1(ii)",
    "la:2(i)",
    "la:2(ii)",
    "la:3(i)",
    "la:3(ii)",
    "la:4(i)",
    "la:4(ii)",
    "la:ext(ii)",
    "la:star(i)",
    "la:star(ii)",
    "la:smooth(ii)",
    "la:Hti(ii)",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub t_grid: Vec<f64>,
    /// Samples (points or pairs) per clause and time.
    pub samples: usize,
    /// Sampling window for unbounded domains.
    pub window: f64,
    pub seed: u64,
    /// Ledger constants are scaled by this for the reported verdict.
    pub inflation: f64,
    /// `pass ⇔ worst_ratio ≤ 1 + tolerance`.
    pub tolerance: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            t_grid: (1..=10).map(|k| k as f64 / 10.0).collect(),
            samples: 500,
            window: 100.0,
            seed: 3,
            inflation: 1.05,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Site {
    pub t: f64,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoundRecord {
    pub check: String,
    pub bound: String,
    /// Against the inflated constants; decides `pass`.
    pub worst_ratio: f64,
    pub worst_ratio_raw: f64,
    pub site: Site,
    pub pass: bool,
    pub pass_raw: bool,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoundReport {
    pub records: Vec<BoundRecord>,
    pub inflation: f64,
    pub tolerance: f64,
    pub t_grid: Vec<f64>,
    pub samples_per_time: usize,
}

impl BoundReport {
    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn record(&self, check: &str) -> Option<&BoundRecord> {
        self.records.iter().find(|r| r.check == check)
    }
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("{check} at t = {t}: {message}")]
    Evaluation { check: String, t: f64, message: String },
    #[error("invalid suite configuration: {0}")]
    Config(String),
}

/// Deterministic point sequence in a starlike domain: Halton points by
/// rejection, every fourth candidate replaced by a point hugging the
/// boundary (or the window) along a quasi-random ray.
fn domain_sequence(domain: &StarlikeDomain, window: f64, count: usize, seed: u64) -> Vec<Point> {
    let dim = domain.dim();
    let c = domain.center();
    let reach = domain.extent(window);
    let mut out = Vec::with_capacity(count);
    let mut k = seed * 1009 + 1;
    let limit = k + 400 * count as u64 + 1000;
    while out.len() < count && k < limit {
        let h = halton(k, dim) * 2.0 - DVector::from_element(dim, 1.0);
        let z = if k % 4 == 3 {
            let n = h.norm();
            if n < 1e-3 {
                k += 1;
                continue;
            }
            let u = h / n;
            let frac = 1.0 - 10f64.powf(-1.0 - 5.0 * radical_inverse(k, 11));
            &c + &u * (domain.radial_support(&u).min(window) * frac)
        } else {
            &c + h * reach
        };
        k += 1;
        if domain.contains(&z) && (&z - &c).norm() < window {
            out.push(z);
        }
    }
    out
}

/// Partner index for pair `k`: an earlier index, or `None` for a local pair.
fn partner(k: usize) -> Option<usize> {
    if k % 2 == 1 || k == 0 {
        None
    } else {
        Some(((k as u64).wrapping_mul(2_654_435_761) % k as u64) as usize)
    }
}

fn local_offset(k: usize, dim: usize, scale: f64) -> Point {
    let h = halton(k as u64 + 7, dim) * 2.0 - DVector::from_element(dim, 1.0);
    let n = h.norm().max(1e-12);
    h / n * (scale * 1e-3 * 10f64.powf(-2.0 * radical_inverse(k as u64, 13)))
}

struct Probe {
    ratio: f64,
    site: Vec<f64>,
}

struct Acc {
    worst: f64,
    site: Site,
    samples: usize,
}

impl Acc {
    fn new() -> Self {
        Acc { worst: 0.0, site: Site { t: 0.0, w: vec![] }, samples: 0 }
    }

    fn absorb(&mut self, t: f64, probes: Vec<Probe>) {
        self.samples += probes.len();
        for p in probes {
            if p.ratio > self.worst || (p.ratio.is_nan() && !self.worst.is_nan()) {
                self.worst = p.ratio;
                self.site = Site { t, w: p.site };
            }
        }
    }
}

fn vec_of(p: &Point) -> Vec<f64> {
    p.iter().cloned().collect()
}

/// Run all 15 clauses. `ledger` supplies the constants under test; the
/// generator's own copy only shapes `Ĝ`.
pub fn run_bound_suite(generator: &ExtendedGenerator, ledger: &ConstantLedger, cfg: &SuiteConfig) -> Result<BoundReport, SuiteError> {
    if cfg.t_grid.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(SuiteError::Config("t_grid must lie in (0, 1]".into()));
    }
    if cfg.samples == 0 || !(cfg.inflation >= 1.0) {
        return Err(SuiteError::Config("need samples > 0 and inflation >= 1".into()));
    }
    let field = generator.field();
    let path = field.path();
    let domain = path.domain();
    let dim = domain.dim();
    let l = ledger.l;
    let n = cfg.samples;
    let base = domain_sequence(domain, cfg.window, n, cfg.seed);
    if base.len() < 2 {
        return Err(SuiteError::Config("domain sampling produced fewer than two points".into()));
    }
    let image_reach = domain.extent(cfg.window) / l;

    let bounds: [String; 15] = [
        "|phi_t(z) - phi_t(z')| >= L |z - z'|".into(),
        "||d phi_t(z)|| <= 1/L".into(),
        "|grad H_t(w)| <= C1/t^2 |w|".into(),
        "|grad H_t(w)| <= c1/t^2 e^(-1/t) |w| on phi_t(U_t)".into(),
        "|H_t(w)| <= C2/t^2 |w|^2".into(),
        "|H_t(w)| <= c2/t^2 e^(-1/t) |w|^2 on phi_t(U_t)".into(),
        "|grad G_t(w)| <= C3/t^2".into(),
        "|grad G_t(w)| <= c3/t^2 e^(-1/t) on phi_t(U_t)".into(),
        "|G_t(w) - G_t(w')| <= C4/t^2 |w - w'|".into(),
        "|G_t(w) - G_t(w')| <= c4/t^2 e^(-1/t) |w - w'| on phi_t(U_t)".into(),
        "|Ghat_t(w) - Ghat_t(w')| <= C5/t^2 |w - w'|".into(),
        "|grad f_t(w)| |G*_t(w) - Ghat_t(w)| <= C5/t^2".into(),
        "|grad G*_t(w)| <= 2 C5/t^2".into(),
        "|grad Gtilde_t(w)| <= C6/t^2".into(),
        "|grad Htilde_t(w)| <= C/t^2 (|w| + 1)".into(),
    ];
    let mut accs: Vec<Acc> = (0..15).map(|_| Acc::new()).collect();

    for &t in &cfg.t_grid {
        let err = |check: usize, e: String| SuiteError::Evaluation { check: CLAUSES[check].into(), t, message: e };
        let decay = (-1.0 / t).exp();
        let t2 = t * t;
        let truncated = domain.truncated(ledger.epsilon, t).map_err(|e| err(1, e.to_string()))?;
        let small = domain_sequence(&truncated, cfg.window, n, cfg.seed + 1);

        // Local data at preimages: (z, w, H, ∇H, dφ_t).
        let local = |zs: &[Point], check: usize| -> Result<Vec<(Point, Point, f64, Point, f64)>, SuiteError> {
            zs.par_iter()
                .map(|z| {
                    let loc = field.local_at_preimage(t, z).map_err(|e| err(check, e.to_string()))?;
                    let w = path.phi_t(t, z).map_err(|e| err(check, e.to_string()))?;
                    Ok((z.clone(), w, loc.h, loc.grad, op_norm(&loc.dphi)))
                })
                .collect()
        };
        let big = local(&base, 2)?;
        let little = local(&small, 3)?;

        // la:0.
        let probes: Vec<Probe> = (0..n)
            .into_par_iter()
            .filter_map(|k| {
                let a = &base[k % base.len()];
                let b = match partner(k) {
                    Some(j) => base[j % base.len()].clone(),
                    None => a + local_offset(k, dim, 1.0 + a.norm()),
                };
                if !domain.contains(&b) || a == &b {
                    return None;
                }
                let (pa, pb) = (path.phi_t(t, a).ok()?, path.phi_t(t, &b).ok()?);
                Some(Probe { ratio: l * (a - &b).norm() / (pa - pb).norm(), site: vec_of(a) })
            })
            .collect();
        accs[0].absorb(t, probes);
        accs[1].absorb(t, big.iter().map(|(z, _, _, _, dn)| Probe { ratio: l * dn, site: vec_of(z) }).collect());

        // la:1–la:3 pointwise.
        let pointwise = |set: &[(Point, Point, f64, Point, f64)], f: &dyn Fn(&Point, f64, &Point) -> f64| -> Vec<Probe> {
            set.iter().filter(|(_, w, ..)| w.norm() > 0.0).map(|(_, w, h, g, _)| Probe { ratio: f(w, *h, g), site: vec_of(w) }).collect()
        };
        accs[2].absorb(t, pointwise(&big, &|w, _, g| t2 * g.norm() / (ledger.big_c1 * w.norm())));
        accs[3].absorb(t, pointwise(&little, &|w, _, g| t2 * g.norm() / (ledger.small_c1 * decay * w.norm())));
        accs[4].absorb(t, pointwise(&big, &|w, h, _| t2 * h.abs() / (ledger.big_c2 * w.norm_squared())));
        accs[5].absorb(t, pointwise(&little, &|w, h, _| t2 * h.abs() / (ledger.small_c2 * decay * w.norm_squared())));
        accs[6].absorb(t, pointwise(&big, &|w, h, g| t2 * normalize_h(w, h, g).1.norm() / ledger.big_c3));
        accs[7].absorb(t, pointwise(&little, &|w, h, g| t2 * normalize_h(w, h, g).1.norm() / (ledger.small_c3 * decay)));

        // la:4 pairs on the image.
        let pairs = |set: &[(Point, Point, f64, Point, f64)], zs: &[Point], within: &StarlikeDomain, check: usize| -> Result<Vec<(Point, f64, Point, f64)>, SuiteError> {
            (0..n)
                .into_par_iter()
                .filter_map(|k| {
                    let (za, wa, ha, ..) = &set[k % set.len()];
                    let ga = ha / taper(wa.norm()).0;
                    let zb = match partner(k) {
                        Some(j) => zs[j % zs.len()].clone(),
                        None => za + local_offset(k, dim, 1.0 + za.norm()),
                    };
                    if zb == *za || !within.contains(&zb) {
                        return None;
                    }
                    Some((|| {
                        let wb = path.phi_t(t, &zb).map_err(|e| err(check, e.to_string()))?;
                        let hb = field.ham_value_at_preimage(t, &zb).map_err(|e| err(check, e.to_string()))?;
                        Ok((wa.clone(), ga, wb.clone(), hb / taper(wb.norm()).0))
                    })())
                })
                .collect()
        };
        let lip = |ps: &[(Point, f64, Point, f64)], c: f64| -> Vec<Probe> {
            ps.iter().filter(|(a, _, b, _)| a != b).map(|(a, ga, b, gb)| Probe { ratio: t2 * (ga - gb).abs() / (c * (a - b).norm()), site: vec_of(a) }).collect()
        };
        accs[8].absorb(t, lip(&pairs(&big, &base, domain, 8)?, ledger.big_c4));
        accs[9].absorb(t, lip(&pairs(&little, &small, &truncated, 9)?, ledger.small_c4 * decay));

        // Global clauses over R^{2n}: image points, points just outside the
        // image, a ball around it, and far points on a log scale.
        let r_t = generator.r_t(t);
        let far = (10.0 * r_t).clamp(10.0, 1e4);
        let anywhere: Vec<Point> = (0..n)
            .map(|k| {
                let h = halton(k as u64 + 1, dim) * 2.0 - DVector::from_element(dim, 1.0);
                let u = &h / h.norm().max(1e-12);
                match k % 4 {
                    0 => big[k % big.len()].1.clone(),
                    1 => {
                        let (_, w, ..) = &big[(7 * k + 3) % (k + 1)];
                        w + &u * 10f64.powf(-3.0 + 3.0 * radical_inverse(k as u64, 7))
                    }
                    2 => h * (1.5 * image_reach),
                    _ => u * far.powf(radical_inverse(k as u64, 5)),
                }
            })
            .collect();

        let ghat = |w: &Point, check: usize| generator.g_hat(t, w).map_err(|e| err(check, e.to_string()));
        let probes: Result<Vec<Probe>, SuiteError> = (0..n)
            .into_par_iter()
            .map(|k| {
                let a = &anywhere[k];
                let b = match partner(k) {
                    Some(j) => anywhere[j].clone(),
                    None => a + local_offset(k, dim, 1.0 + a.norm()),
                };
                if &b == a {
                    return Ok(Probe { ratio: 0.0, site: vec_of(a) });
                }
                let (ga, gb) = (ghat(a, 10)?, ghat(&b, 10)?);
                Ok(Probe { ratio: t2 * (ga - gb).abs() / (ledger.big_c5 * (a - &b).norm()), site: vec_of(a) })
            })
            .collect();
        accs[10].absorb(t, probes?);

        let rows: Result<Vec<[Probe; 4]>, SuiteError> = anywhere
            .par_iter()
            .map(|w| {
                let mut hint = None;
                let (_, df) = generator.cutoff_f(t, w);
                let (gs, dgs) = generator.g_star(t, w, &mut hint).map_err(|e| err(12, e.to_string()))?;
                let gh = ghat(w, 11)?;
                let (_, dgt) = generator.g_tilde(t, w, &mut hint).map_err(|e| err(13, e.to_string()))?;
                let (_, dht) = generator.h_tilde(t, w, &mut hint).map_err(|e| err(14, e.to_string()))?;
                let s = vec_of(w);
                Ok([
                    Probe { ratio: t2 * df.norm() * (gs - gh).abs() / ledger.big_c5, site: s.clone() },
                    Probe { ratio: t2 * dgs.norm() / (2.0 * ledger.big_c5), site: s.clone() },
                    Probe { ratio: t2 * dgt.norm() / ledger.big_c6, site: s.clone() },
                    Probe { ratio: t2 * dht.norm() / (ledger.big_c * (w.norm() + 1.0)), site: s },
                ])
            })
            .collect();
        let mut cols: [Vec<Probe>; 4] = Default::default();
        for row in rows? {
            for (i, p) in row.into_iter().enumerate() {
                cols[i].push(p);
            }
        }
        for (i, col) in cols.into_iter().enumerate() {
            accs[11 + i].absorb(t, col);
        }
    }

    let records = accs
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let raw = a.worst;
            let inflated = raw / cfg.inflation;
            BoundRecord {
                check: CLAUSES[i].into(),
                bound: bounds[i].clone(),
                worst_ratio: inflated,
                worst_ratio_raw: raw,
                site: a.site,
                pass: inflated <= 1.0 + cfg.tolerance,
                pass_raw: raw <= 1.0 + cfg.tolerance,
                samples: a.samples,
            }
        })
        .collect();
    Ok(BoundReport { records, inflation: cfg.inflation, tolerance: cfg.tolerance, t_grid: cfg.t_grid.clone(), samples_per_time: n })
}
