//! Checks of the extension hypotheses: starlike domain, finite Lipschitz
//! constant of the intrinsic metric, positive expansion bound, symplecticity.

use serde::{Deserialize, Serialize};

use crate::embedding::{estimate_expansion_bound_on, symplectic_residual, ExpansionBound, ExpansionConfig, SymplecticMap};
use crate::geometry::{estimate_lipschitz, GridMetric, LipschitzEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HypothesisClause {
    NotStarlike,
    LipschitzUnbounded,
    ExpansionBoundZero,
    NotSymplectic,
}

impl std::fmt::Display for HypothesisClause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            HypothesisClause::NotStarlike => "NotStarlike",
            HypothesisClause::LipschitzUnbounded => "LipschitzUnbounded",
            HypothesisClause::ExpansionBoundZero => "ExpansionBoundZero",
            HypothesisClause::NotSymplectic => "NotSymplectic",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypothesisConfig {
    /// Domain samples for the expansion and residual estimates.
    pub samples: usize,
    /// Sampling window radius about the star center.
    pub window: f64,
    pub seed: u64,
    pub residual_tol: f64,
    /// `L̂` below this is reported as `ExpansionBoundZero`.
    pub expansion_threshold: f64,
    /// Half-width of the square window used for the intrinsic-metric grid.
    pub lipschitz_window: f64,
    /// Grid spacing as a fraction of the window diameter.
    pub lipschitz_resolution: f64,
    pub lipschitz_pairs: usize,
    /// `λ̂` above this is reported as `LipschitzUnbounded`.
    pub lipschitz_max: f64,
    pub starlike_directions: usize,
}

impl Default for HypothesisConfig {
    fn default() -> Self {
        HypothesisConfig {
            samples: 2000,
            window: 100.0,
            seed: 1,
            residual_tol: 1e-8,
            expansion_threshold: 0.02,
            lipschitz_window: 10.0,
            lipschitz_resolution: 0.01,
            lipschitz_pairs: 512,
            lipschitz_max: 1e3,
            starlike_directions: 720,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub lambda: f64,
    /// `declared`, `grid` or `convex`.
    pub source: String,
    pub estimate: Option<LipschitzEstimate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub starlike: bool,
    pub starlike_detail: Option<String>,
    pub lipschitz: Option<LipschitzReport>,
    pub lipschitz_detail: Option<String>,
    pub expansion: Option<ExpansionBound>,
    pub expansion_detail: Option<String>,
    pub residual: f64,
    pub residual_site: Vec<f64>,
    pub residual_points: usize,
    pub failing: Option<HypothesisClause>,
    pub pass: bool,
    pub config: HypothesisConfig,
}

impl HypothesisReport {
    pub fn lambda_hat(&self) -> Option<f64> {
        self.lipschitz.as_ref().map(|l| l.lambda)
    }

    pub fn l_hat(&self) -> Option<f64> {
        self.expansion.as_ref().map(|e| e.l_hat)
    }
}

fn lipschitz(map: &SymplecticMap, cfg: &HypothesisConfig) -> Result<LipschitzReport, String> {
    let domain = &map.domain;
    if let Some(l) = domain.declared_lipschitz() {
        return Ok(LipschitzReport { lambda: l, source: "declared".into(), estimate: None });
    }
    if domain.dim() != 2 {
        if domain.is_convex() {
            return Ok(LipschitzReport { lambda: 1.0, source: "convex".into(), estimate: None });
        }
        return Err("no grid estimate above dimension 2; declare the Lipschitz constant".into());
    }
    let c = domain.center();
    let half = domain.extent(cfg.lipschitz_window);
    let metric = GridMetric::square([c[0], c[1]], half, cfg.lipschitz_resolution * 2.0 * half);
    let est = estimate_lipschitz(domain, &metric, cfg.lipschitz_pairs, cfg.seed).map_err(|e| e.to_string())?;
    Ok(LipschitzReport { lambda: est.lambda, source: "grid".into(), estimate: Some(est) })
}

/// Evaluate every hypothesis clause. Failures are data; the first failing
/// clause in the order starlike, Lipschitz, expansion, symplectic is named.
pub fn hypothesis_report(map: &SymplecticMap, cfg: &HypothesisConfig) -> HypothesisReport {
    let mut failing = Vec::new();
    let star = map.domain.check_starlike(cfg.starlike_directions);
    let starlike = star.is_ok();
    if !starlike {
        failing.push(HypothesisClause::NotStarlike);
    }

    let (lip, lipschitz_detail) = if starlike {
        match lipschitz(map, cfg) {
            Ok(l) if l.lambda <= cfg.lipschitz_max => (Some(l), None),
            Ok(l) => {
                failing.push(HypothesisClause::LipschitzUnbounded);
                let d = format!("lambda estimate {} exceeds {}", l.lambda, cfg.lipschitz_max);
                (Some(l), Some(d))
            }
            Err(e) => {
                failing.push(HypothesisClause::LipschitzUnbounded);
                (None, Some(e))
            }
        }
    } else {
        (None, Some("skipped: domain is not starlike".into()))
    };

    // Points where the map is not specified are dropped, as for piecewise maps.
    let pts: Vec<_> = map
        .domain
        .sample_points(cfg.samples, cfg.window, cfg.seed)
        .into_iter()
        .filter(|z| map.forward.eval(z).is_ok())
        .collect();
    let exp_cfg = ExpansionConfig { samples: cfg.samples, window: cfg.window, threshold: cfg.expansion_threshold, seed: cfg.seed };
    let (expansion, expansion_detail) = if starlike {
        match estimate_expansion_bound_on(map.forward.as_ref(), &map.domain, &pts, &exp_cfg) {
            Ok(b) => {
                if b.hypothesis_failure || !(b.l_hat > 0.0) {
                    failing.push(HypothesisClause::ExpansionBoundZero);
                }
                (Some(b), None)
            }
            Err(e) => {
                failing.push(HypothesisClause::ExpansionBoundZero);
                (None, Some(e.to_string()))
            }
        }
    } else {
        (None, Some("skipped: domain is not starlike".into()))
    };

    let mut residual = 0.0;
    let mut residual_site = vec![];
    let mut residual_points = 0;
    for z in &pts {
        if let Ok(r) = symplectic_residual(map.forward.as_ref(), z) {
            residual_points += 1;
            if !(r <= residual) {
                residual = r;
                residual_site = z.iter().cloned().collect();
            }
        }
    }
    if !(residual <= cfg.residual_tol) {
        failing.push(HypothesisClause::NotSymplectic);
    }

    let failing = failing.into_iter().next();
    HypothesisReport {
        starlike,
        starlike_detail: star.err().map(|e| e.to_string()),
        lipschitz: lip,
        lipschitz_detail,
        expansion,
        expansion_detail,
        residual,
        residual_site,
        residual_points,
        failing,
        pass: failing.is_none(),
        config: cfg.clone(),
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DVector;

    use super::*;
    use crate::embedding::StripTrap;
    use crate::geometry::{Shape, StarlikeDomain};
    use crate::mapdsl::parse;

    fn quick() -> HypothesisConfig {
        HypothesisConfig { samples: 400, ..Default::default() }
    }

    #[test]
    fn shear_passes() {
        let map = SymplecticMap::new(Arc::new(parse("x1, y1 + x1^2", 1).unwrap()), StarlikeDomain::ball(1, 3.0));
        let r = hypothesis_report(&map, &quick());
        assert!(r.pass, "{r:?}");
        assert!((r.lambda_hat().unwrap() - 1.0).abs() <= 0.02);
        assert!(r.l_hat().unwrap() >= 0.14, "{}", r.l_hat().unwrap());
        assert!(r.residual <= 1e-12);
    }

    #[test]
    fn annulus_is_not_starlike() {
        let dom = StarlikeDomain::new(1, Shape::Annulus { inner: 0.0, outer: 3.0 }, DVector::zeros(2)).unwrap();
        let map = SymplecticMap::new(Arc::new(parse("x1 * sqrt(1 + 16/(x1^2 + y1^2)), y1 * sqrt(1 + 16/(x1^2 + y1^2))", 1).unwrap()), dom);
        let r = hypothesis_report(&map, &quick());
        assert_eq!(r.failing, Some(HypothesisClause::NotStarlike));
        assert!(!r.pass);
    }

    #[test]
    fn strip_trap_has_no_expansion_bound() {
        let dom = StarlikeDomain::new(1, Shape::Strip { lower: -1.0, upper: 0.0 }, DVector::from_vec(vec![0.0, -0.5])).unwrap();
        let map = SymplecticMap::new(Arc::new(StripTrap), dom);
        let r = hypothesis_report(&map, &quick());
        assert_eq!(r.failing, Some(HypothesisClause::ExpansionBoundZero), "{r:?}");
        let e = r.expansion.unwrap();
        assert!(e.l_hat <= 1.0 / 100.0, "{}", e.l_hat);
    }

    #[test]
    fn non_symplectic_map_fails() {
        let map = SymplecticMap::new(Arc::new(parse("2*x1, y1", 1).unwrap()), StarlikeDomain::ball(1, 3.0));
        let r = hypothesis_report(&map, &quick());
        assert_eq!(r.failing, Some(HypothesisClause::NotSymplectic));
    }
}
