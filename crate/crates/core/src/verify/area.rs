//! Area obstruction for planar maps: a symplectic extension would carry the
//! disc bounded by a loop onto the disc bounded by its image, preserving area.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::embedding::SymplecticMap;
use crate::linalg::Point;
use crate::mapdsl::EvalError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AreaError {
    #[error("loop vertex {index} at {point:?} is not in the domain")]
    LoopNotInDomain { index: usize, point: Vec<f64> },
    #[error("area obstruction needs a planar map (n = 1), got n = {0}")]
    NotPlanar(usize),
    #[error("loop needs at least 3 vertices")]
    Degenerate,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AreaVerdict {
    NoObstruction,
    /// Areas differ and the loop encloses a point outside the domain.
    ExtensionImpossible,
    /// Areas differ although the enclosed disc lies in the domain, so the map
    /// is not symplectic there.
    NotAreaPreserving,
}

impl std::fmt::Display for AreaVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AreaVerdict::NoObstruction => "no obstruction",
            AreaVerdict::ExtensionImpossible => "extension impossible",
            AreaVerdict::NotAreaPreserving => "map is not area preserving",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AreaReport {
    pub area_before: f64,
    pub area_after: f64,
    pub relative_difference: f64,
    pub disc_in_domain: bool,
    pub vertices: usize,
    pub verdict: AreaVerdict,
}

/// Signed shoelace area of a closed polyline.
pub fn shoelace(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum();
    0.5 * twice
}

/// Counterclockwise circle with `count` vertices.
pub fn circle_loop(center: [f64; 2], radius: f64, count: usize) -> Vec<Point> {
    (0..count)
        .map(|k| {
            let th = 2.0 * PI * k as f64 / count as f64;
            DVector::from_vec(vec![center[0] + radius * th.cos(), center[1] + radius * th.sin()])
        })
        .collect()
}

fn winding_number(points: &[[f64; 2]], p: &Point) -> i64 {
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        let (ax, ay) = (a[0] - p[0], a[1] - p[1]);
        let (bx, by) = (b[0] - p[0], b[1] - p[1]);
        total += (ax * by - ay * bx).atan2(ax * bx + ay * by);
    }
    (total / (2.0 * PI)).round() as i64
}

/// Compare the areas enclosed by `polyline` and by its image. Areas are
/// reported unsigned.
pub fn area_obstruction(map: &SymplecticMap, polyline: &[Point], rel_tol: f64) -> Result<AreaReport, AreaError> {
    if map.n() != 1 {
        return Err(AreaError::NotPlanar(map.n()));
    }
    if polyline.len() < 3 {
        return Err(AreaError::Degenerate);
    }
    let mut before = Vec::with_capacity(polyline.len());
    let mut after = Vec::with_capacity(polyline.len());
    for (index, z) in polyline.iter().enumerate() {
        if !map.domain.contains(z) {
            return Err(AreaError::LoopNotInDomain { index, point: z.iter().cloned().collect() });
        }
        let w = map.forward.eval(z)?;
        before.push([z[0], z[1]]);
        after.push([w[0], w[1]]);
    }
    let area_before = shoelace(&before).abs();
    let area_after = shoelace(&after).abs();
    let relative_difference = (area_after - area_before).abs() / area_before.max(f64::MIN_POSITIVE);
    let disc_in_domain = map.domain.holes().iter().all(|h| winding_number(&before, h) == 0);
    let verdict = if relative_difference <= rel_tol {
        AreaVerdict::NoObstruction
    } else if disc_in_domain {
        AreaVerdict::NotAreaPreserving
    } else {
        AreaVerdict::ExtensionImpossible
    };
    Ok(AreaReport { area_before, area_after, relative_difference, disc_in_domain, vertices: polyline.len(), verdict })
}
