//! Run configuration: a sectioned TOML file, optionally layered over a
//! gallery preset, validated field by field.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use symplext::embedding::{PhaseMap, StripTrap, SymplecticMap};
use symplext::extension::ExtensionConfig;
use symplext::flow::{ExtensionKind, PipelineConfig};
use symplext::geometry::{CoreSpec, Shape, StarlikeDomain};
use symplext::mapdsl::{parse, AngleExpression};
use symplext::verify::{HypothesisConfig, SuiteConfig};

use crate::gallery;

pub const CONFIG_VERSION: u32 = 1;

/// A configuration problem, located when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: Option<String>,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: &str, message: impl Into<String>) -> Self {
        ConfigError { field: Some(field.to_string()), line: None, message: message.into() }
    }

    fn located(mut self, text: &str) -> Self {
        if self.line.is_none() {
            if let Some(f) = &self.field {
                self.line = locate(text, f);
            }
        }
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error")?;
        if let Some(l) = self.line {
            write!(f, " at line {l}")?;
        }
        if let Some(k) = &self.field {
            write!(f, " in `{k}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapSection {
    /// Start from this gallery preset; other keys in the file override it.
    pub gallery: Option<String>,
    /// Components `x1, .., xn, y1, .., yn` in the map grammar.
    pub expression: Option<String>,
    /// A map with no closed-form expression: `strip-trap`.
    pub builtin: Option<String>,
    pub n: usize,
    pub kind: ExtensionKind,
}

impl Default for MapSection {
    fn default() -> Self {
        MapSection { gallery: None, expression: Some("x1, y1 + x1^2".into()), builtin: None, n: 1, kind: ExtensionKind::Global }
    }
}

/// Domain `U`. Which keys are required depends on `shape`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainSection {
    /// `ball`, `strip`, `notch`, `annulus`, `radial` or `whole`.
    pub shape: String,
    pub radius: Option<f64>,
    /// Ball or radial center.
    pub center: Option<Vec<f64>>,
    /// Star center; defaults to a natural center of the shape.
    pub star: Option<Vec<f64>>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub half_width: Option<f64>,
    pub apex: Option<f64>,
    pub slope: Option<f64>,
    pub inner: Option<f64>,
    pub outer: Option<f64>,
    /// Radial support `rho(theta)` in the angle grammar.
    pub support: Option<String>,
    /// Declared Lipschitz constant of the intrinsic metric.
    pub lipschitz: Option<f64>,
}

impl Default for DomainSection {
    fn default() -> Self {
        DomainSection {
            shape: "ball".into(),
            radius: Some(3.0),
            center: None,
            star: None,
            lower: None,
            upper: None,
            half_width: None,
            apex: None,
            slope: None,
            inner: None,
            outer: None,
            support: None,
            lipschitz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoreSection {
    pub scale: f64,
    pub radius_cap: f64,
    pub margin: f64,
}

impl Default for CoreSection {
    fn default() -> Self {
        CoreSection { scale: 1.0 / 3.0, radius_cap: f64::INFINITY, margin: 0.8 }
    }
}

/// Post-run checks of `extend` and the gallery scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    /// Points of `A` where `|Φ_A − φ|` is measured.
    pub core_samples: usize,
    pub agreement_tol: f64,
    /// Square grid `grid_points × grid_points` on `[-grid_radius, grid_radius]^2`,
    /// kept inside the closed ball of that radius; first two coordinates only.
    pub grid_points: usize,
    pub grid_radius: f64,
    pub residual_tol: f64,
    pub determinant_tol: f64,
    /// Bounded kind: points beyond the support radius checked against the affine exterior.
    pub outside_samples: usize,
    pub outside_tol: f64,
    /// Area obstruction loop: circle about the origin.
    pub loop_radius: f64,
    pub loop_vertices: usize,
    pub area_tol: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection {
            core_samples: 1000,
            agreement_tol: 1e-4,
            grid_points: 11,
            grid_radius: 2.0,
            residual_tol: 1e-3,
            determinant_tol: 1e-3,
            outside_samples: 100,
            outside_tol: 1e-12,
            loop_radius: 1.0,
            loop_vertices: 8192,
            area_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub map: MapSection,
    pub domain: DomainSection,
    pub core: CoreSection,
    pub pipeline: PipelineConfig,
    pub verify: SuiteConfig,
    pub checks: CheckSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            map: MapSection::default(),
            domain: DomainSection::default(),
            core: CoreSection::default(),
            pipeline: PipelineConfig::default(),
            verify: SuiteConfig::default(),
            checks: CheckSection::default(),
            output: OutputSection::default(),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` within its `[section]` for a dotted field path.
fn locate(text: &str, field: &str) -> Option<usize> {
    let (section, key) = match field.rfind('.') {
        Some(i) => (&field[..i], &field[i + 1..]),
        None => ("", field),
    };
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') && line.ends_with(']') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            let k = k.trim();
            let full = if current.is_empty() { k.to_string() } else { format!("{current}.{k}") };
            if (current == section && k == key) || full == field {
                return Some(i + 1);
            }
        }
    }
    None
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// Parse, layer over the named gallery preset if any, and validate.
    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        Self::from_toml_over(text, None)
    }

    /// As `from_toml`, with `gallery` as the base when the file names none.
    pub fn from_toml_over(text: &str, gallery: Option<&str>) -> Result<RunConfig, ConfigError> {
        let own: RunConfig = toml::from_str(text).map_err(|e| ConfigError {
            field: None,
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        let chosen = own.map.gallery.clone().or(gallery.map(String::from));
        let cfg = match chosen {
            None => own,
            Some(name) => {
                let preset = gallery::preset(&name).map_err(|e| e.located(text))?;
                let mut base = toml::Table::try_from(&preset).map_err(|e| ConfigError { field: None, line: None, message: e.to_string() })?;
                let over: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError { field: None, line: None, message: e.to_string() })?;
                merge(&mut base, over);
                // Absent optional keys deserialize to the section defaults, so the
                // preset's choices are restored unless the file sets them.
                let mut cfg: RunConfig = base.try_into().map_err(|e: toml::de::Error| ConfigError { field: None, line: None, message: e.to_string() })?;
                let file: toml::Table = text.parse().unwrap_or_default();
                let has = |section: &str, key: &str| file.get(section).and_then(|m| m.as_table()).is_some_and(|m| m.contains_key(key));
                match (has("map", "expression"), has("map", "builtin")) {
                    (false, false) => {
                        cfg.map.expression = preset.map.expression.clone();
                        cfg.map.builtin = preset.map.builtin.clone();
                    }
                    (true, false) => cfg.map.builtin = None,
                    (false, true) => cfg.map.expression = None,
                    (true, true) => {}
                }
                if !has("domain", "radius") {
                    cfg.domain.radius = preset.domain.radius;
                }
                cfg
            }
        };
        cfg.validate().map_err(|e| e.located(text))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Command-line overrides; validate afterwards.
    pub fn apply_overrides(&mut self, steps: Option<usize>, samples: Option<usize>, seed: Option<u64>) {
        if let Some(s) = steps {
            self.pipeline.integrator.steps = s;
        }
        if let Some(s) = samples {
            self.verify.samples = s;
        }
        if let Some(s) = seed {
            self.verify.seed = s;
            self.pipeline.hypotheses.seed = s;
            self.pipeline.extension.seed = s;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let need = |ok: bool, field: &str, msg: &str| if ok { Ok(()) } else { Err(ConfigError::new(field, msg)) };
        need(self.version == CONFIG_VERSION, "version", "unsupported version (expected 1)")?;
        need(self.map.n >= 1 && self.map.n <= 8, "map.n", "must be in 1..=8")?;
        need(
            self.map.expression.is_some() != self.map.builtin.is_some(),
            "map.expression",
            "give exactly one of `expression` and `builtin`",
        )?;
        if let Some(b) = &self.map.builtin {
            need(b == "strip-trap", "map.builtin", "unknown builtin (known: strip-trap)")?;
            need(self.map.n == 1, "map.n", "strip-trap is planar (n = 1)")?;
        }
        let c = &self.core;
        need(c.scale > 0.0 && c.scale < 1.0, "core.scale", "must lie in (0, 1)")?;
        need(c.radius_cap > 0.0, "core.radius_cap", "must be positive (inf allowed)")?;
        need(c.margin > 0.0 && c.margin.is_finite(), "core.margin", "must be positive")?;

        let p = &self.pipeline;
        need((2..=1024).contains(&p.quadrature_nodes), "pipeline.quadrature_nodes", "must be in 2..=1024")?;
        need(p.expansion_safety > 0.0 && p.expansion_safety <= 1.0, "pipeline.expansion_safety", "must lie in (0, 1]")?;
        need(p.taylor_samples >= 8, "pipeline.taylor_samples", "must be at least 8")?;
        let i = &p.integrator;
        need(i.steps >= 16 && i.steps <= 1_000_000, "pipeline.integrator.steps", "must be in 16..=1000000")?;
        need(i.geometric_ratio > 1.0 && i.geometric_ratio <= 4.0, "pipeline.integrator.geometric_ratio", "must lie in (1, 4]")?;
        need(i.newton_tol > 0.0, "pipeline.integrator.newton_tol", "must be positive")?;
        need(i.solve_tol > 0.0, "pipeline.integrator.solve_tol", "must be positive")?;
        need(i.max_refinements <= 20, "pipeline.integrator.max_refinements", "must be at most 20")?;
        need(i.max_step_failures <= 30, "pipeline.integrator.max_step_failures", "must be at most 30")?;
        validate_extension(&p.extension)?;
        validate_hypotheses(&p.hypotheses)?;

        let v = &self.verify;
        need(!v.t_grid.is_empty() && v.t_grid.iter().all(|t| *t > 0.0 && *t <= 1.0), "verify.t_grid", "times must lie in (0, 1]")?;
        need(v.samples >= 1, "verify.samples", "must be at least 1")?;
        need(v.window > 0.0, "verify.window", "must be positive")?;
        need(v.inflation >= 1.0, "verify.inflation", "must be at least 1")?;
        need(v.tolerance >= 0.0, "verify.tolerance", "must be non-negative")?;

        let k = &self.checks;
        need(k.grid_points >= 2, "checks.grid_points", "must be at least 2")?;
        need(k.grid_radius > 0.0, "checks.grid_radius", "must be positive")?;
        for (f, x) in [
            ("checks.agreement_tol", k.agreement_tol),
            ("checks.residual_tol", k.residual_tol),
            ("checks.determinant_tol", k.determinant_tol),
            ("checks.outside_tol", k.outside_tol),
            ("checks.loop_radius", k.loop_radius),
            ("checks.area_tol", k.area_tol),
        ] {
            need(x > 0.0, f, "must be positive")?;
        }
        need(k.loop_vertices >= 3, "checks.loop_vertices", "must be at least 3")?;
        need(!self.output.dir.is_empty(), "output.dir", "must not be empty")?;

        self.phase_map()?;
        self.domain()?;
        Ok(())
    }

    pub fn phase_map(&self) -> Result<Arc<dyn PhaseMap>, ConfigError> {
        match (&self.map.expression, &self.map.builtin) {
            (Some(src), _) => {
                let e = parse(src, self.map.n).map_err(|e| ConfigError::new("map.expression", e.to_string()))?;
                Ok(Arc::new(e))
            }
            (None, Some(_)) => Ok(Arc::new(StripTrap)),
            (None, None) => Err(ConfigError::new("map.expression", "missing")),
        }
    }

    pub fn domain(&self) -> Result<StarlikeDomain, ConfigError> {
        let d = &self.domain;
        let dim = 2 * self.map.n;
        let field = |k: &str| format!("domain.{k}");
        let req = |v: Option<f64>, k: &str| v.ok_or_else(|| ConfigError::new(&field(k), format!("required for shape `{}`", d.shape)));
        let point = |v: &Option<Vec<f64>>, k: &str, default: Vec<f64>| -> Result<DVector<f64>, ConfigError> {
            let v = v.clone().unwrap_or(default);
            if v.len() != dim {
                return Err(ConfigError::new(&field(k), format!("needs {dim} coordinates")));
            }
            Ok(DVector::from_vec(v))
        };
        let zeros = vec![0.0; dim];
        let (shape, star) = match d.shape.as_str() {
            "ball" => {
                let center = point(&d.center, "center", zeros.clone())?;
                let shape = Shape::Ball { center: center.clone(), radius: req(d.radius, "radius")? };
                (shape, point(&d.star, "star", center.iter().cloned().collect())?)
            }
            "strip" => {
                let (lo, hi) = (req(d.lower, "lower")?, req(d.upper, "upper")?);
                (Shape::Strip { lower: lo, upper: hi }, point(&d.star, "star", vec![0.0, 0.5 * (lo + hi)])?)
            }
            "notch" => {
                let shape = Shape::Notch { half_width: req(d.half_width, "half_width")?, apex: req(d.apex, "apex")?, slope: req(d.slope, "slope")? };
                (shape, point(&d.star, "star", zeros)?)
            }
            "annulus" => {
                let shape = Shape::Annulus { inner: req(d.inner, "inner")?, outer: req(d.outer, "outer")? };
                (shape, point(&d.star, "star", zeros)?)
            }
            "radial" => {
                let src = d.support.as_ref().ok_or_else(|| ConfigError::new("domain.support", "required for shape `radial`"))?;
                let support = AngleExpression::parse(src).map_err(|e| ConfigError::new("domain.support", e.to_string()))?;
                let center = point(&d.center, "center", zeros)?;
                (Shape::Radial { center: center.clone(), support }, point(&d.star, "star", center.iter().cloned().collect())?)
            }
            "whole" => (Shape::Whole, point(&d.star, "star", zeros)?),
            other => return Err(ConfigError::new("domain.shape", format!("unknown shape `{other}`"))),
        };
        let mut dom = StarlikeDomain::new(self.map.n, shape, star).map_err(|e| ConfigError::new("domain.shape", e.to_string()))?;
        if let Some(l) = d.lipschitz {
            if !(l >= 1.0) {
                return Err(ConfigError::new("domain.lipschitz", "must be at least 1"));
            }
            dom = dom.with_declared_lipschitz(l);
        }
        Ok(dom)
    }

    pub fn symplectic_map(&self) -> Result<SymplecticMap, ConfigError> {
        Ok(SymplecticMap::new(self.phase_map()?, self.domain()?))
    }

    pub fn core_spec(&self) -> CoreSpec {
        CoreSpec::new(self.core.scale, self.core.radius_cap, self.core.margin)
    }
}

fn validate_extension(e: &ExtensionConfig) -> Result<(), ConfigError> {
    let need = |ok: bool, field: &str, msg: &str| if ok { Ok(()) } else { Err(ConfigError::new(field, msg)) };
    need(e.stage_samples >= 16, "pipeline.extension.stage_samples", "must be at least 16")?;
    need(e.chain_spacing > 0.0, "pipeline.extension.chain_spacing", "must be positive")?;
    need(e.chain_max_vertices >= 16, "pipeline.extension.chain_max_vertices", "must be at least 16")?;
    need(e.sample_window > 0.0, "pipeline.extension.sample_window", "must be positive")?;
    need(e.kernel_radial_nodes >= 1, "pipeline.extension.kernel_radial_nodes", "must be at least 1")?;
    need(e.kernel_angular_nodes >= 2, "pipeline.extension.kernel_angular_nodes", "must be at least 2")?;
    need(e.kernel_axis_nodes >= 1, "pipeline.extension.kernel_axis_nodes", "must be at least 1")?;
    need(e.quadrature_budget >= 1, "pipeline.extension.quadrature_budget", "must be at least 1")?;
    need(e.shell_count >= 1, "pipeline.extension.shell_count", "must be at least 1")?;
    need(e.shell_radius_cap > 0.0, "pipeline.extension.shell_radius_cap", "must be positive")?;
    need(e.shell_blend > 0.0 && e.shell_blend < 1.0, "pipeline.extension.shell_blend", "must lie in (0, 1)")?;
    need(e.inflation >= 1.0, "pipeline.extension.inflation", "must be at least 1")?;
    need(e.envelope_cache >= 1, "pipeline.extension.envelope_cache", "must be at least 1")
}

fn validate_hypotheses(h: &HypothesisConfig) -> Result<(), ConfigError> {
    let need = |ok: bool, field: &str, msg: &str| if ok { Ok(()) } else { Err(ConfigError::new(field, msg)) };
    need(h.samples >= 10, "pipeline.hypotheses.samples", "must be at least 10")?;
    need(h.window > 0.0, "pipeline.hypotheses.window", "must be positive")?;
    need(h.residual_tol > 0.0, "pipeline.hypotheses.residual_tol", "must be positive")?;
    need(h.expansion_threshold >= 0.0, "pipeline.hypotheses.expansion_threshold", "must be non-negative")?;
    need(h.lipschitz_window > 0.0, "pipeline.hypotheses.lipschitz_window", "must be positive")?;
    need(
        h.lipschitz_resolution > 0.0 && h.lipschitz_resolution <= 0.5,
        "pipeline.hypotheses.lipschitz_resolution",
        "must lie in (0, 0.5]",
    )?;
    need(h.lipschitz_pairs >= 1, "pipeline.hypotheses.lipschitz_pairs", "must be at least 1")?;
    need(h.lipschitz_max >= 1.0, "pipeline.hypotheses.lipschitz_max", "must be at least 1")?;
    need(h.starlike_directions >= 8, "pipeline.hypotheses.starlike_directions", "must be at least 8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert!(text.contains("radius_cap = inf"), "{text}");
    }

    #[test]
    fn steps_below_minimum_is_located() {
        let text = "[map]\ngallery = \"shear\"\n\n[pipeline.integrator]\nsteps = 1\n";
        let err = RunConfig::from_toml(text).unwrap_err();
        assert_eq!(err.field.as_deref(), Some("pipeline.integrator.steps"));
        assert_eq!(err.line, Some(5));
    }

    #[test]
    fn syntax_and_unknown_keys_report_lines() {
        let err = RunConfig::from_toml("[core]\nscale = 0.5\nbogus = 1\n").unwrap_err();
        assert_eq!(err.line, Some(3), "{err}");
        let err = RunConfig::from_toml("[core]\nscale = \n").unwrap_err();
        assert_eq!(err.line, Some(2), "{err}");
    }

    #[test]
    fn gallery_layering() {
        let cfg = RunConfig::from_toml("[map]\ngallery = \"annulus17\"\n[checks]\nloop_radius = 2.0\n").unwrap();
        assert_eq!(cfg.domain.shape, "annulus");
        assert_eq!(cfg.checks.loop_radius, 2.0);
        let cfg = RunConfig::from_toml("[map]\ngallery = \"strip-trap\"\n").unwrap();
        assert_eq!(cfg.map.builtin.as_deref(), Some("strip-trap"));
        let err = RunConfig::from_toml("[map]\ngallery = \"nope\"\n").unwrap_err();
        assert_eq!(err.field.as_deref(), Some("map.gallery"));
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn shape_fields_are_checked() {
        let err = RunConfig::from_toml("[domain]\nshape = \"strip\"\nlower = -1.0\n").unwrap_err();
        assert_eq!(err.field.as_deref(), Some("domain.upper"));
        let err = RunConfig::from_toml("[map]\nexpression = \"x1 +\"\n").unwrap_err();
        assert_eq!(err.field.as_deref(), Some("map.expression"));
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(Some(128), Some(50), Some(9));
        assert_eq!(cfg.pipeline.integrator.steps, 128);
        assert_eq!(cfg.verify.samples, 50);
        assert_eq!(cfg.pipeline.hypotheses.seed, 9);
        assert!(cfg.validate().is_ok());
    }
}
