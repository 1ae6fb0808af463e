//! Worked examples, each a complete configuration.

use symplext::flow::ExtensionKind;

use crate::config::{ConfigError, DomainSection, RunConfig};

pub const GALLERY: [&str; 5] = ["identity", "shear", "annulus17", "strip-trap", "bounded-shear"];

/// `(r, θ) ↦ (√(r² + 16), θ)` in Cartesian form.
pub const ANNULUS_MAP: &str = "x1 * sqrt(1 + 16/(x1^2 + y1^2)), y1 * sqrt(1 + 16/(x1^2 + y1^2))";

pub fn describe(name: &str) -> &'static str {
    match name {
        "identity" => "identity on ball(3); every field vanishes",
        "shear" => "(x, y) -> (x, y + x^2) on ball(3), A = closed ball(1)",
        "annulus17" => "(r, theta) -> (sqrt(r^2 + 16), theta) on the punctured disc of radius 3",
        "strip-trap" => "piecewise map on the strip R x (-1, 0): identity for x >= 1, rotation by pi for x <= -1",
        "bounded-shear" => "shear with the compactly supported generator f H",
        _ => "",
    }
}

pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    cfg.map.gallery = Some(name.to_string());
    match name {
        "identity" => cfg.map.expression = Some("x1, y1".into()),
        "shear" => {}
        "bounded-shear" => cfg.map.kind = ExtensionKind::Bounded,
        "annulus17" => {
            cfg.map.expression = Some(ANNULUS_MAP.into());
            cfg.domain = DomainSection { shape: "annulus".into(), radius: None, inner: Some(0.0), outer: Some(3.0), ..Default::default() };
        }
        "strip-trap" => {
            cfg.map.expression = None;
            cfg.map.builtin = Some("strip-trap".into());
            cfg.domain = DomainSection {
                shape: "strip".into(),
                radius: None,
                lower: Some(-1.0),
                upper: Some(0.0),
                star: Some(vec![0.0, -0.5]),
                ..Default::default()
            };
        }
        _ => return Err(ConfigError::new("map.gallery", format!("unknown gallery `{name}` (known: {})", GALLERY.join(", ")))),
    }
    Ok(cfg)
}
