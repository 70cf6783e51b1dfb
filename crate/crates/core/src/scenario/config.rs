//! Scenario configuration: file format, validation, and built-in presets.
//!
//! Configs are TOML files with one block per concern (domain, time, body,
//! soil, water, output). Every benchmark scenario ships as a named preset;
//! `load_config` reads the same structure from disk.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::history::KernelParams;
use crate::rigid::FrictionModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Coarsened meshes and faster motions; finishes in minutes.
    Desk,
    /// Reference resolution.
    Full,
}

impl std::str::FromStr for Scale {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(SimError::Config(format!(
                "unknown scale '{other}' (expected desk|full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    PlateDrag,
    PipeDrag,
    PipePenetration,
    PipeLateral,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DomainConfig {
    pub x0: f64,
    pub y0: f64,
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TimeConfig {
    pub dt: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// Both velocity components fixed to zero.
    NoSlip,
    /// Normal velocity fixed to zero, tangential free (symmetry plane).
    FreeSlip,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundaryConfig {
    pub left: BoundaryKind,
    pub right: BoundaryKind,
    pub bottom: BoundaryKind,
    pub top: BoundaryKind,
}

impl BoundaryConfig {
    pub fn all_no_slip() -> Self {
        Self {
            left: BoundaryKind::NoSlip,
            right: BoundaryKind::NoSlip,
            bottom: BoundaryKind::NoSlip,
            top: BoundaryKind::NoSlip,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "shape")]
pub enum BodyShapeConfig {
    /// Segment from (x0,y0) to (x1,y1), e.g. a thin plate.
    Segment { x0: f64, y0: f64, x1: f64, y1: f64 },
    Circle { cx: f64, cy: f64, r: f64 },
}

/// One piece of the prescribed motion; zero-velocity segments are
/// relaxation holds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MotionSegment {
    pub vx: f64,
    pub vy: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BodyConfig {
    #[serde(flatten)]
    pub shape: BodyShapeConfig,
    pub friction: FrictionModel,
    #[serde(default)]
    pub mu_fric: f64,
    pub schedule: Vec<MotionSegment>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SoilConfig {
    pub rho: f64,
    /// Numerical (background) viscosity of the soil phase.
    pub mu: f64,
    /// Reference undrained shear strength (at the mudline when a gradient
    /// is set).
    pub su: f64,
    /// Soil sensitivity S_t; 1.0 disables softening.
    #[serde(default = "default_sensitivity")]
    pub sensitivity: f64,
    #[serde(default = "default_xi95")]
    pub xi95: f64,
    /// Strength increase per decade of strain rate; 0 disables.
    #[serde(default)]
    pub mu_rate: f64,
    #[serde(default = "default_gamma_ref")]
    pub gamma_ref: f64,
    /// Elastic modulus as a multiple of su.
    #[serde(default = "default_young_factor")]
    pub young_factor: f64,
    #[serde(default = "default_poisson")]
    pub poisson: f64,
    /// Submerged unit weight (N/m^3); soil body force is (0, -this).
    #[serde(default)]
    pub submerged_unit_weight: f64,
    /// Strength gradient with depth (Pa/m); needs a soil surface.
    #[serde(default)]
    pub strength_gradient: f64,
}

fn default_sensitivity() -> f64 {
    1.0
}
fn default_xi95() -> f64 {
    10.0
}
fn default_gamma_ref() -> f64 {
    3e-6
}
fn default_young_factor() -> f64 {
    400.0
}
fn default_poisson() -> f64 {
    0.495
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WaterConfig {
    pub rho: f64,
    pub mu: f64,
    /// Initial height of the soil surface (the water sits above).
    pub soil_surface_y: f64,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct OutputConfig {
    /// Write a field snapshot every this many steps (0 disables).
    #[serde(default)]
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub kind: ScenarioKind,
    /// Reference length (plate width B or pipe diameter D).
    pub length_ref: f64,
    /// Strength used in the dimensionless force.
    pub su_ref: f64,
    /// Multiplies recorded forces (2.0 for half-symmetry models).
    #[serde(default = "default_force_factor")]
    pub force_factor: f64,
    pub domain: DomainConfig,
    pub time: TimeConfig,
    pub boundaries: BoundaryConfig,
    pub body: BodyConfig,
    pub soil: SoilConfig,
    #[serde(default)]
    pub water: Option<WaterConfig>,
    /// Velocity interpolation enriched with the element bubble.
    #[serde(default)]
    pub bubble: bool,
    /// Level-set penalty coefficient.
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    /// Non-local kernel; defaults to r0 = h, re = 2.5h.
    #[serde(default)]
    pub kernel: Option<KernelParams>,
    /// Start from the hydrostatic pressure of the soil column.
    #[serde(default)]
    pub geostatic_init: bool,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_force_factor() -> f64 {
    1.0
}
fn default_beta1() -> f64 {
    0.5
}

impl ScenarioConfig {
    pub fn total_time(&self) -> f64 {
        self.time.dt * self.time.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        if !(d.lx > 0.0 && d.ly > 0.0) || d.nx < 1 || d.ny < 1 {
            return Err(SimError::Config(
                "domain must have positive size and counts".into(),
            ));
        }
        if !(self.time.dt > 0.0) {
            return Err(SimError::Config("dt must be positive".into()));
        }
        if self.time.steps == 0 {
            return Err(SimError::Config("steps must be positive".into()));
        }
        if !(self.length_ref > 0.0 && self.su_ref > 0.0) {
            return Err(SimError::Config(
                "length_ref and su_ref must be positive".into(),
            ));
        }
        if self.body.schedule.is_empty() {
            return Err(SimError::Config("body schedule must not be empty".into()));
        }
        let mut t_total = 0.0;
        for (i, seg) in self.body.schedule.iter().enumerate() {
            if !(seg.duration > 0.0) {
                return Err(SimError::Config(format!(
                    "schedule segment {i} must have positive duration"
                )));
            }
            t_total += seg.duration;
        }
        if t_total + 1e-12 < self.total_time() {
            return Err(SimError::Config(format!(
                "schedule covers {t_total}s but the run lasts {}s",
                self.total_time()
            )));
        }
        if self.soil.sensitivity < 1.0 {
            return Err(SimError::Config("sensitivity must be >= 1".into()));
        }
        self.soil_params().validate()?;
        if let Some(k) = &self.kernel {
            k.validate()?;
        }
        if self.soil.strength_gradient != 0.0 && self.water.is_none() {
            return Err(SimError::Config(
                "strength_gradient needs a soil surface (water block)".into(),
            ));
        }
        Ok(())
    }

    pub fn soil_params(&self) -> crate::plasticity::SoilParams {
        crate::plasticity::SoilParams {
            sigma0: self.soil.su,
            delta_rem: 1.0 / self.soil.sensitivity,
            xi95: self.soil.xi95,
            mu_rate: self.soil.mu_rate,
            gamma_ref: self.soil.gamma_ref,
            young: self.soil.young_factor * self.soil.su,
            poisson: self.soil.poisson,
        }
    }
}

/// Parse and validate a TOML scenario file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: ScenarioConfig =
        toml::from_str(&text).map_err(|e| SimError::Config(format!("{e}")))?;
    config.validate()?;
    Ok(config)
}

pub fn preset_names() -> Vec<&'static str> {
    vec!["plate_5x6", "pipe_10x10", "pipe_penetration", "pipe_lateral"]
}

/// Built-in scenario definitions.
pub fn preset(name: &str, scale: Scale) -> Result<ScenarioConfig> {
    match name {
        "plate_5x6" => Ok(plate_5x6(scale)),
        "pipe_10x10" => Ok(pipe_10x10(scale)),
        "pipe_penetration" => Ok(pipe_penetration(scale, FrictionModel::NonSlip)),
        "pipe_lateral" => Ok(pipe_lateral(scale, 0.3, false)),
        other => Err(SimError::Config(format!(
            "unknown preset '{other}'; available: {:?}",
            preset_names()
        ))),
    }
}

/// Buried plate dragged horizontally; half-symmetry model with the plate
/// centered on the top (symmetry) edge.
pub fn plate_5x6(scale: Scale) -> ScenarioConfig {
    let b = 1.0;
    let (nx, ny, steps) = match scale {
        Scale::Desk => (120, 144, 2000),
        Scale::Full => (240, 288, 4000),
    };
    let h = 5.0 * b / nx as f64;
    let su = 1100.0;
    // plate on a cell-center abscissa so it cuts edges cleanly at t = 0
    let xp = 2.5 * b + 0.5 * h;
    ScenarioConfig {
        name: "plate_5x6".into(),
        kind: ScenarioKind::PlateDrag,
        length_ref: b,
        su_ref: su,
        force_factor: 2.0,
        domain: DomainConfig {
            x0: 0.0,
            y0: 0.0,
            lx: 5.0 * b,
            ly: 6.0 * b,
            nx,
            ny,
        },
        time: TimeConfig { dt: 1e-3, steps },
        boundaries: BoundaryConfig {
            left: BoundaryKind::NoSlip,
            right: BoundaryKind::NoSlip,
            bottom: BoundaryKind::NoSlip,
            top: BoundaryKind::FreeSlip,
        },
        body: BodyConfig {
            shape: BodyShapeConfig::Segment {
                x0: xp,
                y0: 6.0 * b - 0.5 * b,
                x1: xp,
                y1: 6.0 * b,
            },
            friction: FrictionModel::NonSlip,
            mu_fric: 0.0,
            schedule: vec![MotionSegment {
                vx: 0.1 * b,
                vy: 0.0,
                duration: 1e9,
            }],
        },
        soil: SoilConfig {
            rho: 1000.0,
            mu: 1.0,
            su,
            sensitivity: 1.0,
            xi95: 10.0,
            mu_rate: 0.0,
            gamma_ref: 3e-6,
            young_factor: 400.0,
            poisson: 0.495,
            submerged_unit_weight: 0.0,
            strength_gradient: 0.0,
        },
        water: None,
        bubble: true,
        beta1: 0.5,
        kernel: None,
        geostatic_init: false,
        output: OutputConfig::default(),
    }
}

/// Fully buried pipe dragged horizontally through uniform soil.
pub fn pipe_10x10(scale: Scale) -> ScenarioConfig {
    let d = 1.0;
    let (nx, ny, steps) = match scale {
        Scale::Desk => (100, 100, 2000),
        Scale::Full => (355, 355, 4000),
    };
    let h = 10.0 * d / nx as f64;
    let su = 1100.0;
    ScenarioConfig {
        name: "pipe_10x10".into(),
        kind: ScenarioKind::PipeDrag,
        length_ref: d,
        su_ref: su,
        force_factor: 1.0,
        domain: DomainConfig {
            x0: 0.0,
            y0: 0.0,
            lx: 10.0 * d,
            ly: 10.0 * d,
            nx,
            ny,
        },
        time: TimeConfig { dt: 1e-3, steps },
        boundaries: BoundaryConfig::all_no_slip(),
        body: BodyConfig {
            shape: BodyShapeConfig::Circle {
                cx: 5.0 * d + 0.5 * h,
                cy: 5.0 * d + 0.5 * h,
                r: 0.5 * d,
            },
            friction: FrictionModel::NonSlip,
            mu_fric: 0.0,
            schedule: vec![MotionSegment {
                vx: 0.01 * d,
                vy: 0.0,
                duration: 1e9,
            }],
        },
        soil: SoilConfig {
            rho: 1000.0,
            mu: 1.0,
            su,
            sensitivity: 1.0,
            xi95: 10.0,
            mu_rate: 0.0,
            gamma_ref: 3e-6,
            young_factor: 400.0,
            poisson: 0.495,
            submerged_unit_weight: 0.0,
            strength_gradient: 0.0,
        },
        water: None,
        bubble: true,
        beta1: 0.5,
        kernel: None,
        geostatic_init: false,
        output: OutputConfig::default(),
    }
}

/// Pipe penetrating vertically through water into uniform ideal soil.
pub fn pipe_penetration(scale: Scale, friction: FrictionModel) -> ScenarioConfig {
    let d = 1.0;
    let (nx, ny, dt, steps) = match scale {
        // penetrate to 0.55 D
        Scale::Desk => (64, 64, 4e-3, 2750),
        Scale::Full => (128, 128, 2e-3, 11000),
    };
    let h = 4.0 * d / nx as f64;
    let su = 1100.0;
    let surface = 2.5 * d;
    let vp = match scale {
        Scale::Desk => 0.05 * d,
        Scale::Full => 0.025 * d,
    };
    ScenarioConfig {
        name: "pipe_penetration".into(),
        kind: ScenarioKind::PipePenetration,
        length_ref: d,
        su_ref: su,
        force_factor: 1.0,
        domain: DomainConfig {
            x0: 0.0,
            y0: 0.0,
            lx: 4.0 * d,
            ly: 4.0 * d,
            nx,
            ny,
        },
        time: TimeConfig { dt, steps },
        boundaries: BoundaryConfig::all_no_slip(),
        body: BodyConfig {
            shape: BodyShapeConfig::Circle {
                cx: 2.0 * d + 0.5 * h,
                cy: surface + 0.5 * d + 0.25 * h,
                r: 0.5 * d,
            },
            friction,
            mu_fric: 0.0,
            schedule: vec![MotionSegment {
                vx: 0.0,
                vy: -vp,
                duration: 1e9,
            }],
        },
        soil: SoilConfig {
            rho: 1000.0,
            mu: 1.0,
            su,
            sensitivity: 1.0,
            xi95: 10.0,
            mu_rate: 0.0,
            gamma_ref: 3e-6,
            young_factor: 400.0,
            poisson: 0.495,
            submerged_unit_weight: 0.0,
            strength_gradient: 0.0,
        },
        water: Some(WaterConfig {
            rho: 1000.0,
            mu: 1e-3,
            soil_surface_y: surface,
        }),
        bubble: true,
        beta1: 0.5,
        kernel: None,
        geostatic_init: false,
        output: OutputConfig::default(),
    }
}

/// Pipe penetration, relaxation hold, then a lateral sweep in gravity-loaded
/// soil with depth-dependent strength.
///
/// `embedment` is the target initial penetration in diameters; `softening`
/// switches the remoulding and rate effects on.
pub fn pipe_lateral(scale: Scale, embedment: f64, softening: bool) -> ScenarioConfig {
    let d = 0.8;
    let (nx, ny, dt) = match scale {
        Scale::Desk => (72, 32, 4e-3),
        Scale::Full => (144, 64, 2e-3),
    };
    let lx = 9.0 * d;
    let ly = 4.0 * d;
    let h = lx / nx as f64;
    let surface = 3.0 * d; // one diameter of water above the soil
    let su = 2300.0;
    let v = match scale {
        Scale::Desk => 0.05 * d,
        Scale::Full => 0.01 * d,
    };
    let relax = match scale {
        Scale::Desk => 1.0,
        Scale::Full => 10.0,
    };
    let sweep = 1.0 * d;
    let t_pen = embedment * d / v;
    let t_sweep = sweep / v;
    let total = t_pen + relax + t_sweep;
    let steps = (total / dt).ceil() as usize;
    ScenarioConfig {
        name: format!(
            "pipe_lateral_w{:02}{}",
            (embedment * 10.0).round() as i32,
            if softening { "_soft" } else { "" }
        ),
        kind: ScenarioKind::PipeLateral,
        length_ref: d,
        su_ref: su,
        force_factor: 1.0,
        domain: DomainConfig {
            x0: 0.0,
            y0: 0.0,
            lx,
            ly,
            nx,
            ny,
        },
        time: TimeConfig { dt, steps },
        boundaries: BoundaryConfig::all_no_slip(),
        body: BodyConfig {
            shape: BodyShapeConfig::Circle {
                cx: 3.0 * d + 0.5 * h,
                cy: surface + 0.5 * d + 0.25 * h,
                r: 0.5 * d,
            },
            friction: FrictionModel::NonSlip,
            mu_fric: 0.0,
            schedule: vec![
                MotionSegment {
                    vx: 0.0,
                    vy: -v,
                    duration: t_pen,
                },
                MotionSegment {
                    vx: 0.0,
                    vy: 0.0,
                    duration: relax,
                },
                MotionSegment {
                    vx: v,
                    vy: 0.0,
                    duration: 1e9,
                },
            ],
        },
        soil: SoilConfig {
            rho: 1700.0,
            mu: 1.0,
            su,
            sensitivity: if softening { 3.2 } else { 1.0 },
            xi95: 10.0,
            mu_rate: if softening { 0.1 } else { 0.0 },
            gamma_ref: 3e-6,
            young_factor: 400.0,
            poisson: 0.495,
            submerged_unit_weight: 6500.0,
            strength_gradient: 3600.0,
        },
        water: Some(WaterConfig {
            rho: 1000.0,
            mu: 1e-3,
            soil_surface_y: surface,
        }),
        bubble: true,
        beta1: 0.5,
        kernel: None,
        geostatic_init: true,
        output: OutputConfig::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in preset_names() {
            for scale in [Scale::Desk, Scale::Full] {
                let c = preset(name, scale).unwrap();
                c.validate().unwrap();
            }
        }
    }

    #[test]
    fn plate_preset_matches_reference_parameters() {
        let c = plate_5x6(Scale::Desk);
        assert_eq!(c.length_ref, 1.0);
        assert!((c.domain.lx - 5.0).abs() < 1e-12);
        assert!((c.domain.ly - 6.0).abs() < 1e-12);
        assert!((c.body.schedule[0].vx - 0.1).abs() < 1e-12);
        assert!((c.time.dt - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn pipe_preset_full_scale_mesh() {
        let c = pipe_10x10(Scale::Full);
        assert_eq!(c.domain.nx, 355);
        assert_eq!(c.domain.ny, 355);
        assert!((c.body.schedule[0].vx - 0.01).abs() < 1e-12);
        assert!((c.domain.lx - 10.0).abs() < 1e-12);
    }

    #[test]
    fn config_roundtrip_and_missing_field_error() {
        let c = plate_5x6(Scale::Desk);
        let text = toml::to_string(&c).unwrap();
        let back: ScenarioConfig = toml::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.name, c.name);

        // drop the dt line: the error must name the missing field
        let broken: String = text
            .lines()
            .filter(|l| !l.trim_start().starts_with("dt"))
            .collect::<Vec<_>>()
            .join("\n");
        let err = toml::from_str::<ScenarioConfig>(&broken).unwrap_err();
        assert!(err.to_string().contains("dt"), "error: {err}");
    }

    #[test]
    fn load_config_reads_files() {
        let c = plate_5x6(Scale::Desk);
        let dir = std::env::temp_dir().join("soilflow_cfg_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("plate.toml");
        std::fs::write(&path, toml::to_string(&c).unwrap()).unwrap();
        let loaded = load_config(&path).unwrap();
        assert_eq!(loaded.domain.nx, c.domain.nx);
        assert!(load_config(&dir.join("missing.toml")).is_err());
    }

    #[test]
    fn schedule_must_cover_run() {
        let mut c = plate_5x6(Scale::Desk);
        c.body.schedule[0].duration = 0.5; // run lasts 2.0 s
        assert!(c.validate().is_err());
    }
}
