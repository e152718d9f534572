//! Run configuration: physical parameters, screen geometry, sampler and
//! integrator settings.
//!
//! Every struct here deserializes from the TOML run-configuration file; any
//! field left out falls back to its default, so a file that only sets
//! `n_trajectories` is valid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Reduced Planck constant, CODATA 2018 (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Mass of a helium-4 atom used as the default for both particles (kg).
pub const HELIUM4_MASS: f64 = 6.646e-27;

/// Detector planes at fixed `x`, infinite in `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Screens {
    pub x_left: f64,
    pub x_right: f64,
}

impl Screens {
    pub fn new(x_left: f64, x_right: f64) -> Result<Self, ConfigError> {
        let screens = Self { x_left, x_right };
        screens.validate()?;
        Ok(screens)
    }

    /// Builds screens from two positive distances from the origin, the
    /// convention used on the command line.
    pub fn from_distances(left: f64, right: f64) -> Result<Self, ConfigError> {
        Self::new(-left, right)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.x_left.is_finite() && self.x_right.is_finite()) {
            return Err(ConfigError::new("screen positions must be finite"));
        }
        if !(self.x_left < 0.0 && self.x_right > 0.0) {
            return Err(ConfigError::new(format!(
                "screens must satisfy x_left < 0 < x_right (got {} and {})",
                self.x_left, self.x_right
            )));
        }
        Ok(())
    }

    /// Screens so far away that nothing is ever detected.
    pub fn unbounded() -> Self {
        Self { x_left: f64::NEG_INFINITY, x_right: f64::INFINITY }
    }
}

impl Default for Screens {
    fn default() -> Self {
        Self { x_left: -0.015, x_right: 0.5 }
    }
}

/// Settings of the embedded Runge–Kutta integrator and of crossing
/// localization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    /// Absolute position tolerance (m).
    pub abs_tol: f64,
    /// First trial step (s).
    pub dt_init: f64,
    /// Smallest admissible step before the integrator gives up (s).
    pub dt_min: f64,
    /// Integration horizon (s); trajectories still undetected are censored.
    pub t_max: f64,
    /// Bisection tolerance of crossing times (s).
    pub crossing_time_tol: f64,
    /// A point counts as a node when `ln|Ψ|` lies this many units below the
    /// largest single term.
    pub node_floor: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            dt_init: 1e-7,
            dt_min: 1e-13,
            t_max: 20.0,
            crossing_time_tol: 1e-9,
            node_floor: 60.0,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("dt_init", self.dt_init),
            ("dt_min", self.dt_min),
            ("t_max", self.t_max),
            ("crossing_time_tol", self.crossing_time_tol),
            ("node_floor", self.node_floor),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::new(format!("integrator.{name} must be positive and finite (got {value})")));
            }
        }
        if self.dt_min >= self.dt_init {
            return Err(ConfigError::new("integrator.dt_min must be smaller than integrator.dt_init"));
        }
        Ok(())
    }
}

/// Which initial-position distribution to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    /// Exact `|Ψ₀|²` (quantum equilibrium).
    Equilibrium,
    /// The diagonal Gaussian mixture with every width multiplied by
    /// `sigma_scale`.
    Narrowed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSpec {
    pub mode: SamplerMode,
    pub sigma_scale: f64,
    pub seed: u64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self::equilibrium(0)
    }
}

impl SamplerSpec {
    pub fn equilibrium(seed: u64) -> Self {
        Self { mode: SamplerMode::Equilibrium, sigma_scale: 1.0, seed }
    }

    /// The σ → σ/2 non-equilibrium distribution.
    pub fn narrowed(seed: u64) -> Self {
        Self { mode: SamplerMode::Narrowed, sigma_scale: 0.5, seed }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.sigma_scale > 0.0 && self.sigma_scale <= 1.0) {
            return Err(ConfigError::new(format!("sampler.sigma_scale must lie in (0, 1] (got {})", self.sigma_scale)));
        }
        if self.mode == SamplerMode::Equilibrium && self.sigma_scale != 1.0 {
            return Err(ConfigError::new("sampler.sigma_scale must be 1 in equilibrium mode"));
        }
        Ok(())
    }
}

/// Whether the first detection collapses the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Collapse,
    Free,
}

/// Run selection: one of the two dynamics or both from identical initial
/// points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Collapse,
    Free,
    Both,
}

impl RunMode {
    pub fn modes(self) -> &'static [Mode] {
        match self {
            RunMode::Collapse => &[Mode::Collapse],
            RunMode::Free => &[Mode::Free],
            RunMode::Both => &[Mode::Collapse, Mode::Free],
        }
    }
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $text),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = ConfigError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    other => Err(ConfigError::new(format!(
                        concat!("unknown ", stringify!($ty), " '{}'"), other
                    ))),
                }
            }
        }
    };
}

text_enum!(Mode { Collapse => "collapse", Free => "free" });
text_enum!(RunMode { Collapse => "collapse", Free => "free", Both => "both" });
text_enum!(SamplerMode { Equilibrium => "equilibrium", Narrowed => "narrowed" });

/// All physical and numerical settings of one reproducible run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentParams {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub u_x: f64,
    pub u_y: f64,
    pub l_x: f64,
    pub l_y: f64,
    pub mass1: f64,
    pub mass2: f64,
    pub hbar: f64,
    pub screens: Screens,
    pub n_trajectories: usize,
    pub mode: RunMode,
    pub sampler: SamplerSpec,
    pub integrator: IntegratorConfig,
    /// Record every n-th accepted step of each path; 0 disables recording.
    pub path_record_stride: usize,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            sigma_x: 1e-6,
            sigma_y: 1e-5,
            u_x: 0.1,
            u_y: 0.0,
            l_x: 5e-3,
            l_y: 5e-5,
            mass1: HELIUM4_MASS,
            mass2: HELIUM4_MASS,
            hbar: HBAR,
            screens: Screens::default(),
            n_trajectories: 1000,
            mode: RunMode::Collapse,
            sampler: SamplerSpec::default(),
            integrator: IntegratorConfig::default(),
            path_record_stride: 0,
        }
    }
}

impl ExperimentParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("sigma_x", self.sigma_x),
            ("sigma_y", self.sigma_y),
            ("l_x", self.l_x),
            ("l_y", self.l_y),
            ("mass1", self.mass1),
            ("mass2", self.mass2),
            ("hbar", self.hbar),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::new(format!("{name} must be positive and finite (got {value})")));
            }
        }
        for (name, value) in [("u_x", self.u_x), ("u_y", self.u_y)] {
            if !value.is_finite() {
                return Err(ConfigError::new(format!("{name} must be finite")));
            }
        }
        if self.n_trajectories == 0 {
            return Err(ConfigError::new("n_trajectories must be at least 1"));
        }
        self.screens.validate()?;
        self.sampler.validate()?;
        self.integrator.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let params: Self = toml::from_str(text).map_err(|e| ConfigError::new(format!("invalid config: {e}")))?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("parameters always serialize")
    }
}
