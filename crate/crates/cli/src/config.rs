//! Versioned JSON scenario configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spinvl::dynamics::{build_engineered, BathSpec, DephasingSpec, QuantumState};
use spinvl::identities::SuiteConfig;
use spinvl::spinops::{Basis, ChainSpec, C64};
use spinvl::vlsolver::{ControlOptions, Gauge, RegularizationSpec, Stepping};

pub const CONFIG_VERSION: u32 = 1;

/// Largest chain simulated on the full `2^s` space.
pub const MAX_FULL_SITES: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
    #[error("unknown preset `{0}` (expected fig2, fig3, fig4 or fig5)")]
    UnknownPreset(String),
}

fn field_err(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field { field, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    InvertClosed,
    MimicDephasing,
    CompensateDephasing,
    CompensateBath,
    Identities,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::InvertClosed => "invert_closed",
            Mode::MimicDephasing => "mimic_dephasing",
            Mode::CompensateDephasing => "compensate_dephasing",
            Mode::CompensateBath => "compensate_bath",
            Mode::Identities => "identities",
        }
    }

    /// Breakdown is a normal outcome for the compensation modes.
    pub fn expects_breakdown(self) -> bool {
        matches!(self, Mode::CompensateDephasing | Mode::CompensateBath)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChainConfig {
    Homogeneous {
        sites: usize,
        hopping: f64,
        #[serde(default)]
        ising: f64,
    },
    Engineered {
        sites: usize,
    },
    Explicit {
        hopping: Vec<f64>,
        #[serde(default)]
        ising: Vec<f64>,
    },
}

impl ChainConfig {
    pub fn sites(&self) -> usize {
        match self {
            ChainConfig::Homogeneous { sites, .. } | ChainConfig::Engineered { sites } => *sites,
            ChainConfig::Explicit { hopping, .. } => hopping.len() + 1,
        }
    }

    fn build(&self, field: &'static str) -> Result<ChainSpec, ConfigError> {
        let chain = match self {
            ChainConfig::Homogeneous { sites, hopping, ising } => ChainSpec::homogeneous(*sites, *hopping, *ising),
            ChainConfig::Engineered { sites } => build_engineered(*sites),
            ChainConfig::Explicit { hopping, ising } => {
                let ising = if ising.is_empty() { vec![0.0; hopping.len()] } else { ising.clone() };
                ChainSpec::new(hopping.len() + 1, hopping.clone(), ising)
            }
        };
        chain.map_err(|e| field_err(field, e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Full,
    /// Single-excitation sector.
    Sector,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DephasingConfig {
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathConfig {
    pub epsilon: f64,
    #[serde(default)]
    pub mu: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    #[default]
    UniformSuperposition,
    SingleSite {
        site: usize,
    },
    /// Single-excitation amplitudes `c_x`, one per site.
    Amplitudes {
        re: Vec<f64>,
        #[serde(default)]
        im: Vec<f64>,
    },
}

/// `h(site, t) += amplitude cos(frequency t + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldTerm {
    pub site: usize,
    pub amplitude: f64,
    #[serde(default)]
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_end: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_floor")]
    pub handle_floor: f64,
    #[serde(default = "default_max_field")]
    pub max_field: f64,
}

fn default_alpha() -> f64 {
    RegularizationSpec::default().alpha
}

fn default_floor() -> f64 {
    RegularizationSpec::default().handle_floor
}

fn default_max_field() -> f64 {
    RegularizationSpec::default().max_field
}

impl Default for RegConfig {
    fn default() -> Self {
        Self { alpha: default_alpha(), handle_floor: default_floor(), max_field: default_max_field() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeConfig {
    #[default]
    FirstSite,
    LastSite,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteppingConfig {
    #[default]
    Embedded,
    PredictorCorrector,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default)]
    pub gauge: GaugeConfig,
    #[serde(default)]
    pub stepping: SteppingConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitiesConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_max_sites")]
    pub max_sites: usize,
}

fn default_trials() -> usize {
    SuiteConfig::default().trials
}

fn default_max_sites() -> usize {
    SuiteConfig::default().max_sites
}

impl Default for IdentitiesConfig {
    fn default() -> Self {
        Self { seed: 0, trials: default_trials(), max_sites: default_max_sites() }
    }
}

/// One scenario. `chain` is the controlled (or simulated) chain;
/// `target_chain` defaults to it. `field` drives the simulated system or the
/// reference dynamics of the inversion modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_chain: Option<ChainConfig>,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub dephasing: DephasingConfig,
    #[serde(default)]
    pub bath: BathConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub field: Vec<FieldTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub reg: RegConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub identities: IdentitiesConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_json(&text)
    }

    /// Checks everything that can be checked without running, and returns
    /// the resolved scenario.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.resolve().map(|_| ())
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(field_err(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            ));
        }
        let mode = self.mode;
        let deph = DephasingSpec::new(self.dephasing.eta).map_err(|e| field_err("dephasing.eta", e.to_string()))?;
        let bath = BathSpec::new(self.bath.epsilon, self.bath.mu).map_err(|e| field_err("bath", e.to_string()))?;
        let reg = RegularizationSpec::new(self.reg.alpha, self.reg.handle_floor, self.reg.max_field)
            .map_err(|e| field_err("reg", e.to_string()))?;
        let suite = SuiteConfig {
            seed: self.identities.seed,
            trials: self.identities.trials,
            max_sites: self.identities.max_sites,
        };
        if mode == Mode::Identities {
            if !(2..=MAX_FULL_SITES).contains(&suite.max_sites) {
                return Err(field_err("identities.max_sites", format!("must lie in 2..={MAX_FULL_SITES}")));
            }
            if suite.trials == 0 {
                return Err(field_err("identities.trials", "must be positive"));
            }
            return Ok(Resolved { mode, scenario: None, suite });
        }

        let chain_cfg =
            self.chain.as_ref().ok_or_else(|| field_err("chain", format!("required for mode {}", mode.name())))?;
        let chain = chain_cfg.build("chain")?;
        let target_chain = match &self.target_chain {
            Some(c) => c.build("target_chain")?,
            None => chain.clone(),
        };
        let s = chain.sites();
        if target_chain.sites() != s {
            return Err(field_err("target_chain", format!("has {} sites, chain has {s}", target_chain.sites())));
        }
        let grid = self.grid.ok_or_else(|| field_err("grid", format!("required for mode {}", mode.name())))?;
        if !(grid.step > 0.0 && grid.step.is_finite()) {
            return Err(field_err("grid.step", format!("must be positive, got {}", grid.step)));
        }
        if !(grid.t_end >= grid.step && grid.t_end.is_finite()) {
            return Err(field_err("grid.t_end", format!("must be finite and at least one step, got {}", grid.t_end)));
        }
        match self.backend {
            Backend::Full if s > MAX_FULL_SITES => {
                return Err(field_err(
                    "backend",
                    format!("full-space backend is limited to {MAX_FULL_SITES} sites, chain has {s}; use \"sector\""),
                ));
            }
            Backend::Sector if bath.is_active() => {
                return Err(field_err("backend", "boundary baths need the full-space backend"));
            }
            _ => {}
        }
        for term in &self.field {
            if term.site == 0 || term.site > s {
                return Err(field_err("field", format!("site {} outside 1..={s}", term.site)));
            }
            if ![term.amplitude, term.frequency, term.phase].iter().all(|v| v.is_finite()) {
                return Err(field_err("field", "non-finite coefficient"));
            }
        }

        match mode {
            Mode::InvertClosed => {
                if deph.is_active() {
                    return Err(field_err("dephasing.eta", "invert_closed drives a closed chain; must be 0"));
                }
                if bath.is_active() {
                    return Err(field_err("bath.epsilon", "invert_closed drives a closed chain; must be 0"));
                }
            }
            Mode::MimicDephasing | Mode::CompensateDephasing => {
                if bath.is_active() {
                    return Err(field_err("bath.epsilon", format!("must be 0 for mode {}", mode.name())));
                }
            }
            Mode::CompensateBath => {
                if !bath.is_active() {
                    return Err(field_err("bath.epsilon", "compensate_bath requires epsilon > 0"));
                }
                if deph.is_active() {
                    return Err(field_err("dephasing.eta", "compensate_bath requires eta = 0"));
                }
            }
            Mode::Simulate | Mode::Identities => {}
        }
        if matches!(mode, Mode::CompensateDephasing | Mode::CompensateBath) && !self.field.is_empty() {
            return Err(field_err("field", format!("mode {} targets the field-free evolution", mode.name())));
        }
        if matches!(mode, Mode::CompensateDephasing | Mode::CompensateBath) && self.target_chain.is_some() {
            return Err(field_err("target_chain", format!("mode {} targets the controlled chain itself", mode.name())));
        }

        let basis = match self.backend {
            Backend::Full => Basis::full(s),
            Backend::Sector => Basis::sector(s, 1),
        }
        .map_err(|e| field_err("backend", e.to_string()))?;
        let initial = self.initial_state(&basis)?;
        let options = ControlOptions {
            gauge: match self.control.gauge {
                GaugeConfig::FirstSite => Gauge::FirstSite,
                GaugeConfig::LastSite => Gauge::LastSite,
            },
            stepping: match self.control.stepping {
                SteppingConfig::Embedded => Stepping::Embedded,
                SteppingConfig::PredictorCorrector => Stepping::PredictorCorrector,
            },
            ..Default::default()
        };
        let scenario =
            Scenario { chain, target_chain, basis, deph, bath, initial, field: self.field.clone(), grid, reg, options };
        Ok(Resolved { mode, scenario: Some(scenario), suite })
    }

    fn initial_state(&self, basis: &Basis) -> Result<QuantumState, ConfigError> {
        let s = basis.sites();
        let amps: Vec<C64> = match &self.initial {
            InitialConfig::UniformSuperposition => vec![C64::new(1.0 / (s as f64).sqrt(), 0.0); s],
            InitialConfig::SingleSite { site } => {
                if *site == 0 || *site > s {
                    return Err(field_err("initial.site", format!("{site} outside 1..={s}")));
                }
                (1..=s).map(|x| C64::new(if x == *site { 1.0 } else { 0.0 }, 0.0)).collect()
            }
            InitialConfig::Amplitudes { re, im } => {
                if re.len() != s {
                    return Err(field_err("initial.re", format!("expected {s} amplitudes, got {}", re.len())));
                }
                if !im.is_empty() && im.len() != s {
                    return Err(field_err("initial.im", format!("expected {s} amplitudes or none, got {}", im.len())));
                }
                let norm: f64 = re.iter().chain(im.iter()).map(|v| v * v).sum();
                if (norm - 1.0).abs() > 1e-10 {
                    return Err(field_err("initial", format!("amplitudes must be normalized, squared norm is {norm}")));
                }
                (0..s).map(|x| C64::new(re[x], im.get(x).copied().unwrap_or(0.0))).collect()
            }
        };
        QuantumState::from_single_excitation_amplitudes(basis, &amps).map_err(|e| field_err("initial", e.to_string()))
    }
}

/// A validated configuration.
pub struct Resolved {
    pub mode: Mode,
    pub scenario: Option<Scenario>,
    pub suite: SuiteConfig,
}

pub struct Scenario {
    pub chain: ChainSpec,
    pub target_chain: ChainSpec,
    pub basis: Basis,
    pub deph: DephasingSpec,
    pub bath: BathSpec,
    pub initial: QuantumState,
    pub field: Vec<FieldTerm>,
    pub grid: GridConfig,
    pub reg: RegularizationSpec,
    pub options: ControlOptions,
}
