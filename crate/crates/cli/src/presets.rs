//! Parameter sets of the published figures.

use crate::config::{
    Backend, BathConfig, ChainConfig, ConfigError, DephasingConfig, GridConfig, InitialConfig, Mode, ScenarioConfig,
    CONFIG_VERSION,
};

pub const PRESETS: [&str; 4] = ["fig2", "fig3", "fig4", "fig5"];

const HOPPING: f64 = -0.25;

fn homogeneous(sites: usize) -> Option<ChainConfig> {
    Some(ChainConfig::Homogeneous { sites, hopping: HOPPING, ising: 0.0 })
}

fn base(mode: Mode, sites: usize, t_end: f64) -> ScenarioConfig {
    ScenarioConfig {
        version: CONFIG_VERSION,
        mode,
        chain: homogeneous(sites),
        target_chain: None,
        backend: Backend::Full,
        dephasing: DephasingConfig::default(),
        bath: BathConfig::default(),
        initial: InitialConfig::UniformSuperposition,
        field: Vec::new(),
        grid: Some(GridConfig { t_end, step: 1e-2 }),
        reg: Default::default(),
        control: Default::default(),
        identities: Default::default(),
        output: None,
    }
}

/// `fig2`: engineered target on a homogeneous control chain, `s = 6`.
/// `fig3`: dephasing mimicked by a closed chain, `s = 20` on the
/// single-excitation backend. `fig4`: dephasing compensation, `s = 3`.
/// `fig5`: bath compensation, `s = 3`, `ε = 0.1`, `μ = -1`.
///
/// `sector` moves fig2 and fig4 onto the single-excitation backend; fig5 has
/// baths and always runs on the full space.
pub fn preset(name: &str, sector: bool) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = match name {
        "fig2" => {
            let mut c = base(Mode::InvertClosed, 6, 6.0);
            c.target_chain = Some(ChainConfig::Engineered { sites: 6 });
            c
        }
        "fig3" => {
            let mut c = base(Mode::MimicDephasing, 20, 50.0);
            c.backend = Backend::Sector;
            c.dephasing.eta = 0.01;
            c
        }
        "fig4" => {
            let mut c = base(Mode::CompensateDephasing, 3, 40.0);
            c.dephasing.eta = 0.01;
            c
        }
        "fig5" => {
            let mut c = base(Mode::CompensateBath, 3, 6.0);
            c.bath = BathConfig { epsilon: 0.1, mu: -1.0 };
            c
        }
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    };
    if sector && name != "fig5" {
        cfg.backend = Backend::Sector;
    }
    Ok(cfg)
}
