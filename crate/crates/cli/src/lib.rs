//! Scenario runner for the spinvl toolkit: JSON configs, figure presets and
//! CSV/manifest output.

pub mod config;
pub mod presets;
pub mod run;

pub use config::{ConfigError, Mode, ScenarioConfig};
pub use presets::{preset, PRESETS};
pub use run::{run, RunError, RunManifest, RunStatus};
