use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use spinvl_cli::config::{Backend, IdentitiesConfig, CONFIG_VERSION};
use spinvl_cli::run::{EXIT_CONFIG, EXIT_OK};
use spinvl_cli::{preset, run, ConfigError, Mode, RunError, ScenarioConfig, PRESETS};

#[derive(Parser, Debug)]
#[command(name = "spinvl", version, about = "Spin-chain Lindblad dynamics and field inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Propagate a chain under a prescribed field (mode `simulate`).
    Simulate(ConfigArgs),
    /// Reconstruct a control field (modes `invert_closed`, `mimic_dephasing`).
    Invert(ConfigArgs),
    /// Compensate dissipation (modes `compensate_dephasing`, `compensate_bath`).
    Compensate(ConfigArgs),
    /// Run the operator and trace identity suite.
    Identities(IdentitiesArgs),
    /// Run figure presets.
    Preset(PresetArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Output root; each run writes into `<out>/<name>`.
    #[arg(long, env = "SPINVL_OUT")]
    out: Option<PathBuf>,
    /// Use the single-excitation backend.
    #[arg(long)]
    sector: bool,
    /// Override the Tikhonov parameter.
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Override the grid step.
    #[arg(long, allow_negative_numbers = true)]
    step: Option<f64>,
    /// Number of runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Scenario config (JSON); repeat for several runs.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct PresetArgs {
    /// fig2, fig3, fig4, fig5 or `all`; repeat for several runs.
    #[arg(long, required = true)]
    preset: Vec<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct IdentitiesArgs {
    /// Optional config with `mode: identities`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    max_sites: Option<usize>,
    #[arg(long, env = "SPINVL_OUT")]
    out: Option<PathBuf>,
}

struct Job {
    name: String,
    config: ScenarioConfig,
    dir: PathBuf,
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

fn run_dir(out: Option<&Path>, cfg: &ScenarioConfig, name: &str) -> PathBuf {
    match (out, &cfg.output) {
        (Some(root), _) => root.join(name),
        (None, Some(dir)) => dir.clone(),
        (None, None) => Path::new("runs").join(name),
    }
}

fn apply(cfg: &mut ScenarioConfig, common: &Common, sector: bool) {
    if let Some(alpha) = common.alpha {
        cfg.reg.alpha = alpha;
    }
    if let (Some(step), Some(grid)) = (common.step, cfg.grid.as_mut()) {
        grid.step = step;
    }
    if sector {
        cfg.backend = Backend::Sector;
    }
}

fn check_mode(cfg: &ScenarioConfig, allowed: &[Mode], command: &str) -> Result<(), ConfigError> {
    if allowed.contains(&cfg.mode) {
        return Ok(());
    }
    let names: Vec<_> = allowed.iter().map(|m| m.name()).collect();
    Err(ConfigError::Field {
        field: "mode",
        reason: format!("`{}` cannot run under `{command}` (expected {})", cfg.mode.name(), names.join(" or ")),
    })
}

fn unique_name(jobs: &[Job], name: String) -> String {
    let mut candidate = name.clone();
    let mut n = 2;
    while jobs.iter().any(|j| j.name == candidate) {
        candidate = format!("{name}-{n}");
        n += 1;
    }
    candidate
}

fn collect(cli: Cli) -> Result<(Vec<Job>, usize), ConfigError> {
    let mut jobs = Vec::new();
    let (configs, allowed, command, common): (Vec<(String, ScenarioConfig)>, &[Mode], &'static str, Option<Common>) =
        match cli.command {
            Command::Simulate(a) => (load_all(&a.config)?, &[Mode::Simulate], "simulate", Some(a.common)),
            Command::Invert(a) => {
                (load_all(&a.config)?, &[Mode::InvertClosed, Mode::MimicDephasing], "invert", Some(a.common))
            }
            Command::Compensate(a) => {
                (load_all(&a.config)?, &[Mode::CompensateDephasing, Mode::CompensateBath], "compensate", Some(a.common))
            }
            Command::Preset(a) => {
                let mut names = Vec::new();
                for p in &a.preset {
                    if p == "all" {
                        names.extend(PRESETS.iter().map(|s| s.to_string()));
                    } else {
                        names.push(p.clone());
                    }
                }
                let configs = names.into_iter().map(|n| preset(&n, a.common.sector).map(|c| (n, c))).collect::<Result<
                    Vec<_>,
                    _,
                >>(
                )?;
                (
                    configs,
                    &[Mode::InvertClosed, Mode::MimicDephasing, Mode::CompensateDephasing, Mode::CompensateBath],
                    "preset",
                    Some(a.common),
                )
            }
            Command::Identities(a) => {
                let mut cfg = match &a.config {
                    Some(path) => ScenarioConfig::load(path)?,
                    None => identities_config(),
                };
                check_mode(&cfg, &[Mode::Identities], "identities")?;
                let defaults = cfg.identities;
                cfg.identities = IdentitiesConfig {
                    seed: a.seed.unwrap_or(defaults.seed),
                    trials: a.trials.unwrap_or(defaults.trials),
                    max_sites: a.max_sites.unwrap_or(defaults.max_sites),
                };
                cfg.validate()?;
                let name = a.config.as_deref().map(stem).unwrap_or_else(|| "identities".into());
                let dir = run_dir(a.out.as_deref(), &cfg, &name);
                jobs.push(Job { name, config: cfg, dir });
                return Ok((jobs, 1));
            }
        };
    let common = common.expect("set for every runnable subcommand");
    for (name, mut cfg) in configs {
        check_mode(&cfg, allowed, command)?;
        // presets resolve --sector themselves
        apply(&mut cfg, &common, common.sector && command != "preset");
        cfg.validate()?;
        let name = unique_name(&jobs, name);
        let dir = run_dir(common.out.as_deref(), &cfg, &name);
        jobs.push(Job { name, config: cfg, dir });
    }
    Ok((jobs, common.jobs.max(1)))
}

fn identities_config() -> ScenarioConfig {
    ScenarioConfig::from_json(&format!(r#"{{"version": {CONFIG_VERSION}, "mode": "identities"}}"#))
        .expect("built-in identities config is valid")
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<(String, ScenarioConfig)>, ConfigError> {
    paths.iter().map(|p| ScenarioConfig::load(p).map(|c| (stem(p), c))).collect()
}

fn execute(job: &Job) -> i32 {
    match run(&job.config, &job.dir) {
        Ok(m) => {
            let mut line = format!("{}: {:?} -> {}", job.name, m.status, job.dir.display());
            if let Some(b) = &m.breakdown {
                line.push_str(&format!(" (breakdown at t = {:.4}, bond {}, {})", b.t, b.bond, b.cause));
            }
            if let Some(e) = &m.error {
                line.push_str(&format!(" ({e})"));
            }
            if m.residuals.as_ref().is_some_and(|r| !r.continuity_ok) {
                line.push_str(" [continuity residual above tolerance]");
            }
            println!("{line}");
            m.exit_code
        }
        Err(e) => {
            eprintln!("{}: {e}", job.name);
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (jobs, workers) = match collect(cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(RunError::Config(e).exit_code() as u8);
        }
    };
    let next = AtomicUsize::new(0);
    let worst = Mutex::new(EXIT_OK);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let code = execute(job);
                let mut w = worst.lock().expect("exit code lock");
                *w = (*w).max(code);
            });
        }
    });
    let code = worst.into_inner().expect("exit code lock");
    ExitCode::from(code as u8)
}
