//! Executes a scenario and writes `trajectory.csv`, `residuals.csv` and
//! `manifest.json` into the run directory.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use spinvl::dynamics::{
    propagate_lindblad, propagate_unitary, uniform_grid, BathSpec, FieldSource, Model, Monitor, PropagationOptions,
    StateRecording, Trajectory,
};
use spinvl::identities::{run_suite, IdentityCheck};
use spinvl::vlsolver::{
    compensate_bath, compensate_dephasing, invert_closed, invert_open_to_closed, BreakdownCause, ControlResult,
    ControlStatus, Target,
};

use crate::config::{ConfigError, FieldTerm, Mode, Scenario, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INTEGRATOR: i32 = 3;
pub const EXIT_BREAKDOWN: i32 = 4;

/// Runs whose continuity residual exceeds this are flagged.
pub const CONTINUITY_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Io { .. } => EXIT_FAILED,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

/// Sum of `amplitude cos(frequency t + phase)` terms, per site.
#[derive(Debug, Clone)]
pub struct TermField(pub Vec<FieldTerm>);

impl FieldSource for TermField {
    fn field_at(&self, t: f64, out: &mut [f64]) {
        out.fill(0.0);
        for term in &self.0 {
            out[term.site - 1] += term.amplitude * (term.frequency * t + term.phase).cos();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Breakdown,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct BreakdownInfo {
    pub t: f64,
    pub bond: usize,
    pub handle: f64,
    pub gradient: f64,
    pub cause: &'static str,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MonitorSummary {
    pub norm_drift: f64,
    pub trace_drift: f64,
    pub hermiticity: f64,
    pub min_eigenvalue: f64,
    pub number_drift: Option<f64>,
}

impl From<Monitor> for MonitorSummary {
    fn from(m: Monitor) -> Self {
        Self {
            norm_drift: m.norm_drift,
            trace_drift: m.trace_drift,
            hermiticity: m.hermiticity,
            min_eigenvalue: m.min_eigenvalue,
            number_drift: m.number_drift,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualSummary {
    pub max_continuity: f64,
    pub continuity_ok: bool,
    pub max_tracking_error: Option<f64>,
    pub max_magnetization_deviation: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BathSummary {
    pub interior_deviation: f64,
    pub boundary_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityRow {
    pub name: &'static str,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub trials: usize,
    pub passed: bool,
}

impl From<&IdentityCheck> for IdentityRow {
    fn from(c: &IdentityCheck) -> Self {
        Self {
            name: c.name,
            max_deviation: c.max_deviation,
            tolerance: c.tolerance,
            trials: c.trials,
            passed: c.passed(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: ScenarioConfig,
    pub status: RunStatus,
    pub exit_code: i32,
    pub wall_time_s: f64,
    pub nodes: usize,
    pub t_reached: Option<f64>,
    pub breakdown: Option<BreakdownInfo>,
    pub error: Option<String>,
    pub residuals: Option<ResidualSummary>,
    pub monitor: Option<MonitorSummary>,
    pub target_monitor: Option<MonitorSummary>,
    pub bath: Option<BathSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub identities: Vec<IdentityRow>,
}

impl RunManifest {
    fn new(config: &ScenarioConfig) -> Self {
        Self {
            tool: "spinvl",
            version: env!("CARGO_PKG_VERSION"),
            config: config.clone(),
            status: RunStatus::Completed,
            exit_code: EXIT_OK,
            wall_time_s: 0.0,
            nodes: 0,
            t_reached: None,
            breakdown: None,
            error: None,
            residuals: None,
            monitor: None,
            target_monitor: None,
            bath: None,
            identities: Vec::new(),
        }
    }
}

/// What a mode produced before the files are written.
struct Produced {
    trajectory: Trajectory,
    bath: BathSpec,
    control: Option<ControlResult>,
    target_monitor: Option<Monitor>,
    bath_report: Option<BathSummary>,
}

/// Runs `config` and writes its artifacts into `dir`. Solver failures are
/// reported through the manifest and its exit code; only configuration and
/// I/O problems are returned as errors.
pub fn run(config: &ScenarioConfig, dir: &Path) -> Result<RunManifest, RunError> {
    let resolved = config.resolve()?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let start = Instant::now();
    let mut manifest = RunManifest::new(config);

    if resolved.mode == Mode::Identities {
        let checks = run_suite(resolved.suite);
        match checks {
            Ok(checks) => {
                manifest.identities = checks.iter().map(IdentityRow::from).collect();
                write_identities(dir, &manifest.identities)?;
                if !manifest.identities.iter().all(|r| r.passed) {
                    manifest.status = RunStatus::Failed;
                    manifest.exit_code = EXIT_FAILED;
                }
            }
            Err(e) => fail(&mut manifest, &e),
        }
        manifest.wall_time_s = start.elapsed().as_secs_f64();
        write_atomic(dir, "manifest.json", &manifest_bytes(&manifest))?;
        return Ok(manifest);
    }

    let scenario = resolved.scenario.expect("non-identity modes resolve a scenario");
    match execute(resolved.mode, &scenario) {
        Ok(p) => {
            let continuity = continuity_per_node(&p.trajectory, p.bath);
            write_trajectory(dir, &p.trajectory)?;
            write_residuals(dir, &p.trajectory, &continuity, p.control.as_ref())?;
            let max_continuity = continuity.iter().copied().fold(0.0, nan_max);
            manifest.nodes = p.trajectory.len();
            manifest.t_reached = p.trajectory.grid.last().copied();
            manifest.monitor = Some(p.trajectory.monitor.into());
            manifest.target_monitor = p.target_monitor.map(Into::into);
            manifest.bath = p.bath_report;
            manifest.residuals = Some(ResidualSummary {
                max_continuity,
                continuity_ok: max_continuity <= CONTINUITY_TOL,
                max_tracking_error: p.control.as_ref().map(ControlResult::max_tracking_error),
                max_magnetization_deviation: p
                    .control
                    .as_ref()
                    .and_then(|c| c.max_magnetization_deviation(1..=c.trajectory.sites())),
            });
            if let Some(ControlStatus::Breakdown(b)) = p.control.as_ref().map(|c| &c.status) {
                manifest.status = RunStatus::Breakdown;
                manifest.breakdown = Some(BreakdownInfo {
                    t: b.t,
                    bond: b.bond,
                    handle: b.handle,
                    gradient: b.gradient,
                    cause: cause_name(&b.cause),
                });
                if !resolved.mode.expects_breakdown() {
                    manifest.exit_code = EXIT_BREAKDOWN;
                }
            }
        }
        Err(e) => fail(&mut manifest, &e),
    }
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    write_atomic(dir, "manifest.json", &manifest_bytes(&manifest))?;
    Ok(manifest)
}

fn fail(manifest: &mut RunManifest, e: &spinvl::Error) {
    use spinvl::Error as E;
    manifest.error = Some(e.to_string());
    let expects = manifest.config.mode.expects_breakdown();
    match e {
        E::Breakdown { .. } | E::Runaway { .. } => {
            manifest.status = RunStatus::Breakdown;
            manifest.exit_code = if expects { EXIT_OK } else { EXIT_BREAKDOWN };
        }
        E::Integrator { .. } | E::InvariantViolation { .. } | E::Quadrature { .. } => {
            manifest.status = RunStatus::Failed;
            manifest.exit_code = EXIT_INTEGRATOR;
        }
        _ => {
            manifest.status = RunStatus::Failed;
            manifest.exit_code = EXIT_CONFIG;
        }
    }
}

fn cause_name(c: &BreakdownCause) -> &'static str {
    match c {
        BreakdownCause::HandleFloor => "handle_floor",
        BreakdownCause::FieldCap => "field_cap",
    }
}

fn execute(mode: Mode, sc: &Scenario) -> spinvl::Result<Produced> {
    let grid = uniform_grid(sc.grid.t_end, sc.grid.step)?;
    let field = TermField(sc.field.clone());
    let quiet = PropagationOptions { record_states: StateRecording::None, ..Default::default() };
    let closed = |chain: &spinvl::spinops::ChainSpec| Model::closed(chain.clone(), sc.basis.repr());
    let from_control = |control: ControlResult, bath: BathSpec| Produced {
        trajectory: control.trajectory.clone(),
        bath,
        control: Some(control),
        target_monitor: None,
        bath_report: None,
    };
    match mode {
        Mode::Simulate => {
            let model = Model::new(sc.basis.clone(), sc.chain.clone(), sc.deph, sc.bath)?;
            let trajectory = if model.is_closed() {
                propagate_unitary(&model, &sc.initial, &field, &grid, &quiet)?
            } else {
                propagate_lindblad(&model, &sc.initial.to_density(), &field, &grid, &quiet)?
            };
            Ok(Produced { trajectory, bath: sc.bath, control: None, target_monitor: None, bath_report: None })
        }
        Mode::InvertClosed => {
            let target = Target::reference(closed(&sc.target_chain)?, sc.initial.clone(), Arc::new(field))?;
            let control = invert_closed(&sc.chain, &sc.initial, &target, &grid, sc.reg, sc.options)?;
            Ok(from_control(control, BathSpec::none()))
        }
        Mode::MimicDephasing => {
            let model = Model::new(sc.basis.clone(), sc.target_chain.clone(), sc.deph, BathSpec::none())?;
            let rho = sc.initial.to_density();
            let reference = propagate_lindblad(&model, &rho, &field, &grid, &quiet)?;
            let target = Target::recorded(&reference)?;
            let control = invert_open_to_closed(&sc.chain, &rho, &target, &grid, sc.reg, sc.options)?;
            let mut p = from_control(control, BathSpec::none());
            p.target_monitor = Some(reference.monitor);
            Ok(p)
        }
        Mode::CompensateDephasing => {
            let control = compensate_dephasing(&sc.chain, sc.deph, &sc.initial, &grid, sc.reg, sc.options)?;
            Ok(from_control(control, BathSpec::none()))
        }
        Mode::CompensateBath => {
            let out = compensate_bath(&sc.chain, sc.bath, &sc.initial, &grid, sc.reg, sc.options)?;
            let mut p = from_control(out.control, sc.bath);
            p.bath_report = Some(BathSummary {
                interior_deviation: out.report.interior_deviation,
                boundary_deviation: out.report.boundary_deviation,
            });
            Ok(p)
        }
        Mode::Identities => unreachable!("identities handled by the caller"),
    }
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// `max_x |dm3/dt + j(x) - j(x-1) + bath terms|` at each node.
pub fn continuity_per_node(traj: &Trajectory, bath: BathSpec) -> Vec<f64> {
    let s = traj.sites();
    (0..traj.len())
        .map(|n| {
            let (m, j, dm) = (&traj.magnetization[n], &traj.current[n], &traj.magnetization_rate[n]);
            (1..=s)
                .map(|x| {
                    let mut r = dm[x - 1] + j[x] - j[x - 1];
                    if x == 1 {
                        r += 4.0 * bath.epsilon * (m[0] + bath.mu);
                    }
                    if x == s {
                        r += 4.0 * bath.epsilon * (m[s - 1] - bath.mu);
                    }
                    r.abs()
                })
                .fold(0.0, nan_max)
        })
        .collect()
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<(), RunError> {
    let s = traj.sites();
    let rows = (0..traj.len()).flat_map(|n| {
        (1..=s).map(move |x| {
            vec![
                num(traj.grid[n]),
                x.to_string(),
                num(traj.magnetization[n][x - 1]),
                num(traj.current[n][x]),
                if x < s { num(traj.kinetic[n][x - 1]) } else { String::new() },
                num(traj.field[n][x - 1]),
            ]
        })
    });
    write_atomic(dir, "trajectory.csv", &csv_bytes(&["t", "x", "m3", "j", "T", "h"], rows))
}

fn write_residuals(
    dir: &Path,
    traj: &Trajectory,
    continuity: &[f64],
    control: Option<&ControlResult>,
) -> Result<(), RunError> {
    let s = traj.sites();
    let rows = (0..traj.len()).map(|n| {
        let tracking = control.map(|c| num(c.tracking_error[n])).unwrap_or_default();
        let m3 = control
            .and_then(|c| c.target_magnetization.as_ref())
            .map(|m| num((0..s).map(|x| (traj.magnetization[n][x] - m[n][x]).abs()).fold(0.0, nan_max)))
            .unwrap_or_default();
        vec![num(traj.grid[n]), num(continuity[n]), tracking, m3]
    });
    write_atomic(dir, "residuals.csv", &csv_bytes(&["t", "continuity", "tracking", "m3_deviation"], rows))
}

fn write_identities(dir: &Path, rows: &[IdentityRow]) -> Result<(), RunError> {
    let body = rows.iter().map(|r| {
        vec![r.name.to_string(), num(r.max_deviation), num(r.tolerance), r.trials.to_string(), r.passed.to_string()]
    });
    write_atomic(
        dir,
        "identities.csv",
        &csv_bytes(&["identity", "max_deviation", "tolerance", "trials", "passed"], body),
    )
}

fn manifest_bytes(m: &RunManifest) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(m).expect("manifest serializes");
    v.push(b'\n');
    v
}

/// Writes through a temporary file in `dir` and renames it into place.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), RunError> {
    let path = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(&path))?;
    tmp.write_all(bytes).map_err(io_err(&path))?;
    tmp.as_file().sync_all().map_err(io_err(&path))?;
    tmp.persist(&path).map_err(|e| RunError::Io { path: path.clone(), source: e.error })?;
    Ok(())
}
