//! Reconstruction of the local field `h(x, t)` that forces a controlled chain
//! to carry a prescribed current field.
//!
//! The controlled current obeys
//! `dj(x)/dt = ⟨C(x)⟩ + κ(x) g(x) - 4η j(x) - 2ε(δ_{1,x} + δ_{s-1,x}) j(x)`
//! with `C(x) = -i[j(x), H0]`, handle `κ(x) = 8J(x)⟨τ(x,x+1)⟩ = 4⟨T(x)⟩` and
//! gradient `g(x) = h(x+1) - h(x)`. Matching `dj/dt` to the target gives
//! `g = νκ/(κ² + α²)`.
//!
//! Two steppers are available. [`Stepping::Embedded`] substitutes the
//! algebraic solution into the right-hand side and integrates the resulting
//! ODE with the adaptive integrator, co-propagating a reference target when
//! there is one. [`Stepping::PredictorCorrector`] holds the field piecewise
//! linear on the grid and re-solves once per step.

use std::sync::Arc;

use crate::dynamics::{
    check_grid, expectation, monitor_state, number_expectation, BathSpec, DephasingSpec, FieldSource, FieldTable,
    FnField, Model, QuantumState, StateData, StateRecording, Trajectory, ZeroField,
};
use crate::error::{Error, Result};
use crate::observables::boundary_oracle_a_b;
use crate::ode::{hermite, DormandPrince, IntegratorOptions};
use crate::spinops::{ChainSpec, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationSpec {
    /// Tikhonov parameter.
    pub alpha: f64,
    /// Breakdown threshold on `|⟨T(x)⟩|`.
    pub handle_floor: f64,
    /// Cap on `|h(x+1) - h(x)|`.
    pub max_field: f64,
}

impl Default for RegularizationSpec {
    fn default() -> Self {
        Self { alpha: 1e-4, handle_floor: 1e-6, max_field: 1e3 }
    }
}

impl RegularizationSpec {
    pub fn new(alpha: f64, handle_floor: f64, max_field: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("must be finite and >= 0, got {alpha}"),
            });
        }
        if !(handle_floor > 0.0 && handle_floor.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "handle_floor",
                reason: format!("must be finite and > 0, got {handle_floor}"),
            });
        }
        if !(max_field > 0.0) {
            return Err(Error::InvalidParameter { name: "max_field", reason: format!("must be > 0, got {max_field}") });
        }
        Ok(Self { alpha, handle_floor, max_field })
    }

    pub fn with_alpha(self, alpha: f64) -> Result<Self> {
        Self::new(alpha, self.handle_floor, self.max_field)
    }
}

/// Which site carries the zero of the reconstructed field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gauge {
    /// `h(1, t) = 0`
    #[default]
    FirstSite,
    /// `h(s, t) = 0`
    LastSite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stepping {
    #[default]
    Embedded,
    PredictorCorrector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOptions {
    pub gauge: Gauge,
    pub stepping: Stepping,
    pub integrator: IntegratorOptions,
    pub record_states: StateRecording,
    /// Allowed mismatch of the initial state against the target at `t = 0`.
    pub consistency_tol: f64,
}

impl Default for ControlOptions {
    fn default() -> Self {
        Self {
            gauge: Gauge::FirstSite,
            stepping: Stepping::Embedded,
            integrator: IntegratorOptions::default(),
            record_states: StateRecording::Every(10),
            consistency_tol: 1e-8,
        }
    }
}

pub type SharedField = Arc<dyn FieldSource + Send + Sync>;
/// Writes one value per bond `1..=s-1` at time `t`.
pub type BondFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

#[derive(Clone)]
enum TargetKind {
    Reference { model: Model, initial: QuantumState, field: SharedField },
    Recorded(Recorded),
    Analytic { current: BondFn, rate: BondFn, magnetization0: Vec<f64>, current0: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Recorded {
    grid: Vec<f64>,
    current: Vec<Vec<f64>>,
    current_rate: Vec<Vec<f64>>,
    magnetization: Vec<Vec<f64>>,
    magnetization_rate: Vec<Vec<f64>>,
}

impl Recorded {
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let g = &self.grid;
        let (first, last) = (g[0], g[g.len() - 1]);
        let slack = 1e-12 * (last - first).abs().max(1.0);
        if t < first - slack || t > last + slack {
            return Err(Error::InvalidParameter {
                name: "t",
                reason: format!("{t} outside the recorded target window [{first}, {last}]"),
            });
        }
        if g.len() == 1 {
            return Ok((0, 0.0));
        }
        let hi = g.partition_point(|&v| v <= t).clamp(1, g.len() - 1);
        Ok((hi - 1, t.clamp(first, last)))
    }

    fn value(
        &self,
        series: &[Vec<f64>],
        rates: &[Vec<f64>],
        t: f64,
        out: &mut [f64],
        deriv: Option<&mut [f64]>,
    ) -> Result<()> {
        let (lo, t) = self.locate(t)?;
        if self.grid.len() == 1 {
            out.copy_from_slice(&series[0]);
            if let Some(d) = deriv {
                d.copy_from_slice(&rates[0]);
            }
            return Ok(());
        }
        let (t0, t1) = (self.grid[lo], self.grid[lo + 1]);
        for i in 0..out.len() {
            out[i] = hermite(t0, series[lo][i], rates[lo][i], t1, series[lo + 1][i], rates[lo + 1][i], t);
        }
        if let Some(d) = deriv {
            for i in 0..d.len() {
                d[i] = hermite_derivative(t0, series[lo][i], rates[lo][i], t1, series[lo + 1][i], rates[lo + 1][i], t);
            }
        }
        Ok(())
    }
}

fn hermite_derivative(t0: f64, y0: f64, f0: f64, t1: f64, y1: f64, f1: f64, t: f64) -> f64 {
    let h = t1 - t0;
    let th = (t - t0) / h;
    let t2 = th * th;
    ((6.0 * t2 - 6.0 * th) * (y0 - y1)) / h + (3.0 * t2 - 4.0 * th + 1.0) * f0 + (3.0 * t2 - 2.0 * th) * f1
}

/// Target current field `j(x, t)`, `1 ≤ x ≤ s-1`, with its exact time
/// derivative.
#[derive(Clone)]
pub struct Target {
    sites: usize,
    kind: TargetKind,
}

impl std::fmt::Debug for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.kind {
            TargetKind::Reference { .. } => "reference",
            TargetKind::Recorded(_) => "recorded",
            TargetKind::Analytic { .. } => "analytic",
        };
        f.debug_struct("Target").field("sites", &self.sites).field("kind", &kind).finish()
    }
}

/// Target values at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPoint {
    pub current: Vec<f64>,
    pub current_rate: Vec<f64>,
    pub magnetization: Option<Vec<f64>>,
    pub magnetization_rate: Option<Vec<f64>>,
}

impl Target {
    /// A system propagated alongside the controlled one.
    pub fn reference(model: Model, initial: QuantumState, field: SharedField) -> Result<Self> {
        model.check_state(&initial)?;
        if initial.is_pure() && !model.is_closed() {
            return Err(Error::InvalidState("an open reference system needs a density matrix".into()));
        }
        Ok(Self { sites: model.sites(), kind: TargetKind::Reference { model, initial, field } })
    }

    /// Field-free reference system.
    pub fn free(model: Model, initial: QuantumState) -> Result<Self> {
        Self::reference(model, initial, Arc::new(ZeroField))
    }

    /// Values and exact rates recorded on a trajectory, Hermite-interpolated
    /// between nodes.
    pub fn recorded(traj: &Trajectory) -> Result<Self> {
        if traj.is_empty() {
            return Err(Error::InvalidParameter { name: "target", reason: "empty trajectory".into() });
        }
        let s = traj.sites();
        Ok(Self {
            sites: s,
            kind: TargetKind::Recorded(Recorded {
                grid: traj.grid.clone(),
                current: traj.current.iter().map(|row| row[1..s].to_vec()).collect(),
                current_rate: traj.current_rate.clone(),
                magnetization: traj.magnetization.clone(),
                magnetization_rate: traj.magnetization_rate.clone(),
            }),
        })
    }

    /// Closed-form current and rate callbacks.
    pub fn analytic(sites: usize, current: BondFn, rate: BondFn, magnetization0: Vec<f64>) -> Result<Self> {
        if magnetization0.len() != sites {
            return Err(Error::LengthMismatch { expected: sites, got: magnetization0.len() });
        }
        let mut current0 = vec![0.0; sites - 1];
        current(0.0, &mut current0);
        Ok(Self { sites, kind: TargetKind::Analytic { current, rate, magnetization0, current0 } })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    fn aug_len(&self) -> usize {
        match &self.kind {
            TargetKind::Reference { initial, .. } => initial.data().len(),
            _ => 0,
        }
    }

    fn initial_aug(&self) -> Vec<C64> {
        match &self.kind {
            TargetKind::Reference { initial, .. } => initial.data().flatten(),
            _ => Vec::new(),
        }
    }

    /// Target at time `t`; for a reference target `y` is its state and
    /// `dy` receives its time derivative.
    fn eval(&self, t: f64, y: &[C64], dy: Option<&mut [C64]>) -> Result<TargetPoint> {
        let b = self.sites - 1;
        match &self.kind {
            TargetKind::Reference { model, initial, field } => {
                let state = initial.data().like(y);
                let mut h = vec![0.0; self.sites];
                field.field_at(t, &mut h);
                let rate = model.data_rhs(&state, &h)?;
                let obs = model.observables(&state);
                let rates = model.rates(&state, &rate);
                if let Some(dy) = dy {
                    dy.copy_from_slice(&rate.flatten());
                }
                Ok(TargetPoint {
                    current: obs.current[1..self.sites].to_vec(),
                    current_rate: rates.current,
                    magnetization: Some(obs.magnetization),
                    magnetization_rate: Some(rates.magnetization),
                })
            }
            TargetKind::Recorded(rec) => {
                let mut current = vec![0.0; b];
                let mut current_rate = vec![0.0; b];
                rec.value(&rec.current, &rec.current_rate, t, &mut current, Some(&mut current_rate))?;
                let mut m = vec![0.0; self.sites];
                let mut dm = vec![0.0; self.sites];
                rec.value(&rec.magnetization, &rec.magnetization_rate, t, &mut m, Some(&mut dm))?;
                Ok(TargetPoint { current, current_rate, magnetization: Some(m), magnetization_rate: Some(dm) })
            }
            TargetKind::Analytic { current, rate, .. } => {
                let mut j = vec![0.0; b];
                let mut dj = vec![0.0; b];
                current(t, &mut j);
                rate(t, &mut dj);
                Ok(TargetPoint { current: j, current_rate: dj, magnetization: None, magnetization_rate: None })
            }
        }
    }

    /// `(m3(x, 0), j(x, 0))` of the target.
    pub fn initial_values(&self, t0: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        match &self.kind {
            TargetKind::Analytic { magnetization0, current0, .. } => Ok((magnetization0.clone(), current0.clone())),
            _ => {
                let p = self.eval(t0, &self.initial_aug(), None)?;
                Ok((p.magnetization.expect("reference and recorded targets carry m3"), p.current))
            }
        }
    }

    /// Target sampled on a grid by propagating a reference system once;
    /// other kinds are returned unchanged.
    pub fn tabulate(&self, grid: &[f64], integrator: IntegratorOptions) -> Result<Self> {
        let TargetKind::Reference { model, initial, field } = &self.kind else {
            return Ok(self.clone());
        };
        let opts = crate::dynamics::PropagationOptions {
            integrator,
            record_states: StateRecording::None,
            positivity_every: 0,
        };
        let traj = if initial.is_pure() {
            crate::dynamics::propagate_unitary(model, initial, field.as_ref(), grid, &opts)?
        } else {
            crate::dynamics::propagate_lindblad(model, initial, field.as_ref(), grid, &opts)?
        };
        Self::recorded(&traj)
    }
}

/// Result of the algebraic solve at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSolution {
    /// `h(x+1) - h(x)` for bonds `1..=s-1`.
    pub gradient: Vec<f64>,
    /// `⟨T(x)⟩`.
    pub handles: Vec<f64>,
    /// `ν(x)`.
    pub numerator: Vec<f64>,
}

impl GradientSolution {
    /// Handle-floor or field-cap violation, if any. A sign change of a handle
    /// against `previous` counts as crossing the floor.
    pub fn violation(&self, reg: &RegularizationSpec, previous: Option<&[f64]>) -> Option<(usize, BreakdownCause)> {
        let mut worst: Option<(usize, f64)> = None;
        for (i, &t) in self.handles.iter().enumerate() {
            let crossed = previous.is_some_and(|p| p[i] != 0.0 && p[i].signum() != t.signum());
            if t.abs() < reg.handle_floor || crossed || !t.is_finite() {
                if worst.is_none_or(|(_, v)| t.abs() < v) {
                    worst = Some((i, t.abs()));
                }
            }
        }
        if let Some((i, _)) = worst {
            return Some((i + 1, BreakdownCause::HandleFloor));
        }
        self.gradient.iter().position(|g| !(g.abs() <= reg.max_field)).map(|i| (i + 1, BreakdownCause::FieldCap))
    }
}

pub(crate) fn gradient_raw(model: &Model, state: &StateData, dj_target: &[f64], alpha: f64) -> GradientSolution {
    let s = model.sites();
    let chain = model.chain();
    let (eta, eps) = (model.dephasing().eta, model.bath().epsilon);
    let mut gradient = Vec::with_capacity(s - 1);
    let mut handles = Vec::with_capacity(s - 1);
    let mut numerator = Vec::with_capacity(s - 1);
    for x in 1..s {
        let j = expectation(model.current_op(x), state).re;
        let drift = expectation(model.current_drift_op(x), state).re;
        let tau = expectation(model.tau_op(x), state).re;
        let jx = chain.j(x as isize);
        let kappa = 8.0 * jx * tau;
        let edges = (x == 1) as u8 + (x == s - 1) as u8;
        let nu = dj_target[x - 1] - drift + 4.0 * eta * j + 2.0 * eps * edges as f64 * j;
        let g = if alpha == 0.0 { nu / kappa } else { nu * kappa / (kappa * kappa + alpha * alpha) };
        gradient.push(g);
        handles.push(2.0 * jx * tau);
        numerator.push(nu);
    }
    GradientSolution { gradient, handles, numerator }
}

/// Solves the algebraic relation for the field gradient on `state`, with the
/// damping of the model's dissipators.
pub fn solve_gradient(
    model: &Model,
    state: &QuantumState,
    dj_target: &[f64],
    reg: &RegularizationSpec,
) -> Result<GradientSolution> {
    model.check_state(state)?;
    check_hopping(model.chain())?;
    if dj_target.len() != model.sites() - 1 {
        return Err(Error::LengthMismatch { expected: model.sites() - 1, got: dj_target.len() });
    }
    let sol = gradient_raw(model, state.data(), dj_target, reg.alpha);
    match sol.violation(reg, None) {
        Some((bond, BreakdownCause::HandleFloor)) => Err(Error::Breakdown { bond, handle: sol.handles[bond - 1] }),
        Some((bond, _)) => Err(Error::Runaway { bond, gradient: sol.gradient[bond - 1] }),
        None => Ok(sol),
    }
}

fn check_hopping(chain: &ChainSpec) -> Result<()> {
    if let Some(x) = chain.hopping().iter().position(|&j| j == 0.0) {
        return Err(Error::InvalidChain(format!("hopping J({}) = 0 leaves the bond uncontrollable", x + 1)));
    }
    Ok(())
}

/// Field profile `h(1..=s)` from gradients under a gauge.
pub fn field_from_gradient(gradient: &[f64], gauge: Gauge) -> Vec<f64> {
    let s = gradient.len() + 1;
    let mut h = vec![0.0; s];
    match gauge {
        Gauge::FirstSite => {
            for x in 1..s {
                h[x] = h[x - 1] + gradient[x - 1];
            }
        }
        Gauge::LastSite => {
            for x in (0..s - 1).rev() {
                h[x] = h[x + 1] - gradient[x];
            }
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub enum BreakdownCause {
    /// `|⟨T(x)⟩|` fell below the floor or changed sign.
    HandleFloor,
    /// `|g(x)|` exceeded the cap.
    FieldCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Breakdown {
    pub t: f64,
    pub bond: usize,
    /// `⟨T(bond)⟩` at `t`.
    pub handle: f64,
    pub gradient: f64,
    pub cause: BreakdownCause,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlStatus {
    Completed,
    Breakdown(Breakdown),
}

impl ControlStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, ControlStatus::Completed)
    }

    pub fn breakdown(&self) -> Option<&Breakdown> {
        match self {
            ControlStatus::Breakdown(b) => Some(b),
            ControlStatus::Completed => None,
        }
    }
}

/// First node at which any `|⟨T(x)⟩|` is below the floor.
pub fn detect_breakdown(grid: &[f64], handles: &[Vec<f64>], reg: &RegularizationSpec) -> ControlStatus {
    for (t, row) in grid.iter().zip(handles) {
        let worst = row
            .iter()
            .enumerate()
            .filter(|(_, v)| !(v.abs() >= reg.handle_floor))
            .min_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap_or(std::cmp::Ordering::Equal));
        if let Some((i, &v)) = worst {
            return ControlStatus::Breakdown(Breakdown {
                t: *t,
                bond: i + 1,
                handle: v,
                gradient: f64::NAN,
                cause: BreakdownCause::HandleFloor,
            });
        }
    }
    ControlStatus::Completed
}

#[derive(Debug, Clone)]
pub struct ControlResult {
    /// Gauge-fixed field on the nodes reached before any breakdown.
    pub field: FieldTable,
    /// `h(x+1) - h(x)` per node.
    pub gradient: Vec<Vec<f64>>,
    /// Controlled trajectory; `kinetic` holds the handles `⟨T(x)⟩`.
    pub trajectory: Trajectory,
    /// `j_target(x)` per node, bonds `1..=s-1`.
    pub target_current: Vec<Vec<f64>>,
    /// `m3_target(x)` per node when the target provides it.
    pub target_magnetization: Option<Vec<Vec<f64>>>,
    pub target_magnetization_rate: Option<Vec<Vec<f64>>>,
    /// `max_x |j(x) - j_target(x)|` per node.
    pub tracking_error: Vec<f64>,
    pub status: ControlStatus,
}

impl ControlResult {
    pub fn handles(&self) -> &[Vec<f64>] {
        &self.trajectory.kinetic
    }

    pub fn max_tracking_error(&self) -> f64 {
        self.tracking_error.iter().copied().fold(0.0, f64::max)
    }

    /// `max |m3 - m3_target|` over nodes and the given sites.
    pub fn max_magnetization_deviation(&self, sites: impl IntoIterator<Item = usize> + Clone) -> Option<f64> {
        let target = self.target_magnetization.as_ref()?;
        let mut worst: f64 = 0.0;
        for (row, trow) in self.trajectory.magnetization.iter().zip(target) {
            for x in sites.clone() {
                worst = worst.max((row[x - 1] - trow[x - 1]).abs());
            }
        }
        Some(worst)
    }
}

/// Inputs of one control run.
pub struct ControlProblem<'a> {
    pub controlled: &'a Model,
    pub initial: &'a QuantumState,
    pub target: &'a Target,
    pub grid: &'a [f64],
    pub reg: RegularizationSpec,
    pub options: ControlOptions,
}

struct NodeEval {
    point: TargetPoint,
    state: StateData,
    sol: GradientSolution,
    h: Vec<f64>,
}

struct Recorder {
    result: ControlResult,
    rows: Vec<Vec<f64>>,
    initial_number: Option<f64>,
    t0: f64,
}

impl Recorder {
    fn new(model: &Model, initial: &StateData, t0: f64) -> Self {
        let trajectory = Trajectory::new(model.repr());
        let initial_number = (!model.bath().is_active()).then(|| number_expectation(model, initial));
        Self {
            initial_number,
            t0,
            result: ControlResult {
                field: FieldTable::zeros(vec![0.0], model.sites()).expect("valid placeholder"),
                gradient: Vec::new(),
                trajectory,
                target_current: Vec::new(),
                target_magnetization: Some(Vec::new()),
                target_magnetization_rate: Some(Vec::new()),
                tracking_error: Vec::new(),
                status: ControlStatus::Completed,
            },
            rows: Vec::new(),
        }
    }

    fn push(&mut self, model: &Model, t: f64, ev: &NodeEval, keep: bool) -> Result<()> {
        let r = &mut self.result;
        monitor_state(model, &ev.state, self.initial_number, t, t - self.t0, true, &mut r.trajectory.monitor)?;
        r.trajectory.record(model, t, &ev.state, &ev.h, keep)?;
        let current = &r.trajectory.current[r.trajectory.len() - 1];
        let err = ev.point.current.iter().enumerate().map(|(i, jt)| (current[i + 1] - jt).abs()).fold(0.0, f64::max);
        r.tracking_error.push(err);
        r.gradient.push(ev.sol.gradient.clone());
        r.target_current.push(ev.point.current.clone());
        match (&ev.point.magnetization, &mut r.target_magnetization) {
            (Some(m), Some(rows)) => rows.push(m.clone()),
            _ => r.target_magnetization = None,
        }
        match (&ev.point.magnetization_rate, &mut r.target_magnetization_rate) {
            (Some(m), Some(rows)) => rows.push(m.clone()),
            _ => r.target_magnetization_rate = None,
        }
        self.rows.push(ev.h.clone());
        Ok(())
    }

    fn finish(mut self, status: ControlStatus) -> Result<ControlResult> {
        self.result.field = FieldTable::new(self.result.trajectory.grid.clone(), self.rows)?;
        self.result.status = status;
        Ok(self.result)
    }
}

fn keep_state(mode: StateRecording, node: usize) -> bool {
    match mode {
        StateRecording::All => true,
        StateRecording::Every(n) => n > 0 && node % n == 0,
        StateRecording::None => false,
    }
}

/// Runs the control problem.
pub fn solve_control(p: &ControlProblem<'_>) -> Result<ControlResult> {
    let model = p.controlled;
    let s = model.sites();
    check_grid(p.grid)?;
    model.check_state(p.initial)?;
    check_hopping(model.chain())?;
    if p.target.sites() != s {
        return Err(Error::ReprMismatch(format!("target on {} sites, controlled chain on {s}", p.target.sites())));
    }
    check_consistency(p)?;
    match p.options.stepping {
        Stepping::Embedded => run_embedded(p),
        Stepping::PredictorCorrector => run_predictor_corrector(p),
    }
}

fn check_consistency(p: &ControlProblem<'_>) -> Result<()> {
    let (m0, j0) = p.target.initial_values(p.grid[0])?;
    let obs = p.controlled.observables(p.initial.data());
    let tol = p.options.consistency_tol;
    for (x, (got, want)) in obs.magnetization.iter().zip(&m0).enumerate() {
        if (got - want).abs() > tol {
            return Err(Error::InconsistentInitialState {
                what: "magnetization",
                site: x + 1,
                got: *got,
                expected: *want,
            });
        }
    }
    for (x, (got, want)) in obs.current[1..s_of(p)].iter().zip(&j0).enumerate() {
        if (got - want).abs() > tol {
            return Err(Error::InconsistentInitialState { what: "current", site: x + 1, got: *got, expected: *want });
        }
    }
    Ok(())
}

fn s_of(p: &ControlProblem<'_>) -> usize {
    p.controlled.sites()
}

fn run_embedded(p: &ControlProblem<'_>) -> Result<ControlResult> {
    let model = p.controlled;
    let reg = p.reg;
    let gauge = p.options.gauge;
    let r = p.target.aug_len();
    let template = p.initial.data().clone();
    let mut y = p.target.initial_aug();
    y.extend(template.flatten());

    let evaluate = |t: f64, y: &[C64], dy: Option<&mut [C64]>| -> Result<NodeEval> {
        let (yr, yc) = y.split_at(r);
        let (point, dyc) = match dy {
            Some(dy) => {
                let (dyr, dyc) = dy.split_at_mut(r);
                (p.target.eval(t, yr, Some(dyr))?, Some(dyc))
            }
            None => (p.target.eval(t, yr, None)?, None),
        };
        let state = template.like(yc);
        let sol = gradient_raw(model, &state, &point.current_rate, reg.alpha);
        let h = field_from_gradient(&sol.gradient, gauge);
        if let Some(dyc) = dyc {
            dyc.copy_from_slice(&model.data_rhs(&state, &h)?.flatten());
        }
        Ok(NodeEval { point, state, sol, h })
    };
    let mut rhs = |t: f64, y: &[C64], dy: &mut [C64]| -> Result<()> { evaluate(t, y, Some(dy)).map(|_| ()) };

    let grid = p.grid;
    let mut rec = Recorder::new(model, &template, grid[0]);
    let ev0 = evaluate(grid[0], &y, None)?;
    if let Some((bond, cause)) = ev0.sol.violation(&reg, None) {
        return rec.finish(breakdown_at(grid[0], bond, cause, &ev0.sol));
    }
    rec.push(model, grid[0], &ev0, keep_state(p.options.record_states, 0))?;
    let mut signs = ev0.sol.handles.clone();
    let mut integrator = DormandPrince::new(y.len(), p.options.integrator);

    for n in 1..grid.len() {
        let (t0, t1) = (grid[n - 1], grid[n]);
        let mut trial = y.clone();
        let outcome = integrator.advance(&mut rhs, t0, t1, &mut trial).and_then(|_| evaluate(t1, &trial, None));
        let bad = match &outcome {
            Ok(ev) => ev.sol.violation(&reg, Some(&signs)),
            Err(_) => Some((0, BreakdownCause::HandleFloor)),
        };
        if bad.is_none() {
            let ev = outcome?;
            let keep = keep_state(p.options.record_states, n) || n == grid.len() - 1;
            rec.push(model, t1, &ev, keep)?;
            signs.clone_from(&ev.sol.handles);
            y = trial;
            continue;
        }
        let status = bisect_breakdown(&mut rhs, &evaluate, &y, t0, t1, &signs, &reg, p.options.integrator)?;
        let traj = &mut rec.result.trajectory;
        let last = traj.len() - 1;
        if traj.state_at(last).is_none() {
            traj.states.push((last, QuantumState::from_data_unchecked(model.repr(), template.like(&y[r..]))));
        }
        return rec.finish(status);
    }
    rec.finish(ControlStatus::Completed)
}

fn breakdown_at(t: f64, bond: usize, cause: BreakdownCause, sol: &GradientSolution) -> ControlStatus {
    ControlStatus::Breakdown(Breakdown {
        t,
        bond,
        handle: sol.handles[bond - 1],
        gradient: sol.gradient[bond - 1],
        cause,
    })
}

/// Locates the first failing time in `(t0, t1]` by re-integrating from the
/// last good node.
#[allow(clippy::too_many_arguments)]
fn bisect_breakdown<F, E>(
    rhs: &mut F,
    evaluate: &E,
    y0: &[C64],
    t0: f64,
    t1: f64,
    signs: &[f64],
    reg: &RegularizationSpec,
    opts: IntegratorOptions,
) -> Result<ControlStatus>
where
    F: FnMut(f64, &[C64], &mut [C64]) -> Result<()>,
    E: Fn(f64, &[C64], Option<&mut [C64]>) -> Result<NodeEval>,
{
    let probe = |rhs: &mut F, t: f64| -> Result<NodeEval> {
        let mut y = y0.to_vec();
        DormandPrince::new(y.len(), opts).advance(rhs, t0, t, &mut y)?;
        evaluate(t, &y, None)
    };
    let (mut lo, mut hi) = (t0, t1);
    let mut found: Option<(f64, usize, BreakdownCause, GradientSolution)> = None;
    let mut last_error: Option<Error> = None;
    for _ in 0..200 {
        if hi - lo <= 1e-13 * hi.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match probe(rhs, mid) {
            Ok(ev) => match ev.sol.violation(reg, Some(signs)) {
                Some((bond, cause)) => {
                    found = Some((mid, bond, cause, ev.sol));
                    hi = mid;
                }
                None => lo = mid,
            },
            Err(e) => {
                last_error = Some(e);
                hi = mid;
            }
        }
    }
    if found.as_ref().is_none_or(|f| f.0 > hi) {
        match probe(rhs, hi) {
            Ok(ev) => {
                if let Some((bond, cause)) = ev.sol.violation(reg, Some(signs)) {
                    found = Some((hi, bond, cause, ev.sol));
                }
            }
            Err(e) => last_error = Some(e),
        }
    }
    match found {
        Some((t, bond, cause, sol)) => Ok(breakdown_at(t, bond, cause, &sol)),
        None => Err(last_error.unwrap_or(Error::Integrator {
            t0,
            t1,
            reason: "step failed without a handle or field violation".into(),
        })),
    }
}

fn run_predictor_corrector(p: &ControlProblem<'_>) -> Result<ControlResult> {
    let model = p.controlled;
    let reg = p.reg;
    let gauge = p.options.gauge;
    let grid = p.grid;
    let target = p.target.tabulate(grid, p.options.integrator)?;
    let template = p.initial.data().clone();
    let s = model.sites();

    let evaluate = |t: f64, state: StateData| -> Result<NodeEval> {
        let point = target.eval(t, &[], None)?;
        let sol = gradient_raw(model, &state, &point.current_rate, reg.alpha);
        let h = field_from_gradient(&sol.gradient, gauge);
        Ok(NodeEval { point, state, sol, h })
    };
    let step = |y0: &[C64], t0: f64, t1: f64, h0: &[f64], h1: &[f64]| -> Result<Vec<C64>> {
        let field = FnField(|t: f64, out: &mut [f64]| {
            let w = (t - t0) / (t1 - t0);
            for x in 0..s {
                out[x] = h0[x] + w * (h1[x] - h0[x]);
            }
        });
        let mut rhs = |t: f64, y: &[C64], dy: &mut [C64]| -> Result<()> {
            let mut h = vec![0.0; s];
            field.field_at(t, &mut h);
            dy.copy_from_slice(&model.data_rhs(&template.like(y), &h)?.flatten());
            Ok(())
        };
        let mut y = y0.to_vec();
        DormandPrince::new(y.len(), p.options.integrator).advance(&mut rhs, t0, t1, &mut y)?;
        Ok(y)
    };

    let mut rec = Recorder::new(model, &template, grid[0]);
    let mut ev = evaluate(grid[0], template.clone())?;
    if let Some((bond, cause)) = ev.sol.violation(&reg, None) {
        return rec.finish(breakdown_at(grid[0], bond, cause, &ev.sol));
    }
    rec.push(model, grid[0], &ev, keep_state(p.options.record_states, 0))?;
    let mut previous_h: Option<Vec<f64>> = None;
    for n in 1..grid.len() {
        let (t0, t1) = (grid[n - 1], grid[n]);
        let y0 = ev.state.flatten();
        let predicted_h: Vec<f64> = match &previous_h {
            Some(hp) => ev.h.iter().zip(hp).map(|(a, b)| 2.0 * a - b).collect(),
            None => ev.h.clone(),
        };
        let y_pred = step(&y0, t0, t1, &ev.h, &predicted_h)?;
        let corrected = evaluate(t1, template.like(&y_pred))?;
        let y1 = step(&y0, t0, t1, &ev.h, &corrected.h)?;
        let next = evaluate(t1, template.like(&y1))?;
        if let Some((bond, cause)) = next.sol.violation(&reg, Some(&ev.sol.handles)) {
            return rec.finish(breakdown_at(t1, bond, cause, &next.sol));
        }
        let keep = keep_state(p.options.record_states, n) || n == grid.len() - 1;
        rec.push(model, t1, &next, keep)?;
        previous_h = Some(std::mem::replace(&mut ev, next).h);
    }
    rec.finish(ControlStatus::Completed)
}

fn require_pure(state: &QuantumState) -> Result<()> {
    if !state.is_pure() {
        return Err(Error::InvalidState("closed inversion expects a pure initial state".into()));
    }
    Ok(())
}

/// Closed control chain forced to carry the target current, from a pure state.
pub fn invert_closed(
    control_chain: &ChainSpec,
    psi0: &QuantumState,
    target: &Target,
    grid: &[f64],
    reg: RegularizationSpec,
    options: ControlOptions,
) -> Result<ControlResult> {
    require_pure(psi0)?;
    let model = Model::closed(control_chain.clone(), psi0.repr())?;
    solve_control(&ControlProblem { controlled: &model, initial: psi0, target, grid, reg, options })
}

/// Closed (Liouville) control evolution of `rho0` reproducing the current of
/// an open target.
pub fn invert_open_to_closed(
    control_chain: &ChainSpec,
    rho0: &QuantumState,
    target: &Target,
    grid: &[f64],
    reg: RegularizationSpec,
    options: ControlOptions,
) -> Result<ControlResult> {
    let rho0 = rho0.to_density();
    let model = Model::closed(control_chain.clone(), rho0.repr())?;
    solve_control(&ControlProblem { controlled: &model, initial: &rho0, target, grid, reg, options })
}

/// Dephasing chain driven to follow the field-free unitary evolution of
/// `rho0`. Breakdown is an expected outcome.
pub fn compensate_dephasing(
    chain: &ChainSpec,
    deph: DephasingSpec,
    rho0: &QuantumState,
    grid: &[f64],
    reg: RegularizationSpec,
    options: ControlOptions,
) -> Result<ControlResult> {
    let rho0 = rho0.to_density();
    let target = Target::free(Model::closed(chain.clone(), rho0.repr())?, rho0.clone())?;
    let model = Model::new(crate::spinops::Basis::for_repr(rho0.repr())?, chain.clone(), deph, BathSpec::none())?;
    solve_control(&ControlProblem { controlled: &model, initial: &rho0, target: &target, grid, reg, options })
}

/// Magnetization consequences of a bath-compensating control.
#[derive(Debug, Clone)]
pub struct BathReport {
    /// `(a(t), b(t))` per recorded node.
    pub boundary_oracle: Vec<(f64, f64)>,
    /// `max |m3(x) - m3_target(x)|` over interior sites.
    pub interior_deviation: f64,
    /// `max(|m3(1) - a|, |m3(s) - b|)`.
    pub boundary_deviation: f64,
}

#[derive(Debug, Clone)]
pub struct BathCompensation {
    pub control: ControlResult,
    pub report: BathReport,
}

/// Chain with boundary baths driven to carry the field-free unitary current of
/// `rho0`. Breakdown is an expected outcome.
pub fn compensate_bath(
    chain: &ChainSpec,
    bath: BathSpec,
    rho0: &QuantumState,
    grid: &[f64],
    reg: RegularizationSpec,
    options: ControlOptions,
) -> Result<BathCompensation> {
    if !bath.is_active() {
        return Err(Error::InvalidParameter { name: "epsilon", reason: "bath compensation needs epsilon > 0".into() });
    }
    let rho0 = rho0.to_density();
    let target = Target::free(Model::closed(chain.clone(), rho0.repr())?, rho0.clone())?;
    let model = Model::full(chain.clone(), DephasingSpec::none(), bath)?;
    let control =
        solve_control(&ControlProblem { controlled: &model, initial: &rho0, target: &target, grid, reg, options })?;
    let report = bath_report(&control, bath)?;
    Ok(BathCompensation { control, report })
}

/// Compares the controlled magnetization with the target in the interior and
/// with the boundary oracle at sites `1` and `s`, the target being
/// Hermite-interpolated between recorded nodes.
pub fn bath_report(control: &ControlResult, bath: BathSpec) -> Result<BathReport> {
    let traj = &control.trajectory;
    let s = traj.sites();
    let (Some(m), Some(dm)) = (&control.target_magnetization, &control.target_magnetization_rate) else {
        return Err(Error::InvalidParameter { name: "target", reason: "target magnetization unavailable".into() });
    };
    let interp = |x: usize| {
        let grid = traj.grid.clone();
        move |t: f64| -> f64 {
            if grid.len() == 1 {
                return m[0][x - 1];
            }
            let hi = grid.partition_point(|&v| v <= t).clamp(1, grid.len() - 1);
            let lo = hi - 1;
            hermite(grid[lo], m[lo][x - 1], dm[lo][x - 1], grid[hi], m[hi][x - 1], dm[hi][x - 1], t)
        }
    };
    let first = interp(1);
    let last = interp(s);
    let mut boundary_oracle = Vec::with_capacity(traj.len());
    let mut boundary_deviation: f64 = 0.0;
    let mut interior_deviation: f64 = 0.0;
    let t0 = traj.grid[0];
    for (n, &t) in traj.grid.iter().enumerate() {
        let (a, b) = boundary_oracle_a_b(t - t0, bath.epsilon, bath.mu, &|u| first(u + t0), &|u| last(u + t0))?;
        let row = &traj.magnetization[n];
        boundary_deviation = boundary_deviation.max((row[0] - a).abs()).max((row[s - 1] - b).abs());
        for x in 2..s {
            interior_deviation = interior_deviation.max((row[x - 1] - m[n][x - 1]).abs());
        }
        boundary_oracle.push((a, b));
    }
    Ok(BathReport { boundary_oracle, interior_deviation, boundary_deviation })
}
