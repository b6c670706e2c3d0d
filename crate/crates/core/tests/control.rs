use std::sync::Arc;

use spinvl::dynamics::{
    build_engineered, propagate_lindblad, propagate_unitary, uniform_grid, BathSpec, DephasingSpec, FnField, Model,
    PropagationOptions, QuantumState, StateRecording, ZeroField,
};
use spinvl::spinops::{Basis, ChainSpec};
use spinvl::vlsolver::{
    compensate_bath, compensate_dephasing, invert_closed, invert_open_to_closed, ControlOptions, ControlResult, Gauge,
    RegularizationSpec, SharedField, Stepping, Target,
};

fn uniform(basis: &Basis) -> QuantumState {
    QuantumState::uniform_superposition(basis).unwrap()
}

fn reference_field() -> SharedField {
    Arc::new(FnField(|t: f64, out: &mut [f64]| {
        out.fill(0.0);
        out[1] = 0.3 * t.sin();
    }))
}

fn reference_run(opts: ControlOptions, alpha: f64) -> ControlResult {
    let chain = ChainSpec::homogeneous(4, -0.25, 0.1).unwrap();
    let basis = Basis::full(4).unwrap();
    let psi = uniform(&basis);
    let model = Model::closed(chain.clone(), basis.repr()).unwrap();
    let target = Target::reference(model, psi.clone(), reference_field()).unwrap();
    let grid = uniform_grid(4.0, 1e-2).unwrap();
    let reg = RegularizationSpec::default().with_alpha(alpha).unwrap();
    invert_closed(&chain, &psi, &target, &grid, reg, opts).unwrap()
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

#[test]
fn recovers_reference_field_gradient() {
    let res = reference_run(ControlOptions::default(), 0.0);
    assert!(res.status.is_completed());
    for (t, g) in res.trajectory.grid.iter().zip(&res.gradient) {
        let h2 = 0.3 * t.sin();
        let want = [h2, -h2, 0.0];
        for x in 0..3 {
            assert!((g[x] - want[x]).abs() < 1e-6, "t = {t}, bond {}: {} vs {}", x + 1, g[x], want[x]);
        }
    }
    assert!(res.max_magnetization_deviation(1..=4).unwrap() < 1e-8);
}

#[test]
fn initial_node_is_consistent_without_regularization() {
    let res = reference_run(ControlOptions::default(), 0.0);
    assert!(res.tracking_error[0] <= 1e-10, "{}", res.tracking_error[0]);
}

#[test]
fn gauge_choice_only_shifts_the_field() {
    let first = reference_run(ControlOptions::default(), 1e-4);
    let last = reference_run(ControlOptions { gauge: Gauge::LastSite, ..Default::default() }, 1e-4);
    assert!(max_diff(&first.trajectory.magnetization, &last.trajectory.magnetization) < 1e-8);
    assert!(max_diff(&first.trajectory.current, &last.trajectory.current) < 1e-8);
    for (a, b) in first.field.values().iter().zip(last.field.values()) {
        assert_eq!(a[0], 0.0);
        assert_eq!(b[3], 0.0);
        let shift = a[0] - b[0];
        assert!(a.iter().zip(b).all(|(u, v)| (u - v - shift).abs() < 1e-8));
    }
}

#[test]
fn predictor_corrector_tracks_at_coarser_accuracy() {
    let res = reference_run(ControlOptions { stepping: Stepping::PredictorCorrector, ..Default::default() }, 1e-4);
    assert!(res.status.is_completed());
    assert!(res.max_tracking_error() < 1e-4, "{}", res.max_tracking_error());
    assert!(res.max_magnetization_deviation(1..=4).unwrap() < 1e-4);
}

#[test]
fn runs_are_bit_reproducible() {
    let a = reference_run(ControlOptions::default(), 1e-4);
    let b = reference_run(ControlOptions::default(), 1e-4);
    assert_eq!(a.field, b.field);
    assert_eq!(a.trajectory.magnetization, b.trajectory.magnetization);
}

#[test]
fn compensating_zero_dephasing_needs_no_field() {
    let basis = Basis::full(3).unwrap();
    let chain = ChainSpec::homogeneous(3, -0.25, 0.0).unwrap();
    let grid = uniform_grid(5.0, 1e-2).unwrap();
    let res = compensate_dephasing(
        &chain,
        DephasingSpec::new(0.0).unwrap(),
        &uniform(&basis),
        &grid,
        RegularizationSpec::default(),
        ControlOptions::default(),
    )
    .unwrap();
    assert!(res.status.is_completed());
    assert!(res.field.values().iter().flatten().all(|h| h.abs() < 1e-8));
}

fn mimic(basis: Basis, eta: f64, t_end: f64) -> (ControlResult, Vec<Vec<f64>>) {
    let chain = ChainSpec::homogeneous(basis.sites(), -0.25, 0.0).unwrap();
    let rho = uniform(&basis).to_density();
    let deph = Model::new(basis, chain.clone(), DephasingSpec::new(eta).unwrap(), BathSpec::none()).unwrap();
    let grid = uniform_grid(t_end, 1e-2).unwrap();
    let opts = PropagationOptions { record_states: StateRecording::None, ..Default::default() };
    let traj = propagate_lindblad(&deph, &rho, &ZeroField, &grid, &opts).unwrap();
    let target = Target::recorded(&traj).unwrap();
    let res =
        invert_open_to_closed(&chain, &rho, &target, &grid, RegularizationSpec::default(), ControlOptions::default())
            .unwrap();
    (res, traj.current)
}

#[test]
fn mimicking_zero_dephasing_needs_no_field() {
    let (res, _) = mimic(Basis::sector(4, 1).unwrap(), 0.0, 5.0);
    assert!(res.status.is_completed());
    assert!(res.field.values().iter().flatten().all(|h| h.abs() < 1e-8));
}

#[test]
fn closed_chain_reproduces_dephased_current() {
    let (res, target) = mimic(Basis::full(3).unwrap(), 0.01, 10.0);
    assert!(res.status.is_completed());
    assert!(max_diff(&res.trajectory.current, &target) < 1e-5);
}

#[test]
fn homogeneous_chain_lacks_capacity_for_engineered_current() {
    // In the one-excitation sector |j(1)| <= 8|J| |c1||c2| with |c_x|^2 = (1 + m3(x))/2,
    // and exact tracking forces the controlled m3 onto the target's. At the
    // bound <T(1)> vanishes, so the inversion must stop no later than there.
    let s = 6;
    let basis = Basis::full(s).unwrap();
    let model = Model::closed(build_engineered(s).unwrap(), basis.repr()).unwrap();
    let grid = uniform_grid(6.0, 1e-2).unwrap();
    let opts = PropagationOptions { record_states: StateRecording::None, ..Default::default() };
    let traj = propagate_unitary(&model, &uniform(&basis), &ZeroField, &grid, &opts).unwrap();
    let j_control = 0.25;
    let excess: Vec<f64> = traj
        .current
        .iter()
        .zip(&traj.magnetization)
        .map(|(j, m)| {
            let (n1, n2) = ((1.0 + m[0]) / 2.0, (1.0 + m[1]) / 2.0);
            j[1].abs() - 8.0 * j_control * (n1 * n2).sqrt()
        })
        .collect();
    let first = excess.iter().position(|&e| e > 0.0).expect("target stays within capacity");
    assert!(excess[..first].iter().all(|&e| e <= 0.0));

    let control = ChainSpec::homogeneous(s, -j_control, 0.0).unwrap();
    let target = Target::free(model, uniform(&basis)).unwrap();
    let res = invert_closed(
        &control,
        &uniform(&basis),
        &target,
        &grid,
        RegularizationSpec::default(),
        ControlOptions::default(),
    )
    .unwrap();
    let b = res.status.breakdown().expect("inversion should break down");
    assert!(b.t <= grid[first] && b.t > 1.0, "breakdown at {} vs capacity at {}", b.t, grid[first]);
    assert_eq!(b.bond, 1);
}

#[test]
fn bath_compensation_stops_and_tracks_until_then() {
    let basis = Basis::full(3).unwrap();
    let chain = ChainSpec::homogeneous(3, -0.25, 0.0).unwrap();
    let bath = BathSpec::new(0.1, -1.0).unwrap();
    let grid = uniform_grid(6.0, 1e-2).unwrap();
    let out = compensate_bath(
        &chain,
        bath,
        &uniform(&basis),
        &grid,
        RegularizationSpec::default(),
        ControlOptions::default(),
    )
    .unwrap();
    let traj = &out.control.trajectory;
    assert!(out.control.status.breakdown().is_some());
    assert!(out.report.interior_deviation < 1e-5);
    assert!(out.report.boundary_deviation < 1e-4);
    for (m, dm) in traj.magnetization.iter().zip(&traj.magnetization_rate) {
        let total: f64 = dm.iter().sum();
        let boundary = -4.0 * bath.epsilon * (m[0] + bath.mu) - 4.0 * bath.epsilon * (m[2] - bath.mu);
        assert!((total - boundary).abs() < 1e-8);
    }
}
