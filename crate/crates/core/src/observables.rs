//! Expectation fields, equation-of-motion residuals and closed-form oracles.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{lindblad_term, BathSpec, DephasingSpec, QuantumState, StateData, Trajectory};
use crate::error::{Error, Result};
use crate::spinops::{tau_terms, Axis, Basis, CMatrix, CVector, ChainSpec, Factor, Repr, Term, C64};

pub const IMAG_TOL: f64 = 1e-10;

fn real(z: C64) -> Result<f64> {
    if z.im.abs() > IMAG_TOL {
        return Err(Error::ImaginaryExpectation { imag: z.im });
    }
    Ok(z.re)
}

/// `⟨σ3(x)⟩`.
pub fn magnetization(state: &QuantumState, x: usize) -> Result<f64> {
    let basis = Basis::for_repr(state.repr())?;
    real(state.expect(&basis.pauli(Axis::Z, x)?)?)
}

/// `⟨j(x)⟩` for `x = 0..=s`.
pub fn current(state: &QuantumState, x: usize, chain: &ChainSpec) -> Result<f64> {
    let basis = Basis::for_repr(state.repr())?;
    real(state.expect(&basis.current(x, chain)?)?)
}

/// `⟨T(x)⟩ = 2J(x)⟨τ(x, x+1)⟩`.
pub fn kinetic(state: &QuantumState, x: usize, chain: &ChainSpec) -> Result<f64> {
    let basis = Basis::for_repr(state.repr())?;
    real(state.expect(&basis.kinetic(x, chain)?)?)
}

/// Which sites a [`FieldSeries`] column refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteRange {
    /// `1..=s`
    Sites,
    /// `0..=s`
    BondsWithEnds,
    /// `1..=s-1`
    Bonds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSeries {
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub range: SiteRange,
}

impl FieldSeries {
    pub fn magnetization(traj: &Trajectory) -> Self {
        Self { grid: traj.grid.clone(), values: traj.magnetization.clone(), range: SiteRange::Sites }
    }

    pub fn current(traj: &Trajectory) -> Self {
        Self { grid: traj.grid.clone(), values: traj.current.clone(), range: SiteRange::BondsWithEnds }
    }

    pub fn kinetic(traj: &Trajectory) -> Self {
        Self { grid: traj.grid.clone(), values: traj.kinetic.clone(), range: SiteRange::Bonds }
    }

    pub fn field(traj: &Trajectory) -> Self {
        Self { grid: traj.grid.clone(), values: traj.field.clone(), range: SiteRange::Sites }
    }

    pub fn first_site(&self) -> usize {
        match self.range {
            SiteRange::BondsWithEnds => 0,
            SiteRange::Sites | SiteRange::Bonds => 1,
        }
    }

    /// Value at node `n` and site (or bond) `x`.
    pub fn at(&self, n: usize, x: usize) -> Option<f64> {
        let i = x.checked_sub(self.first_site())?;
        self.values.get(n)?.get(i).copied()
    }

    /// Largest absolute pointwise difference to another series on the same grid.
    pub fn max_deviation(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()))
            .fold(0.0, f64::max)
    }
}

/// Worst residual of one equation over a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualReport {
    pub max: f64,
    pub worst_time: f64,
    pub worst_site: usize,
}

impl ResidualReport {
    fn update(&mut self, r: f64, t: f64, x: usize) {
        let r = r.abs();
        if r > self.max || r.is_nan() {
            *self = Self { max: r, worst_time: t, worst_site: x };
        }
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max <= tol
    }
}

/// Residual of `dm3/dt + j(x) - j(x-1) + 4ε(δ_{1,x}(m3 + μ) + δ_{s,x}(m3 - μ))`,
/// with `dm3/dt` from the exact right-hand side recorded on the trajectory.
pub fn continuity_residual(traj: &Trajectory, bath: BathSpec) -> ResidualReport {
    let s = traj.sites();
    let mut report = ResidualReport::default();
    for (n, &t) in traj.grid.iter().enumerate() {
        let m = &traj.magnetization[n];
        let j = &traj.current[n];
        let dm = &traj.magnetization_rate[n];
        for x in 1..=s {
            let mut r = dm[x - 1] + j[x] - j[x - 1];
            if x == 1 {
                r += 4.0 * bath.epsilon * (m[0] + bath.mu);
            }
            if x == s {
                r += 4.0 * bath.epsilon * (m[s - 1] - bath.mu);
            }
            report.update(r, t, x);
        }
    }
    report
}

/// Residual between the recorded exact `dj/dt` and [`current_eom_rhs`].
pub fn current_eom_residual(
    traj: &Trajectory,
    chain: &ChainSpec,
    deph: DephasingSpec,
    bath: BathSpec,
) -> Result<ResidualReport> {
    let mut report = ResidualReport::default();
    for (n, state) in &traj.states {
        let t = traj.grid[*n];
        for x in 1..traj.sites() {
            let analytic = current_eom_rhs(state, x, chain, &traj.field[*n], deph, bath)?;
            report.update(analytic - traj.current_rate[*n][x - 1], t, x);
        }
    }
    Ok(report)
}

fn sz_tau(coeff: f64, z: usize, x: usize, y: usize) -> Vec<Term> {
    tau_terms(coeff, x, y)
        .into_iter()
        .map(|mut term| {
            term.factors.insert(0, (Factor::Pauli(Axis::Z), z));
            term
        })
        .collect()
}

/// `dj(x)/dt` from the analytic expansion of `-i[j(x), H]` plus dissipative
/// damping `-4η j(x) - 2ε(δ_{1,x} + δ_{s-1,x}) j(x)`:
///
/// ```text
/// 8J(x) ( J(x)(σ3(x) - σ3(x+1))
///       + J(x-1) σ3(x) τ(x-1,x+1) - J(x+1) σ3(x+1) τ(x,x+2)
///       + K(x+1) σ3(x+2) τ(x,x+1) - K(x-1) σ3(x-1) τ(x,x+1)
///       + (h(x+1) - h(x)) τ(x,x+1) )
/// ```
pub fn current_eom_rhs(
    state: &QuantumState,
    x: usize,
    chain: &ChainSpec,
    h_row: &[f64],
    deph: DephasingSpec,
    bath: BathSpec,
) -> Result<f64> {
    let s = chain.sites();
    if state.repr().sites() != s {
        return Err(Error::ReprMismatch(format!("state on {} vs chain of {s} sites", state.repr())));
    }
    if x == 0 || x >= s {
        return Err(Error::BondOutOfRange { bond: x, min: 1, max: s - 1 });
    }
    if h_row.len() != s {
        return Err(Error::LengthMismatch { expected: s, got: h_row.len() });
    }
    let basis = Basis::for_repr(state.repr())?;
    let xi = x as isize;
    let (jx, jl, jr) = (chain.j(xi), chain.j(xi - 1), chain.j(xi + 1));
    let (kl, kr) = (chain.k(xi - 1), chain.k(xi + 1));
    let mut terms =
        vec![Term::new(jx, [(Factor::Pauli(Axis::Z), x)]), Term::new(-jx, [(Factor::Pauli(Axis::Z), x + 1)])];
    terms.extend(tau_terms(h_row[x] - h_row[x - 1], x, x + 1));
    if x >= 2 {
        terms.extend(sz_tau(jl, x, x - 1, x + 1));
        terms.extend(sz_tau(-kl, x - 1, x, x + 1));
    }
    if x + 2 <= s {
        terms.extend(sz_tau(-jr, x + 1, x, x + 2));
        terms.extend(sz_tau(kr, x + 2, x, x + 1));
    }
    let coherent = 8.0 * jx * real(state.expect(&basis.operator(&terms)?)?)?;
    let j = current(state, x, chain)?;
    let edges = (x == 1) as u8 + (x == s - 1) as u8;
    Ok(coherent - 4.0 * deph.eta * j - 2.0 * bath.epsilon * edges as f64 * j)
}

/// `(Tr σ3(x)(D_{L1} + D_{L2})(ρ), Tr σ3(x)(D_{L3} + D_{L4})(ρ))` for the
/// left and right boundary baths.
pub fn bath_trace_identities(rho: &QuantumState, x: usize, eps: f64, mu: f64) -> Result<(f64, f64)> {
    let Repr::Full { sites } = rho.repr() else {
        return Err(Error::ReprMismatch(format!("bath identities need the full space, got {}", rho.repr())));
    };
    let bath = BathSpec::new(eps, mu)?;
    let basis = Basis::full(sites)?;
    let r = rho.density_matrix()?;
    let sz = basis.pauli(Axis::Z, x)?;
    let gens = bath.generators(sites);
    let side = |range: std::ops::Range<usize>| -> Result<f64> {
        let mut d = CMatrix::zeros(r.nrows(), r.ncols());
        for &(w, ladder, site) in &gens[range] {
            let l = basis.ladder(ladder, site)?.into_matrix() * C64::new(w, 0.0);
            d += lindblad_term(&l, r);
        }
        real((sz.matrix() * d).trace())
    };
    Ok((side(0..2)?, side(2..4)?))
}

/// Closed-form `m3(x, t)`, `x = 1, 2, 3`, for the three-site chain with
/// `J = -1/4`, `K = h = 0`, started from the uniform single-excitation
/// superposition.
pub fn s3_closed_targets(t: f64) -> [f64; 3] {
    let c = (2f64.sqrt() * t).cos();
    let edge = -0.5 + c / 6.0;
    [edge, -c / 3.0, edge]
}

pub const QUADRATURE_TOL: f64 = 1e-10;

/// `∫_a^b f` by double-exponential quadrature to [`QUADRATURE_TOL`].
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let out = quadrature::double_exponential::integrate(f, a, b, QUADRATURE_TOL);
    if !out.integral.is_finite() || out.error_estimate > QUADRATURE_TOL * out.integral.abs().max(1.0) {
        return Err(Error::Quadrature { a, b, error: out.error_estimate });
    }
    Ok(out.integral)
}

/// Boundary magnetizations that a current-matching control must produce under
/// the baths:
///
/// ```text
/// a(t) = m1(t) - μ(1 - e^{-4εt}) - 4ε e^{-4εt} ∫_0^t m1(τ) e^{4ετ} dτ
/// b(t) = ms(t) + μ(1 - e^{-4εt}) - 4ε e^{-4εt} ∫_0^t ms(τ) e^{4ετ} dτ
/// ```
///
/// with `m1`, `ms` the target magnetizations of sites `1` and `s`.
pub fn boundary_oracle_a_b(
    t: f64,
    eps: f64,
    mu: f64,
    m_first: &dyn Fn(f64) -> f64,
    m_last: &dyn Fn(f64) -> f64,
) -> Result<(f64, f64)> {
    let decay = (-4.0 * eps * t).exp();
    let a = m_first(t)
        - mu * (1.0 - decay)
        - 4.0 * eps * decay * integrate(|tau| m_first(tau) * (4.0 * eps * tau).exp(), 0.0, t)?;
    let b = m_last(t) + mu * (1.0 - decay)
        - 4.0 * eps * decay * integrate(|tau| m_last(tau) * (4.0 * eps * tau).exp(), 0.0, t)?;
    Ok((a, b))
}

/// `GG†/Tr(GG†)` with `G` a matrix of independent complex standard normals.
pub fn random_density_matrix<R: Rng + ?Sized>(repr: Repr, rng: &mut R) -> QuantumState {
    let d = repr.dim();
    let g = CMatrix::from_fn(d, d, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let mut rho = &g * g.adjoint();
    let tr = rho.trace();
    rho /= tr;
    // enforce exact Hermiticity after rounding
    let rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
    QuantumState::from_data_unchecked(repr, StateData::Density(rho))
}

/// Normalized vector of independent complex standard normals.
pub fn random_pure_state<R: Rng + ?Sized>(repr: Repr, rng: &mut R) -> QuantumState {
    let v = CVector::from_fn(repr.dim(), |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let n = v.norm();
    QuantumState::from_data_unchecked(repr, StateData::Pure(v.unscale(n)))
}
