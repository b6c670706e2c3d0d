//! Hamiltonians, Lindblad generators and time propagation.
//!
//! The dissipator uses the normalization
//! `D_L(ρ) = [Lρ, L†] + [L, ρL†] = 2LρL† - L†Lρ - ρL†L`,
//! twice the usual GKSL form. Every damping rate quoted elsewhere in the crate
//! (`-4η`, `-4ε`, `-2ε`) is relative to this normalization.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::ode::{DormandPrince, IntegratorOptions};
use crate::spinops::{
    hermiticity_defect, tau_terms, trace_product, Axis, Basis, BasisState, CMatrix, CVector, ChainSpec, Factor, Ladder,
    Operator, Repr, Term, C64, I, ONE,
};

/// Per-site dephasing with generators `√(η/2) σ3(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DephasingSpec {
    pub eta: f64,
}

impl DephasingSpec {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter { name: "eta", reason: format!("must be finite and >= 0, got {eta}") });
        }
        Ok(Self { eta })
    }

    pub fn none() -> Self {
        Self { eta: 0.0 }
    }

    pub fn is_active(&self) -> bool {
        self.eta > 0.0
    }
}

/// Boundary baths: generators
/// `√(ε(1-μ)) σ+(1)`, `√(ε(1+μ)) σ-(1)`, `√(ε(1+μ)) σ+(s)`, `√(ε(1-μ)) σ-(s)`.
/// `epsilon = 0` switches the baths off.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BathSpec {
    pub epsilon: f64,
    pub mu: f64,
}

impl BathSpec {
    pub fn new(epsilon: f64, mu: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                reason: format!("must be finite and >= 0, got {epsilon}"),
            });
        }
        if !(-1.0..=1.0).contains(&mu) {
            return Err(Error::InvalidParameter { name: "mu", reason: format!("must lie in [-1, 1], got {mu}") });
        }
        Ok(Self { epsilon, mu })
    }

    pub fn none() -> Self {
        Self { epsilon: 0.0, mu: 0.0 }
    }

    pub fn is_active(&self) -> bool {
        self.epsilon > 0.0
    }

    /// `(weight, ladder, site)` for the four generators, in order `L1..L4`.
    pub fn generators(&self, sites: usize) -> [(f64, Ladder, usize); 4] {
        let (e, m) = (self.epsilon, self.mu);
        [
            ((e * (1.0 - m)).max(0.0).sqrt(), Ladder::Raise, 1),
            ((e * (1.0 + m)).max(0.0).sqrt(), Ladder::Lower, 1),
            ((e * (1.0 + m)).max(0.0).sqrt(), Ladder::Raise, sites),
            ((e * (1.0 - m)).max(0.0).sqrt(), Ladder::Lower, sites),
        ]
    }
}

pub(crate) fn h0_terms(chain: &ChainSpec) -> Vec<Term> {
    let mut terms = Vec::new();
    for x in 1..chain.sites() {
        let (j, k) = (chain.j(x as isize), chain.k(x as isize));
        if j != 0.0 {
            // σ1σ1 + σ2σ2 = 2τ
            terms.extend(tau_terms(2.0 * j, x, x + 1));
        }
        if k != 0.0 {
            terms.push(Term::new(k, [(Factor::Pauli(Axis::Z), x), (Factor::Pauli(Axis::Z), x + 1)]));
        }
    }
    terms
}

/// `H0(J, K) = Σ J(x)(σ1σ1 + σ2σ2) + Σ K(x)σ3σ3` on the full space.
pub fn build_h0(chain: &ChainSpec) -> Result<Operator> {
    build_h0_in(&Basis::full(chain.sites())?, chain)
}

pub fn build_h0_in(basis: &Basis, chain: &ChainSpec) -> Result<Operator> {
    basis.check_chain(chain)?;
    basis.operator(&h0_terms(chain))
}

/// Engineered XY couplings `J(x) = -π√(x(s-x))/(4s)`, `K = 0`: perfect
/// end-to-end transfer at `t = s`, period `2s`.
pub fn build_engineered(sites: usize) -> Result<ChainSpec> {
    let s = sites as f64;
    let hopping =
        (1..sites).map(|x| -std::f64::consts::PI * ((x as f64) * (s - x as f64)).sqrt() / (4.0 * s)).collect();
    ChainSpec::new(sites, hopping, vec![0.0; sites.saturating_sub(1)])
}

/// `H0 + Σ h(x)σ3(x)` on the full space.
pub fn hamiltonian_at(chain: &ChainSpec, h_row: &[f64]) -> Result<Operator> {
    let model = Model::new(Basis::full(chain.sites())?, chain.clone(), DephasingSpec::none(), BathSpec::none())?;
    Operator::new(model.repr(), model.hamiltonian(h_row)?)
}

/// Dissipator `D^deph(ρ) + D^bath(ρ)` applied to a density matrix.
pub fn dissipator_apply(rho: &QuantumState, deph: DephasingSpec, bath: BathSpec) -> Result<CMatrix> {
    let sites = rho.repr().sites();
    if sites < 2 {
        return Err(Error::InvalidParameter { name: "sites", reason: "need at least 2 sites".into() });
    }
    let chain = ChainSpec::homogeneous(sites, 0.0, 0.0)?;
    let model = Model::new(Basis::for_repr(rho.repr())?, chain, deph, bath)?;
    Ok(model.dissipator(rho.density_matrix()?))
}

/// `i[ρ, H] + D(ρ)`.
pub fn lindblad_rhs(
    rho: &QuantumState,
    chain: &ChainSpec,
    h_row: &[f64],
    deph: DephasingSpec,
    bath: BathSpec,
) -> Result<CMatrix> {
    if rho.repr().sites() != chain.sites() {
        return Err(Error::ReprMismatch(format!("state on {} vs chain of {} sites", rho.repr(), chain.sites())));
    }
    let model = Model::new(Basis::for_repr(rho.repr())?, chain.clone(), deph, bath)?;
    model.lindblad_rhs(rho.density_matrix()?, h_row)
}

/// Single Lindblad term `2LρL† - L†Lρ - ρL†L`.
pub fn lindblad_term(l: &CMatrix, rho: &CMatrix) -> CMatrix {
    let ld = l.adjoint();
    let ldl = &ld * l;
    (l * rho * &ld) * C64::new(2.0, 0.0) - &ldl * rho - rho * &ldl
}

/// Cached operators of one chain, dissipator and representation.
#[derive(Debug, Clone)]
pub struct Model {
    basis: Basis,
    chain: ChainSpec,
    deph: DephasingSpec,
    bath: BathSpec,
    h0: CMatrix,
    sigma3: Vec<Vec<f64>>,
    currents: Vec<CMatrix>,
    taus: Vec<CMatrix>,
    drift: Vec<CMatrix>,
    bath_ops: Vec<CMatrix>,
    dephasing_rates: Option<CMatrix>,
}

impl Model {
    pub fn new(basis: Basis, chain: ChainSpec, deph: DephasingSpec, bath: BathSpec) -> Result<Self> {
        basis.check_chain(&chain)?;
        let s = chain.sites();
        if basis.repr().is_sector() && bath.is_active() {
            return Err(Error::BathInSector);
        }
        let h0 = build_h0_in(&basis, &chain)?.into_matrix();
        let sigma3 = (1..=s).map(|x| basis.sigma3_diagonal(x)).collect::<Result<Vec<_>>>()?;
        let currents =
            (1..s).map(|x| basis.current(x, &chain).map(Operator::into_matrix)).collect::<Result<Vec<_>>>()?;
        let taus = (1..s).map(|x| basis.tau(x, x + 1).map(Operator::into_matrix)).collect::<Result<Vec<_>>>()?;
        // -i[j(x), H0]
        let drift = currents.iter().map(|j| (j * &h0 - &h0 * j) * (-I)).collect();
        let mut bath_ops = Vec::new();
        if bath.is_active() {
            for (w, ladder, x) in bath.generators(s) {
                if w > 0.0 {
                    bath_ops.push(basis.ladder(ladder, x)?.into_matrix() * C64::new(w, 0.0));
                }
            }
        }
        let dephasing_rates = deph.is_active().then(|| {
            let dim = basis.dim();
            let masks: Vec<u64> = (0..dim).map(|i| basis.mask(i)).collect();
            CMatrix::from_fn(dim, dim, |i, j| {
                C64::new(-2.0 * deph.eta * (masks[i] ^ masks[j]).count_ones() as f64, 0.0)
            })
        });
        Ok(Self { basis, chain, deph, bath, h0, sigma3, currents, taus, drift, bath_ops, dephasing_rates })
    }

    pub fn full(chain: ChainSpec, deph: DephasingSpec, bath: BathSpec) -> Result<Self> {
        Self::new(Basis::full(chain.sites())?, chain, deph, bath)
    }

    pub fn sector(chain: ChainSpec, excitations: usize, deph: DephasingSpec) -> Result<Self> {
        Self::new(Basis::sector(chain.sites(), excitations)?, chain, deph, BathSpec::none())
    }

    pub fn closed(chain: ChainSpec, repr: Repr) -> Result<Self> {
        Self::new(Basis::for_repr(repr)?, chain, DephasingSpec::none(), BathSpec::none())
    }

    /// Same chain and representation with different dissipators.
    pub fn with_dissipation(&self, deph: DephasingSpec, bath: BathSpec) -> Result<Self> {
        Self::new(self.basis.clone(), self.chain.clone(), deph, bath)
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn repr(&self) -> Repr {
        self.basis.repr()
    }

    pub fn sites(&self) -> usize {
        self.chain.sites()
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn chain(&self) -> &ChainSpec {
        &self.chain
    }

    pub fn dephasing(&self) -> DephasingSpec {
        self.deph
    }

    pub fn bath(&self) -> BathSpec {
        self.bath
    }

    pub fn is_closed(&self) -> bool {
        !self.deph.is_active() && !self.bath.is_active()
    }

    pub fn h0(&self) -> &CMatrix {
        &self.h0
    }

    /// `σ3(x)` diagonal, `x = 1..=s`.
    pub fn sigma3(&self, x: usize) -> &[f64] {
        &self.sigma3[x - 1]
    }

    /// `j(x)` for bonds `1..=s-1`.
    pub fn current_op(&self, bond: usize) -> &CMatrix {
        &self.currents[bond - 1]
    }

    /// `τ(x, x+1)` for bonds `1..=s-1`.
    pub fn tau_op(&self, bond: usize) -> &CMatrix {
        &self.taus[bond - 1]
    }

    /// `-i[j(x), H0]`, Hermitian.
    pub fn current_drift_op(&self, bond: usize) -> &CMatrix {
        &self.drift[bond - 1]
    }

    fn check_field(&self, h_row: &[f64]) -> Result<()> {
        if h_row.len() != self.sites() {
            return Err(Error::LengthMismatch { expected: self.sites(), got: h_row.len() });
        }
        Ok(())
    }

    /// Diagonal of `Σ h(x)σ3(x)`.
    pub fn field_diagonal(&self, h_row: &[f64]) -> Result<Vec<f64>> {
        self.check_field(h_row)?;
        let mut d = vec![0.0; self.dim()];
        for (h, s3) in h_row.iter().zip(&self.sigma3) {
            if *h != 0.0 {
                for (di, si) in d.iter_mut().zip(s3) {
                    *di += h * si;
                }
            }
        }
        Ok(d)
    }

    pub fn hamiltonian(&self, h_row: &[f64]) -> Result<CMatrix> {
        let d = self.field_diagonal(h_row)?;
        let mut h = self.h0.clone();
        for (i, di) in d.iter().enumerate() {
            h[(i, i)] += *di;
        }
        Ok(h)
    }

    pub fn dissipator(&self, rho: &CMatrix) -> CMatrix {
        let mut out = match &self.dephasing_rates {
            Some(rates) => rho.component_mul(rates),
            None => CMatrix::zeros(rho.nrows(), rho.ncols()),
        };
        for l in &self.bath_ops {
            out += lindblad_term(l, rho);
        }
        out
    }

    /// Dephasing part only.
    pub fn dephasing_dissipator(&self, rho: &CMatrix) -> CMatrix {
        match &self.dephasing_rates {
            Some(rates) => rho.component_mul(rates),
            None => CMatrix::zeros(rho.nrows(), rho.ncols()),
        }
    }

    /// Bath part only.
    pub fn bath_dissipator(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
        for l in &self.bath_ops {
            out += lindblad_term(l, rho);
        }
        out
    }

    /// `i[ρ, H] + D(ρ)`.
    pub fn lindblad_rhs(&self, rho: &CMatrix, h_row: &[f64]) -> Result<CMatrix> {
        if rho.nrows() != self.dim() || rho.ncols() != self.dim() {
            return Err(Error::ReprMismatch(format!(
                "{}x{} density matrix on {}",
                rho.nrows(),
                rho.ncols(),
                self.repr()
            )));
        }
        let d = self.field_diagonal(h_row)?;
        let mut out = self.dissipator(rho);
        self.add_commutator(rho, &d, &mut out);
        Ok(out)
    }

    // out += i(ρH - Hρ) with H = H0 + diag(d)
    fn add_commutator(&self, rho: &CMatrix, d: &[f64], out: &mut CMatrix) {
        let comm = rho * &self.h0 - &self.h0 * rho;
        let n = self.dim();
        for j in 0..n {
            for i in 0..n {
                let c = comm[(i, j)] + rho[(i, j)] * (d[j] - d[i]);
                out[(i, j)] += C64::new(-c.im, c.re);
            }
        }
    }

    /// `-iHψ`.
    pub fn schrodinger_rhs(&self, psi: &CVector, h_row: &[f64]) -> Result<CVector> {
        if psi.len() != self.dim() {
            return Err(Error::ReprMismatch(format!("state of length {} on {}", psi.len(), self.repr())));
        }
        let d = self.field_diagonal(h_row)?;
        let mut out = &self.h0 * psi;
        for i in 0..out.len() {
            out[i] += psi[i] * d[i];
        }
        Ok(out * (-I))
    }

    /// Time derivative of the state under field `h_row`.
    pub fn state_rhs(&self, state: &QuantumState, h_row: &[f64]) -> Result<StateData> {
        self.check_state(state)?;
        self.data_rhs(state.data(), h_row)
    }

    pub(crate) fn data_rhs(&self, state: &StateData, h_row: &[f64]) -> Result<StateData> {
        match state {
            StateData::Pure(psi) => {
                if !self.is_closed() {
                    return Err(Error::InvalidParameter {
                        name: "state",
                        reason: "pure states only evolve under closed dynamics".into(),
                    });
                }
                Ok(StateData::Pure(self.schrodinger_rhs(psi, h_row)?))
            }
            StateData::Density(rho) => Ok(StateData::Density(self.lindblad_rhs(rho, h_row)?)),
        }
    }

    pub fn check_state(&self, state: &QuantumState) -> Result<()> {
        if state.repr() != self.repr() {
            return Err(Error::ReprMismatch(format!("state on {} vs model on {}", state.repr(), self.repr())));
        }
        Ok(())
    }

    /// `⟨σ3(x)⟩`, `⟨j(x)⟩` for `x = 0..=s` and `⟨T(x)⟩`.
    pub fn observables(&self, state: &StateData) -> Observables {
        let s = self.sites();
        let m3 = (1..=s).map(|x| diag_expectation(self.sigma3(x), state)).collect();
        let mut current = vec![0.0; s + 1];
        for x in 1..s {
            current[x] = expectation(self.current_op(x), state).re;
        }
        let kinetic = (1..s).map(|x| 2.0 * self.chain.j(x as isize) * expectation(self.tau_op(x), state).re).collect();
        Observables { magnetization: m3, current, kinetic }
    }

    /// `d⟨σ3(x)⟩/dt` and `d⟨j(x)⟩/dt` from an exact right-hand side `rate`.
    pub fn rates(&self, state: &StateData, rate: &StateData) -> Rates {
        let s = self.sites();
        let mut magnetization = Vec::with_capacity(s);
        let mut current = Vec::with_capacity(s.saturating_sub(1));
        match (state, rate) {
            (StateData::Pure(psi), StateData::Pure(dpsi)) => {
                for x in 1..=s {
                    let d = self.sigma3(x);
                    let v: f64 = (0..psi.len()).map(|i| 2.0 * d[i] * (psi[i].conj() * dpsi[i]).re).sum();
                    magnetization.push(v);
                }
                for x in 1..s {
                    current.push(2.0 * psi.dotc(&(self.current_op(x) * dpsi)).re);
                }
            }
            (_, StateData::Density(r)) => {
                for x in 1..=s {
                    let d = self.sigma3(x);
                    magnetization.push((0..r.nrows()).map(|i| d[i] * r[(i, i)].re).sum());
                }
                for x in 1..s {
                    current.push(trace_product(self.current_op(x), r).re);
                }
            }
            _ => unreachable!("rate kind follows state kind"),
        }
        Rates { magnetization, current }
    }

    /// Uniform superposition `(1/√s) Σ |x⟩` of single excitations.
    pub fn uniform_superposition(&self) -> Result<QuantumState> {
        QuantumState::uniform_superposition(&self.basis)
    }
}

pub(crate) fn diag_expectation(d: &[f64], state: &StateData) -> f64 {
    match state {
        StateData::Pure(psi) => psi.iter().zip(d).map(|(a, w)| a.norm_sqr() * w).sum(),
        StateData::Density(rho) => d.iter().enumerate().map(|(i, w)| rho[(i, i)].re * w).sum(),
    }
}

pub(crate) fn expectation(op: &CMatrix, state: &StateData) -> C64 {
    match state {
        StateData::Pure(psi) => psi.dotc(&(op * psi)),
        StateData::Density(rho) => trace_product(op, rho),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observables {
    /// `m3(x)`, index `x - 1`.
    pub magnetization: Vec<f64>,
    /// `j(x)`, index `x` from 0 to `s` inclusive.
    pub current: Vec<f64>,
    /// `⟨T(x)⟩`, index `x - 1` for bonds `1..=s-1`.
    pub kinetic: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    /// `dm3(x)/dt`, index `x - 1`.
    pub magnetization: Vec<f64>,
    /// `dj(x)/dt` for bonds `1..=s-1`, index `x - 1`.
    pub current: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateData {
    Pure(CVector),
    Density(CMatrix),
}

impl StateData {
    pub(crate) fn flatten(&self) -> Vec<C64> {
        match self {
            StateData::Pure(v) => v.as_slice().to_vec(),
            StateData::Density(m) => m.as_slice().to_vec(),
        }
    }

    pub(crate) fn like(&self, flat: &[C64]) -> StateData {
        match self {
            StateData::Pure(v) => StateData::Pure(CVector::from_column_slice(&flat[..v.len()])),
            StateData::Density(m) => StateData::Density(CMatrix::from_column_slice(m.nrows(), m.ncols(), flat)),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            StateData::Pure(v) => v.len(),
            StateData::Density(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub const PURE_NORM_TOL: f64 = 1e-10;
pub const DENSITY_HERMITIAN_TOL: f64 = 1e-12;
pub const DENSITY_TRACE_TOL: f64 = 1e-10;
pub const DENSITY_EIGEN_TOL: f64 = 1e-8;

/// Pure state or density matrix on the full space or an excitation sector.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    repr: Repr,
    data: StateData,
}

impl QuantumState {
    pub fn pure(repr: Repr, psi: CVector) -> Result<Self> {
        if psi.len() != repr.dim() {
            return Err(Error::LengthMismatch { expected: repr.dim(), got: psi.len() });
        }
        let norm = psi.norm();
        if (norm - 1.0).abs() > PURE_NORM_TOL {
            return Err(Error::InvalidState(format!("pure state norm {norm} is not 1")));
        }
        Ok(Self { repr, data: StateData::Pure(psi) })
    }

    pub fn density(repr: Repr, rho: CMatrix) -> Result<Self> {
        let dim = repr.dim();
        if rho.nrows() != dim || rho.ncols() != dim {
            return Err(Error::LengthMismatch { expected: dim * dim, got: rho.len() });
        }
        let herm = hermiticity_defect(&rho);
        if herm > DENSITY_HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("density matrix not Hermitian (defect {herm:.3e})")));
        }
        let tr = rho.trace();
        if (tr - ONE).norm() > DENSITY_TRACE_TOL {
            return Err(Error::InvalidState(format!("density matrix trace {tr} is not 1")));
        }
        let min = min_eigenvalue(&rho);
        if min < -DENSITY_EIGEN_TOL {
            return Err(Error::InvalidState(format!("density matrix has eigenvalue {min:.3e}")));
        }
        Ok(Self { repr, data: StateData::Density(rho) })
    }

    pub(crate) fn from_data_unchecked(repr: Repr, data: StateData) -> Self {
        Self { repr, data }
    }

    pub fn basis_state(basis: &Basis, state: &BasisState) -> Result<Self> {
        Self::pure(basis.repr(), basis.vector(state)?)
    }

    /// `(1/√s) Σ_x |x⟩`; needs the full space or the one-excitation sector.
    pub fn uniform_superposition(basis: &Basis) -> Result<Self> {
        let s = basis.sites();
        let amps = vec![C64::new(1.0 / (s as f64).sqrt(), 0.0); s];
        Self::from_single_excitation_amplitudes(basis, &amps)
    }

    /// `Σ_x c_x |x⟩`.
    pub fn from_single_excitation_amplitudes(basis: &Basis, amps: &[C64]) -> Result<Self> {
        let s = basis.sites();
        if amps.len() != s {
            return Err(Error::LengthMismatch { expected: s, got: amps.len() });
        }
        if let Repr::Sector { excitations, .. } = basis.repr() {
            if excitations != 1 {
                return Err(Error::ReprMismatch(format!("single-excitation state in {}", basis.repr())));
            }
        }
        let mut psi = CVector::zeros(basis.dim());
        for (x, a) in (1..=s).zip(amps) {
            psi += basis.vector(&BasisState::single(s, x)?)? * *a;
        }
        Self::pure(basis.repr(), psi)
    }

    pub fn repr(&self) -> Repr {
        self.repr
    }

    pub fn data(&self) -> &StateData {
        &self.data
    }

    pub fn is_pure(&self) -> bool {
        matches!(self.data, StateData::Pure(_))
    }

    pub fn as_pure(&self) -> Option<&CVector> {
        match &self.data {
            StateData::Pure(v) => Some(v),
            StateData::Density(_) => None,
        }
    }

    pub fn density_matrix(&self) -> Result<&CMatrix> {
        match &self.data {
            StateData::Density(m) => Ok(m),
            StateData::Pure(_) => Err(Error::InvalidState("expected a density matrix".into())),
        }
    }

    /// `|ψ⟩⟨ψ|` for pure states, a clone otherwise.
    pub fn to_density(&self) -> Self {
        match &self.data {
            StateData::Pure(psi) => Self { repr: self.repr, data: StateData::Density(psi * psi.adjoint()) },
            StateData::Density(_) => self.clone(),
        }
    }

    /// `⟨A⟩` for a matrix in this state's representation.
    pub fn expect(&self, op: &Operator) -> Result<C64> {
        if op.repr() != self.repr {
            return Err(Error::ReprMismatch(format!("operator on {} vs state on {}", op.repr(), self.repr)));
        }
        Ok(expectation(op.matrix(), &self.data))
    }

    /// Project a full-space state supported on one sector onto that sector.
    pub fn restrict_to_sector(&self, excitations: usize) -> Result<Self> {
        let Repr::Full { sites } = self.repr else {
            return Err(Error::ReprMismatch(format!("expected a full-space state, got {}", self.repr)));
        };
        let full = Basis::full(sites)?;
        let sector = Basis::sector(sites, excitations)?;
        let idx: Vec<usize> = (0..sector.dim()).map(|i| full.index_of_mask(sector.mask(i)).unwrap()).collect();
        let data = match &self.data {
            StateData::Pure(psi) => StateData::Pure(CVector::from_iterator(idx.len(), idx.iter().map(|&i| psi[i]))),
            StateData::Density(rho) => {
                StateData::Density(CMatrix::from_fn(idx.len(), idx.len(), |r, c| rho[(idx[r], idx[c])]))
            }
        };
        let out = Self { repr: sector.repr(), data };
        let weight = match &out.data {
            StateData::Pure(v) => v.norm_squared(),
            StateData::Density(m) => m.trace().re,
        };
        if (weight - 1.0).abs() > PURE_NORM_TOL {
            return Err(Error::InvalidState(format!("only {weight} of the state lies in the sector")));
        }
        Ok(out)
    }

    /// Embed a sector state into the full space.
    pub fn embed_in_full(&self) -> Result<Self> {
        let Repr::Sector { sites, .. } = self.repr else {
            return Ok(self.clone());
        };
        let full = Basis::full(sites)?;
        let sector = Basis::for_repr(self.repr)?;
        let idx: Vec<usize> = (0..sector.dim()).map(|i| full.index_of_mask(sector.mask(i)).unwrap()).collect();
        let data = match &self.data {
            StateData::Pure(psi) => {
                let mut v = CVector::zeros(full.dim());
                for (r, &i) in idx.iter().enumerate() {
                    v[i] = psi[r];
                }
                StateData::Pure(v)
            }
            StateData::Density(rho) => {
                let mut m = CMatrix::zeros(full.dim(), full.dim());
                for (r, &i) in idx.iter().enumerate() {
                    for (c, &j) in idx.iter().enumerate() {
                        m[(i, j)] = rho[(r, c)];
                    }
                }
                StateData::Density(m)
            }
        };
        Ok(Self { repr: full.repr(), data })
    }
}

/// Smallest eigenvalue of a Hermitian matrix (only the Hermitian part is used).
pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    SymmetricEigen::new(herm).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Time-dependent local field `h(x, t)`.
pub trait FieldSource {
    fn field_at(&self, t: f64, out: &mut [f64]);
}

/// `h ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroField;

impl FieldSource for ZeroField {
    fn field_at(&self, _t: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Field given by a callback, sampled exactly.
pub struct FnField<F>(pub F);

impl<F: Fn(f64, &mut [f64])> FieldSource for FnField<F> {
    fn field_at(&self, t: f64, out: &mut [f64]) {
        (self.0)(t, out)
    }
}

/// Field tabulated on a time grid, linear between nodes and held constant
/// beyond the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTable {
    grid: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl FieldTable {
    pub fn new(grid: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        check_grid(&grid)?;
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        let s = values[0].len();
        if let Some(bad) = values.iter().find(|r| r.len() != s) {
            return Err(Error::LengthMismatch { expected: s, got: bad.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Vec<f64>, sites: usize) -> Result<Self> {
        let rows = vec![vec![0.0; sites]; grid.len()];
        Self::new(grid, rows)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn sites(&self) -> usize {
        self.values[0].len()
    }

    pub fn sample(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.sites()];
        self.field_at(t, &mut out);
        out
    }
}

impl FieldSource for FieldTable {
    fn field_at(&self, t: f64, out: &mut [f64]) {
        let g = &self.grid;
        if t <= g[0] {
            out.copy_from_slice(&self.values[0]);
            return;
        }
        if t >= g[g.len() - 1] {
            out.copy_from_slice(&self.values[g.len() - 1]);
            return;
        }
        let hi = g.partition_point(|&v| v <= t);
        let lo = hi - 1;
        let w = (t - g[lo]) / (g[hi] - g[lo]);
        for (o, (a, b)) in out.iter_mut().zip(self.values[lo].iter().zip(&self.values[hi])) {
            *o = a + w * (b - a);
        }
    }
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter { name: "grid", reason: "empty".into() });
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter { name: "grid", reason: "non-finite time".into() });
    }
    if let Some(w) = grid.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: format!("not strictly increasing at {} -> {}", w[0], w[1]),
        });
    }
    Ok(())
}

/// `0, step, 2 step, ..., t_end`.
pub fn uniform_grid(t_end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter { name: "step", reason: format!("must be positive, got {step}") });
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter { name: "t_end", reason: format!("must be positive, got {t_end}") });
    }
    let n = (t_end / step).round() as usize;
    if n == 0 || ((n as f64) * step - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::InvalidParameter {
            name: "step",
            reason: format!("{step} does not divide t_end = {t_end}"),
        });
    }
    Ok((0..=n).map(|i| i as f64 * step).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateRecording {
    All,
    Every(usize),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationOptions {
    pub integrator: IntegratorOptions,
    pub record_states: StateRecording,
    /// Check positivity at every n-th node (0 disables the check).
    pub positivity_every: usize,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self { integrator: IntegratorOptions::default(), record_states: StateRecording::All, positivity_every: 1 }
    }
}

/// Allowed norm drift per unit time.
pub const NORM_DRIFT_TOL: f64 = 1e-9;
pub const TRACE_DRIFT_TOL: f64 = 1e-9;
pub const HERMITICITY_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-6;

/// Worst invariant deviations seen along a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Monitor {
    pub norm_drift: f64,
    pub trace_drift: f64,
    pub hermiticity: f64,
    pub min_eigenvalue: f64,
    /// `None` when the baths make `N3` non-conserved.
    pub number_drift: Option<f64>,
}

/// Observables (and optionally states) on a time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub repr: Repr,
    pub grid: Vec<f64>,
    /// `(node index, state)`.
    pub states: Vec<(usize, QuantumState)>,
    pub magnetization: Vec<Vec<f64>>,
    pub current: Vec<Vec<f64>>,
    pub kinetic: Vec<Vec<f64>>,
    pub magnetization_rate: Vec<Vec<f64>>,
    pub current_rate: Vec<Vec<f64>>,
    pub field: Vec<Vec<f64>>,
    pub monitor: Monitor,
}

impl Trajectory {
    pub(crate) fn new(repr: Repr) -> Self {
        Self {
            repr,
            grid: Vec::new(),
            states: Vec::new(),
            magnetization: Vec::new(),
            current: Vec::new(),
            kinetic: Vec::new(),
            magnetization_rate: Vec::new(),
            current_rate: Vec::new(),
            field: Vec::new(),
            monitor: Monitor { min_eigenvalue: f64::INFINITY, ..Default::default() },
        }
    }

    pub fn sites(&self) -> usize {
        self.repr.sites()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn state_at(&self, node: usize) -> Option<&QuantumState> {
        self.states.iter().find(|(n, _)| *n == node).map(|(_, s)| s)
    }

    pub fn final_state(&self) -> Option<&QuantumState> {
        self.states.last().map(|(_, s)| s)
    }

    pub(crate) fn record(&mut self, model: &Model, t: f64, state: &StateData, h: &[f64], keep: bool) -> Result<()> {
        let obs = model.observables(state);
        let rate = model.data_rhs(state, h)?;
        let rates = model.rates(state, &rate);
        if keep {
            self.states.push((self.grid.len(), QuantumState::from_data_unchecked(model.repr(), state.clone())));
        }
        self.grid.push(t);
        self.magnetization.push(obs.magnetization);
        self.current.push(obs.current);
        self.kinetic.push(obs.kinetic);
        self.magnetization_rate.push(rates.magnetization);
        self.current_rate.push(rates.current);
        self.field.push(h.to_vec());
        Ok(())
    }
}

fn keep_state(mode: StateRecording, node: usize, last: bool) -> bool {
    match mode {
        StateRecording::All => true,
        StateRecording::Every(n) => last || (n > 0 && node % n == 0),
        StateRecording::None => false,
    }
}

/// Checks the state invariants at one node and folds them into `monitor`.
pub(crate) fn monitor_state(
    model: &Model,
    state: &StateData,
    initial_number: Option<f64>,
    t: f64,
    elapsed: f64,
    check_positivity: bool,
    monitor: &mut Monitor,
) -> Result<()> {
    match state {
        StateData::Pure(psi) => {
            let drift = (psi.norm() - 1.0).abs();
            monitor.norm_drift = monitor.norm_drift.max(drift);
            if drift > NORM_DRIFT_TOL * elapsed.max(1.0) {
                return Err(Error::InvariantViolation { what: "norm", t, deviation: drift });
            }
        }
        StateData::Density(rho) => {
            let tr = (rho.trace() - ONE).norm();
            monitor.trace_drift = monitor.trace_drift.max(tr);
            if tr > TRACE_DRIFT_TOL {
                return Err(Error::InvariantViolation { what: "trace", t, deviation: tr });
            }
            let herm = hermiticity_defect(rho);
            monitor.hermiticity = monitor.hermiticity.max(herm);
            if herm > HERMITICITY_TOL {
                return Err(Error::InvariantViolation { what: "hermiticity", t, deviation: herm });
            }
            if check_positivity {
                let min = min_eigenvalue(rho);
                monitor.min_eigenvalue = monitor.min_eigenvalue.min(min);
                if min < -POSITIVITY_TOL {
                    return Err(Error::InvariantViolation { what: "positivity", t, deviation: -min });
                }
            }
        }
    }
    if let Some(n0) = initial_number {
        let n = number_expectation(model, state);
        let drift = (n - n0).abs();
        let worst = monitor.number_drift.unwrap_or(0.0).max(drift);
        monitor.number_drift = Some(worst);
    }
    Ok(())
}

pub(crate) fn number_expectation(model: &Model, state: &StateData) -> f64 {
    let counts: Vec<f64> = model.basis().excitation_counts().into_iter().map(|n| n as f64).collect();
    let weight = match state {
        StateData::Pure(psi) => psi.norm_squared(),
        StateData::Density(rho) => rho.trace().re,
    };
    // norm drift is monitored on its own
    diag_expectation(&counts, state) / weight
}

/// Schrödinger propagation of a pure state under a closed model.
pub fn propagate_unitary(
    model: &Model,
    psi0: &QuantumState,
    field: &dyn FieldSource,
    grid: &[f64],
    opts: &PropagationOptions,
) -> Result<Trajectory> {
    if !psi0.is_pure() {
        return Err(Error::InvalidState("unitary propagation needs a pure state".into()));
    }
    propagate(model, psi0, field, grid, opts)
}

/// Lindblad propagation of a density matrix.
pub fn propagate_lindblad(
    model: &Model,
    rho0: &QuantumState,
    field: &dyn FieldSource,
    grid: &[f64],
    opts: &PropagationOptions,
) -> Result<Trajectory> {
    if rho0.is_pure() {
        return Err(Error::InvalidState("Lindblad propagation needs a density matrix".into()));
    }
    propagate(model, rho0, field, grid, opts)
}

fn propagate(
    model: &Model,
    initial: &QuantumState,
    field: &dyn FieldSource,
    grid: &[f64],
    opts: &PropagationOptions,
) -> Result<Trajectory> {
    check_grid(grid)?;
    model.check_state(initial)?;
    if initial.is_pure() && !model.is_closed() {
        return Err(Error::InvalidParameter {
            name: "state",
            reason: "pure states only evolve under closed dynamics".into(),
        });
    }
    let s = model.sites();
    let template = initial.data().clone();
    let mut y = template.flatten();
    let mut h = vec![0.0; s];
    let mut traj = Trajectory::new(model.repr());
    let conserved = !model.bath().is_active();
    let n0 = conserved.then(|| number_expectation(model, &template));
    let mut integrator = DormandPrince::new(y.len(), opts.integrator);

    let mut rhs = |t: f64, y: &[C64], dy: &mut [C64]| -> Result<()> {
        let mut h = vec![0.0; s];
        field.field_at(t, &mut h);
        match &template {
            StateData::Pure(_) => {
                let psi = CVector::from_column_slice(y);
                dy.copy_from_slice(model.schrodinger_rhs(&psi, &h)?.as_slice());
            }
            StateData::Density(m) => {
                let rho = CMatrix::from_column_slice(m.nrows(), m.ncols(), y);
                dy.copy_from_slice(model.lindblad_rhs(&rho, &h)?.as_slice());
            }
        }
        Ok(())
    };

    let last = grid.len() - 1;
    for (n, &t) in grid.iter().enumerate() {
        if n > 0 {
            integrator.advance(&mut rhs, grid[n - 1], t, &mut y)?;
        }
        let state = template.like(&y);
        let check_pos = opts.positivity_every > 0 && (n % opts.positivity_every == 0 || n == last);
        monitor_state(model, &state, n0, t, t - grid[0], check_pos, &mut traj.monitor)?;
        field.field_at(t, &mut h);
        traj.record(model, t, &state, &h, keep_state(opts.record_states, n, n == last))?;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spinops::{number_op, pauli, sector_restrict, tau, ConservationCheck, ZERO};

    fn approx(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn h0_of_xy_pair_is_minus_half_tau() {
        let chain = ChainSpec::homogeneous(2, -0.25, 0.0).unwrap();
        let h0 = build_h0(&chain).unwrap();
        assert_eq!(h0, tau(1, 2, 2).unwrap().scale(-0.5));
    }

    #[test]
    fn h0_of_ising_pair() {
        let chain = ChainSpec::new(2, vec![0.0], vec![1.0]).unwrap();
        let zz = &pauli(Axis::Z, 1, 2).unwrap() * &pauli(Axis::Z, 2, 2).unwrap();
        assert_eq!(build_h0(&chain).unwrap(), zz);
    }

    #[test]
    fn h0_commutes_with_number() {
        let chain = ChainSpec::new(4, vec![0.3, -1.1, 0.7], vec![0.2, 0.9, -0.4]).unwrap();
        let h0 = build_h0(&chain).unwrap();
        assert!(h0.is_hermitian());
        let c = h0.commutator(&number_op(4).unwrap()).unwrap();
        assert!(c.matrix().iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn h0_single_excitation_block_is_path_graph() {
        let chain = ChainSpec::homogeneous(3, -0.25, 0.0).unwrap();
        let r = sector_restrict(&build_h0(&chain).unwrap(), 1, ConservationCheck::Verify).unwrap();
        let mut adj = CMatrix::zeros(3, 3);
        adj[(0, 1)] = ONE;
        adj[(1, 0)] = ONE;
        adj[(1, 2)] = ONE;
        adj[(2, 1)] = ONE;
        assert_eq!(r.matrix(), &(adj * C64::new(-0.5, 0.0)));
    }

    #[test]
    fn engineered_couplings() {
        let ch = build_engineered(2).unwrap();
        assert!((ch.hopping()[0] + std::f64::consts::PI / 8.0).abs() < 1e-15);
        let ch = build_engineered(7).unwrap();
        for x in 1..7 {
            assert_eq!(ch.j(x), ch.j(7 - x));
        }
        assert!(ch.ising().iter().all(|&k| k == 0.0));
    }

    #[test]
    fn hamiltonian_with_field() {
        let chain = ChainSpec::homogeneous(2, 0.0, 0.0).unwrap();
        let h = hamiltonian_at(&chain, &[0.7, -0.2]).unwrap();
        let expect = &pauli(Axis::Z, 1, 2).unwrap().scale(0.7) + &pauli(Axis::Z, 2, 2).unwrap().scale(-0.2);
        assert_eq!(h, expect);
        assert!(matches!(hamiltonian_at(&chain, &[1.0]), Err(Error::LengthMismatch { expected: 2, got: 1 })));
        let chain = ChainSpec::homogeneous(3, 0.4, 0.1).unwrap();
        assert_eq!(hamiltonian_at(&chain, &[0.0; 3]).unwrap(), build_h0(&chain).unwrap());
    }

    #[test]
    fn dissipator_kills_diagonal_states_without_baths() {
        let repr = Repr::Full { sites: 3 };
        let diag = CVector::from_vec((0..8).map(|i| C64::new(i as f64 + 1.0, 0.0)).collect());
        let rho = CMatrix::from_diagonal(&(diag.clone() / diag.sum()));
        let state = QuantumState::density(repr, rho).unwrap();
        let d = dissipator_apply(&state, DephasingSpec::new(0.3).unwrap(), BathSpec::none()).unwrap();
        assert!(d.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn dephasing_fast_path_matches_generic_form() {
        let s = 3;
        let eta = 0.37;
        let basis = Basis::full(s).unwrap();
        let chain = ChainSpec::homogeneous(s, 0.0, 0.0).unwrap();
        let model = Model::new(basis.clone(), chain, DephasingSpec::new(eta).unwrap(), BathSpec::none()).unwrap();
        let rho = CMatrix::from_fn(8, 8, |i, j| C64::new((i * 3 + j) as f64 * 0.01, (i as f64 - j as f64) * 0.02));
        let mut generic = CMatrix::zeros(8, 8);
        for x in 1..=s {
            let l = basis.pauli(Axis::Z, x).unwrap().into_matrix() * C64::new((eta / 2.0).sqrt(), 0.0);
            generic += lindblad_term(&l, &rho);
        }
        assert!(approx(&model.dissipator(&rho), &generic) < 1e-15);
    }

    #[test]
    fn dissipator_output_is_traceless() {
        let repr = Repr::Full { sites: 3 };
        let psi = QuantumState::uniform_superposition(&Basis::full(3).unwrap()).unwrap().to_density();
        let d = dissipator_apply(&psi, DephasingSpec::new(0.2).unwrap(), BathSpec::new(0.1, 0.3).unwrap()).unwrap();
        assert!(d.trace().norm() < 1e-15);
        assert_eq!(psi.repr(), repr);
    }

    #[test]
    fn baths_rejected_on_sectors() {
        let chain = ChainSpec::homogeneous(3, -0.25, 0.0).unwrap();
        let err =
            Model::new(Basis::sector(3, 1).unwrap(), chain, DephasingSpec::none(), BathSpec::new(0.1, 0.0).unwrap());
        assert_eq!(err.unwrap_err(), Error::BathInSector);
    }

    #[test]
    fn single_bath_site_relaxes_to_minus_mu() {
        // J = K = 0 decouples the sites: dm(1)/dt = -4ε(m(1) + μ), dm(s)/dt = -4ε(m(s) - μ)
        let chain = ChainSpec::homogeneous(2, 0.0, 0.0).unwrap();
        let (eps, mu) = (0.1, 0.35);
        let model = Model::full(chain, DephasingSpec::none(), BathSpec::new(eps, mu).unwrap()).unwrap();
        // fixed point: product of single-site states with m(1) = -μ, m(2) = μ
        let site = |m: f64| {
            CMatrix::from_diagonal(&CVector::from_vec(vec![
                C64::new((1.0 + m) / 2.0, 0.0),
                C64::new((1.0 - m) / 2.0, 0.0),
            ]))
        };
        let rho = site(-mu).kronecker(&site(mu));
        let rate = model.lindblad_rhs(&rho, &[0.0, 0.0]).unwrap();
        assert!(rate.iter().all(|z| z.norm() < 1e-16));
        // and the linear relaxation law away from it
        let rho = site(0.5).kronecker(&site(-0.2));
        let rate = model.lindblad_rhs(&rho, &[0.0, 0.0]).unwrap();
        let r = model.rates(&StateData::Density(rho), &StateData::Density(rate));
        assert!((r.magnetization[0] + 4.0 * eps * (0.5 + mu)).abs() < 1e-15);
        assert!((r.magnetization[1] + 4.0 * eps * (-0.2 - mu)).abs() < 1e-15);
    }

    #[test]
    fn rhs_is_hermitian_and_traceless() {
        let chain = ChainSpec::new(3, vec![0.3, -0.6], vec![0.1, 0.2]).unwrap();
        let model = Model::full(chain, DephasingSpec::new(0.05).unwrap(), BathSpec::new(0.1, -0.4).unwrap()).unwrap();
        let rho = model.uniform_superposition().unwrap().to_density();
        let r = model.lindblad_rhs(rho.density_matrix().unwrap(), &[0.2, -0.1, 0.4]).unwrap();
        assert!(hermiticity_defect(&r) < 1e-15);
        assert!(r.trace().norm() < 1e-15);
    }

    #[test]
    fn stationary_eigenstate() {
        let chain = ChainSpec::homogeneous(3, -0.25, 0.0).unwrap();
        let model = Model::full(chain, DephasingSpec::none(), BathSpec::none()).unwrap();
        let eig = SymmetricEigen::new(model.h0().clone());
        let psi = eig.eigenvectors.column(2).into_owned();
        let rho = &psi * psi.adjoint();
        let r = model.lindblad_rhs(&rho, &[0.0; 3]).unwrap();
        assert!(r.iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn field_table_interpolates_linearly() {
        let table = FieldTable::new(vec![0.0, 1.0, 3.0], vec![vec![0.0, 1.0], vec![2.0, 1.0], vec![0.0, 5.0]]).unwrap();
        assert_eq!(table.sample(0.5), vec![1.0, 1.0]);
        assert_eq!(table.sample(2.0), vec![1.0, 3.0]);
        assert_eq!(table.sample(-1.0), vec![0.0, 1.0]);
        assert_eq!(table.sample(9.0), vec![0.0, 5.0]);
        assert!(FieldTable::new(vec![0.0, 0.0], vec![vec![0.0], vec![0.0]]).is_err());
        assert!(FieldTable::new(vec![0.0, 1.0], vec![vec![0.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn uniform_grid_nodes() {
        let g = uniform_grid(1.0, 0.25).unwrap();
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(uniform_grid(1.0, 0.3).is_err());
        assert!(uniform_grid(1.0, -0.1).is_err());
    }

    #[test]
    fn state_validation() {
        let repr = Repr::Full { sites: 2 };
        assert!(QuantumState::pure(repr, CVector::zeros(4)).is_err());
        let mut bad = CMatrix::identity(4, 4) * C64::new(0.25, 0.0);
        bad[(0, 1)] = C64::new(0.0, 0.1);
        assert!(QuantumState::density(repr, bad).is_err());
        let neg = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(1.2, 0.0), C64::new(-0.2, 0.0), ZERO, ZERO]));
        assert!(QuantumState::density(repr, neg).is_err());
    }

    #[test]
    fn sector_round_trip_of_states() {
        let full = Basis::full(4).unwrap();
        let psi = QuantumState::uniform_superposition(&full).unwrap();
        let sec = psi.restrict_to_sector(1).unwrap();
        assert_eq!(sec.repr(), Repr::Sector { sites: 4, excitations: 1 });
        assert_eq!(sec.embed_in_full().unwrap(), psi);
        assert!(psi.restrict_to_sector(2).is_err());
    }

    #[test]
    fn zero_hamiltonian_keeps_state() {
        let chain = ChainSpec::homogeneous(3, 0.0, 0.0).unwrap();
        let model = Model::full(chain, DephasingSpec::none(), BathSpec::none()).unwrap();
        let psi = model.uniform_superposition().unwrap();
        let grid = uniform_grid(2.0, 0.5).unwrap();
        let traj = propagate_unitary(&model, &psi, &ZeroField, &grid, &PropagationOptions::default()).unwrap();
        assert_eq!(traj.final_state().unwrap(), &psi);
    }

    #[test]
    fn deph_only_diagonal_state_is_constant() {
        let chain = ChainSpec::homogeneous(3, 0.0, 0.3).unwrap();
        let model = Model::full(chain, DephasingSpec::new(0.1).unwrap(), BathSpec::none()).unwrap();
        let rho = QuantumState::basis_state(model.basis(), &BasisState::single(3, 2).unwrap()).unwrap().to_density();
        let grid = uniform_grid(1.0, 0.1).unwrap();
        let traj = propagate_lindblad(&model, &rho, &ZeroField, &grid, &PropagationOptions::default()).unwrap();
        for m in &traj.magnetization {
            assert_eq!(m, &vec![-1.0, 1.0, -1.0]);
        }
    }

    #[test]
    fn pure_state_rejected_by_open_model() {
        let chain = ChainSpec::homogeneous(2, -0.25, 0.0).unwrap();
        let model = Model::full(chain, DephasingSpec::new(0.1).unwrap(), BathSpec::none()).unwrap();
        let psi = model.uniform_superposition().unwrap();
        let grid = uniform_grid(1.0, 0.5).unwrap();
        assert!(propagate_unitary(&model, &psi, &ZeroField, &grid, &PropagationOptions::default()).is_err());
    }
}
