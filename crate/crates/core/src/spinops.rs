//! Site-local and two-site operators of a spin-1/2 chain.
//!
//! Basis conventions, fixed so that matrices are reproducible bit for bit:
//!
//! * sites are numbered `1..=s`, site 1 is the most significant qubit;
//! * on every site the σ3 = +1 ("up") state is the first basis vector, so the
//!   all-up state has full-space index 0 and the all-down state index `2^s - 1`;
//! * an excitation sector lists its basis states by their sets of up sites in
//!   lexicographic order (`{1}, {2}, ...` for one excitation,
//!   `{1,2}, {1,3}, ..., {2,3}, ...` for two).
//!
//! Internally a basis state is a bit mask in which bit `s - x` is set when
//! site `x` is up. With that layout the full-space index is `(2^s - 1) ^ mask`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use itertools::Itertools;
use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Largest chain handled by the bit-mask basis.
pub const MAX_SITES: usize = 30;

/// Tolerance used when checking that an operator conserves the excitation number.
pub const CONSERVATION_TOL: f64 = 1e-12;

/// Physical couplings of an open chain: `J(x)` for the XY part and `K(x)` for
/// the Ising part, both indexed by bond `x = 1..=s-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    sites: usize,
    hopping: Vec<f64>,
    ising: Vec<f64>,
}

impl ChainSpec {
    pub fn new(sites: usize, hopping: Vec<f64>, ising: Vec<f64>) -> Result<Self> {
        if sites < 2 {
            return Err(Error::InvalidChain(format!("need at least 2 sites, got {sites}")));
        }
        if sites > MAX_SITES {
            return Err(Error::InvalidChain(format!("at most {MAX_SITES} sites supported, got {sites}")));
        }
        if hopping.len() != sites - 1 || ising.len() != sites - 1 {
            return Err(Error::InvalidChain(format!(
                "{sites} sites need {} couplings, got J: {} K: {}",
                sites - 1,
                hopping.len(),
                ising.len()
            )));
        }
        if hopping.iter().chain(&ising).any(|v| !v.is_finite()) {
            return Err(Error::InvalidChain("couplings must be finite".into()));
        }
        Ok(Self { sites, hopping, ising })
    }

    /// Spatially homogeneous couplings.
    pub fn homogeneous(sites: usize, hopping: f64, ising: f64) -> Result<Self> {
        let bonds = sites.saturating_sub(1);
        Self::new(sites, vec![hopping; bonds], vec![ising; bonds])
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn hopping(&self) -> &[f64] {
        &self.hopping
    }

    pub fn ising(&self) -> &[f64] {
        &self.ising
    }

    /// `J(x)`, zero for bonds outside `1..=s-1`.
    pub fn j(&self, bond: isize) -> f64 {
        self.bond_value(&self.hopping, bond)
    }

    /// `K(x)`, zero for bonds outside `1..=s-1`.
    pub fn k(&self, bond: isize) -> f64 {
        self.bond_value(&self.ising, bond)
    }

    fn bond_value(&self, values: &[f64], bond: isize) -> f64 {
        if bond >= 1 && (bond as usize) < self.sites {
            values[bond as usize - 1]
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Repr {
    Full { sites: usize },
    Sector { sites: usize, excitations: usize },
}

impl Repr {
    pub fn sites(&self) -> usize {
        match *self {
            Repr::Full { sites } | Repr::Sector { sites, .. } => sites,
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Repr::Full { sites } => 1usize << sites,
            Repr::Sector { sites, excitations } => binomial(sites, excitations),
        }
    }

    pub fn is_sector(&self) -> bool {
        matches!(self, Repr::Sector { .. })
    }
}

impl fmt::Display for Repr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Repr::Full { sites } => write!(f, "full({sites})"),
            Repr::Sector { sites, excitations } => write!(f, "sector({sites}, {excitations})"),
        }
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Simultaneous σ3 eigenstate, described by the set of sites that are up.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BasisState {
    sites: usize,
    up_sites: BTreeSet<usize>,
}

impl BasisState {
    pub fn new(sites: usize, up_sites: impl IntoIterator<Item = usize>) -> Result<Self> {
        if sites == 0 || sites > MAX_SITES {
            return Err(Error::InvalidParameter { name: "sites", reason: format!("{sites} outside 1..={MAX_SITES}") });
        }
        let up_sites: BTreeSet<usize> = up_sites.into_iter().collect();
        if let Some(&bad) = up_sites.iter().find(|&&x| x == 0 || x > sites) {
            return Err(Error::SiteOutOfRange { site: bad, sites });
        }
        Ok(Self { sites, up_sites })
    }

    pub fn all_down(sites: usize) -> Result<Self> {
        Self::new(sites, [])
    }

    /// `|x⟩`: only site `x` is up.
    pub fn single(sites: usize, x: usize) -> Result<Self> {
        Self::new(sites, [x])
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn up_sites(&self) -> &BTreeSet<usize> {
        &self.up_sites
    }

    pub fn excitations(&self) -> usize {
        self.up_sites.len()
    }

    pub fn is_up(&self, x: usize) -> bool {
        self.up_sites.contains(&x)
    }

    pub(crate) fn mask(&self) -> u64 {
        self.up_sites.iter().fold(0u64, |m, &x| m | site_bit(self.sites, x))
    }

    pub(crate) fn from_mask(sites: usize, mask: u64) -> Self {
        let up_sites = (1..=sites).filter(|&x| mask & site_bit(sites, x) != 0).collect();
        Self { sites, up_sites }
    }
}

#[inline]
pub(crate) fn site_bit(sites: usize, x: usize) -> u64 {
    1u64 << (sites - x)
}

/// Pauli axis; `X`, `Y`, `Z` are σ1, σ2, σ3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl TryFrom<u8> for Axis {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            1 => Ok(Axis::X),
            2 => Ok(Axis::Y),
            3 => Ok(Axis::Z),
            other => Err(Error::InvalidParameter { name: "axis", reason: format!("{other} is not one of 1, 2, 3") }),
        }
    }
}

/// σ_+ (down → up) or σ_- (up → down).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ladder {
    Raise,
    Lower,
}

/// Single-site factor of a product term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    Pauli(Axis),
    Ladder(Ladder),
}

impl Factor {
    fn act(self, bit: u64, mask: u64) -> Option<(C64, u64)> {
        let up = mask & bit != 0;
        match self {
            Factor::Pauli(Axis::X) => Some((ONE, mask ^ bit)),
            // σ2|up⟩ = i|down⟩, σ2|down⟩ = -i|up⟩
            Factor::Pauli(Axis::Y) => Some((if up { I } else { -I }, mask ^ bit)),
            Factor::Pauli(Axis::Z) => Some((if up { ONE } else { -ONE }, mask)),
            Factor::Ladder(Ladder::Raise) => (!up).then_some((ONE, mask | bit)),
            Factor::Ladder(Ladder::Lower) => up.then_some((ONE, mask & !bit)),
        }
    }
}

/// `coeff · f_1(x_1) f_2(x_2) ...`, factors written left to right as in an
/// operator product (the rightmost acts first).
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: C64,
    pub factors: Vec<(Factor, usize)>,
}

impl Term {
    pub fn new(coeff: impl Into<C64>, factors: impl IntoIterator<Item = (Factor, usize)>) -> Self {
        Self { coeff: coeff.into(), factors: factors.into_iter().collect() }
    }
}

/// Enumerated basis of the full space or of one excitation sector.
#[derive(Debug, Clone)]
pub struct Basis {
    repr: Repr,
    // sector only: masks in lexicographic order of up-site sets
    masks: Vec<u64>,
    lookup: HashMap<u64, usize>,
}

impl Basis {
    pub fn full(sites: usize) -> Result<Self> {
        if sites == 0 || sites > MAX_SITES {
            return Err(Error::InvalidParameter { name: "sites", reason: format!("{sites} outside 1..={MAX_SITES}") });
        }
        Ok(Self { repr: Repr::Full { sites }, masks: Vec::new(), lookup: HashMap::new() })
    }

    pub fn sector(sites: usize, excitations: usize) -> Result<Self> {
        if sites == 0 || sites > MAX_SITES {
            return Err(Error::InvalidParameter { name: "sites", reason: format!("{sites} outside 1..={MAX_SITES}") });
        }
        if excitations > sites {
            return Err(Error::InvalidParameter {
                name: "excitations",
                reason: format!("{excitations} exceeds the {sites} sites"),
            });
        }
        let masks: Vec<u64> = (1..=sites)
            .combinations(excitations)
            .map(|set| set.iter().fold(0u64, |m, &x| m | site_bit(sites, x)))
            .collect();
        let lookup = masks.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        Ok(Self { repr: Repr::Sector { sites, excitations }, masks, lookup })
    }

    pub fn for_repr(repr: Repr) -> Result<Self> {
        match repr {
            Repr::Full { sites } => Self::full(sites),
            Repr::Sector { sites, excitations } => Self::sector(sites, excitations),
        }
    }

    pub fn repr(&self) -> Repr {
        self.repr
    }

    pub fn sites(&self) -> usize {
        self.repr.sites()
    }

    pub fn dim(&self) -> usize {
        self.repr.dim()
    }

    fn all_mask(&self) -> u64 {
        (1u64 << self.sites()) - 1
    }

    pub(crate) fn mask(&self, index: usize) -> u64 {
        match self.repr {
            Repr::Full { .. } => self.all_mask() ^ index as u64,
            Repr::Sector { .. } => self.masks[index],
        }
    }

    pub(crate) fn index_of_mask(&self, mask: u64) -> Option<usize> {
        match self.repr {
            Repr::Full { .. } => Some((self.all_mask() ^ mask) as usize),
            Repr::Sector { .. } => self.lookup.get(&mask).copied(),
        }
    }

    pub fn state(&self, index: usize) -> BasisState {
        BasisState::from_mask(self.sites(), self.mask(index))
    }

    pub fn index_of(&self, state: &BasisState) -> Option<usize> {
        if state.sites() != self.sites() {
            return None;
        }
        self.index_of_mask(state.mask())
    }

    /// Column vector of a basis state.
    pub fn vector(&self, state: &BasisState) -> Result<CVector> {
        let idx = self
            .index_of(state)
            .ok_or_else(|| Error::InvalidState(format!("basis state {:?} not in {}", state.up_sites(), self.repr)))?;
        let mut v = CVector::zeros(self.dim());
        v[idx] = ONE;
        Ok(v)
    }

    fn check_site(&self, x: usize) -> Result<()> {
        if x == 0 || x > self.sites() {
            Err(Error::SiteOutOfRange { site: x, sites: self.sites() })
        } else {
            Ok(())
        }
    }

    /// Diagonal of σ3(x), i.e. ±1 per basis state.
    pub fn sigma3_diagonal(&self, x: usize) -> Result<Vec<f64>> {
        self.check_site(x)?;
        let bit = site_bit(self.sites(), x);
        Ok((0..self.dim()).map(|i| if self.mask(i) & bit != 0 { 1.0 } else { -1.0 }).collect())
    }

    /// Number of up spins per basis state.
    pub fn excitation_counts(&self) -> Vec<usize> {
        (0..self.dim()).map(|i| self.mask(i).count_ones() as usize).collect()
    }

    /// Assembles `Σ terms` in this basis.
    pub fn operator(&self, terms: &[Term]) -> Result<Operator> {
        let s = self.sites();
        for term in terms {
            for &(_, x) in &term.factors {
                self.check_site(x)?;
            }
        }
        let dim = self.dim();
        let mut m = CMatrix::zeros(dim, dim);
        for col in 0..dim {
            let start = self.mask(col);
            for term in terms {
                if term.coeff == ZERO {
                    continue;
                }
                let mut amp = term.coeff;
                let mut mask = start;
                let mut alive = true;
                for &(factor, x) in term.factors.iter().rev() {
                    match factor.act(site_bit(s, x), mask) {
                        Some((c, next)) => {
                            amp *= c;
                            mask = next;
                        }
                        None => {
                            alive = false;
                            break;
                        }
                    }
                }
                if !alive {
                    continue;
                }
                let row = self.index_of_mask(mask).ok_or_else(|| match self.repr {
                    Repr::Sector { sites, excitations } => Error::LeavesSector { sites, excitations },
                    Repr::Full { .. } => unreachable!("full space is closed under every factor"),
                })?;
                m[(row, col)] += amp;
            }
        }
        Ok(Operator { repr: self.repr, matrix: m })
    }

    pub fn identity(&self) -> Operator {
        Operator::identity(self.repr)
    }

    pub fn pauli(&self, axis: Axis, x: usize) -> Result<Operator> {
        self.operator(&[Term::new(1.0, [(Factor::Pauli(axis), x)])])
    }

    pub fn ladder(&self, ladder: Ladder, x: usize) -> Result<Operator> {
        self.operator(&[Term::new(1.0, [(Factor::Ladder(ladder), x)])])
    }

    /// `τ(x,y) = σ+(x)σ-(y) + σ-(x)σ+(y)`.
    pub fn tau(&self, x: usize, y: usize) -> Result<Operator> {
        if x == y {
            return Err(Error::CoincidentSites(x));
        }
        self.operator(&tau_terms(1.0, x, y))
    }

    /// Bond current `j(x) = 4iJ(x)(σ+(x)σ-(x+1) - σ-(x)σ+(x+1))`, zero at
    /// `x = 0` and `x = s`.
    pub fn current(&self, x: usize, chain: &ChainSpec) -> Result<Operator> {
        self.check_chain(chain)?;
        let s = self.sites();
        if x > s {
            return Err(Error::BondOutOfRange { bond: x, min: 0, max: s });
        }
        if x == 0 || x == s {
            return Ok(Operator::zero(self.repr));
        }
        self.operator(&current_terms(chain.j(x as isize), x))
    }

    /// Local kinetic energy `T(x) = 2J(x)τ(x,x+1)`.
    pub fn kinetic(&self, x: usize, chain: &ChainSpec) -> Result<Operator> {
        self.check_chain(chain)?;
        if x == 0 || x >= self.sites() {
            return Err(Error::BondOutOfRange { bond: x, min: 1, max: self.sites() - 1 });
        }
        self.operator(&tau_terms(2.0 * chain.j(x as isize), x, x + 1))
    }

    /// `N3 = Σ (1 + σ3(x))/2`.
    pub fn number(&self) -> Operator {
        let diag = self.excitation_counts().into_iter().map(|n| C64::new(n as f64, 0.0));
        Operator { repr: self.repr, matrix: CMatrix::from_diagonal(&CVector::from_iterator(self.dim(), diag)) }
    }

    pub(crate) fn check_chain(&self, chain: &ChainSpec) -> Result<()> {
        if chain.sites() != self.sites() {
            return Err(Error::ReprMismatch(format!("chain has {} sites, basis {}", chain.sites(), self.repr)));
        }
        Ok(())
    }
}

pub(crate) fn tau_terms(coeff: f64, x: usize, y: usize) -> Vec<Term> {
    use Factor::Ladder as L;
    vec![
        Term::new(coeff, [(L(Ladder::Raise), x), (L(Ladder::Lower), y)]),
        Term::new(coeff, [(L(Ladder::Lower), x), (L(Ladder::Raise), y)]),
    ]
}

pub(crate) fn current_terms(j: f64, x: usize) -> Vec<Term> {
    use Factor::Ladder as L;
    let c = C64::new(0.0, 4.0 * j);
    vec![
        Term::new(c, [(L(Ladder::Raise), x), (L(Ladder::Lower), x + 1)]),
        Term::new(-c, [(L(Ladder::Lower), x), (L(Ladder::Raise), x + 1)]),
    ]
}

/// Dense operator tagged with the space it acts on.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    repr: Repr,
    matrix: CMatrix,
}

impl Operator {
    pub fn new(repr: Repr, matrix: CMatrix) -> Result<Self> {
        let dim = repr.dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::ReprMismatch(format!(
                "{repr} needs a {dim}x{dim} matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { repr, matrix })
    }

    pub fn zero(repr: Repr) -> Self {
        let dim = repr.dim();
        Self { repr, matrix: CMatrix::zeros(dim, dim) }
    }

    pub fn identity(repr: Repr) -> Self {
        let dim = repr.dim();
        Self { repr, matrix: CMatrix::identity(dim, dim) }
    }

    pub fn repr(&self) -> Repr {
        self.repr
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dagger(&self) -> Self {
        Self { repr: self.repr, matrix: self.matrix.adjoint() }
    }

    /// Largest entry of `|A - A†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        hermiticity_defect(&self.matrix)
    }

    pub fn is_hermitian(&self) -> bool {
        self.matrix == self.matrix.adjoint()
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.repr != other.repr {
            return Err(Error::ReprMismatch(format!("{} vs {}", self.repr, other.repr)));
        }
        Ok(())
    }

    pub fn product(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self { repr: self.repr, matrix: &self.matrix * &other.matrix })
    }

    /// `[A, B] = AB - BA`.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self { repr: self.repr, matrix: &self.matrix * &other.matrix - &other.matrix * &self.matrix })
    }

    /// Spectral norm (largest singular value).
    pub fn norm(&self) -> f64 {
        spectral_norm(&self.matrix)
    }

    /// `⟨ψ|A|ψ⟩`.
    pub fn expect_pure(&self, psi: &CVector) -> C64 {
        psi.dotc(&(&self.matrix * psi))
    }

    /// `Tr(Aρ)`.
    pub fn expect_density(&self, rho: &CMatrix) -> C64 {
        trace_product(&self.matrix, rho)
    }

    pub fn scale(&self, c: impl Into<C64>) -> Self {
        let c = c.into();
        Self { repr: self.repr, matrix: &self.matrix * c }
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait<&Operator> for &Operator {
            type Output = Operator;

            /// Panics if the two operators live on different spaces.
            fn $method(self, rhs: &Operator) -> Operator {
                assert_eq!(self.repr, rhs.repr, "operator representations differ");
                Operator { repr: self.repr, matrix: &self.matrix $op &rhs.matrix }
            }
        }
    };
}

binop!(Add, add, +);
binop!(Sub, sub, -);
binop!(Mul, mul, *);

impl Mul<f64> for &Operator {
    type Output = Operator;

    fn mul(self, rhs: f64) -> Operator {
        self.scale(rhs)
    }
}

impl Neg for &Operator {
    type Output = Operator;

    fn neg(self) -> Operator {
        self.scale(-1.0)
    }
}

pub(crate) fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub(crate) fn spectral_norm(m: &CMatrix) -> f64 {
    if m.iter().all(|z| *z == ZERO) {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// `Tr(AB)` without forming the product.
pub(crate) fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

fn full_basis(s: usize) -> Result<Basis> {
    Basis::full(s)
}

/// `σ_axis(x)` on the full `2^s` space.
pub fn pauli(axis: Axis, x: usize, s: usize) -> Result<Operator> {
    full_basis(s)?.pauli(axis, x)
}

/// `σ±(x) = (σ1(x) ± iσ2(x))/2` on the full space.
pub fn raise_lower(ladder: Ladder, x: usize, s: usize) -> Result<Operator> {
    full_basis(s)?.ladder(ladder, x)
}

pub fn tau(x: usize, y: usize, s: usize) -> Result<Operator> {
    full_basis(s)?.tau(x, y)
}

pub fn current_op(x: usize, chain: &ChainSpec) -> Result<Operator> {
    full_basis(chain.sites())?.current(x, chain)
}

pub fn kinetic_op(x: usize, chain: &ChainSpec) -> Result<Operator> {
    full_basis(chain.sites())?.kinetic(x, chain)
}

pub fn number_op(s: usize) -> Result<Operator> {
    Ok(full_basis(s)?.number())
}

/// Whether [`sector_restrict`] verifies number conservation first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConservationCheck {
    #[default]
    Verify,
    Skip,
}

/// Frobenius norm of `[A, N3]` for a full-space operator.
pub fn number_commutator_norm(op: &Operator) -> Result<f64> {
    let Repr::Full { sites } = op.repr else {
        return Err(Error::ReprMismatch(format!("expected a full-space operator, got {}", op.repr)));
    };
    let counts = Basis::full(sites)?.excitation_counts();
    let m = &op.matrix;
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let d = counts[j] as f64 - counts[i] as f64;
            acc += (m[(i, j)] * d).norm_sqr();
        }
    }
    Ok(acc.sqrt())
}

/// Block of a full-space operator on the `k`-excitation sector.
pub fn sector_restrict(op: &Operator, k: usize, check: ConservationCheck) -> Result<Operator> {
    let Repr::Full { sites } = op.repr else {
        return Err(Error::ReprMismatch(format!("expected a full-space operator, got {}", op.repr)));
    };
    if check == ConservationCheck::Verify {
        let commutator_norm = number_commutator_norm(op)?;
        if commutator_norm > CONSERVATION_TOL {
            return Err(Error::NotNumberConserving { commutator_norm });
        }
    }
    let full = Basis::full(sites)?;
    let sector = Basis::sector(sites, k)?;
    let idx: Vec<usize> = (0..sector.dim())
        .map(|i| full.index_of_mask(sector.mask(i)).expect("full space contains every mask"))
        .collect();
    let matrix = CMatrix::from_fn(idx.len(), idx.len(), |r, c| op.matrix[(idx[r], idx[c])]);
    Ok(Operator { repr: sector.repr(), matrix })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn sigma3_single_site_is_diag_plus_minus() {
        let z = pauli(Axis::Z, 1, 1).unwrap();
        assert_eq!(z.matrix(), &CMatrix::from_diagonal(&CVector::from_vec(vec![c(1.0), c(-1.0)])));
    }

    #[test]
    fn paulis_square_to_identity() {
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            for x in 1..=3 {
                let p = pauli(axis, x, 3).unwrap();
                assert_eq!(&p * &p, Operator::identity(p.repr()));
                assert!(p.is_hermitian());
            }
        }
    }

    #[test]
    fn sigma3_on_up_down_eigenstate() {
        let b = Basis::full(2).unwrap();
        let psi = b.vector(&BasisState::single(2, 1).unwrap()).unwrap();
        let z2 = b.pauli(Axis::Z, 2).unwrap();
        assert_eq!(z2.expect_pure(&psi), c(-1.0));
    }

    #[test]
    fn site_one_is_most_significant() {
        let b = Basis::full(3).unwrap();
        assert_eq!(b.index_of(&BasisState::new(3, [1, 2, 3]).unwrap()), Some(0));
        assert_eq!(b.index_of(&BasisState::all_down(3).unwrap()), Some(7));
        // up on site 1 only: bits (down, down) on sites 2, 3 -> 0b011
        assert_eq!(b.index_of(&BasisState::single(3, 1).unwrap()), Some(3));
        assert_eq!(b.index_of(&BasisState::single(3, 3).unwrap()), Some(6));
    }

    #[test]
    fn ladder_actions() {
        let b = Basis::full(1).unwrap();
        let up = b.vector(&BasisState::single(1, 1).unwrap()).unwrap();
        let down = b.vector(&BasisState::all_down(1).unwrap()).unwrap();
        let plus = b.ladder(Ladder::Raise, 1).unwrap();
        let minus = b.ladder(Ladder::Lower, 1).unwrap();
        assert_eq!(plus.matrix() * &down, up);
        assert_eq!(&plus * &plus, Operator::zero(plus.repr()));
        assert_eq!(&(&plus * &minus) + &(&minus * &plus), Operator::identity(plus.repr()));
        // (σ1 + iσ2)/2
        let x = b.pauli(Axis::X, 1).unwrap();
        let y = b.pauli(Axis::Y, 1).unwrap();
        assert_eq!(plus, (&x + &y.scale(I)).scale(0.5));
        assert_eq!(minus, (&x - &y.scale(I)).scale(0.5));
    }

    #[test]
    fn tau_hops_and_blocks() {
        let b = Basis::full(2).unwrap();
        let t = b.tau(1, 2).unwrap();
        let ud = b.vector(&BasisState::single(2, 1).unwrap()).unwrap();
        let du = b.vector(&BasisState::single(2, 2).unwrap()).unwrap();
        let uu = b.vector(&BasisState::new(2, [1, 2]).unwrap()).unwrap();
        assert_eq!(t.matrix() * &ud, du);
        assert_eq!(t.matrix() * &uu, CVector::zeros(4));
        assert!(t.is_hermitian());
        assert_eq!(b.tau(2, 2), Err(Error::CoincidentSites(2)));
    }

    #[test]
    fn tau_commutes_with_number() {
        let t = tau(1, 2, 3).unwrap();
        let n = number_op(3).unwrap();
        assert_eq!(t.commutator(&n).unwrap(), Operator::zero(t.repr()));
    }

    #[test]
    fn current_boundaries_are_zero() {
        let chain = ChainSpec::homogeneous(3, -0.7, 0.2).unwrap();
        assert_eq!(current_op(0, &chain).unwrap(), Operator::zero(Repr::Full { sites: 3 }));
        assert_eq!(current_op(3, &chain).unwrap(), Operator::zero(Repr::Full { sites: 3 }));
        assert!(matches!(current_op(4, &chain), Err(Error::BondOutOfRange { .. })));
    }

    #[test]
    fn current_of_phase_superposition() {
        // ψ = (|1⟩ + i|2⟩)/√2 with J = -1/4 carries unit current.
        let chain = ChainSpec::homogeneous(2, -0.25, 0.0).unwrap();
        let b = Basis::full(2).unwrap();
        let psi = (b.vector(&BasisState::single(2, 1).unwrap()).unwrap()
            + b.vector(&BasisState::single(2, 2).unwrap()).unwrap() * I)
            * C64::new(1.0 / 2f64.sqrt(), 0.0);
        let j = current_op(1, &chain).unwrap().expect_pure(&psi);
        assert!((j - c(1.0)).norm() < 1e-15, "{j}");
        let one = b.vector(&BasisState::single(2, 1).unwrap()).unwrap();
        assert_eq!(current_op(1, &chain).unwrap().expect_pure(&one), ZERO);
    }

    #[test]
    fn kinetic_of_uniform_superposition() {
        let chain = ChainSpec::homogeneous(3, -0.25, 0.0).unwrap();
        let b = Basis::full(3).unwrap();
        let psi = (1..=3)
            .map(|x| b.vector(&BasisState::single(3, x).unwrap()).unwrap())
            .fold(CVector::zeros(8), |a, v| a + v)
            * C64::new(1.0 / 3f64.sqrt(), 0.0);
        let t1 = kinetic_op(1, &chain).unwrap();
        assert!((t1.expect_pure(&psi) - c(-1.0 / 3.0)).norm() < 1e-15);
        let down = b.vector(&BasisState::all_down(3).unwrap()).unwrap();
        assert_eq!(t1.matrix() * &down, CVector::zeros(8));
        assert!(t1.is_hermitian());
        assert!(kinetic_op(3, &chain).is_err());
    }

    #[test]
    fn number_operator_counts_up_spins() {
        let b = Basis::full(4).unwrap();
        let n = b.number();
        let down = b.vector(&BasisState::all_down(4).unwrap()).unwrap();
        assert_eq!(n.expect_pure(&down), ZERO);
        for x in 1..=4 {
            let v = b.vector(&BasisState::single(4, x).unwrap()).unwrap();
            assert_eq!(n.matrix() * &v, v);
        }
    }

    #[test]
    fn sector_basis_is_lexicographic() {
        let b = Basis::sector(4, 2).unwrap();
        let sets: Vec<Vec<usize>> = (0..b.dim()).map(|i| b.state(i).up_sites().iter().copied().collect()).collect();
        assert_eq!(sets, vec![vec![1, 2], vec![1, 3], vec![1, 4], vec![2, 3], vec![2, 4], vec![3, 4]]);
    }

    #[test]
    fn restrict_number_is_identity() {
        let r = sector_restrict(&number_op(3).unwrap(), 1, ConservationCheck::Verify).unwrap();
        assert_eq!(r, Operator::identity(Repr::Sector { sites: 3, excitations: 1 }));
    }

    #[test]
    fn restrict_rejects_raising() {
        let err = sector_restrict(&raise_lower(Ladder::Raise, 1, 3).unwrap(), 1, ConservationCheck::Verify);
        assert!(matches!(err, Err(Error::NotNumberConserving { commutator_norm }) if commutator_norm > 0.5));
        // with the check skipped the (meaningless) block is returned
        assert!(sector_restrict(&raise_lower(Ladder::Raise, 1, 3).unwrap(), 1, ConservationCheck::Skip).is_ok());
    }

    #[test]
    fn sector_builders_match_restriction() {
        let chain = ChainSpec::new(4, vec![0.3, -0.2, 0.5], vec![0.1, 0.0, -0.4]).unwrap();
        let full = Basis::full(4).unwrap();
        for k in 0..=4 {
            let sec = Basis::sector(4, k).unwrap();
            for x in 1..=4 {
                let z = full.pauli(Axis::Z, x).unwrap();
                assert_eq!(sector_restrict(&z, k, ConservationCheck::Verify).unwrap(), sec.pauli(Axis::Z, x).unwrap());
            }
            for x in 1..=3 {
                let j = full.current(x, &chain).unwrap();
                assert_eq!(sector_restrict(&j, k, ConservationCheck::Verify).unwrap(), sec.current(x, &chain).unwrap());
            }
        }
        assert!(matches!(
            Basis::sector(4, 1).unwrap().ladder(Ladder::Raise, 2),
            Err(Error::LeavesSector { sites: 4, excitations: 1 })
        ));
    }

    #[test]
    fn site_range_checked() {
        assert!(matches!(pauli(Axis::X, 0, 2), Err(Error::SiteOutOfRange { site: 0, sites: 2 })));
        assert!(matches!(pauli(Axis::X, 3, 2), Err(Error::SiteOutOfRange { site: 3, sites: 2 })));
        assert!(raise_lower(Ladder::Lower, 5, 4).is_err());
        assert_eq!(Axis::try_from(2).unwrap(), Axis::Y);
        assert!(Axis::try_from(4).is_err());
    }

    #[test]
    fn chain_validation() {
        assert!(ChainSpec::new(1, vec![], vec![]).is_err());
        assert!(ChainSpec::new(3, vec![1.0], vec![1.0, 1.0]).is_err());
        assert!(ChainSpec::new(3, vec![1.0, f64::NAN], vec![1.0, 1.0]).is_err());
        let ch = ChainSpec::new(3, vec![1.0, 2.0], vec![3.0, 4.0]).unwrap();
        assert_eq!(ch.j(0), 0.0);
        assert_eq!(ch.j(2), 2.0);
        assert_eq!(ch.k(3), 0.0);
        assert_eq!(ch.k(-1), 0.0);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(20, 1), 20);
        assert_eq!(binomial(6, 3), 20);
        assert_eq!(binomial(3, 4), 0);
    }
}
