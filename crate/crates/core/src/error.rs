use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("site {site} outside 1..={sites}")]
    SiteOutOfRange { site: usize, sites: usize },

    #[error("bond {bond} outside {min}..={max}")]
    BondOutOfRange { bond: usize, min: usize, max: usize },

    #[error("two-site operator needs distinct sites, got {0} twice")]
    CoincidentSites(usize),

    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("operator does not conserve the excitation number (commutator norm {commutator_norm:.3e})")]
    NotNumberConserving { commutator_norm: f64 },

    #[error("operator maps out of the {excitations}-excitation sector of {sites} sites")]
    LeavesSector { sites: usize, excitations: usize },

    #[error("representation mismatch: {0}")]
    ReprMismatch(String),

    #[error("boundary baths break number conservation and cannot act on an excitation sector")]
    BathInSector,

    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("expectation value has imaginary part {imag:.3e}")]
    ImaginaryExpectation { imag: f64 },

    #[error("integrator failed on [{t0}, {t1}]: {reason}")]
    Integrator { t0: f64, t1: f64, reason: String },

    #[error("state lost {what} at t = {t}: deviation {deviation:.3e}")]
    InvariantViolation { what: &'static str, t: f64, deviation: f64 },

    #[error("quadrature did not converge on [{a}, {b}] (estimated error {error:.3e})")]
    Quadrature { a: f64, b: f64, error: f64 },

    #[error("initial state inconsistent with target {what} at site {site}: |{got} - {expected}| > tolerance")]
    InconsistentInitialState { what: &'static str, site: usize, got: f64, expected: f64 },

    #[error("handle at bond {bond} is {handle:.3e}, below the floor")]
    Breakdown { bond: usize, handle: f64 },

    #[error("field gradient at bond {bond} is {gradient:.3e}, above the cap")]
    Runaway { bond: usize, gradient: f64 },
}
