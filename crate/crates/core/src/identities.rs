//! Seeded operator and trace-identity checks on random chains and states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{hamiltonian_at, BathSpec, DephasingSpec, Model};
use crate::error::Result;
use crate::observables::{bath_trace_identities, current_eom_rhs, magnetization, random_density_matrix};
use crate::spinops::{current_op, number_op, pauli, Axis, ChainSpec, Repr, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub trials: usize,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub trials: usize,
    pub max_sites: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { seed: 0, trials: 50, max_sites: 5 }
    }
}

fn random_chain(rng: &mut ChaCha8Rng, s: usize) -> Result<(ChainSpec, Vec<f64>)> {
    let j = (1..s).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k = (1..s).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok((ChainSpec::new(s, j, k)?, h))
}

struct Acc {
    name: &'static str,
    tolerance: f64,
    worst: f64,
    trials: usize,
}

impl Acc {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self { name, tolerance, worst: 0.0, trials: 0 }
    }

    fn add(&mut self, deviation: f64) {
        if self.worst.is_nan() || deviation.is_nan() {
            self.worst = f64::NAN;
        } else {
            self.worst = self.worst.max(deviation);
        }
    }

    fn finish(self) -> IdentityCheck {
        IdentityCheck { name: self.name, max_deviation: self.worst, tolerance: self.tolerance, trials: self.trials }
    }
}

/// Runs every identity on `trials` random draws for each chain length in
/// `2..=max_sites`.
pub fn run_suite(cfg: SuiteConfig) -> Result<Vec<IdentityCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut continuity = Acc::new("continuity commutator", 1e-12);
    let mut current_form = Acc::new("current operator forms", 1e-12);
    let mut number = Acc::new("H commutes with N3", 1e-12);
    let mut eom = Acc::new("analytic current equation of motion", 1e-10);
    let mut deph = Acc::new("dephasing current damping", 1e-10);
    let mut deph_mag = Acc::new("dephasing leaves magnetization", 1e-10);
    let mut bath_mag = Acc::new("bath magnetization sources", 1e-10);
    let mut bath_cur = Acc::new("bath current damping", 1e-10);
    let minus_i = C64::new(0.0, -1.0);
    for s in 2..=cfg.max_sites.max(2) {
        let n3 = number_op(s)?;
        for _ in 0..cfg.trials {
            let (chain, h) = random_chain(&mut rng, s)?;
            let ham = hamiltonian_at(&chain, &h)?;
            for x in 1..=s {
                let lhs = pauli(Axis::Z, x, s)?.commutator(&ham)?.scale(minus_i);
                let div = &current_op(x, &chain)? - &current_op(x - 1, &chain)?;
                continuity.add((&lhs + &div).norm());
            }
            for x in 1..s {
                let (s1, s2) = (pauli(Axis::X, x, s)?, pauli(Axis::Y, x, s)?);
                let (t1, t2) = (pauli(Axis::X, x + 1, s)?, pauli(Axis::Y, x + 1, s)?);
                let alt = (&(&s1 * &t2) - &(&s2 * &t1)).scale(2.0 * chain.j(x as isize));
                current_form.add((&current_op(x, &chain)? - &alt).norm());
            }
            number.add(ham.commutator(&n3)?.norm());

            let eta = rng.random_range(0.0..1.0);
            let eps = rng.random_range(0.0..1.0);
            let mu = rng.random_range(-1.0..1.0);
            let rho = random_density_matrix(Repr::Full { sites: s }, &mut rng);
            let r = rho.density_matrix()?;
            let model = Model::full(chain.clone(), DephasingSpec::new(eta)?, BathSpec::new(eps, mu)?)?;
            let d_deph = model.dephasing_dissipator(r);
            let d_bath = model.bath_dissipator(r);
            for x in 1..s {
                let j = model.current_op(x);
                let brute = rho.expect(&current_op(x, &chain)?.commutator(&ham)?.scale(minus_i))?.re;
                eom.add((current_eom_rhs(&rho, x, &chain, &h, DephasingSpec::none(), BathSpec::none())? - brute).abs());
                let jr = (j * r).trace().re;
                deph.add(((j * &d_deph).trace().re + 4.0 * eta * jr).abs());
                let edges = (x == 1) as u8 + (x == s - 1) as u8;
                bath_cur.add(((j * &d_bath).trace().re + 2.0 * eps * edges as f64 * jr).abs());
            }
            for x in 1..=s {
                let sz = model.sigma3(x);
                deph_mag.add((0..sz.len()).map(|i| sz[i] * d_deph[(i, i)].re).sum::<f64>().abs());
                let m = magnetization(&rho, x)?;
                let (left, right) = bath_trace_identities(&rho, x, eps, mu)?;
                let want_l = if x == 1 { -4.0 * eps * (mu + m) } else { 0.0 };
                let want_r = if x == s { -4.0 * eps * (m - mu) } else { 0.0 };
                bath_mag.add((left - want_l).abs().max((right - want_r).abs()));
            }
            for acc in [
                &mut continuity,
                &mut current_form,
                &mut number,
                &mut eom,
                &mut deph,
                &mut deph_mag,
                &mut bath_mag,
                &mut bath_cur,
            ] {
                acc.trials += 1;
            }
        }
    }
    Ok([continuity, current_form, number, eom, deph, deph_mag, bath_mag, bath_cur]
        .into_iter()
        .map(Acc::finish)
        .collect())
}
