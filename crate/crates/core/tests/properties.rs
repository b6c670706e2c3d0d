use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spinvl::dynamics::{build_h0, BathSpec, DephasingSpec, FieldSource, FieldTable, Model, StateData};
use spinvl::observables::{current_eom_rhs, random_density_matrix, random_pure_state};
use spinvl::spinops::{number_op, Basis, CMatrix, ChainSpec, Repr};
use spinvl::vlsolver::{field_from_gradient, Gauge};

fn chain_strategy(max_sites: usize) -> impl Strategy<Value = (ChainSpec, Vec<f64>)> {
    (2..=max_sites).prop_flat_map(|s| {
        (
            prop::collection::vec(-1.0..1.0f64, s - 1),
            prop::collection::vec(-1.0..1.0f64, s - 1),
            prop::collection::vec(-1.0..1.0f64, s),
        )
            .prop_map(move |(j, k, h)| (ChainSpec::new(s, j, k).unwrap(), h))
    })
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn hermiticity(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn h0_is_hermitian_and_conserves_number((chain, _) in chain_strategy(5)) {
        let h0 = build_h0(&chain).unwrap();
        prop_assert!(h0.is_hermitian());
        let c = h0.commutator(&number_op(chain.sites()).unwrap()).unwrap();
        prop_assert!(max_abs(c.matrix()) < 1e-14);
    }

    #[test]
    fn lindblad_rhs_is_hermitian_and_trace_free(
        (chain, h) in chain_strategy(4),
        eta in 0.0..1.0f64,
        eps in 0.0..1.0f64,
        mu in -1.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let s = chain.sites();
        let model = Model::full(chain, DephasingSpec::new(eta).unwrap(), BathSpec::new(eps, mu).unwrap()).unwrap();
        let rho = random_density_matrix(Repr::Full { sites: s }, &mut ChaCha8Rng::seed_from_u64(seed));
        let r = model.lindblad_rhs(rho.density_matrix().unwrap(), &h).unwrap();
        prop_assert!(hermiticity(&r) < 1e-13);
        prop_assert!(r.trace().norm() < 1e-13);
    }

    #[test]
    fn number_is_conserved_without_baths(
        (chain, h) in chain_strategy(4),
        eta in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let s = chain.sites();
        let model = Model::full(chain, DephasingSpec::new(eta).unwrap(), BathSpec::none()).unwrap();
        let rho = random_density_matrix(Repr::Full { sites: s }, &mut ChaCha8Rng::seed_from_u64(seed));
        let r = model.lindblad_rhs(rho.density_matrix().unwrap(), &h).unwrap();
        let n3 = number_op(s).unwrap();
        prop_assert!((n3.matrix() * r).trace().norm() < 1e-13);
    }

    #[test]
    fn sector_rhs_is_the_projected_full_rhs(
        (chain, h) in chain_strategy(5),
        eta in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let s = chain.sites();
        let deph = DephasingSpec::new(eta).unwrap();
        let sector = Model::sector(chain.clone(), 1, deph).unwrap();
        let full = Model::full(chain, deph, BathSpec::none()).unwrap();
        let rho = random_density_matrix(Repr::Sector { sites: s, excitations: 1 }, &mut ChaCha8Rng::seed_from_u64(seed));
        let rho_full = rho.embed_in_full().unwrap();
        let r_sector = sector.lindblad_rhs(rho.density_matrix().unwrap(), &h).unwrap();
        let r_full = full.lindblad_rhs(rho_full.density_matrix().unwrap(), &h).unwrap();
        let embedded = {
            let basis = Basis::full(s).unwrap();
            let sb = Basis::sector(s, 1).unwrap();
            let mut m = CMatrix::zeros(basis.dim(), basis.dim());
            for a in 0..sb.dim() {
                for b in 0..sb.dim() {
                    let i = basis.index_of(&sb.state(a)).unwrap();
                    let j = basis.index_of(&sb.state(b)).unwrap();
                    m[(i, j)] = r_sector[(a, b)];
                }
            }
            m
        };
        prop_assert!(max_abs(&(embedded - r_full)) < 1e-13);
    }

    #[test]
    fn uniform_field_shift_leaves_rates_unchanged(
        (chain, h) in chain_strategy(4),
        c in -3.0..3.0f64,
        eta in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let s = chain.sites();
        let model = Model::full(chain, DephasingSpec::new(eta).unwrap(), BathSpec::new(0.2, 0.3).unwrap()).unwrap();
        let rho = random_density_matrix(Repr::Full { sites: s }, &mut ChaCha8Rng::seed_from_u64(seed));
        let shifted: Vec<f64> = h.iter().map(|v| v + c).collect();
        let state = rho.data();
        let rates = |h: &[f64]| {
            let r = StateData::Density(model.lindblad_rhs(rho.density_matrix().unwrap(), h).unwrap());
            model.rates(state, &r)
        };
        let (a, b) = (rates(&h), rates(&shifted));
        for (u, v) in a.magnetization.iter().chain(&a.current).zip(b.magnetization.iter().chain(&b.current)) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_current_rate_matches_exact_rhs(
        (chain, h) in chain_strategy(5),
        eta in 0.0..1.0f64,
        eps in 0.0..1.0f64,
        mu in -1.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let s = chain.sites();
        let deph = DephasingSpec::new(eta).unwrap();
        let bath = BathSpec::new(eps, mu).unwrap();
        let model = Model::full(chain.clone(), deph, bath).unwrap();
        let rho = random_density_matrix(Repr::Full { sites: s }, &mut ChaCha8Rng::seed_from_u64(seed));
        let r = StateData::Density(model.lindblad_rhs(rho.density_matrix().unwrap(), &h).unwrap());
        let exact = model.rates(rho.data(), &r);
        for x in 1..s {
            let analytic = current_eom_rhs(&rho, x, &chain, &h, deph, bath).unwrap();
            prop_assert!((analytic - exact.current[x - 1]).abs() < 1e-10);
        }
    }

    #[test]
    fn continuity_holds_on_exact_rates(
        (chain, h) in chain_strategy(5),
        eta in 0.0..1.0f64,
        eps in 0.0..1.0f64,
        mu in -1.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let s = chain.sites();
        let model = Model::full(chain, DephasingSpec::new(eta).unwrap(), BathSpec::new(eps, mu).unwrap()).unwrap();
        let rho = random_density_matrix(Repr::Full { sites: s }, &mut ChaCha8Rng::seed_from_u64(seed));
        let r = StateData::Density(model.lindblad_rhs(rho.density_matrix().unwrap(), &h).unwrap());
        let rates = model.rates(rho.data(), &r);
        let obs = model.observables(rho.data());
        for x in 1..=s {
            let mut res = rates.magnetization[x - 1] + obs.current[x] - obs.current[x - 1];
            if x == 1 {
                res += 4.0 * eps * (obs.magnetization[0] + mu);
            }
            if x == s {
                res += 4.0 * eps * (obs.magnetization[s - 1] - mu);
            }
            prop_assert!(res.abs() < 1e-12);
        }
    }

    #[test]
    fn pure_and_density_rates_agree((chain, h) in chain_strategy(4), seed in any::<u64>()) {
        let s = chain.sites();
        let model = Model::full(chain, DephasingSpec::none(), BathSpec::none()).unwrap();
        let psi = random_pure_state(Repr::Full { sites: s }, &mut ChaCha8Rng::seed_from_u64(seed));
        let rho = psi.to_density();
        let rp = model.rates(psi.data(), &model.state_rhs(&psi, &h).unwrap());
        let rd = model.rates(rho.data(), &model.state_rhs(&rho, &h).unwrap());
        for (u, v) in rp.current.iter().chain(&rp.magnetization).zip(rd.current.iter().chain(&rd.magnetization)) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn sector_embedding_preserves_states(s in 2usize..=6, k in 0usize..=6, seed in any::<u64>()) {
        prop_assume!(k <= s);
        let repr = Repr::Sector { sites: s, excitations: k };
        let rho = random_density_matrix(repr, &mut ChaCha8Rng::seed_from_u64(seed));
        let full = rho.embed_in_full().unwrap();
        prop_assert_eq!(full.restrict_to_sector(k).unwrap(), rho);
    }

    #[test]
    fn gauges_share_gradients(g in prop::collection::vec(-10.0..10.0f64, 1..8)) {
        let a = field_from_gradient(&g, Gauge::FirstSite);
        let b = field_from_gradient(&g, Gauge::LastSite);
        prop_assert_eq!(a[0], 0.0);
        prop_assert_eq!(b[b.len() - 1], 0.0);
        for x in 0..g.len() {
            prop_assert!((a[x + 1] - a[x] - g[x]).abs() < 1e-12);
            prop_assert!((b[x + 1] - b[x] - g[x]).abs() < 1e-12);
        }
        let shift = a[0] - b[0];
        prop_assert!(a.iter().zip(&b).all(|(u, v)| (u - v - shift).abs() < 1e-12));
    }

    #[test]
    fn field_table_interpolant_stays_between_neighbours(
        rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 2..10),
        frac in 0.0..1.0f64,
    ) {
        let grid: Vec<f64> = (0..rows.len()).map(|n| n as f64 * 0.5).collect();
        let t = frac * grid[grid.len() - 1];
        let table = FieldTable::new(grid.clone(), rows.clone()).unwrap();
        let mut out = vec![0.0; 3];
        table.field_at(t, &mut out);
        let hi = grid.partition_point(|&v| v <= t).clamp(1, grid.len() - 1);
        for x in 0..3 {
            let (a, b) = (rows[hi - 1][x], rows[hi][x]);
            prop_assert!(out[x] >= a.min(b) - 1e-12 && out[x] <= a.max(b) + 1e-12);
        }
    }
}
