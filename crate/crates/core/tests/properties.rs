use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use msmd_core::density::{
    conditional_marginal_product, geometric_mean, kl_divergence, GaussianDensity, Var, VarId,
};
use msmd_core::grid::{grid_geometric_mix, grid_kl, grid_marginalize, grid_tv, Axis};
use msmd_core::network::{second_singular_value, sinkhorn_normalize, stochastic_residual, Network, Topology, WeightRule};
use msmd_core::scenarios::synthetic::random_grid_density;

fn gaussian2(mx: f64, my: f64, sx: f64, sy: f64, rho: f64) -> GaussianDensity {
    let cov = DMatrix::from_row_slice(2, 2, &[sx * sx, rho * sx * sy, rho * sx * sy, sy * sy]);
    GaussianDensity::from_moments(vec![Var::scalar(0), Var::scalar(1)], DVector::from_vec(vec![mx, my]), cov).unwrap()
}

fn arb_gaussian2() -> impl Strategy<Value = GaussianDensity> {
    (-3.0..3.0, -3.0..3.0, 0.3..3.0, 0.3..3.0, -0.9..0.9).prop_map(|(a, b, c, d, r)| gaussian2(a, b, c, d, r))
}

fn axes_2d() -> Vec<Axis> {
    vec![Axis::new(VarId(0), -2.0, 2.0, 17).unwrap(), Axis::new(VarId(1), -1.0, 1.0, 9).unwrap()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_nonnegative_and_zero_on_self(p in arb_gaussian2(), q in arb_gaussian2()) {
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-10);
    }

    #[test]
    fn geometric_mean_of_copies_is_identity(p in arb_gaussian2(), a in 0.05..0.9f64) {
        let b = (1.0 - a) / 2.0;
        let m = geometric_mean(&[&p, &p, &p], &[a, b, b]).unwrap();
        prop_assert!(kl_divergence(&p, &m).unwrap().abs() < 1e-9);
    }

    #[test]
    fn geometric_mean_info_is_weighted_sum(p in arb_gaussian2(), q in arb_gaussian2(), w in 0.05..0.95f64) {
        let m = geometric_mean(&[&p, &q], &[w, 1.0 - w]).unwrap();
        let expect = p.info_matrix() * w + q.info_matrix() * (1.0 - w);
        prop_assert!((m.info_matrix() - expect).norm() < 1e-9);
    }

    #[test]
    fn conditional_marginal_product_has_requested_marginal(p in arb_gaussian2(), mu in -2.0..2.0f64, prec in 0.2..5.0f64) {
        let q = GaussianDensity::isotropic(vec![Var::scalar(1)], DVector::from_element(1, mu), prec).unwrap();
        let r = conditional_marginal_product(&p, &q).unwrap();
        prop_assert!(kl_divergence(&r.marginalize(&[VarId(1)]).unwrap(), &q).unwrap() < 1e-9);
        let cp = p.condition(&[VarId(1)]).unwrap();
        let cr = r.condition(&[VarId(1)]).unwrap();
        prop_assert!((cp.info_matrix() - cr.info_matrix()).norm() < 1e-9);
    }

    #[test]
    fn grid_mix_normalizer_is_at_most_one(seed in any::<u64>(), w in 0.05..0.95f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_grid_density(&axes_2d(), &mut rng).unwrap();
        let b = random_grid_density(&axes_2d(), &mut rng).unwrap();
        let (_, log_z) = grid_geometric_mix(&[&a, &b], &[w, 1.0 - w]).unwrap();
        prop_assert!(log_z <= 1e-12);
        let (same, log_z) = grid_geometric_mix(&[&a, &a], &[w, 1.0 - w]).unwrap();
        prop_assert!(log_z.abs() < 1e-12);
        prop_assert!(grid_kl(&a, &same).unwrap().abs() < 1e-12);
    }

    #[test]
    fn grid_pinsker_and_symmetry(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_grid_density(&axes_2d(), &mut rng).unwrap();
        let b = random_grid_density(&axes_2d(), &mut rng).unwrap();
        let tv = grid_tv(&a, &b).unwrap();
        prop_assert!((tv - grid_tv(&b, &a).unwrap()).abs() < 1e-14);
        prop_assert!(tv <= (grid_kl(&a, &b).unwrap() / 2.0).sqrt() + 1e-12);
    }

    #[test]
    fn grid_marginal_mass_is_one(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_grid_density(&axes_2d(), &mut rng).unwrap();
        for keep in [VarId(0), VarId(1)] {
            let m = grid_marginalize(&a, &[keep]).unwrap();
            prop_assert!((m.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sinkhorn_yields_doubly_stochastic(vals in prop::collection::vec(0.05..3.0f64, 16)) {
        let m = DMatrix::from_row_slice(4, 4, &vals);
        let sym = (&m + m.transpose()) * 0.5;
        let report = sinkhorn_normalize(&sym, 1e-12, 100_000).unwrap();
        prop_assert!(stochastic_residual(&report.matrix) < 1e-10);
        prop_assert!(second_singular_value(&report.matrix) < 1.0);
    }

    #[test]
    fn edge_count_graphs_are_connected(edges in 7usize..=28) {
        let net = Network::from_topology(8, &Topology::EdgeCount { edges }, WeightRule::LazySinkhorn, 0).unwrap();
        prop_assert_eq!(net.edge_count(), edges);
        prop_assert!(net.is_connected_on(&(0..8).collect::<Vec<_>>()));
        prop_assert!(net.contraction_rate(None).unwrap() < 1.0);
    }
}
