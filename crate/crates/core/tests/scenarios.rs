use proptest::prelude::*;

use msmd_core::estimators::{run_rounds, StepSchedule};
use msmd_core::network::{validate_marginal_consensus, Topology};
use msmd_core::scenarios::{
    EstimatorKind, LocalizationConfig, LocalizationRun, LocalizationScenario, MappingConfig, MappingScenario,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn observations_do_not_depend_on_agent_order(seed in any::<u64>(), round in 0usize..10_000) {
        let s = LocalizationScenario::build(LocalizationConfig::new(6, Topology::Ring, 2.0, seed)).unwrap();
        let forward: Vec<_> = (0..6).map(|i| s.observe(i, round)).collect();
        let mut backward: Vec<_> = (0..6).rev().map(|i| s.observe(i, round)).collect();
        backward.reverse();
        prop_assert_eq!(forward, backward);
    }

    #[test]
    fn localization_marginal_sets_are_valid(seed in 0u64..1000, edges in 7usize..=28) {
        let s = LocalizationScenario::build(LocalizationConfig::new(8, Topology::EdgeCount { edges }, 1.0, seed)).unwrap();
        prop_assert!(validate_marginal_consensus(s.layout(), s.network()).is_ok());
        for i in 0..8 {
            let own: Vec<usize> = s.layout().agent_vars(i).iter().map(|v| v.0).collect();
            prop_assert_eq!(own, s.network().closed_neighborhood(i));
        }
    }

    #[test]
    fn mapping_storage_strictly_smaller(seed in 0u64..50) {
        let s = MappingScenario::build(MappingConfig::desk(seed)).unwrap();
        let (marginal, full) = s.storage();
        prop_assert!(marginal < full);
        prop_assert!(validate_marginal_consensus(s.layout(), s.network()).is_ok());
    }
}

#[test]
fn zero_rounds_records_only_initial_metrics() {
    let s = LocalizationScenario::build(LocalizationConfig::new(4, Topology::Line, 1.0, 3)).unwrap();
    let mut run = LocalizationRun::new(&s, EstimatorKind::Marginal, StepSchedule::Constant { alpha: 1.0 }, 0.8, 1).unwrap();
    let trace = run_rounds(&mut run, 0).unwrap();
    assert!(trace.rows.is_empty());
    assert_eq!(trace.initial.len(), 4);
}

#[test]
fn estimators_shrink_error_on_a_small_ring() {
    let s = LocalizationScenario::build(LocalizationConfig::new(5, Topology::Ring, 5.0, 1)).unwrap();
    for kind in EstimatorKind::ALL {
        let mut run = LocalizationRun::new(&s, kind, StepSchedule::Constant { alpha: 1.0 }, 0.8, 0).unwrap().without_reference();
        let trace = run_rounds(&mut run, 300).unwrap();
        let first = trace.mean_error(1).unwrap();
        let last = trace.mean_error(300).unwrap();
        assert!(last < 0.3 * first, "{kind}: {first} -> {last}");
    }
}
