use approx::assert_relative_eq;
use mcrelay_core::analytics::{exhaustive_error, expected_error_sweep, AnalyticModel, AnalyticsOptions, ThresholdPair};
use mcrelay_core::model::{default_two_hop_config, nm, us, ProtocolConfig, ProtocolKind, REFERENCE_DIFFUSION};
use mcrelay_core::sim::{run_realization, SimConfig, Simulator};
use proptest::prelude::*;

fn one_bit(kind: ProtocolKind, xi: f64) -> f64 {
    let mut cfg = default_two_hop_config(kind);
    cfg.modulation.bit_interval = us(400.0);
    cfg.modulation.length = 1;
    let model = AnalyticModel::new(&cfg).unwrap();
    exhaustive_error(&model, ThresholdPair::uniform(xi)).unwrap().average_error
}

// One-bit error probabilities from hand-derived expressions evaluated with
// 30-digit arithmetic, T_B = 400 us, M = 5, t0 = 20 us.
#[test]
fn one_bit_errors_match_hand_derivations() {
    // 0.5 Pr(Poisson(3.0614...) < 6)
    assert_relative_eq!(one_bit(ProtocolKind::Baseline, 6.0), 0.45488098898782669, max_relative = 1e-9);
    // 0.5 (1 - (1 - m)^2), m = Pr(Poisson(19.643...) < 10)
    assert_relative_eq!(one_bit(ProtocolKind::Fd1, 10.0), 0.0061220593632713421, max_relative = 1e-9);
    // relay forwards in the next interval while the source's molecules linger
    assert_relative_eq!(one_bit(ProtocolKind::Hd, 10.0), 0.0043118644021998243, max_relative = 1e-9);
}

#[test]
fn reference_scenario_parameters() {
    for kind in ProtocolKind::ALL {
        let cfg = default_two_hop_config(kind);
        let topo = &cfg.topology;
        assert_eq!(topo.destination.position.x, nm(600.0));
        assert_eq!(topo.destination.radius, nm(45.0));
        assert!(topo.species.iter().all(|s| s.diffusion_coefficient == 4.365e-10));
        assert_eq!(REFERENCE_DIFFUSION, 4.365e-10);
        assert_eq!(cfg.modulation.p1, 0.5);
        assert_eq!(cfg.modulation.length, 50);
        match kind {
            ProtocolKind::Baseline => {
                assert!(topo.relay.is_none());
                assert_eq!(cfg.modulation.source_molecules, 10_000);
            }
            _ => {
                let relay = topo.relay.unwrap();
                assert_eq!(relay.radius, nm(45.0));
                assert_eq!(relay.position.x, nm(300.0));
                assert_eq!((cfg.modulation.source_molecules, cfg.modulation.relay_molecules), (5000, 5000));
            }
        }
    }
}

#[test]
fn simulation_agrees_with_one_bit_analytics() {
    let mut cfg = default_two_hop_config(ProtocolKind::Baseline);
    cfg.modulation.bit_interval = us(400.0);
    cfg.modulation.length = 1;
    let cfg = cfg.with_threshold(6.0);
    let mut sim = SimConfig::new(cfg);
    sim.realizations = 4000;
    sim.master_seed = 5;
    let stats = Simulator::new(&sim).unwrap().estimate_lanes(&[ThresholdPair::uniform(6.0)]).unwrap();
    let expected = 0.45488098898782669;
    assert!((stats[0].average_error - expected).abs() < 3.0 * stats[0].std_error + 1e-12, "{stats:?}");
}

fn small(kind: ProtocolKind, len: usize, tb: f64) -> ProtocolConfig {
    let mut cfg = default_two_hop_config(kind);
    cfg.modulation.length = len;
    cfg.modulation.bit_interval = us(tb);
    cfg
}

fn kinds() -> impl Strategy<Value = ProtocolKind> {
    prop::sample::select(ProtocolKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn errors_are_probabilities(kind in kinds(), len in 1usize..6, tb in 150.0f64..800.0, xi in 0.0f64..60.0, seed in any::<u64>()) {
        let cfg = small(kind, len, tb);
        let model = AnalyticModel::new(&cfg).unwrap();
        let exact = exhaustive_error(&model, ThresholdPair::uniform(xi)).unwrap();
        prop_assert!(exact.per_bit_error.iter().all(|e| (0.0..=1.0).contains(e)));
        let mc = expected_error_sweep(&model, &[ThresholdPair::uniform(xi)], 20, seed, &AnalyticsOptions::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&mc[0].average_error));
    }

    #[test]
    fn realizations_replay(kind in kinds(), len in 1usize..4, xi in 1.0f64..30.0, seed in any::<u64>(), index in 0u64..1000) {
        let mut sim = SimConfig::new(small(kind, len, 300.0).with_threshold(xi));
        sim.master_seed = seed;
        let a = run_realization(&sim, index).unwrap();
        let b = run_realization(&sim, index).unwrap();
        prop_assert_eq!(&a, &b);
        let errors: Vec<bool> = a.source_bits.iter().zip(&a.destination_detected).map(|(s, d)| s != d).collect();
        prop_assert_eq!(a.errors, errors);
    }

    #[test]
    fn larger_threshold_fewer_relay_false_alarms(xi in 1.0f64..40.0, dx in 0.5f64..10.0) {
        // With the source silent, only self-interference can make the relay
        // detect; raising the threshold cannot make that more likely.
        let cfg = small(ProtocolKind::Fd2, 1, 400.0);
        let model = AnalyticModel::new(&cfg).unwrap();
        let src = model.source_part(&[false]).unwrap();
        let lo = model.context(&src, ThresholdPair::uniform(xi)).relay_tails(0).unwrap();
        let hi = model.context(&src, ThresholdPair::uniform(xi + dx)).relay_tails(0).unwrap();
        prop_assert!(hi.1 <= lo.1 + 1e-15);
    }
}
