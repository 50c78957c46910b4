use cachequeue::{
    build_network, replicate, simulate, throughput_upper_bound, verify_response_time_law, Policy,
    ServiceParams, SimConfig,
};
use proptest::prelude::*;

fn quick() -> SimConfig {
    SimConfig::default().with_cycles(20_000).with_replications(3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn summary_is_consistent(p in 0.3f64..=1.0, n in 1u32..80, seed in any::<u64>()) {
        let net = build_network(&Policy::Lru, p, &ServiceParams::default(), n).unwrap();
        let s = replicate(&net, &quick().with_seed(seed)).unwrap();
        let xs: Vec<f64> = s.replications.iter().map(|r| r.throughput).collect();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(0.0, f64::max);
        prop_assert!(s.ci_half_width >= 0.0);
        prop_assert!(lo <= s.mean_throughput + 1e-12 && s.mean_throughput <= hi + 1e-12);
        prop_assert!(s.mean_throughput <= 1.05 * throughput_upper_bound(&net).x_upper);
        for r in &s.replications {
            prop_assert!(r.stations.iter().all(|st| (0.0..=1.0 + 1e-9).contains(&st.utilization)));
        }
    }

    #[test]
    fn bit_identical_reruns(p in 0.0f64..=1.0, seed in any::<u64>(), rep in 0u64..4) {
        let net = build_network(&Policy::Clock, p, &ServiceParams::default(), 16).unwrap();
        let c = quick().with_seed(seed);
        prop_assert_eq!(simulate(&net, &c, rep).unwrap(), simulate(&net, &c, rep).unwrap());
    }
}

/// Little's law over the queue stations: sum of mean queue lengths equals
/// throughput times the per-cycle queueing time.
#[test]
fn littles_law_over_queues() {
    let net = build_network(&Policy::Lru, 0.9, &ServiceParams::default(), 72).unwrap();
    let r = simulate(&net, &SimConfig::default().with_cycles(100_000), 0).unwrap();
    let in_queues: f64 = r.stations.iter().map(|s| s.mean_queue_length).sum();
    let little = r.throughput * r.mean_response_time;
    assert!((in_queues - little).abs() / little < 0.01, "{in_queues} vs {little}");
    assert!(verify_response_time_law(&r, &net) < 0.005);
}
