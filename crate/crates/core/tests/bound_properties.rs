use cachequeue::policy::{clock_g, prob_lru_fifo_threshold, FractionCurve, STANDARD_DISKS};
use cachequeue::{
    build_network, closed_form_bound, device_demands, hit_ratio_knee, mean_think_time,
    throughput_upper_bound, BindingTerm, ClassLabel, Policy, S3Fractions, ServiceParams,
};
use proptest::prelude::*;

fn params(disk: f64) -> ServiceParams {
    ServiceParams::default().with_disk(disk)
}

fn engine(policy: &Policy, p: f64, disk: f64, mpl: u32) -> f64 {
    throughput_upper_bound(&build_network(policy, p, &params(disk), mpl).unwrap()).x_upper
}

/// Hand-substituted bounds with the measured means (N = 72, disk 100).
fn lru_100(p: f64) -> f64 {
    (72.0 / (101.1 - 99.3 * p)).min(1.0 / f64::max(0.59, 0.7 * p))
}

fn fifo_100(p: f64) -> f64 {
    (72.0 / (101.24 - 100.73 * p)).min(1.0 / (0.73 * (1.0 - p)))
}

fn slru(f: f64) -> Policy {
    Policy::Slru {
        t_fraction: Some(FractionCurve::constant(f).unwrap()),
    }
}

fn s3(ghost: f64, promote: f64) -> Policy {
    Policy::S3Fifo {
        fractions: Some(S3Fractions {
            ghost: FractionCurve::constant(ghost).unwrap(),
            promote: FractionCurve::constant(promote).unwrap(),
        }),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

proptest! {
    #[test]
    fn closed_forms_match_engine(p in 0.0f64..=1.0, which in 0usize..3, d in 0usize..3) {
        let policy = [Policy::Lru, Policy::Fifo, Policy::Clock][which].clone();
        let disk = STANDARD_DISKS[d];
        let cf = closed_form_bound(&policy, p, disk, 72).unwrap();
        prop_assert!(rel(engine(&policy, p, disk, 72), cf) < 1e-9);
    }

    #[test]
    fn hand_substituted_forms(p in 0.0f64..1.0) {
        prop_assert!(rel(engine(&Policy::Lru, p, 100.0, 72), lru_100(p)) < 1e-9);
        prop_assert!(rel(engine(&Policy::Fifo, p, 100.0, 72), fifo_100(p)) < 1e-9);
    }

    #[test]
    fn lru_demand_and_think_time_are_linear(p in 0.0f64..=1.0) {
        let net = build_network(&Policy::Lru, p, &params(100.0), 72).unwrap();
        let d = device_demands(&net);
        prop_assert!((d.total_lo - (0.7 * p + 0.59)).abs() < 1e-12);
        prop_assert!((mean_think_time(&net) - (100.51 - 100.0 * p)).abs() < 1e-12);
    }

    #[test]
    fn lru_bottleneck_switch(p in 0.0f64..=1.0) {
        let switch = 0.59 / 0.7;
        prop_assume!((p - switch).abs() > 1e-9);
        let d = device_demands(&build_network(&Policy::Lru, p, &params(100.0), 72).unwrap());
        let name = d.bottleneck.unwrap();
        prop_assert_eq!(name.as_str(), if p < switch { "head" } else { "delink" });
    }

    #[test]
    fn prob_lru_delink_interpolates(q in 0.0f64..=1.0, p in 0.0f64..=1.0) {
        let net = build_network(&Policy::ProbLru { q }, p, &params(100.0), 72).unwrap();
        let d = device_demands(&net).demand_of("delink");
        prop_assert!((d - (1.0 - q) * p * 0.7).abs() < 1e-12);
    }

    #[test]
    fn clock_tail_demand(p in 0.0f64..=1.0) {
        let d = device_demands(&build_network(&Policy::Clock, p, &params(100.0), 72).unwrap());
        let expect = (1.0 - p) * (0.65 + 0.3 * clock_g(p));
        prop_assert!((d.demand_of("tail") - expect).abs() < 1e-12);
    }

    #[test]
    fn bound_terms_dominate_for_every_policy(
        p in 0.0f64..=1.0,
        d in 0usize..3,
        n in 1u32..200,
        f in 0.0f64..=1.0,
        g in 0.0f64..=1.0,
    ) {
        let disk = STANDARD_DISKS[d];
        for policy in [
            Policy::Lru, Policy::Fifo, Policy::ProbLru { q: f }, Policy::Clock, slru(f), s3(f, g),
        ] {
            let net = build_network(&policy, p, &params(disk), n).unwrap();
            let prof = device_demands(&net);
            let b = throughput_upper_bound(&net);
            prop_assert!(prof.total_lo <= prof.total + 1e-12);
            prop_assert!(prof.total <= prof.total_hi + 1e-12);
            prop_assert!(b.x_upper <= 1.0 / prof.dmax);
            prop_assert!(b.x_upper <= f64::from(n) / (prof.total_lo + prof.think_time));
            prop_assert!(engine(&policy, p, disk, n + 1) >= b.x_upper);
        }
    }
}

#[test]
fn fine_grid_fidelity() {
    for policy in [Policy::Lru, Policy::Fifo, Policy::Clock] {
        for disk in STANDARD_DISKS {
            for i in 0..=1000 {
                let p = f64::from(i) / 1000.0;
                let cf = closed_form_bound(&policy, p, disk, 72).unwrap();
                let e = engine(&policy, p, disk, 72);
                assert!(rel(e, cf) < 1e-9, "{policy} disk {disk} p {p}: {e} vs {cf}");
            }
        }
    }
}

#[test]
fn spot_values() {
    assert!((engine(&Policy::Lru, 0.5, 100.0, 72) - 72.0 / 51.45).abs() < 5e-5);
    assert!((engine(&Policy::Lru, 0.9, 100.0, 72) - 1.0 / 0.63).abs() < 5e-5);
    assert!((engine(&Policy::Fifo, 0.9, 100.0, 72) - 72.0 / 10.583).abs() < 5e-4);
    assert!((engine(&Policy::Lru, 1.0, 5.0, 72) - 1.0 / 0.7).abs() < 1e-12);
    let b = throughput_upper_bound(&build_network(&Policy::Lru, 0.5, &params(100.0), 72).unwrap());
    assert_eq!(b.binding, BindingTerm::PopulationLimited);
}

#[test]
fn knees_and_trends() {
    let knee = |policy: &Policy, disk: f64, mpl: u32| {
        hit_ratio_knee(policy, &params(disk), mpl).unwrap().decrease_start
    };
    // delink overtakes head at 0.7 p = 0.59
    let lru100 = knee(&Policy::Lru, 100.0, 72).unwrap();
    assert!((lru100 - 0.59 / 0.7).abs() < 2e-6, "{lru100}");
    let lru500 = knee(&Policy::Lru, 500.0, 72).unwrap();
    let lru5 = knee(&Policy::Lru, 5.0, 72).unwrap();
    assert!(lru500 >= lru100 && lru100 >= lru5);
    for disk in STANDARD_DISKS {
        assert!(knee(&Policy::Fifo, disk, 72).is_none());
        assert!(knee(&Policy::Clock, disk, 72).is_none());
        assert!(knee(&s3(0.1, 0.3), disk, 72).is_none());
        assert!(knee(&slru(0.95), disk, 144).unwrap() <= knee(&slru(0.95), disk, 72).unwrap() + 1e-9);
    }
}

#[test]
fn classification_table() {
    let label = |p: Policy| cachequeue::classify(&p, &params(100.0), 72).unwrap().label;
    assert_eq!(label(Policy::Lru), ClassLabel::LruLike);
    assert_eq!(label(Policy::ProbLru { q: 0.5 }), ClassLabel::LruLike);
    assert_eq!(label(slru(0.95)), ClassLabel::LruLike);
    assert_eq!(label(Policy::Fifo), ClassLabel::FifoLike);
    assert_eq!(label(Policy::Clock), ClassLabel::FifoLike);
    assert_eq!(label(s3(0.1, 0.3)), ClassLabel::FifoLike);
    assert_eq!(
        label(Policy::ProbLru { q: 1.0 - 1.0 / 72.0 }),
        ClassLabel::FifoLike
    );
    assert!(1.0 - 1.0 / 72.0 >= prob_lru_fifo_threshold(72));
}
