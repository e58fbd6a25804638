use proptest::prelude::*;

use harq_core::feedback_model::{ack_error_rate, error_rates_for, nack_error_rate, FeedbackErrorRates, FeedbackSpec};
use harq_core::harq_analysis::{
    breakdown_from_parts, occurrence_probabilities, outage_exact, outage_published, run_stop_rule, CodeGeometry,
    HarqPolicy, OutageFormula, SingleFeedback,
};
use harq_core::mi_model::{p_fail_convolution, p_fail_gaussian, DownlinkSpec, RateVector};

/// Non-increasing failure probabilities of length 1..=6.
fn p_fail_vec() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..=1.0, 1..=6).prop_map(|mut v| {
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v
    })
}

fn rates_for(m: usize) -> impl Strategy<Value = FeedbackErrorRates> {
    let n = m.saturating_sub(1);
    (proptest::collection::vec(0.0f64..0.5, n), proptest::collection::vec(0.0f64..0.5, n))
        .prop_map(|(a, b)| FeedbackErrorRates::new(a, b).unwrap())
}

fn instance() -> impl Strategy<Value = (Vec<f64>, FeedbackErrorRates)> {
    p_fail_vec().prop_flat_map(|p| {
        let m = p.len();
        (Just(p), rates_for(m))
    })
}

proptest! {
    #[test]
    fn occurrence_is_a_decreasing_probability((p, r) in instance()) {
        let occ = occurrence_probabilities(&p, &r.p_nack, &r.p_ack).unwrap();
        prop_assert_eq!(occ[0], 1.0);
        for w in occ.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
            prop_assert!((0.0..=1.0).contains(&w[1]));
        }
    }

    #[test]
    fn outage_formulas_are_ordered((p, r) in instance()) {
        let m = p.len();
        let exact = outage_exact(&p, &r.p_nack).unwrap();
        let published = outage_published(&p, &r.p_nack).unwrap();
        prop_assert!(published >= exact - 1e-12);
        prop_assert!(exact >= p[m - 1] - 1e-12);
        prop_assert!(published <= 1.0 + 1e-12);
    }

    #[test]
    fn forward_chain_reproduces_closed_forms((p, r) in instance(), exact in any::<bool>()) {
        let formula = if exact { OutageFormula::Exact } else { OutageFormula::Published };
        let (occ, out) = run_stop_rule(&SingleFeedback { rates: r.clone(), formula }, &p);
        let closed = occurrence_probabilities(&p, &r.p_nack, &r.p_ack).unwrap();
        for (a, b) in occ.iter().zip(&closed) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let target = if exact { outage_exact(&p, &r.p_nack) } else { outage_published(&p, &r.p_nack) }.unwrap();
        prop_assert!((out - target).abs() < 1e-12);
    }

    #[test]
    fn perfect_feedback_outage_is_last_failure(p in p_fail_vec()) {
        let r = FeedbackErrorRates::perfect(p.len() - 1);
        let m = p.len();
        prop_assert!((outage_exact(&p, &r.p_nack).unwrap() - p[m - 1]).abs() < 1e-15);
        prop_assert!((outage_published(&p, &r.p_nack).unwrap() - p[m - 1]).abs() < 1e-12);
    }

    #[test]
    fn gaussian_failure_is_monotone(
        snr_db in -5.0f64..15.0,
        rhos in proptest::collection::vec(0.05f64..2.0, 1..6),
    ) {
        let dl = DownlinkSpec::new(snr_db).unwrap();
        let p = p_fail_gaussian(&RateVector::new(rhos).unwrap(), &dl);
        prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!(p.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn throughput_and_outage_bounds(
        snr_d in -5.0f64..15.0,
        snr_u in -20.0f64..5.0,
        units in proptest::collection::vec(1usize..=16, 2..=4),
        alpha in -1.0f64..3.0,
        exact in any::<bool>(),
    ) {
        let dl = DownlinkSpec::new(snr_d).unwrap();
        let m = units.len();
        let geometry = CodeGeometry::new(1024, 4096, 0.0625, 4.0).unwrap();
        let rhos: Vec<f64> = units.iter().map(|&u| u as f64 * 0.0625).collect();
        let policy = HarqPolicy::new(rhos, vec![alpha; m - 1], geometry).unwrap();
        let rates = error_rates_for(&FeedbackSpec::new(snr_u, policy.alphas().to_vec()).unwrap());
        let formula = if exact { OutageFormula::Exact } else { OutageFormula::Published };
        let p_fail = p_fail_gaussian(&RateVector::new(policy.rhos().to_vec()).unwrap(), &dl);
        let b = breakdown_from_parts(policy.rhos(), policy.n_b(), &p_fail, &rates, formula).unwrap();
        prop_assert!(b.p_out_unreliable >= b.p_out_reliable - 1e-15);
        prop_assert!(b.throughput <= dl.mean_mi);
        prop_assert!(b.throughput >= 0.0);
    }

    #[test]
    fn threshold_trades_nack_for_ack_errors(
        snr_db in -20.0f64..5.0,
        a in -2.0f64..3.0,
        da in 0.01f64..1.0,
    ) {
        let snr = harq_core::db_to_linear(snr_db);
        prop_assert!(nack_error_rate(a + da, snr).unwrap() <= nack_error_rate(a, snr).unwrap());
        prop_assert!(ack_error_rate(a + da, snr).unwrap() >= ack_error_rate(a, snr).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn convolution_failure_is_monotone(
        snr_db in -2.0f64..10.0,
        rhos in proptest::collection::vec(0.1f64..1.5, 1..4),
    ) {
        let dl = DownlinkSpec::new(snr_db).unwrap();
        let p = p_fail_convolution(&RateVector::new(rhos).unwrap(), &dl, 1024).unwrap();
        prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!(p.windows(2).all(|w| w[1] <= w[0]));
    }
}
