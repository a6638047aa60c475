use proptest::prelude::*;

use rrdps::asymptotic::Setup;
use rrdps::cli::config::RunConfig;
use rrdps::tail::EXACT_LIMIT;
use rrdps::{
    binary_entropy, evaluate_model, interference_bit, routing_probability, tail_geq, tail_leq,
    threshold_nbar_ma, ChannelModel, Log2Prob, PhasePattern, ProtocolParams,
};

proptest! {
    #[test]
    fn interference_is_xor_of_the_pulse_pair(bits in prop::collection::vec(0u8..2, 2..=8)) {
        let len = bits.len();
        let pattern = PhasePattern::from_bits(&bits).unwrap();
        for delay in 1..len {
            for slot in 0..len {
                let got = interference_bit(&pattern, delay, slot);
                if slot >= delay {
                    prop_assert_eq!(got.unwrap(), bits[slot - delay] ^ bits[slot]);
                } else {
                    prop_assert!(got.is_err());
                }
            }
        }
    }

    #[test]
    fn routing_rows_and_columns(len in 2usize..=64) {
        let denom = 2.0 * (len - 1) as f64;
        for pulse in 1..=len {
            let total: f64 = (1..len).map(|m| routing_probability(len, m, pulse).unwrap()).sum();
            prop_assert!((total - 0.5).abs() < 1e-12);
        }
        for delay in 1..len {
            let total: f64 = (1..=len).map(|k| routing_probability(len, delay, k).unwrap()).sum();
            prop_assert!((total - 2.0 * (len - delay) as f64 / denom).abs() < 1e-12);
        }
    }

    #[test]
    fn tails_are_monotone_in_k(n in 1u64..400, p in 0.001f64..0.999) {
        for k in 0..n {
            prop_assert!(tail_geq(k + 1, n, p) <= tail_geq(k, n, p));
            prop_assert!(tail_leq(k, n, p) <= tail_leq(k + 1, n, p));
        }
    }

    #[test]
    fn tails_are_complementary(n in 1u64..2000, p in 0.01f64..0.99, frac in 0.0f64..1.0) {
        let k = 1 + ((n - 1) as f64 * frac) as u64;
        let total = tail_geq(k, n, p).to_prob() + tail_leq(k - 1, n, p).to_prob();
        prop_assert!((total - 1.0).abs() < 1e-11, "sum {}", total);
    }

    #[test]
    fn chernoff_mode_bounds_the_last_exact_value(p in 0.01f64..0.5, excess in 0.001f64..0.2) {
        let n = EXACT_LIMIT;
        let k = ((p + excess).min(1.0) * n as f64).ceil() as u64;
        let exact = tail_geq(k, n, p);
        let bound = rrdps::tail::chernoff_bound(k, n, p);
        prop_assert!(bound >= exact);
        prop_assert!(tail_geq(k, n + 1, p) >= rrdps::tail::exact_geq(k, n + 1, p));
    }

    #[test]
    fn tail_thresholds_are_tight(n in 1u64..3000, e in 0.0001f64..0.5, bits in 1.0f64..60.0) {
        let eps = Log2Prob(-bits);
        let k = threshold_nbar_ma(n, e, eps).unwrap();
        prop_assert!(k <= n);
        if k < n || tail_geq(n, n, e) <= eps {
            prop_assert!(tail_geq(k, n, e) <= eps);
        }
        if k > 0 {
            prop_assert!(tail_geq(k - 1, n, e) > eps);
        }
    }

    #[test]
    fn entropy_is_symmetric(x in 0.0f64..=1.0) {
        let a = binary_entropy(x).unwrap();
        let b = binary_entropy(1.0 - x).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn rate_does_not_grow_with_loss_or_error(
        mu in 1e-4f64..0.5, loss in 0.0f64..10.0, dl in 0.0f64..5.0, e in 0.0f64..0.1
    ) {
        let params = ProtocolParams::new(5, mu, 1).unwrap();
        let at = |loss: f64, e_sys: f64| {
            let channel = ChannelModel { e_sys, ..ChannelModel::experimental(loss) };
            evaluate_model(&params, &channel).unwrap().result.rate_per_pulse
        };
        prop_assert!(at(loss + dl, e) <= at(loss, e) + 1e-18);
        prop_assert!(at(loss, e + 0.01) <= at(loss, e) + 1e-18);
    }

    #[test]
    fn config_round_trips(
        len in 2usize..200,
        mu in prop::option::of(0.0f64..2.0),
        nu in prop::option::of(1u32..12),
        sys in 0.0f64..30.0,
        loss in 0.0f64..60.0,
        dark in 0.0f64..1000.0,
        window in 1e-12f64..1e-9,
        e_sys in 0.0f64..=0.5,
        f_ec in 1.0f64..2.0,
        active in any::<bool>(),
    ) {
        let cfg = RunConfig {
            packet_len: len,
            mu,
            nu_th: nu,
            system_loss_db: sys,
            channel_loss_db: loss,
            dark_cps: dark,
            window_s: window,
            e_sys,
            f_ec,
            setup: if active { Setup::Active } else { Setup::Passive },
            ..RunConfig::default()
        };
        let text = cfg.to_text();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_text(), text);
    }
}
