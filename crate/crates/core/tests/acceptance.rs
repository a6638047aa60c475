//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rrdps::asymptotic::{default_nu_candidates, synthesize_statistics, TABLE_S1_LENGTHS};
use rrdps::tail::{chernoff_bound, exact_geq, exact_leq, EXACT_LIMIT};
use rrdps::{
    asymptotic_key_length, finite_key_length, forced_multiphoton_trial, interference_bit,
    max_tolerable_esys, model_bit_error, model_double_click, model_sifted_rate, optimize_mu,
    routing_probability, security_parameter, simulate, simulate_with_workers, tail_geq, tail_leq,
    ChannelModel, DelayGroupMap, EpsilonBudget, PhasePattern, ProtocolParams, SimConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Outcome;

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn l5(mu: f64, nu: u32) -> ProtocolParams {
    ProtocolParams::new(5, mu, nu).unwrap()
}

fn table_s1() -> Outcome {
    let expected = [0.023, 0.133, 0.186, 0.221, 0.244];
    let channel = rrdps::asymptotic::table_s1_channel();
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (len, want) in TABLE_S1_LENGTHS.iter().zip(expected) {
        let got = max_tolerable_esys(*len, &channel).unwrap();
        let ok = (got - want).abs() <= 0.003;
        pass &= ok;
        parts.push(format!(
            "L={len} {:.2}% (want {:.1}%)",
            got * 100.0,
            want * 100.0
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 60.0;
    outcome(pass, format!("{}; {secs:.1} s", parts.join(", ")))
}

fn loss_crossing() -> Outcome {
    let start = Instant::now();
    let template = l5(0.0, 1);
    let nus = default_nu_candidates();
    let has_key = |loss: f64| {
        !optimize_mu(&template, &ChannelModel::experimental(loss), &nus)
            .unwrap()
            .no_positive_key
    };
    let (mut lo, mut hi) = (0.0, 20.0);
    if !has_key(lo) || has_key(hi) {
        return outcome(false, "no crossing inside [0, 20] dB");
    }
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if has_key(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        lo > 8.2 && hi < 9.2 && secs < 10.0,
        format!("rate reaches 0 at {lo:.3} dB channel loss; {secs:.2} s"),
    )
}

fn security_parameter_exponent() -> Outcome {
    let d = security_parameter(&EpsilonBudget::default()).exponent();
    outcome(d == -50.0, format!("log2 d = {d}"))
}

fn finite_fraction(loss: f64, n_sifted: u64) -> f64 {
    let channel = ChannelModel::experimental(loss);
    let opt = optimize_mu(&l5(0.0, 1), &channel, &default_nu_candidates()).unwrap();
    let params = l5(opt.mu, opt.nu_th);
    let stats = synthesize_statistics(&params, &channel, n_sifted).unwrap();
    let p_d = model_double_click(&params, &channel);
    let finite = finite_key_length(
        &stats,
        &params,
        channel.f_ec,
        p_d,
        &EpsilonBudget::default(),
    )
    .unwrap();
    let asym = asymptotic_key_length(&stats, &params, channel.f_ec).unwrap();
    finite.g_f / asym.secure_length
}

fn finite_fractions() -> Outcome {
    let start = Instant::now();
    let cases = [
        (0.0, 420_000u64, 0.40, 0.60),
        (0.0, 21_000_000, 0.90, 0.96),
        (4.7, 5_100_000, 0.75, 0.85),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (loss, n, lo, hi) in cases {
        let frac = finite_fraction(loss, n);
        pass &= (lo..=hi).contains(&frac);
        parts.push(format!("{loss} dB N={n:.1e} -> {frac:.3} in [{lo}, {hi}]"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 30.0;
    outcome(pass, format!("{}; {secs:.2} s", parts.join(", ")))
}

fn table_i() -> Outcome {
    // Rows are delays 1..=4, columns pulses 1..=5, in units of 1/8.
    let eighths = [
        [1, 2, 2, 2, 1],
        [1, 1, 2, 1, 1],
        [1, 1, 0, 1, 1],
        [1, 0, 0, 0, 1],
    ];
    let mut mismatches = 0;
    for (m, row) in eighths.iter().enumerate() {
        for (k, &e) in row.iter().enumerate() {
            let got = routing_probability(5, m + 1, k + 1).unwrap();
            if (got - e as f64 / 8.0).abs() > 1e-15 {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of 20 cells differ"))
}

fn fig2() -> Outcome {
    // 0 = phase 0, 1 = phase π, slots 0..15 across three packets.
    let phases = "101100100010110";
    let rows = [
        "011010110011101",
        "110111101010011",
        "100001000110100",
        "001010010000111",
    ];
    let mut checked = 0;
    let mut mismatches = 0;
    for packet in 0..3 {
        let pattern = PhasePattern::parse(&phases[5 * packet..5 * packet + 5]).unwrap();
        for (m, row) in rows.iter().enumerate() {
            let delay = m + 1;
            for slot in delay..5 {
                let want = row.as_bytes()[5 * packet + slot] - b'0';
                checked += 1;
                if interference_bit(&pattern, delay, slot).unwrap() != want {
                    mismatches += 1;
                }
            }
        }
    }
    outcome(
        checked == 30 && mismatches == 0,
        format!("{checked} within-packet cells checked, {mismatches} differ"),
    )
}

/// Binomial pmf by summing the weight of every n-bit outcome string.
/// Compensated (Neumaier) summation: plain accumulation of ~10^5 equal
/// terms drifts by ~1e-12 relative.
fn enumerated_pmf(n: u32, p: f64) -> Vec<f64> {
    let mut sum = vec![0.0f64; n as usize + 1];
    let mut comp = vec![0.0f64; n as usize + 1];
    for mask in 0u32..(1 << n) {
        let j = mask.count_ones() as i32;
        let w = p.powi(j) * (1.0 - p).powi(n as i32 - j);
        let (s, c) = (&mut sum[j as usize], &mut comp[j as usize]);
        let t = *s + w;
        *c += if s.abs() >= w.abs() {
            (*s - t) + w
        } else {
            (w - t) + *s
        };
        *s = t;
    }
    sum.iter().zip(&comp).map(|(s, c)| s + c).collect()
}

fn tail_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for p in [0.1, 0.25, 0.5] {
        for n in 0..=20u32 {
            let pmf = enumerated_pmf(n, p);
            for k in 0..=n + 1 {
                let geq: f64 = pmf.iter().skip(k as usize).sum();
                let leq: f64 = pmf.iter().take(k as usize + 1).sum();
                for (got, want) in [
                    (tail_geq(k as u64, n as u64, p).to_prob(), geq),
                    (tail_leq(k as u64, n as u64, p).to_prob(), leq),
                ] {
                    let rel = if want == 0.0 {
                        if got == 0.0 {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    } else {
                        (got - want).abs() / want
                    };
                    worst = worst.max(rel);
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    for case in 0..100 {
        let n = rng.random_range(EXACT_LIMIT / 2..=2 * EXACT_LIMIT);
        let p = rng.random_range(0.005..0.5);
        let mean = (n as f64 * p) as u64;
        let spread = (n / 20).max(1);
        let (bound, exact) = if case % 2 == 0 {
            let k = (mean + rng.random_range(1..=spread)).min(n);
            (chernoff_bound(k, n, p), exact_geq(k, n, p))
        } else {
            let k = mean.saturating_sub(rng.random_range(1..=spread));
            (chernoff_bound(k, n, p), exact_leq(k, n, p))
        };
        if bound.exponent() < exact.exponent() {
            violations += 1;
        }
    }
    outcome(
        worst <= 1e-12 && violations == 0,
        format!(
            "max relative error {worst:.2e}; Chernoff below exact in {violations} of 100 cases"
        ),
    )
}

fn monte_carlo() -> Outcome {
    let start = Instant::now();
    let channel = ChannelModel::experimental(0.0);
    let n = 10_000_000;

    let params = l5(0.02, 1);
    let r = simulate(&SimConfig::new(params, channel, n, 8)).unwrap();
    let q_model = model_sifted_rate(&params, &channel);
    let q = r.stats.n_sifted as f64 / r.stats.n_emitted as f64;
    let q_se = (q_model * (1.0 - q_model) / n as f64).sqrt();
    let e_model = model_bit_error(&params, &channel).unwrap();
    let e = r.stats.n_bit_errors as f64 / r.stats.n_sifted as f64;
    let e_se = (e_model * (1.0 - e_model) / r.stats.n_sifted as f64).sqrt();
    let q_z = (q - q_model) / q_se;
    let e_z = (e - e_model) / e_se;

    let params = l5(0.1, 1);
    let r = simulate(&SimConfig::new(params, channel, n, 9)).unwrap();
    let pd_model = model_double_click(&params, &channel);
    let pd = r.stats.n_double_clicks as f64 / n as f64;
    let pd_rel = (pd - pd_model).abs() / pd_model;

    let opt = optimize_mu(&l5(0.0, 1), &channel, &default_nu_candidates()).unwrap();
    let params = l5(opt.mu, opt.nu_th);
    let r = simulate(&SimConfig::new(params, channel, n, 10)).unwrap();
    let q_d = 8.0 * r.stats.n_double_clicks as f64 / r.stats.n_sifted as f64;

    let secs = start.elapsed().as_secs_f64();
    outcome(
        q_z.abs() <= 5.0 && e_z.abs() <= 5.0 && pd_rel <= 0.10 && q_d < 1e-3 && secs < 120.0,
        format!(
            "mu=0.02: Q {q_z:+.2} SE, e_bit {e_z:+.2} SE; mu=0.1: N_d/N_em off by {:.1}%; \
             mu={:.4}: q_d={q_d:.2e}; {secs:.1} s",
            pd_rel * 100.0,
            opt.mu
        ),
    )
}

fn double_click_bound() -> Outcome {
    let params = l5(0.1, 1);
    let f = forced_multiphoton_trial(&params, &DelayGroupMap::for_packet_len(5), 2, 1_000_000, 3)
        .unwrap();
    outcome(
        (f - 0.125).abs() <= 0.002,
        format!("two-photon double-click fraction {f:.5}"),
    )
}

fn determinism() -> Outcome {
    let channel = ChannelModel {
        dark_prob: 1e-4,
        ..ChannelModel::experimental(0.0)
    };
    let cfg = SimConfig::new(l5(0.1, 1), channel, 1_000_000, 42);
    let serial = serde_json::to_vec(&simulate_with_workers(&cfg, 1).unwrap()).unwrap();
    let mut same = true;
    for workers in [2, 4, 7] {
        let parallel = serde_json::to_vec(&simulate_with_workers(&cfg, workers).unwrap()).unwrap();
        same &= parallel == serial;
    }
    let pooled = serde_json::to_vec(&simulate(&cfg).unwrap()).unwrap();
    same &= pooled == serial;
    outcome(
        same,
        format!(
            "{} byte report identical for 1, 2, 4, 7 workers",
            serial.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("tolerable baseline error per packet length", table_s1),
        ("maximum channel loss for L=5", loss_crossing),
        (
            "security parameter of the default budget",
            security_parameter_exponent,
        ),
        (
            "finite-key fractions on modeled statistics",
            finite_fractions,
        ),
        ("routing probabilities", table_i),
        ("interference patterns of the example packets", fig2),
        ("binomial tails against enumeration", tail_oracle),
        ("Monte Carlo against the channel model", monte_carlo),
        ("two-photon double-click probability", double_click_bound),
        ("determinism across worker counts", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("{tag} [{}] {name}: {}", i + 1, o.detail);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
