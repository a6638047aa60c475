//! Finite-length secure key accounting.
//!
//! The session is split into the cases "too many tagged (multi-photon)
//! packets reached Bob", which is caught by the double-click count except
//! with probability `ε1`, and "few enough tagged packets". In the latter,
//! thresholds on the source-side excess count (`ε2`) and on phase errors
//! (`ε3`) size the privacy amplification, with `s_x` and `s_z` bits
//! spent on the virtual phase-error syndrome and on error-correction
//! verification.

use serde::{Deserialize, Serialize};

use crate::asymptotic::{binary_entropy, source_tail_esrc, RunStatistics};
use crate::error::{precondition, Error, Result};
use crate::protocol::ProtocolParams;
use crate::tail::{tail_geq, tail_leq, Log2Prob};

/// Failure probabilities of the finite-key argument, all as log2 values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBudget {
    pub eps1: Log2Prob,
    pub eps2: Log2Prob,
    pub eps3: Log2Prob,
    pub eta_x: Log2Prob,
    pub eta_z: Log2Prob,
}

impl Default for EpsilonBudget {
    /// `ε1 = 2^-50`, `ε2 = ε3 = η_x = 2^-103 / 3`, `η_z = 2^-51`.
    fn default() -> Self {
        let third = Log2Prob(-103.0 - 3f64.log2());
        Self {
            eps1: Log2Prob(-50.0),
            eps2: third,
            eps3: third,
            eta_x: third,
            eta_z: Log2Prob(-51.0),
        }
    }
}

impl EpsilonBudget {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("eps3", self.eps3),
            ("eta_x", self.eta_x),
            ("eta_z", self.eta_z),
        ] {
            if !(v.0 <= 0.0 && v.0 > f64::NEG_INFINITY) {
                return Err(precondition(format!(
                    "{name} must lie in (0, 1], got 2^{}",
                    v.0
                )));
            }
        }
        Ok(())
    }

    /// Syndrome bits for the virtual phase-error correction, `ceil(-log2 η_x)`.
    pub fn s_x(&self) -> u64 {
        (-self.eta_x.0).ceil().max(0.0) as u64
    }

    /// Verification bits after error correction, `ceil(-log2 η_z)`.
    pub fn s_z(&self) -> u64 {
        (-self.eta_z.0).ceil().max(0.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteKeyResult {
    pub nbar_d: u64,
    pub nbar_mb: u64,
    pub nbar_ma: u64,
    pub nbar_ph: u64,
    pub s_x: u64,
    pub s_z: u64,
    /// `N' = N - N̄_mB`.
    pub n_prime: i64,
    /// `N'' = N' - N̄_mA`.
    pub n_double_prime: i64,
    pub e_src: f64,
    pub e_bit: f64,
    /// `max(G_f, 0)`.
    pub g_f: f64,
    pub g_f_raw: f64,
    pub d_bound: Log2Prob,
}

/// Smallest `x` in `lo..=hi` with `pred(x)`, given `pred(hi)`. Assumes the
/// predicate is monotone; the returned value always satisfies it and its
/// predecessor (if in range) never does.
fn first_true(mut lo: u64, mut hi: u64, pred: impl Fn(u64) -> bool) -> u64 {
    debug_assert!(pred(hi));
    if pred(lo) {
        return lo;
    }
    // invariant: !pred(lo), pred(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// `N̄_d = ceil(N_em p_d + 3 sqrt(N_em p_d))`.
pub fn threshold_nbar_d(n_emitted: u64, p_d: f64) -> Result<u64> {
    if !(p_d >= 0.0 && p_d.is_finite()) {
        return Err(precondition(format!(
            "double-click probability {p_d} must be >= 0"
        )));
    }
    let mean = n_emitted as f64 * p_d;
    Ok((mean + 3.0 * mean.sqrt()).ceil() as u64)
}

/// Smallest `N̄_mB` with `g(N̄_d; N̄_mB, 1/8) <= ε1`.
pub fn threshold_nbar_mb(nbar_d: u64, eps1: Log2Prob) -> u64 {
    let pred = |n: u64| tail_leq(nbar_d, n, 0.125) <= eps1;
    let mut hi = nbar_d.max(1);
    while !pred(hi) {
        hi = hi.saturating_mul(2);
    }
    first_true(0, hi, pred)
}

/// Smallest `k <= n` with `f(k; n, p) <= ε`, or `n` when even `k = n`
/// fails (the count can never exceed `n`).
fn upper_tail_threshold(n: u64, p: f64, eps: Log2Prob) -> u64 {
    let pred = |k: u64| tail_geq(k, n, p) <= eps;
    if !pred(n) {
        return n;
    }
    first_true(0, n, pred)
}

/// Smallest `N̄_mA` with `f(N̄_mA; N_em, e_src) <= ε2`.
pub fn threshold_nbar_ma(n_emitted: u64, e_src: f64, eps2: Log2Prob) -> Result<u64> {
    if !(0.0..=1.0).contains(&e_src) {
        return Err(Error::Domain(format!("source tail {e_src} outside [0, 1]")));
    }
    Ok(upper_tail_threshold(n_emitted, e_src, eps2))
}

/// Smallest `N̄_ph` with `f(N̄_ph; N'', ν_th/(L-1)) <= ε3`.
pub fn threshold_nbar_ph(n_double_prime: u64, params: &ProtocolParams, eps3: Log2Prob) -> u64 {
    if n_double_prime == 0 {
        return 0;
    }
    let p = params.phase_error_bound().min(1.0);
    upper_tail_threshold(n_double_prime, p, eps3)
}

/// `d <= max(ε1, η_z + sqrt(2) sqrt(ε2 + ε3 + η_x))`, in log2.
pub fn security_parameter(budget: &EpsilonBudget) -> Log2Prob {
    let p_fail = Log2Prob::sum(&[budget.eps2, budget.eps3, budget.eta_x]);
    let ec_branch = budget.eta_z.plus(Log2Prob(0.5).times(p_fail.sqrt()));
    budget.eps1.max(ec_branch)
}

/// Secure key length for a finite session.
///
/// `p_d` is the double-click probability the parties agreed on before the
/// session; it fixes `N̄_d`.
pub fn finite_key_length(
    stats: &RunStatistics,
    params: &ProtocolParams,
    f_ec: f64,
    p_d: f64,
    budget: &EpsilonBudget,
) -> Result<FiniteKeyResult> {
    stats.validate()?;
    params.validate()?;
    budget.validate()?;
    let e_bit = stats.bit_error_rate()?;

    let nbar_d = threshold_nbar_d(stats.n_emitted, p_d)?;
    if stats.n_double_clicks > nbar_d {
        return Err(Error::SessionDiscarded {
            observed: stats.n_double_clicks,
            threshold: nbar_d,
        });
    }
    let nbar_mb = threshold_nbar_mb(nbar_d, budget.eps1);
    let e_src = source_tail_esrc(params)?;
    let nbar_ma = threshold_nbar_ma(stats.n_emitted, e_src, budget.eps2)?;

    let n = stats.n_sifted as i64;
    let n_prime = n - nbar_mb.min(i64::MAX as u64) as i64;
    let n_double_prime = n_prime - nbar_ma.min(i64::MAX as u64) as i64;
    let nbar_ph = threshold_nbar_ph(n_double_prime.max(0) as u64, params, budget.eps3);
    let s_x = budget.s_x();
    let s_z = budget.s_z();

    let h_bit = binary_entropy(e_bit.min(0.5))?;
    let g_f_raw = if n_prime <= 0 {
        // Nothing left after removing the tagged packets.
        n_prime as f64 - f_ec * n as f64 * h_bit - (s_x + s_z) as f64
    } else {
        let np = n_prime as f64;
        let phase = ((nbar_ma + nbar_ph) as f64 / np).clamp(0.0, 0.5);
        np - f_ec * n as f64 * h_bit - s_z as f64 - np * binary_entropy(phase)? - s_x as f64
    };

    Ok(FiniteKeyResult {
        nbar_d,
        nbar_mb,
        nbar_ma,
        nbar_ph,
        s_x,
        s_z,
        n_prime,
        n_double_prime,
        e_src,
        e_bit,
        g_f: g_f_raw.max(0.0),
        g_f_raw,
        d_bound: security_parameter(budget),
    })
}
