//! Binomial tails in the log2 domain.
//!
//! Small trial counts are summed exactly in log space. Past
//! [`EXACT_LIMIT`] trials the Chernoff bound `2^{-n D(k/n || p)}` is used
//! instead, and where that bound does not apply the tail is reported as 1.
//! Both substitutions only ever overestimate the true tail.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Largest trial count summed exactly.
pub const EXACT_LIMIT: u64 = 10_000;

/// A probability stored as its base-2 logarithm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Log2Prob(pub f64);

impl Log2Prob {
    pub const ONE: Log2Prob = Log2Prob(0.0);
    pub const ZERO: Log2Prob = Log2Prob(f64::NEG_INFINITY);

    pub fn from_prob(p: f64) -> Self {
        Log2Prob(p.log2())
    }

    /// `2^-bits`.
    pub fn from_bits(bits: f64) -> Self {
        Log2Prob(-bits)
    }

    pub fn exponent(self) -> f64 {
        self.0
    }

    pub fn to_prob(self) -> f64 {
        self.0.exp2()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    /// Sum of several probabilities without leaving the log domain.
    pub fn sum(terms: &[Log2Prob]) -> Log2Prob {
        let max = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Log2Prob::ZERO;
        }
        let scaled: f64 = terms.iter().map(|t| (t.0 - max).exp2()).sum();
        Log2Prob(max + scaled.log2())
    }

    pub fn plus(self, other: Log2Prob) -> Log2Prob {
        Log2Prob::sum(&[self, other])
    }

    pub fn times(self, other: Log2Prob) -> Log2Prob {
        Log2Prob(self.0 + other.0)
    }

    pub fn sqrt(self) -> Log2Prob {
        Log2Prob(0.5 * self.0)
    }

    pub fn max(self, other: Log2Prob) -> Log2Prob {
        if self.0 >= other.0 {
            self
        } else {
            other
        }
    }
}

/// `D(q || p) = q log2(q/p) + (1-q) log2((1-q)/(1-p))`, in bits.
///
/// Returns `+∞` when `p` is 0 or 1 and `q` differs from it.
pub fn kl_divergence_bits(q: f64, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) || !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("divergence arguments q={q}, p={p}")));
    }
    let first = if q == 0.0 {
        0.0
    } else if p == 0.0 {
        return Ok(f64::INFINITY);
    } else {
        q * (q / p).log2()
    };
    let second = if q == 1.0 {
        0.0
    } else if p == 1.0 {
        return Ok(f64::INFINITY);
    } else {
        (1.0 - q) * ((-q).ln_1p() - (-p).ln_1p()) / std::f64::consts::LN_2
    };
    Ok((first + second).max(0.0))
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Sums `C(n,j) p^j (1-p)^{n-j}` for `j` in `from..=to`, in log2.
fn exact_sum(from: u64, to: u64, n: u64, p: f64) -> Log2Prob {
    debug_assert!(from <= to && to <= n && p > 0.0 && p < 1.0);
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let ln_odds = ln_p - ln_q;
    // Neighbouring terms differ by (n-j)/(j+1) · p/(1-p).
    let mut ln_term = ln_binomial(n, from) + from as f64 * ln_p + (n - from) as f64 * ln_q;
    let mut terms = Vec::with_capacity((to - from + 1) as usize);
    terms.push(ln_term);
    for j in from..to {
        ln_term += ((n - j) as f64 / (j + 1) as f64).ln() + ln_odds;
        terms.push(ln_term);
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Log2Prob(((max + scaled.ln()) / std::f64::consts::LN_2).min(0.0))
}

/// `2^{-n D(k/n || p)}`, without checking which side of `p` the ratio lies.
pub fn chernoff_bound(k: u64, n: u64, p: f64) -> Log2Prob {
    if n == 0 {
        return Log2Prob::ONE;
    }
    match kl_divergence_bits(k as f64 / n as f64, p) {
        Ok(d) => Log2Prob(-(n as f64) * d),
        Err(_) => Log2Prob::ONE,
    }
}

fn check_p(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "probability {p} outside [0, 1]");
    p
}

/// `f(k; n, p)`: probability of at least `k` successes in `n` trials.
pub fn tail_geq(k: u64, n: u64, p: f64) -> Log2Prob {
    let p = check_p(p);
    if k == 0 {
        return Log2Prob::ONE;
    }
    if k > n || p == 0.0 {
        return Log2Prob::ZERO;
    }
    if p == 1.0 {
        return Log2Prob::ONE;
    }
    if n <= EXACT_LIMIT {
        return exact_geq(k, n, p);
    }
    if (k as f64 / n as f64) > p {
        chernoff_bound(k, n, p)
    } else {
        Log2Prob::ONE
    }
}

/// `g(k; n, p)`: probability of at most `k` successes in `n` trials.
pub fn tail_leq(k: u64, n: u64, p: f64) -> Log2Prob {
    let p = check_p(p);
    if k >= n || p == 0.0 {
        return Log2Prob::ONE;
    }
    if p == 1.0 {
        return Log2Prob::ZERO;
    }
    if n <= EXACT_LIMIT {
        return exact_leq(k, n, p);
    }
    if (k as f64 / n as f64) < p {
        chernoff_bound(k, n, p)
    } else {
        Log2Prob::ONE
    }
}

/// Exact upper tail regardless of `n`.
pub fn exact_geq(k: u64, n: u64, p: f64) -> Log2Prob {
    if k == 0 {
        return Log2Prob::ONE;
    }
    if k > n || p == 0.0 {
        return Log2Prob::ZERO;
    }
    if p == 1.0 {
        return Log2Prob::ONE;
    }
    if (k as f64) <= n as f64 * p {
        // The tail holds the bulk of the mass; summing it directly can
        // round above 1.
        return complement(exact_sum(0, k - 1, n, p));
    }
    exact_sum(k, n, n, p)
}

/// Exact lower tail regardless of `n`.
pub fn exact_leq(k: u64, n: u64, p: f64) -> Log2Prob {
    if k >= n || p == 0.0 {
        return Log2Prob::ONE;
    }
    if p == 1.0 {
        return Log2Prob::ZERO;
    }
    if (k as f64) >= n as f64 * p {
        return complement(exact_sum(k + 1, n, n, p));
    }
    exact_sum(0, k, n, p)
}

/// `1 - x` in log2.
fn complement(x: Log2Prob) -> Log2Prob {
    Log2Prob((-x.to_prob().min(1.0)).ln_1p() / std::f64::consts::LN_2)
}
