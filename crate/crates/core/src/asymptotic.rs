//! Asymptotic key length, the analytic channel model, and mean-photon-number
//! optimization.

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::protocol::ProtocolParams;

/// Receiver configuration, which decides how many detector cells can
/// contribute dark counts per packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setup {
    /// Splitter feeding one interferometer per delay, `(L-1)·L` dark cells.
    Passive,
    /// Single interferometer with an actively chosen delay, `L` dark cells.
    Active,
}

impl std::str::FromStr for Setup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "passive" => Ok(Setup::Passive),
            "active" => Ok(Setup::Active),
            other => Err(precondition(format!(
                "unknown setup {other:?}, expected passive or active"
            ))),
        }
    }
}

impl std::fmt::Display for Setup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Setup::Passive => "passive",
            Setup::Active => "active",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Detector efficiency plus receiver optics, in dB.
    pub system_loss_db: f64,
    pub channel_loss_db: f64,
    /// Dark-click probability per detector per windowed slot (`d_c`).
    pub dark_prob: f64,
    /// Baseline error probability of the interferometers.
    pub e_sys: f64,
    /// Error-correction inefficiency `f`.
    pub f_ec: f64,
    pub setup: Setup,
}

impl ChannelModel {
    /// Dark rate of 2 counts/s inside a 200 ps window.
    pub const EXPERIMENT_DARK_PROB: f64 = 2.0 * 200e-12;

    /// 12.7 dB system loss, 1.5 % baseline error, `f = 1.1`, passive receiver.
    pub fn experimental(channel_loss_db: f64) -> Self {
        Self {
            system_loss_db: 12.7,
            channel_loss_db,
            dark_prob: Self::EXPERIMENT_DARK_PROB,
            e_sys: 0.015,
            f_ec: 1.1,
            setup: Setup::Passive,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.system_loss_db >= 0.0 && self.channel_loss_db >= 0.0) {
            return Err(precondition("losses must be >= 0 dB"));
        }
        if !(0.0..=1.0).contains(&self.dark_prob) {
            return Err(precondition(format!(
                "dark probability {} outside [0, 1]",
                self.dark_prob
            )));
        }
        if !(0.0..=0.5).contains(&self.e_sys) {
            return Err(precondition(format!(
                "baseline error {} outside [0, 1/2]",
                self.e_sys
            )));
        }
        if !(self.f_ec >= 1.0) {
            return Err(precondition(format!(
                "error-correction inefficiency {} must be >= 1",
                self.f_ec
            )));
        }
        Ok(())
    }

    /// Overall transmittance `η` from the summed losses.
    pub fn transmittance(&self) -> f64 {
        10f64.powf(-(self.system_loss_db + self.channel_loss_db) / 10.0)
    }

    /// Number of (port, delay, interference-slot) cells that can fire a dark
    /// click in one packet.
    pub fn dark_cells(&self, packet_len: usize) -> usize {
        match self.setup {
            Setup::Passive => packet_len * (packet_len - 1),
            Setup::Active => packet_len,
        }
    }
}

/// Sufficient statistics of one key-generation session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStatistics {
    pub n_emitted: u64,
    pub n_sifted: u64,
    pub n_bit_errors: u64,
    pub n_double_clicks: u64,
}

impl RunStatistics {
    pub fn validate(&self) -> Result<()> {
        if self.n_sifted > self.n_emitted {
            return Err(precondition("sifted length exceeds emitted packets"));
        }
        if self.n_bit_errors > self.n_sifted {
            return Err(precondition("bit errors exceed sifted length"));
        }
        Ok(())
    }

    pub fn bit_error_rate(&self) -> Result<f64> {
        if self.n_sifted == 0 {
            return Err(Error::Undefined(
                "bit error rate of an empty sifted key".into(),
            ));
        }
        Ok(self.n_bit_errors as f64 / self.n_sifted as f64)
    }

    /// `Q = N / N_em`.
    pub fn sifted_rate(&self) -> Result<f64> {
        if self.n_emitted == 0 {
            return Err(Error::Undefined(
                "sifted rate with no emitted packets".into(),
            ));
        }
        Ok(self.n_sifted as f64 / self.n_emitted as f64)
    }

    pub fn merge(&mut self, other: &RunStatistics) {
        self.n_emitted += other.n_emitted;
        self.n_sifted += other.n_sifted;
        self.n_bit_errors += other.n_bit_errors;
        self.n_double_clicks += other.n_double_clicks;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticResult {
    pub e_src: f64,
    pub q_d: f64,
    pub e_bit: f64,
    /// `None` when the source-tagged fraction alone exhausts the key.
    pub e_ph_prime: Option<f64>,
    /// `max(G, 0)`.
    pub secure_length: f64,
    /// `G` before clamping; negative means no key.
    pub raw_length: f64,
    /// `secure_length / (L · N_em)`.
    pub rate_per_pulse: f64,
    /// `raw_length / (L · N_em)`.
    pub raw_rate_per_pulse: f64,
}

impl AsymptoticResult {
    pub fn has_key(&self) -> bool {
        self.raw_length > 0.0
    }
}

/// `h(x) = -x log2 x - (1-x) log2 (1-x)`, with `h(0) = h(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!(
            "binary entropy argument {x} outside [0, 1]"
        )));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

// Arguments are clamped by the callers.
fn entropy(x: f64) -> f64 {
    binary_entropy(x.clamp(0.0, 1.0)).unwrap_or(1.0)
}

/// Probability that a Poissonian packet of mean `Lμ` carries more than
/// `ν_th` photons.
pub fn source_tail_esrc(params: &ProtocolParams) -> Result<f64> {
    params.validate()?;
    Ok(poisson_upper_tail(
        params.packet_len as f64 * params.mu,
        params.nu_th,
    ))
}

/// `P(X > threshold)` for `X ~ Poisson(mean)`.
pub(crate) fn poisson_upper_tail(mean: f64, threshold: u32) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let first = f64::from(threshold) + 1.0;
    if mean < first {
        // Sum the (small) upper tail directly; terms shrink geometrically
        // once past the mean.
        let ln_first = first * mean.ln() - mean - statrs::function::gamma::ln_gamma(first + 1.0);
        let mut term = ln_first.exp();
        let mut total = 0.0;
        let mut nu = first;
        while term > 0.0 && term > total * 1e-17 {
            total += term;
            nu += 1.0;
            term *= mean / nu;
        }
        total.min(1.0)
    } else {
        let mut term = (-mean).exp();
        let mut cdf = term;
        for nu in 1..=threshold {
            term *= mean / f64::from(nu);
            cdf += term;
        }
        (1.0 - cdf).clamp(0.0, 1.0)
    }
}

/// `q_d = 8 N_d / N`, clamped to `[0, 1]`.
pub fn double_click_fraction(stats: &RunStatistics) -> Result<f64> {
    if stats.n_sifted == 0 {
        return Err(Error::Undefined(
            "double-click fraction of an empty sifted key".into(),
        ));
    }
    Ok((8.0 * stats.n_double_clicks as f64 / stats.n_sifted as f64).min(1.0))
}

/// Upper bound on the phase error rate of the untagged sifted key:
/// the source-tagged fraction counts fully as errors and the rest obeys
/// `ν_th / (L - 1)`.
pub fn phase_error_rate(e_src: f64, q: f64, q_d: f64, params: &ProtocolParams) -> Result<f64> {
    if !(q > 0.0) {
        return Err(Error::Undefined(format!("sifted rate Q = {q} must be > 0")));
    }
    if !(0.0..1.0).contains(&q_d) {
        return Err(Error::NoKeyPossible(format!(
            "double-click fraction {q_d} leaves no untagged key"
        )));
    }
    let tagged = e_src / (q * (1.0 - q_d));
    if tagged > 1.0 {
        return Err(Error::NoKeyPossible(format!(
            "source tail fraction {tagged} exceeds the sifted key"
        )));
    }
    Ok(tagged + (1.0 - tagged) * params.phase_error_bound())
}

/// `N[1 - f h(e_bit) - q_d - (1 - q_d) h(e_ph)]` with both error rates
/// capped at 1/2.
pub(crate) fn secure_length_formula(n: f64, f_ec: f64, e_bit: f64, q_d: f64, e_ph: f64) -> f64 {
    let h_bit = entropy(e_bit.min(0.5));
    let h_ph = entropy(e_ph.min(0.5));
    n * (1.0 - f_ec * h_bit - q_d - (1.0 - q_d) * h_ph)
}

/// Key length from real-valued counts, shared by measured statistics and
/// the per-packet channel model.
pub(crate) fn key_length_from_counts(
    n_sifted: f64,
    n_emitted: f64,
    e_bit: f64,
    q_d: f64,
    params: &ProtocolParams,
    f_ec: f64,
) -> Result<AsymptoticResult> {
    let e_src = source_tail_esrc(params)?;
    let q = n_sifted / n_emitted;
    let e_ph_prime = match phase_error_rate(e_src, q, q_d, params) {
        Ok(e) => Some(e),
        Err(Error::NoKeyPossible(_)) => None,
        Err(e) => return Err(e),
    };
    let q_d = q_d.clamp(0.0, 1.0);
    // A phase error rate at or above 1/2 means privacy amplification eats
    // the whole key; so does an exhausted untagged fraction.
    let raw_length = secure_length_formula(n_sifted, f_ec, e_bit, q_d, e_ph_prime.unwrap_or(1.0));
    let secure_length = raw_length.max(0.0);
    let pulses = params.packet_len as f64 * n_emitted;
    Ok(AsymptoticResult {
        e_src,
        q_d,
        e_bit,
        e_ph_prime,
        secure_length,
        raw_length,
        rate_per_pulse: secure_length / pulses,
        raw_rate_per_pulse: raw_length / pulses,
    })
}

/// `G = N[1 - f h(e_bit) - q_d - (1 - q_d) h(e'_ph)]` on measured counts.
pub fn asymptotic_key_length(
    stats: &RunStatistics,
    params: &ProtocolParams,
    f_ec: f64,
) -> Result<AsymptoticResult> {
    stats.validate()?;
    let q_d = double_click_fraction(stats)?;
    let e_bit = stats.bit_error_rate()?;
    key_length_from_counts(
        stats.n_sifted as f64,
        stats.n_emitted as f64,
        e_bit,
        q_d,
        params,
        f_ec,
    )
}

/// Sifted events per packet under the channel model.
pub fn model_sifted_rate(params: &ProtocolParams, channel: &ChannelModel) -> f64 {
    signal_rate(params, channel) + dark_rate(params, channel)
}

fn signal_rate(params: &ProtocolParams, channel: &ChannelModel) -> f64 {
    params.packet_len as f64 * params.mu * channel.transmittance() / 2.0
}

fn dark_rate(params: &ProtocolParams, channel: &ChannelModel) -> f64 {
    channel.dark_cells(params.packet_len) as f64 * channel.dark_prob
}

/// Bit error rate under the channel model; dark clicks are right half the
/// time.
pub fn model_bit_error(params: &ProtocolParams, channel: &ChannelModel) -> Result<f64> {
    let q = model_sifted_rate(params, channel);
    if !(q > 0.0) {
        return Err(Error::Undefined("bit error rate with Q = 0".into()));
    }
    Ok((signal_rate(params, channel) * channel.e_sys + dark_rate(params, channel) / 2.0) / q)
}

/// Double-click probability per packet, `(Lμη)² / 16`.
pub fn model_double_click(params: &ProtocolParams, channel: &ChannelModel) -> f64 {
    let received = params.packet_len as f64 * params.mu * channel.transmittance();
    received * received / 16.0
}

/// Expected session counts for `n_sifted` sifted events, each rounded to
/// the nearest integer.
pub fn synthesize_statistics(
    params: &ProtocolParams,
    channel: &ChannelModel,
    n_sifted: u64,
) -> Result<RunStatistics> {
    params.validate()?;
    channel.validate()?;
    let q = model_sifted_rate(params, channel);
    if !(q > 0.0) {
        return Err(Error::Undefined("no detections with Q = 0".into()));
    }
    let e_bit = model_bit_error(params, channel)?;
    let n_emitted = (n_sifted as f64 / q).round() as u64;
    let stats = RunStatistics {
        n_emitted,
        n_sifted,
        n_bit_errors: (n_sifted as f64 * e_bit).round() as u64,
        n_double_clicks: (n_emitted as f64 * model_double_click(params, channel)).round() as u64,
    };
    stats.validate()?;
    Ok(stats)
}

/// Everything the channel model predicts at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub mu: f64,
    pub nu_th: u32,
    pub q: f64,
    pub e_bit: f64,
    pub p_d: f64,
    pub result: AsymptoticResult,
}

/// Evaluates the asymptotic key rate per emitted packet under the model.
pub fn evaluate_model(params: &ProtocolParams, channel: &ChannelModel) -> Result<ModelPoint> {
    params.validate()?;
    channel.validate()?;
    let q = model_sifted_rate(params, channel);
    let p_d = model_double_click(params, channel);
    let (e_bit, result) = if q > 0.0 {
        let e_bit = model_bit_error(params, channel)?;
        let q_d = (8.0 * p_d / q).min(1.0);
        (
            e_bit,
            key_length_from_counts(q, 1.0, e_bit, q_d, params, channel.f_ec)?,
        )
    } else {
        // Nothing is ever detected.
        let e_src = source_tail_esrc(params)?;
        (
            0.5,
            AsymptoticResult {
                e_src,
                q_d: 0.0,
                e_bit: 0.5,
                e_ph_prime: None,
                secure_length: 0.0,
                raw_length: 0.0,
                rate_per_pulse: 0.0,
                raw_rate_per_pulse: 0.0,
            },
        )
    };
    Ok(ModelPoint {
        mu: params.mu,
        nu_th: params.nu_th,
        q,
        e_bit,
        p_d,
        result,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuOptimum {
    pub mu: f64,
    pub nu_th: u32,
    /// Best clamped rate per pulse; 0 when no operating point yields key.
    pub rate: f64,
    /// Objective value at the returned point before clamping.
    pub raw_rate: f64,
    pub no_positive_key: bool,
}

pub const MU_SEARCH_MIN: f64 = 1e-8;
pub const MU_SEARCH_MAX: f64 = 1.0;
const GRID_POINTS_PER_DECADE: usize = 20;
const MU_REL_TOL: f64 = 1e-3;

pub fn default_nu_candidates() -> Vec<u32> {
    (1..=10).collect()
}

fn model_raw_rate(template: &ProtocolParams, channel: &ChannelModel, mu: f64, nu: u32) -> f64 {
    let params = template.with_mu(mu).with_nu_th(nu);
    evaluate_model(&params, channel)
        .map(|p| p.result.raw_rate_per_pulse)
        .unwrap_or(f64::NEG_INFINITY)
}

/// Maximizes the model's asymptotic rate per pulse over `μ` and the given
/// photon-number thresholds. `μ` is scanned on a log grid then refined by
/// golden-section search in `ln μ`.
pub fn optimize_mu(
    template: &ProtocolParams,
    channel: &ChannelModel,
    nu_candidates: &[u32],
) -> Result<MuOptimum> {
    if nu_candidates.is_empty() {
        return Err(precondition("no photon-number threshold candidates"));
    }
    template.with_mu(0.0).validate()?;
    channel.validate()?;

    let lo = MU_SEARCH_MIN.ln();
    let hi = MU_SEARCH_MAX.ln();
    let decades = (MU_SEARCH_MAX / MU_SEARCH_MIN).log10();
    let n_grid = (decades * GRID_POINTS_PER_DECADE as f64).round() as usize + 1;
    let grid: Vec<f64> = (0..n_grid)
        .map(|i| lo + (hi - lo) * i as f64 / (n_grid - 1) as f64)
        .collect();

    let mut best: Option<(f64, u32, f64)> = None;
    for &nu in nu_candidates {
        if nu == 0 {
            return Err(precondition("photon-number threshold must be >= 1"));
        }
        let objective = |ln_mu: f64| model_raw_rate(template, channel, ln_mu.exp(), nu);
        let (i_best, v_best) = grid.iter().map(|&x| objective(x)).enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, v)| {
                if v > acc.1 {
                    (i, v)
                } else {
                    acc
                }
            },
        );
        let a = grid[i_best.saturating_sub(1)];
        let b = grid[(i_best + 1).min(n_grid - 1)];
        let (x, v) = golden_section_max(objective, a, b, MU_REL_TOL);
        let (x, v) = if v >= v_best {
            (x, v)
        } else {
            (grid[i_best], v_best)
        };
        if best.is_none_or(|(_, _, bv)| v > bv) {
            best = Some((x.exp(), nu, v));
        }
    }
    let (mu, nu_th, raw_rate) = best.expect("non-empty candidates");
    let positive = raw_rate > 0.0;
    Ok(MuOptimum {
        mu,
        nu_th,
        rate: if positive { raw_rate } else { 0.0 },
        raw_rate,
        no_positive_key: !positive,
    })
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

const ESYS_TOL: f64 = 1e-4;

/// Largest baseline error for which some `(μ, ν_th)` still yields key,
/// bisected to 1e-4 absolute.
pub fn max_tolerable_esys(packet_len: usize, template: &ChannelModel) -> Result<f64> {
    let params = ProtocolParams::new(packet_len, 0.0, 1)?;
    let candidates = default_nu_candidates();
    let has_key = |e_sys: f64| -> Result<bool> {
        let channel = ChannelModel { e_sys, ..*template };
        Ok(!optimize_mu(&params, &channel, &candidates)?.no_positive_key)
    };
    let (mut lo, mut hi) = (0.0, 0.5);
    if !has_key(lo)? {
        return Ok(0.0);
    }
    if has_key(hi)? {
        return Ok(hi);
    }
    while hi - lo > ESYS_TOL {
        let mid = 0.5 * (lo + hi);
        if has_key(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Receiver assumed for the tolerable-error table: active delay, 12.7 dB
/// system loss, 20 km of fiber (4.7 dB), 2 counts/s in a 200 ps window.
pub fn table_s1_channel() -> ChannelModel {
    ChannelModel {
        system_loss_db: 12.7,
        channel_loss_db: 4.7,
        dark_prob: ChannelModel::EXPERIMENT_DARK_PROB,
        e_sys: 0.0,
        f_ec: 1.1,
        setup: Setup::Active,
    }
}

pub const TABLE_S1_LENGTHS: [usize; 5] = [5, 16, 32, 64, 128];
