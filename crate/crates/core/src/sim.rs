//! Packet-level Monte Carlo of the passive multi-interferometer receiver.
//!
//! Photons are tracked individually instead of simulating optical fields:
//! each surviving photon is routed by the splitter and interferometer arm
//! choice, and lands on the port given by the phase difference of the two
//! pulses it interferes, flipped with probability `e_sys`. Dark clicks are
//! added to the (port, delay, interference-slot) cells.
//!
//! Every packet draws from its own ChaCha8 stream keyed by the run seed and
//! indexed by the packet id, so results do not depend on how packets are
//! spread over worker threads.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotic::{ChannelModel, RunStatistics, Setup};
use crate::error::{precondition, Result};
use crate::protocol::{
    interference_bit, sift_packet, DelayGroupMap, DetectionEvent, PhasePattern, ProtocolParams,
    SiftOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSource {
    /// Every packet uses the same pattern.
    Fixed(PhasePattern),
    /// Fresh uniform phase bits per packet from the packet's stream.
    SeededRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: ProtocolParams,
    pub channel: ChannelModel,
    pub groups: DelayGroupMap,
    pub n_packets: u64,
    pub seed: u64,
    pub phase_source: PhaseSource,
}

impl SimConfig {
    pub fn new(params: ProtocolParams, channel: ChannelModel, n_packets: u64, seed: u64) -> Self {
        Self {
            groups: DelayGroupMap::for_packet_len(params.packet_len),
            params,
            channel,
            n_packets,
            seed,
            phase_source: PhaseSource::SeededRandom,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.channel.validate()?;
        if self.n_packets == 0 {
            return Err(precondition("n_packets must be >= 1"));
        }
        if self.channel.setup != Setup::Passive {
            return Err(precondition(
                "the simulator models the passive multi-interferometer receiver only",
            ));
        }
        if self.groups.packet_len() != self.params.packet_len {
            return Err(precondition("delay group map does not match packet length"));
        }
        if let PhaseSource::Fixed(p) = &self.phase_source {
            if p.len() != self.params.packet_len {
                return Err(precondition(format!(
                    "phase pattern has {} pulses, expected {}",
                    p.len(),
                    self.params.packet_len
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub stats: RunStatistics,
    /// Sifted bits per interferometer delay.
    pub per_delay_counts: BTreeMap<usize, u64>,
    /// Packets dropped for several clicks inside one channel group.
    pub n_discarded: u64,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    stats: RunStatistics,
    per_delay: Vec<u64>,
    discarded: u64,
}

impl Tally {
    fn new(packet_len: usize) -> Self {
        Self {
            per_delay: vec![0; packet_len],
            ..Default::default()
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.stats.merge(&other.stats);
        for (a, b) in self.per_delay.iter_mut().zip(other.per_delay) {
            *a += b;
        }
        self.discarded += other.discarded;
        self
    }
}

/// A click cell before the port is known: photon clicks carry a pending
/// error flip, dark clicks a raw port.
#[derive(Debug, Clone, Copy)]
enum Pending {
    Photon {
        delay: usize,
        slot: usize,
        flip: bool,
    },
    Dark {
        delay: usize,
        slot: usize,
        port: u8,
    },
}

/// Precomputed per-run quantities.
struct Engine<'a> {
    config: &'a SimConfig,
    key: [u8; 32],
    photons: Option<Poisson<f64>>,
    eta: f64,
    dark_cells: Vec<(usize, usize, u8)>,
    // ln(1 - d_c), for geometric skipping over dark cells.
    ln_no_dark: f64,
}

const BLOCK: u64 = 1 << 14;

impl<'a> Engine<'a> {
    fn new(config: &'a SimConfig) -> Result<Self> {
        let len = config.params.packet_len;
        let mean = len as f64 * config.params.mu;
        let photons = if mean > 0.0 {
            Some(Poisson::new(mean).map_err(|e| precondition(e.to_string()))?)
        } else {
            None
        };
        let mut dark_cells = Vec::with_capacity(len * (len - 1));
        for delay in 1..len {
            for slot in delay..len {
                for port in 0..2 {
                    dark_cells.push((delay, slot, port));
                }
            }
        }
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&config.seed.to_le_bytes());
        key[8..16].copy_from_slice(b"rrdps-mc");
        Ok(Self {
            config,
            key,
            photons,
            eta: config.channel.transmittance(),
            dark_cells,
            ln_no_dark: (-config.channel.dark_prob).ln_1p(),
        })
    }

    fn packet_rng(&self, packet_id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(packet_id);
        rng
    }

    fn run_block(&self, start: u64, end: u64) -> Tally {
        let mut tally = Tally::new(self.config.params.packet_len);
        let mut pending = Vec::new();
        let mut events = Vec::new();
        for packet_id in start..end {
            let mut rng = self.packet_rng(packet_id);
            let outcome = self.packet(packet_id, &mut rng, &mut pending, &mut events);
            tally.stats.n_emitted += 1;
            match outcome {
                SiftOutcome::NoClick => {}
                SiftOutcome::Sifted(rec) => {
                    tally.stats.n_sifted += 1;
                    tally.stats.n_bit_errors += u64::from(rec.is_error());
                    tally.per_delay[rec.delay] += 1;
                }
                SiftOutcome::DoubleClick => tally.stats.n_double_clicks += 1,
                SiftOutcome::Discard => tally.discarded += 1,
            }
        }
        tally
    }

    fn packet(
        &self,
        packet_id: u64,
        rng: &mut ChaCha8Rng,
        pending: &mut Vec<Pending>,
        events: &mut Vec<DetectionEvent>,
    ) -> SiftOutcome {
        let len = self.config.params.packet_len;
        let e_sys = self.config.channel.e_sys;
        pending.clear();

        let n_photons = self.photons.as_ref().map_or(0, |d| d.sample(rng) as u64);
        for _ in 0..n_photons {
            if !rng.random_bool(self.eta) {
                continue;
            }
            let pulse = rng.random_range(0..len);
            let delay = rng.random_range(1..len);
            let slot = if rng.random_bool(0.5) {
                pulse + delay
            } else {
                pulse
            };
            let flip = e_sys > 0.0 && rng.random_bool(e_sys);
            if slot >= delay && slot < len {
                pending.push(Pending::Photon { delay, slot, flip });
            }
        }
        self.add_dark_clicks(rng, pending);

        if pending.is_empty() {
            return SiftOutcome::NoClick;
        }
        let pattern = match &self.config.phase_source {
            PhaseSource::Fixed(p) => p.clone(),
            PhaseSource::SeededRandom => PhasePattern::random(len, rng),
        };
        events.clear();
        for cell in pending.iter() {
            let (delay, slot, port) = match *cell {
                Pending::Photon { delay, slot, flip } => {
                    let bit = interference_bit(&pattern, delay, slot)
                        .expect("routed photons land in interference slots");
                    (delay, slot, bit ^ u8::from(flip))
                }
                Pending::Dark { delay, slot, port } => (delay, slot, port),
            };
            let ev = DetectionEvent {
                packet_id,
                output_slot: slot,
                delay,
                port,
                group: self.config.groups.group(delay),
            };
            // Threshold detectors: a cell clicks once however many photons hit it.
            if !events.contains(&ev) {
                events.push(ev);
            }
        }
        sift_packet(events, &pattern).expect("simulated events are valid")
    }

    fn add_dark_clicks(&self, rng: &mut ChaCha8Rng, pending: &mut Vec<Pending>) {
        let d = self.config.channel.dark_prob;
        if d <= 0.0 {
            return;
        }
        let n = self.dark_cells.len();
        let mut push = |i: usize| {
            let (delay, slot, port) = self.dark_cells[i];
            pending.push(Pending::Dark { delay, slot, port });
        };
        if d >= 1.0 {
            (0..n).for_each(&mut push);
            return;
        }
        // Gaps between dark cells are geometric; one uniform per packet in
        // the common no-dark case.
        let mut pos = 0usize;
        loop {
            let u = 1.0 - rng.random::<f64>();
            let gap = (u.ln() / self.ln_no_dark).floor();
            if gap >= (n - pos) as f64 {
                break;
            }
            pos += gap as usize;
            push(pos);
            pos += 1;
            if pos >= n {
                break;
            }
        }
    }
}

/// Runs the simulation on the global rayon pool.
pub fn simulate(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let engine = Engine::new(config)?;
    let tally = run_parallel(&engine, config.n_packets);
    Ok(report(config, tally))
}

/// Runs the simulation on a dedicated pool of `workers` threads. The report
/// is identical for every worker count.
pub fn simulate_with_workers(config: &SimConfig, workers: usize) -> Result<SimReport> {
    config.validate()?;
    if workers == 0 {
        return Err(precondition("workers must be >= 1"));
    }
    let engine = Engine::new(config)?;
    if workers == 1 {
        let tally = engine.run_block(0, config.n_packets);
        return Ok(report(config, tally));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| precondition(e.to_string()))?;
    let tally = pool.install(|| run_parallel(&engine, config.n_packets));
    Ok(report(config, tally))
}

fn run_parallel(engine: &Engine<'_>, n_packets: u64) -> Tally {
    let len = engine.config.params.packet_len;
    let blocks = n_packets.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|b| engine.run_block(b * BLOCK, ((b + 1) * BLOCK).min(n_packets)))
        .reduce(|| Tally::new(len), Tally::merge)
}

fn report(config: &SimConfig, tally: Tally) -> SimReport {
    let per_delay_counts = (1..config.params.packet_len)
        .map(|m| (m, tally.per_delay[m]))
        .collect();
    SimReport {
        seed: config.seed,
        stats: tally.stats,
        per_delay_counts,
        n_discarded: tally.discarded,
    }
}

/// Fraction of packets with exactly `n_photons` received photons (no loss,
/// no dark clicks) that click in both channel groups.
pub fn forced_multiphoton_trial(
    params: &ProtocolParams,
    groups: &DelayGroupMap,
    n_photons: u32,
    n_trials: u64,
    seed: u64,
) -> Result<f64> {
    params.validate()?;
    if n_trials < 100_000 {
        return Err(precondition(
            "forced multiphoton trials need n_trials >= 1e5",
        ));
    }
    if groups.packet_len() != params.packet_len {
        return Err(precondition("delay group map does not match packet length"));
    }
    let len = params.packet_len;
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(b"rrdps-2p");
    let doubles: u64 = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::from_seed(key);
            rng.set_stream(trial);
            let (mut a, mut b) = (false, false);
            for _ in 0..n_photons {
                let pulse = rng.random_range(0..len);
                let delay = rng.random_range(1..len);
                let slot = if rng.random_bool(0.5) {
                    pulse + delay
                } else {
                    pulse
                };
                if slot >= delay && slot < len {
                    match groups.group(delay) {
                        crate::protocol::ChannelGroup::A => a = true,
                        crate::protocol::ChannelGroup::B => b = true,
                    }
                }
            }
            u64::from(a && b)
        })
        .sum();
    Ok(doubles as f64 / n_trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(mu: f64, dark: f64, e_sys: f64, n: u64) -> SimConfig {
        let params = ProtocolParams::new(5, mu, 1).unwrap();
        let channel = ChannelModel {
            dark_prob: dark,
            e_sys,
            ..ChannelModel::experimental(0.0)
        };
        SimConfig::new(params, channel, n, 11)
    }

    #[test]
    fn silence_without_light_or_noise() {
        let r = simulate(&config(0.0, 0.0, 0.0, 50_000)).unwrap();
        assert_eq!(r.stats.n_emitted, 50_000);
        assert_eq!(r.stats.n_sifted, 0);
        assert_eq!(r.stats.n_bit_errors, 0);
        assert_eq!(r.stats.n_double_clicks, 0);
        assert_eq!(r.n_discarded, 0);
    }

    #[test]
    fn error_free_channel_has_no_bit_errors() {
        let r = simulate(&config(0.5, 0.0, 0.0, 200_000)).unwrap();
        assert!(r.stats.n_sifted > 1000);
        assert_eq!(r.stats.n_bit_errors, 0);
    }

    #[test]
    fn per_delay_counts_sum_to_sifted() {
        let r = simulate(&config(0.3, 1e-4, 0.02, 100_000)).unwrap();
        assert_eq!(r.per_delay_counts.values().sum::<u64>(), r.stats.n_sifted);
        assert_eq!(r.per_delay_counts.len(), 4);
    }

    #[test]
    fn fixed_pattern_is_honoured() {
        let mut c = config(0.5, 0.0, 0.0, 20_000);
        c.phase_source = PhaseSource::Fixed(PhasePattern::parse("01000").unwrap());
        let r = simulate(&c).unwrap();
        assert!(r.stats.n_sifted > 0);
        assert_eq!(r.stats.n_bit_errors, 0);
        c.phase_source = PhaseSource::Fixed(PhasePattern::parse("0100").unwrap());
        assert!(simulate(&c).is_err());
    }

    #[test]
    fn certain_dark_clicks_always_double_click() {
        let r = simulate(&config(0.0, 1.0, 0.0, 1000)).unwrap();
        assert_eq!(r.stats.n_double_clicks, 1000);
    }

    #[test]
    fn invalid_configs() {
        assert!(simulate(&config(0.1, 0.0, 0.0, 0)).is_err());
        let mut c = config(0.1, 0.0, 0.0, 10);
        c.channel.setup = Setup::Active;
        assert!(simulate(&c).is_err());
        assert!(simulate_with_workers(&config(0.1, 0.0, 0.0, 10), 0).is_err());
    }

    #[test]
    fn worker_count_does_not_matter() {
        let c = config(0.2, 1e-3, 0.05, 3 * BLOCK + 17);
        let one = simulate_with_workers(&c, 1).unwrap();
        let four = simulate_with_workers(&c, 4).unwrap();
        assert_eq!(one, four);
        assert_eq!(one, simulate(&c).unwrap());
    }

    #[test]
    fn single_photon_never_double_clicks() {
        let p = ProtocolParams::new(5, 0.1, 1).unwrap();
        let g = DelayGroupMap::for_packet_len(5);
        assert_eq!(
            forced_multiphoton_trial(&p, &g, 1, 100_000, 3).unwrap(),
            0.0
        );
        assert!(forced_multiphoton_trial(&p, &g, 2, 10, 3).is_err());
    }
}
