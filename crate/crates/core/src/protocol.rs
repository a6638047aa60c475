//! Packet encoding, interference outcomes and sifting.
//!
//! A packet is `L` weak coherent pulses, each phase-modulated by 0 or π.
//! Bob's interferometer with delay `M` superposes pulse `s - M` (long arm)
//! with pulse `s` (short arm) in output slot `s`, so only slots
//! `M..L` carry interference between two pulses of the same packet.
//! Slots are 0-indexed within the packet throughout this crate.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};

/// Static protocol configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Pulses per packet (`L`).
    pub packet_len: usize,
    /// Mean photon number per pulse.
    pub mu: f64,
    /// Photon-number threshold assumed by the phase-error bound.
    pub nu_th: u32,
    /// Time between adjacent pulses in seconds. Informational only.
    pub pulse_interval_s: f64,
}

impl ProtocolParams {
    pub const DEFAULT_PULSE_INTERVAL_S: f64 = 0.5e-9;

    pub fn new(packet_len: usize, mu: f64, nu_th: u32) -> Result<Self> {
        let params = Self {
            packet_len,
            mu,
            nu_th,
            pulse_interval_s: Self::DEFAULT_PULSE_INTERVAL_S,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.packet_len < 2 {
            return Err(precondition(format!(
                "packet length L must be >= 2, got {}",
                self.packet_len
            )));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(precondition(format!(
                "mean photon number must be finite and >= 0, got {}",
                self.mu
            )));
        }
        if self.nu_th < 1 {
            return Err(precondition("photon-number threshold must be >= 1"));
        }
        Ok(())
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_nu_th(mut self, nu_th: u32) -> Self {
        self.nu_th = nu_th;
        self
    }

    /// `ν_th / (L - 1)`, the phase-error bound for packets within threshold.
    pub fn phase_error_bound(&self) -> f64 {
        f64::from(self.nu_th) / (self.packet_len - 1) as f64
    }
}

/// Phase bits of one packet; bit `k` set means pulse `k` carries phase π.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhasePattern {
    bits: Vec<u8>,
}

impl PhasePattern {
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if bits.len() < 2 {
            return Err(precondition("a phase pattern needs at least 2 pulses"));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(precondition(format!("phase bits must be 0 or 1, got {b}")));
        }
        Ok(Self {
            bits: bits.to_vec(),
        })
    }

    /// Parses a compact string such as `"01000"`.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(precondition(format!("invalid phase bit {other:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::from_bits(&bits)
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self {
            bits: (0..len).map(|_| u8::from(rng.random::<bool>())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bit(&self, k: usize) -> u8 {
        self.bits[k]
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }
}

impl std::fmt::Display for PhasePattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Which multiplexed detector pair a delay line is read out on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelGroup {
    /// "Ch1 or Ch2".
    A,
    /// "Ch3 or Ch4".
    B,
}

/// Assignment of every delay `M ∈ 1..L` to a channel group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayGroupMap {
    groups: Vec<ChannelGroup>,
}

impl DelayGroupMap {
    /// For `L = 5` this is the experimental multiplexing, delays {1, 4} on
    /// group A and {2, 3} on group B. Other lengths put odd delays on A and
    /// even delays on B.
    pub fn for_packet_len(packet_len: usize) -> Self {
        let groups = (1..packet_len)
            .map(|m| {
                if packet_len == 5 {
                    if m == 1 || m == 4 {
                        ChannelGroup::A
                    } else {
                        ChannelGroup::B
                    }
                } else if m % 2 == 1 {
                    ChannelGroup::A
                } else {
                    ChannelGroup::B
                }
            })
            .collect();
        Self { groups }
    }

    /// Every delay listed goes to group A, the rest to group B.
    pub fn from_group_a(packet_len: usize, group_a: &[usize]) -> Result<Self> {
        if packet_len < 2 {
            return Err(precondition("packet length L must be >= 2"));
        }
        if let Some(&m) = group_a.iter().find(|&&m| m == 0 || m >= packet_len) {
            return Err(precondition(format!(
                "delay {m} outside 1..={}",
                packet_len - 1
            )));
        }
        let groups = (1..packet_len)
            .map(|m| {
                if group_a.contains(&m) {
                    ChannelGroup::A
                } else {
                    ChannelGroup::B
                }
            })
            .collect();
        Ok(Self { groups })
    }

    pub fn packet_len(&self) -> usize {
        self.groups.len() + 1
    }

    pub fn group(&self, delay: usize) -> ChannelGroup {
        self.groups[delay - 1]
    }

    pub fn delays_in(&self, group: ChannelGroup) -> impl Iterator<Item = usize> + '_ {
        self.groups
            .iter()
            .enumerate()
            .filter(move |(_, g)| **g == group)
            .map(|(i, _)| i + 1)
    }
}

/// One click recorded by Bob inside an interference slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub packet_id: u64,
    pub output_slot: usize,
    pub delay: usize,
    pub port: u8,
    pub group: ChannelGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftedRecord {
    pub packet_id: u64,
    pub output_slot: usize,
    pub delay: usize,
    pub bob_bit: u8,
    pub alice_bit: u8,
}

impl SiftedRecord {
    pub fn is_error(&self) -> bool {
        self.bob_bit != self.alice_bit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SiftOutcome {
    NoClick,
    Sifted(SiftedRecord),
    /// Clicks in both channel groups; counted toward `N_d`.
    DoubleClick,
    /// Several clicks within one group; dropped without counting.
    Discard,
}

fn check_delay(packet_len: usize, delay: usize) -> Result<()> {
    if delay == 0 || delay >= packet_len {
        return Err(precondition(format!(
            "delay M={delay} outside 1..={} for L={packet_len}",
            packet_len - 1
        )));
    }
    Ok(())
}

/// Output port for slot `slot` of the `delay`-interferometer: 0 when the
/// two pulses share a phase, 1 when they differ by π.
pub fn interference_bit(pattern: &PhasePattern, delay: usize, slot: usize) -> Result<u8> {
    let len = pattern.len();
    check_delay(len, delay)?;
    if slot < delay || slot >= len {
        return Err(precondition(format!(
            "slot {slot} is not an interference slot for M={delay}, L={len}"
        )));
    }
    Ok(pattern.bit(slot - delay) ^ pattern.bit(slot))
}

/// Output slots that interfere two pulses of the same packet.
pub fn valid_slots(packet_len: usize, delay: usize) -> Result<Range<usize>> {
    if packet_len < 2 {
        return Err(precondition("packet length L must be >= 2"));
    }
    check_delay(packet_len, delay)?;
    Ok(delay..packet_len)
}

/// Probability that a photon sitting in pulse `pulse` (1-indexed) is routed
/// to the `delay` interferometer and leaves in one of its interference slots.
///
/// The splitter picks each of the `L - 1` delays uniformly; inside the
/// interferometer the photon takes the short arm (exits slot `k`) or the long
/// arm (exits slot `k + M`) with equal probability.
pub fn routing_probability(packet_len: usize, delay: usize, pulse: usize) -> Result<f64> {
    if packet_len < 2 {
        return Err(precondition("packet length L must be >= 2"));
    }
    check_delay(packet_len, delay)?;
    if pulse == 0 || pulse > packet_len {
        return Err(precondition(format!(
            "pulse index {pulse} outside 1..={packet_len}"
        )));
    }
    let short_arm = u32::from(pulse > delay);
    let long_arm = u32::from(pulse <= packet_len - delay);
    Ok(f64::from(short_arm + long_arm) / (2 * (packet_len - 1)) as f64)
}

/// Classifies the clicks Bob recorded for a single packet.
pub fn sift_packet(events: &[DetectionEvent], pattern: &PhasePattern) -> Result<SiftOutcome> {
    let len = pattern.len();
    for ev in events {
        check_delay(len, ev.delay)?;
        if ev.output_slot < ev.delay || ev.output_slot >= len {
            return Err(precondition(format!(
                "event in non-interference slot {} (M={})",
                ev.output_slot, ev.delay
            )));
        }
        if ev.port > 1 {
            return Err(precondition(format!(
                "port must be 0 or 1, got {}",
                ev.port
            )));
        }
        if ev.packet_id != events[0].packet_id {
            return Err(precondition("events from different packets"));
        }
    }
    match events {
        [] => Ok(SiftOutcome::NoClick),
        [ev] => Ok(SiftOutcome::Sifted(SiftedRecord {
            packet_id: ev.packet_id,
            output_slot: ev.output_slot,
            delay: ev.delay,
            bob_bit: ev.port,
            alice_bit: interference_bit(pattern, ev.delay, ev.output_slot)?,
        })),
        [first, rest @ ..] => {
            if rest.iter().any(|ev| ev.group != first.group) {
                Ok(SiftOutcome::DoubleClick)
            } else {
                Ok(SiftOutcome::Discard)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packet_n() -> PhasePattern {
        PhasePattern::parse("01000").unwrap()
    }

    fn event(delay: usize, slot: usize, port: u8, group: ChannelGroup) -> DetectionEvent {
        DetectionEvent {
            packet_id: 7,
            output_slot: slot,
            delay,
            port,
            group,
        }
    }

    #[test]
    fn interference_examples() {
        let p = packet_n();
        assert_eq!(interference_bit(&p, 1, 1).unwrap(), 1);
        assert_eq!(interference_bit(&p, 2, 2).unwrap(), 0);
        assert_eq!(interference_bit(&p, 4, 4).unwrap(), 0);
    }

    #[test]
    fn interference_rejects_out_of_range() {
        let p = packet_n();
        assert!(interference_bit(&p, 0, 1).is_err());
        assert!(interference_bit(&p, 5, 4).is_err());
        assert!(interference_bit(&p, 2, 1).is_err());
        assert!(interference_bit(&p, 1, 5).is_err());
    }

    #[test]
    fn slots() {
        assert_eq!(
            valid_slots(5, 1).unwrap().collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
        assert_eq!(valid_slots(5, 4).unwrap().collect::<Vec<_>>(), vec![4]);
        assert_eq!(valid_slots(2, 1).unwrap().collect::<Vec<_>>(), vec![1]);
        assert!(valid_slots(5, 5).is_err());
        assert!(valid_slots(5, 0).is_err());
    }

    #[test]
    fn routing_examples() {
        assert_eq!(routing_probability(5, 1, 2).unwrap(), 0.25);
        assert_eq!(routing_probability(5, 3, 3).unwrap(), 0.0);
        assert_eq!(routing_probability(5, 4, 1).unwrap(), 0.125);
        assert!(routing_probability(5, 1, 0).is_err());
        assert!(routing_probability(5, 1, 6).is_err());
        assert!(routing_probability(5, 5, 1).is_err());
    }

    #[test]
    fn group_sums_are_a_quarter_for_l5() {
        let map = DelayGroupMap::for_packet_len(5);
        for k in 1..=5 {
            for group in [ChannelGroup::A, ChannelGroup::B] {
                let total: f64 = map
                    .delays_in(group)
                    .map(|m| routing_probability(5, m, k).unwrap())
                    .sum();
                assert_eq!(total, 0.25, "pulse {k}, group {group:?}");
            }
        }
    }

    #[test]
    fn default_group_map_for_other_lengths() {
        let map = DelayGroupMap::for_packet_len(8);
        assert_eq!(map.group(1), ChannelGroup::A);
        assert_eq!(map.group(2), ChannelGroup::B);
        assert_eq!(map.group(7), ChannelGroup::A);
        assert_eq!(map.packet_len(), 8);
        let custom = DelayGroupMap::from_group_a(5, &[1, 4]).unwrap();
        assert_eq!(custom, DelayGroupMap::for_packet_len(5));
        assert!(DelayGroupMap::from_group_a(5, &[5]).is_err());
    }

    #[test]
    fn sifting() {
        let p = packet_n();
        assert_eq!(sift_packet(&[], &p).unwrap(), SiftOutcome::NoClick);

        match sift_packet(&[event(1, 2, 1, ChannelGroup::A)], &p).unwrap() {
            SiftOutcome::Sifted(rec) => {
                assert_eq!(rec.bob_bit, 1);
                assert_eq!(rec.alice_bit, 1);
                assert!(!rec.is_error());
            }
            other => panic!("expected a sifted bit, got {other:?}"),
        }

        let both = [
            event(1, 2, 1, ChannelGroup::A),
            event(2, 3, 0, ChannelGroup::B),
        ];
        assert_eq!(sift_packet(&both, &p).unwrap(), SiftOutcome::DoubleClick);

        let same = [
            event(1, 2, 1, ChannelGroup::A),
            event(4, 4, 0, ChannelGroup::A),
        ];
        assert_eq!(sift_packet(&same, &p).unwrap(), SiftOutcome::Discard);
    }

    #[test]
    fn sifting_rejects_bad_events() {
        let p = packet_n();
        assert!(sift_packet(&[event(3, 2, 0, ChannelGroup::B)], &p).is_err());
        assert!(sift_packet(&[event(1, 2, 2, ChannelGroup::A)], &p).is_err());
        let mut other = event(1, 3, 0, ChannelGroup::A);
        other.packet_id = 8;
        assert!(sift_packet(&[event(1, 2, 0, ChannelGroup::A), other], &p).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(ProtocolParams::new(1, 0.1, 1).is_err());
        assert!(ProtocolParams::new(5, -0.1, 1).is_err());
        assert!(ProtocolParams::new(5, 0.1, 0).is_err());
        assert!(ProtocolParams::new(5, f64::NAN, 1).is_err());
        let p = ProtocolParams::new(5, 0.1, 1).unwrap();
        assert_eq!(p.phase_error_bound(), 0.25);
    }

    #[test]
    fn pattern_parse() {
        assert!(PhasePattern::parse("0120").is_err());
        assert!(PhasePattern::parse("0").is_err());
        assert_eq!(PhasePattern::parse("10110").unwrap().to_string(), "10110");
    }
}
