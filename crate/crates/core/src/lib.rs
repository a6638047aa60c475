//! Simulator and secure-key-length calculator for round-robin
//! differential-phase-shift quantum key distribution.
//!
//! - [`protocol`]: packets, interference outcomes, routing and sifting.
//! - [`asymptotic`]: channel model, asymptotic key length, `μ` optimization.
//! - [`tail`] and [`finite`]: binomial tails and finite-length key accounting.
//! - [`sim`]: seeded packet-level Monte Carlo.
//! - [`cli`]: the `rrdps` command-line front end.

// `!(x > 0.0)`-style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotic;
pub mod cli;
pub mod error;
pub mod finite;
pub mod protocol;
pub mod sim;
pub mod tail;

pub use asymptotic::{
    asymptotic_key_length, binary_entropy, double_click_fraction, evaluate_model,
    max_tolerable_esys, model_bit_error, model_double_click, model_sifted_rate, optimize_mu,
    phase_error_rate, source_tail_esrc, synthesize_statistics, AsymptoticResult, ChannelModel,
    ModelPoint, MuOptimum, RunStatistics, Setup,
};
pub use error::{Error, Result};
pub use finite::{
    finite_key_length, security_parameter, threshold_nbar_d, threshold_nbar_ma, threshold_nbar_mb,
    threshold_nbar_ph, EpsilonBudget, FiniteKeyResult,
};
pub use protocol::{
    interference_bit, routing_probability, sift_packet, valid_slots, ChannelGroup, DelayGroupMap,
    DetectionEvent, PhasePattern, ProtocolParams, SiftOutcome, SiftedRecord,
};
pub use sim::{
    forced_multiphoton_trial, simulate, simulate_with_workers, PhaseSource, SimConfig, SimReport,
};
pub use tail::{kl_divergence_bits, tail_geq, tail_leq, Log2Prob};
