//! The `rrdps` command-line front end.
//!
//! Exit codes: 0 on success, 2 for invalid arguments or configuration,
//! 3 when a finite-key session is discarded, 1 for I/O failures.

pub mod config;
pub mod record;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asymptotic::{
    asymptotic_key_length, default_nu_candidates, evaluate_model, max_tolerable_esys,
    model_double_click, optimize_mu, synthesize_statistics, table_s1_channel, ModelPoint,
    MuOptimum, RunStatistics, TABLE_S1_LENGTHS,
};
use crate::finite::{finite_key_length, EpsilonBudget, FiniteKeyResult};
use crate::protocol::{PhasePattern, ProtocolParams};
use crate::sim::{simulate, simulate_with_workers, PhaseSource, SimConfig};
use crate::tail::Log2Prob;
use config::{ConfigError, RunConfig};
use record::{RecordOutput, RunRecord};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] crate::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Core(crate::Error::SessionDiscarded { .. }) => 3,
            CliError::Core(_) => 2,
            CliError::Io { .. } => 1,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Debug, Parser)]
#[command(
    name = "rrdps",
    version,
    about = "Round-robin DPS QKD simulator and secure key rate calculator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Asymptotic key rate under the channel model, as CSV.
    Keyrate(KeyrateArgs),
    /// Largest tolerable baseline error for each packet length, as CSV.
    TableS1(TableArgs),
    /// Packet-level Monte Carlo; prints a JSON report.
    Simulate(SimulateArgs),
    /// Finite-length key from session counts; prints JSON.
    Finite(FiniteArgs),
    /// Key rate along one parameter axis, as CSV.
    Sweep(SweepArgs),
    /// Rate-maximizing mean photon number and threshold; prints JSON.
    Optimize(OptimizeArgs),
}

/// Protocol and channel settings. Flags override the config file, which
/// overrides the built-in experimental defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pulses per packet.
    #[arg(short = 'L', long = "packet-len")]
    pub packet_len: Option<usize>,
    /// Mean photon number per pulse; optimized when omitted (where supported).
    #[arg(long)]
    pub mu: Option<f64>,
    /// Photon-number threshold.
    #[arg(long)]
    pub nu_th: Option<u32>,
    #[arg(long)]
    pub pulse_interval_s: Option<f64>,
    /// Comma-separated delays of channel group A.
    #[arg(long)]
    pub group_a_delays: Option<String>,
    #[arg(long)]
    pub system_loss_db: Option<f64>,
    #[arg(long, visible_alias = "loss")]
    pub channel_loss_db: Option<f64>,
    /// Dark counts per second per detector.
    #[arg(long, visible_alias = "dark")]
    pub dark_cps: Option<f64>,
    /// Detection window in seconds.
    #[arg(long)]
    pub window_s: Option<f64>,
    /// Baseline bit error.
    #[arg(long)]
    pub e_sys: Option<f64>,
    /// Error-correction inefficiency.
    #[arg(long)]
    pub f_ec: Option<f64>,
    /// passive or active.
    #[arg(long)]
    pub setup: Option<String>,
}

impl ModelArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(io_err(format!("reading {}", path.display())))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        let overrides: [(&str, Option<String>); 12] = [
            ("protocol.L", self.packet_len.map(|v| v.to_string())),
            ("protocol.mu", self.mu.map(|v| v.to_string())),
            ("protocol.nu_th", self.nu_th.map(|v| v.to_string())),
            (
                "protocol.pulse_interval_s",
                self.pulse_interval_s.map(|v| v.to_string()),
            ),
            ("protocol.group_a_delays", self.group_a_delays.clone()),
            (
                "channel.system_loss_db",
                self.system_loss_db.map(|v| v.to_string()),
            ),
            (
                "channel.channel_loss_db",
                self.channel_loss_db.map(|v| v.to_string()),
            ),
            ("channel.dark_cps", self.dark_cps.map(|v| v.to_string())),
            ("channel.window_s", self.window_s.map(|v| v.to_string())),
            ("channel.e_sys", self.e_sys.map(|v| v.to_string())),
            ("channel.f_ec", self.f_ec.map(|v| v.to_string())),
            ("channel.setup", self.setup.clone()),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct KeyrateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Channel losses `from:to:step` in dB.
    #[arg(long)]
    pub loss_range: Option<String>,
    /// Write output here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Archive a run record in this directory.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// Comma-separated packet lengths.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Packets to simulate.
    #[arg(long, default_value_t = 1_000_000)]
    pub packets: u64,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Fixed phase pattern such as 01000; random per packet otherwise.
    #[arg(long)]
    pub pattern: Option<String>,
    /// Print one CSV row of counts instead of JSON.
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FiniteArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSON file holding session counts, or a `simulate` report.
    #[arg(long, conflicts_with = "synthesize_sifted")]
    pub stats: Option<PathBuf>,
    #[arg(long, requires_all = ["n_sifted", "n_bit_errors", "n_double_clicks"], conflicts_with_all = ["stats", "synthesize_sifted"])]
    pub n_emitted: Option<u64>,
    #[arg(long, requires = "n_emitted")]
    pub n_sifted: Option<u64>,
    #[arg(long, requires = "n_emitted")]
    pub n_bit_errors: Option<u64>,
    #[arg(long, requires = "n_emitted")]
    pub n_double_clicks: Option<u64>,
    /// Use the model's expected counts for this many sifted bits.
    #[arg(long)]
    pub synthesize_sifted: Option<u64>,
    /// Pre-agreed double-click probability; the model value when omitted.
    #[arg(long)]
    pub p_d: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub log2_eps1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub log2_eps2: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub log2_eps3: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub log2_eta_x: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub log2_eta_z: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Loss,
    Mu,
    #[value(name = "L")]
    L,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum)]
    pub axis: Axis,
    #[arg(long, allow_hyphen_values = true)]
    pub from: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub to: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    /// Explicit comma-separated axis values.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["from", "to", "step", "log_points"])]
    pub values: Option<Vec<f64>>,
    /// Log-spaced points between `--from` and `--to`.
    #[arg(long, conflicts_with = "step")]
    pub log_points: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const KEYRATE_HEADER: &str =
    "channel_loss_db,mu,nu_th,Q,e_bit,p_d,e_src,e_ph_prime,G_over_N,rate_per_pulse";
pub const TABLE_HEADER: &str = "L,e_sys_max";
pub const SIM_CSV_HEADER: &str = "seed,n_emitted,n_sifted,n_bit_errors,n_double_clicks,n_discarded";

/// One line of `keyrate` / `sweep` output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyrateRow {
    pub channel_loss_db: f64,
    pub mu: f64,
    pub nu_th: u32,
    pub q: f64,
    pub e_bit: f64,
    pub p_d: f64,
    pub e_src: f64,
    pub e_ph_prime: Option<f64>,
    pub g_over_n: f64,
    pub rate_per_pulse: f64,
}

impl KeyrateRow {
    fn from_point(channel_loss_db: f64, p: &ModelPoint) -> Self {
        Self {
            channel_loss_db,
            mu: p.mu,
            nu_th: p.nu_th,
            q: p.q,
            e_bit: p.e_bit,
            p_d: p.p_d,
            e_src: p.result.e_src,
            e_ph_prime: p.result.e_ph_prime,
            g_over_n: if p.q > 0.0 {
                p.result.secure_length / p.q
            } else {
                0.0
            },
            rate_per_pulse: p.result.rate_per_pulse,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            num(self.channel_loss_db),
            num(self.mu),
            self.nu_th,
            num(self.q),
            num(self.e_bit),
            num(self.p_d),
            num(self.e_src),
            num(self.e_ph_prime.unwrap_or(f64::NAN)),
            num(self.g_over_n),
            num(self.rate_per_pulse),
        )
    }
}

/// Six significant digits in scientific notation.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.5e}")
    }
}

/// Protocol parameters for a config, optimizing `μ` (and `ν_th` unless
/// fixed) when the config leaves `μ` open.
pub fn resolve_params(cfg: &RunConfig) -> Result<ProtocolParams, CliError> {
    let template = cfg.params_template();
    let params = match cfg.mu {
        Some(mu) => template.with_mu(mu),
        None => {
            let nus = cfg
                .nu_th
                .map(|n| vec![n])
                .unwrap_or_else(default_nu_candidates);
            let opt = optimize_mu(&template, &cfg.channel(), &nus)?;
            template.with_mu(opt.mu).with_nu_th(opt.nu_th)
        }
    };
    params.validate()?;
    Ok(params)
}

pub fn keyrate_row(cfg: &RunConfig) -> Result<KeyrateRow, CliError> {
    let params = resolve_params(cfg)?;
    let point = evaluate_model(&params, &cfg.channel())?;
    Ok(KeyrateRow::from_point(cfg.channel_loss_db, &point))
}

/// Parses `from:to:step` into the values `from + i·step` up to `to`.
pub fn parse_range(range: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = range.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!(
            "range {range:?} must look like from:to:step"
        )));
    }
    let mut v = [0.0; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("range {range:?}: {part:?} is not a number")))?;
    }
    linear_values(v[0], v[1], v[2])
}

fn linear_values(from: f64, to: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0 && step.is_finite() && from.is_finite() && to.is_finite()) {
        return Err(CliError::Usage("range step must be finite and > 0".into()));
    }
    if from > to {
        return Err(CliError::Usage(format!("empty range {from} to {to}")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| from + i as f64 * step).collect())
}

fn log_values(from: f64, to: f64, points: usize) -> Result<Vec<f64>, CliError> {
    if !(from > 0.0 && to > 0.0 && from.is_finite() && to.is_finite()) {
        return Err(CliError::Usage(
            "log-spaced axis needs positive bounds".into(),
        ));
    }
    if points == 0 || from > to {
        return Err(CliError::Usage(format!("empty range {from} to {to}")));
    }
    if points == 1 {
        return Ok(vec![from]);
    }
    let (a, b) = (from.ln(), to.ln());
    Ok((0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect())
}

/// Axis values requested by a sweep.
pub fn sweep_values(args: &SweepArgs) -> Result<Vec<f64>, CliError> {
    if let Some(values) = &args.values {
        if values.is_empty() {
            return Err(CliError::Usage("empty value list".into()));
        }
        return Ok(values.clone());
    }
    let (from, to) = match (args.from, args.to) {
        (Some(f), Some(t)) => (f, t),
        _ => {
            return Err(CliError::Usage(
                "sweep needs --values or both --from and --to".into(),
            ))
        }
    };
    match (args.log_points, args.step) {
        (Some(points), _) => log_values(from, to, points),
        (None, Some(step)) => linear_values(from, to, step),
        (None, None) => Err(CliError::Usage("sweep needs --step or --log-points".into())),
    }
}

/// Applies one axis value to a config.
pub fn config_at(base: &RunConfig, axis: Axis, value: f64) -> Result<RunConfig, CliError> {
    let mut cfg = base.clone();
    match axis {
        Axis::Loss => cfg.channel_loss_db = value,
        Axis::Mu => cfg.mu = Some(value),
        Axis::L => {
            if !(value.fract() == 0.0 && value >= 2.0 && value <= u32::MAX as f64) {
                return Err(CliError::Usage(format!(
                    "packet length {value} must be an integer >= 2"
                )));
            }
            cfg.packet_len = value as usize;
            if let Some(delays) = &cfg.group_a_delays {
                if delays.iter().any(|&d| d >= cfg.packet_len) {
                    cfg.group_a_delays = None;
                }
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `(L, e_sys_max)` rows, computed in parallel.
pub fn table_rows(lengths: &[usize]) -> Result<Vec<(usize, f64)>, CliError> {
    let channel = table_s1_channel();
    lengths
        .par_iter()
        .map(|&len| Ok((len, max_tolerable_esys(len, &channel)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteReport {
    pub packet_len: usize,
    pub mu: f64,
    pub nu_th: u32,
    pub f_ec: f64,
    pub p_d: f64,
    pub stats: RunStatistics,
    pub finite: FiniteKeyResult,
    /// `log2` of the security parameter bound.
    pub log2_d: f64,
    pub asymptotic_length: f64,
    /// Finite over asymptotic secure length; absent when the latter is 0.
    pub finite_over_asymptotic: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub optimum: MuOptimum,
    pub point: ModelPoint,
}

fn read_stats(path: &Path) -> Result<RunStatistics, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let inner = value.get("stats").cloned().unwrap_or(value);
    serde_json::from_value(inner)
        .map_err(|e| CliError::Usage(format!("{}: not a statistics object: {e}", path.display())))
}

fn budget_from(args: &FiniteArgs) -> EpsilonBudget {
    let d = EpsilonBudget::default();
    let pick = |v: Option<f64>, default: Log2Prob| v.map(Log2Prob).unwrap_or(default);
    EpsilonBudget {
        eps1: pick(args.log2_eps1, d.eps1),
        eps2: pick(args.log2_eps2, d.eps2),
        eps3: pick(args.log2_eps3, d.eps3),
        eta_x: pick(args.log2_eta_x, d.eta_x),
        eta_z: pick(args.log2_eta_z, d.eta_z),
    }
}

pub fn finite_report(
    cfg: &RunConfig,
    stats: &RunStatistics,
    params: &ProtocolParams,
    p_d: f64,
    budget: &EpsilonBudget,
) -> Result<FiniteReport, CliError> {
    let finite = finite_key_length(stats, params, cfg.f_ec, p_d, budget)?;
    let asymptotic_length = asymptotic_key_length(stats, params, cfg.f_ec)?.secure_length;
    Ok(FiniteReport {
        packet_len: params.packet_len,
        mu: params.mu,
        nu_th: params.nu_th,
        f_ec: cfg.f_ec,
        p_d,
        stats: *stats,
        log2_d: finite.d_bound.exponent(),
        finite_over_asymptotic: (asymptotic_length > 0.0).then(|| finite.g_f / asymptotic_length),
        finite,
        asymptotic_length,
    })
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(io_err(format!("writing {}", path.display())))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(io_err("writing stdout"))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

fn archive(dir: &Option<PathBuf>, make: impl FnOnce() -> RunRecord) -> Result<(), CliError> {
    if let Some(dir) = dir {
        let path = make()
            .write_to(dir)
            .map_err(io_err(format!("writing record in {}", dir.display())))?;
        eprintln!("record: {}", path.display());
    }
    Ok(())
}

fn cmd_keyrate(args: &KeyrateArgs) -> Result<(), CliError> {
    let cfg = args.model.resolve()?;
    let losses = match &args.loss_range {
        Some(range) => parse_range(range)?,
        None => vec![cfg.channel_loss_db],
    };
    let rows: Vec<KeyrateRow> = losses
        .par_iter()
        .map(|&loss| keyrate_row(&config_at(&cfg, Axis::Loss, loss)?))
        .collect::<Result<_, _>>()?;
    let mut text = format!("{KEYRATE_HEADER}\n");
    for row in &rows {
        text.push_str(&row.to_csv());
        text.push('\n');
    }
    emit(&args.out, &text)?;
    archive(&args.record, || {
        let mut inputs = BTreeMap::new();
        if let Some(range) = &args.loss_range {
            inputs.insert("loss_range".to_string(), range.clone());
        }
        RunRecord::new("keyrate", &cfg, inputs, RecordOutput::Keyrate(rows), None)
    })
}

fn cmd_table(args: &TableArgs) -> Result<(), CliError> {
    let lengths = args
        .lengths
        .clone()
        .unwrap_or_else(|| TABLE_S1_LENGTHS.to_vec());
    if lengths.is_empty() {
        return Err(CliError::Usage("no packet lengths given".into()));
    }
    let mut text = format!("{TABLE_HEADER}\n");
    for (len, e) in table_rows(&lengths)? {
        text.push_str(&format!("{len},{}\n", num(e)));
    }
    emit(&args.out, &text)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let cfg = args.model.resolve()?;
    let mu = cfg.require_mu()?;
    let params = cfg.params_template().with_mu(mu);
    let mut sim = SimConfig::new(params, cfg.channel(), args.packets, args.seed);
    sim.groups = cfg.groups();
    if let Some(p) = &args.pattern {
        sim.phase_source = PhaseSource::Fixed(PhasePattern::parse(p)?);
    }
    let start = Instant::now();
    let report = match args.workers {
        Some(w) => simulate_with_workers(&sim, w)?,
        None => simulate(&sim)?,
    };
    let elapsed = start.elapsed().as_secs_f64();
    let text = if args.csv {
        let s = &report.stats;
        format!(
            "{SIM_CSV_HEADER}\n{},{},{},{},{},{}\n",
            report.seed,
            s.n_emitted,
            s.n_sifted,
            s.n_bit_errors,
            s.n_double_clicks,
            report.n_discarded
        )
    } else {
        to_json(&report)
    };
    emit(&args.out, &text)?;
    eprintln!(
        "simulated {} packets in {elapsed:.3} s ({:.3e} packets/s)",
        args.packets,
        args.packets as f64 / elapsed.max(1e-9)
    );
    archive(&args.record, || {
        let mut inputs = BTreeMap::new();
        inputs.insert("seed".to_string(), args.seed.to_string());
        inputs.insert("packets".to_string(), args.packets.to_string());
        if let Some(p) = &args.pattern {
            inputs.insert("pattern".to_string(), p.clone());
        }
        RunRecord::new(
            "simulate",
            &cfg,
            inputs,
            RecordOutput::Simulation(report),
            Some(elapsed),
        )
    })
}

fn cmd_finite(args: &FiniteArgs) -> Result<(), CliError> {
    let cfg = args.model.resolve()?;
    let (stats, params) = if let Some(n_sifted) = args.synthesize_sifted {
        let params = resolve_params(&cfg)?;
        (
            synthesize_statistics(&params, &cfg.channel(), n_sifted)?,
            params,
        )
    } else {
        let stats = if let Some(path) = &args.stats {
            read_stats(path)?
        } else if let (Some(n_emitted), Some(n_sifted), Some(n_bit_errors), Some(n_double_clicks)) = (
            args.n_emitted,
            args.n_sifted,
            args.n_bit_errors,
            args.n_double_clicks,
        ) {
            RunStatistics {
                n_emitted,
                n_sifted,
                n_bit_errors,
                n_double_clicks,
            }
        } else {
            return Err(CliError::Usage(
                "give --stats, the four --n-* counts, or --synthesize-sifted".into(),
            ));
        };
        let mu = cfg.require_mu()?;
        (stats, cfg.params_template().with_mu(mu))
    };
    let p_d = args
        .p_d
        .unwrap_or_else(|| model_double_click(&params, &cfg.channel()));
    let budget = budget_from(args);
    let report = finite_report(&cfg, &stats, &params, p_d, &budget)?;
    emit(&args.out, &to_json(&report))?;
    archive(&args.record, || {
        let mut inputs = BTreeMap::new();
        inputs.insert(
            "stats".to_string(),
            serde_json::to_string(&stats).unwrap_or_default(),
        );
        inputs.insert("p_d".to_string(), p_d.to_string());
        inputs.insert(
            "budget".to_string(),
            serde_json::to_string(&budget).unwrap_or_default(),
        );
        RunRecord::new("finite", &cfg, inputs, RecordOutput::Finite(report), None)
    })
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let cfg = args.model.resolve()?;
    let values = sweep_values(args)?;
    let rows: Vec<(f64, KeyrateRow)> = values
        .par_iter()
        .map(|&v| Ok((v, keyrate_row(&config_at(&cfg, args.axis, v)?)?)))
        .collect::<Result<_, CliError>>()?;
    let mut text = format!("axis_value,{KEYRATE_HEADER}\n");
    for (v, row) in &rows {
        text.push_str(&format!("{},{}\n", num(*v), row.to_csv()));
    }
    emit(&args.out, &text)?;
    archive(&args.record, || {
        let mut inputs = BTreeMap::new();
        inputs.insert("axis".to_string(), format!("{:?}", args.axis));
        let list: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        inputs.insert("values".to_string(), list.join(","));
        RunRecord::new(
            "sweep",
            &cfg,
            inputs,
            RecordOutput::Keyrate(rows.into_iter().map(|(_, r)| r).collect()),
            None,
        )
    })
}

fn cmd_optimize(args: &OptimizeArgs) -> Result<(), CliError> {
    let cfg = args.model.resolve()?;
    let template = cfg.params_template();
    let nus = cfg
        .nu_th
        .map(|n| vec![n])
        .unwrap_or_else(default_nu_candidates);
    let channel = cfg.channel();
    let optimum = optimize_mu(&template, &channel, &nus)?;
    let point = evaluate_model(
        &template.with_mu(optimum.mu).with_nu_th(optimum.nu_th),
        &channel,
    )?;
    emit(&args.out, &to_json(&OptimizeReport { optimum, point }))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Keyrate(a) => cmd_keyrate(a),
        Command::TableS1(a) => cmd_table(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Finite(a) => cmd_finite(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Optimize(a) => cmd_optimize(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
