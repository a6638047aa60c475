//! Flat `key = value` configuration files.
//!
//! ```text
//! # experimental receiver
//! protocol.L = 5
//! protocol.mu = 0.02
//! protocol.nu_th = 1
//! channel.system_loss_db = 12.7
//! channel.channel_loss_db = 0
//! channel.dark_cps = 2
//! channel.window_s = 2e-10
//! channel.e_sys = 0.015
//! channel.f_ec = 1.1
//! channel.setup = passive
//! ```
//!
//! `protocol.mu` and `protocol.nu_th` may be omitted, in which case commands
//! that need them optimize over them. `protocol.pulse_interval_s` and
//! `protocol.group_a_delays` (comma-separated) are optional.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asymptotic::{ChannelModel, Setup};
use crate::protocol::{DelayGroupMap, ProtocolParams};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("duplicate config key `{0}`")]
    Duplicate(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("missing required key `{0}`")]
    Missing(String),
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub packet_len: usize,
    pub mu: Option<f64>,
    pub nu_th: Option<u32>,
    pub pulse_interval_s: f64,
    pub group_a_delays: Option<Vec<usize>>,
    pub system_loss_db: f64,
    pub channel_loss_db: f64,
    pub dark_cps: f64,
    pub window_s: f64,
    pub e_sys: f64,
    pub f_ec: f64,
    pub setup: Setup,
}

impl Default for RunConfig {
    /// The experimental receiver at zero channel loss.
    fn default() -> Self {
        Self {
            packet_len: 5,
            mu: None,
            nu_th: None,
            pulse_interval_s: ProtocolParams::DEFAULT_PULSE_INTERVAL_S,
            group_a_delays: None,
            system_loss_db: 12.7,
            channel_loss_db: 0.0,
            dark_cps: 2.0,
            window_s: 200e-12,
            e_sys: 0.015,
            f_ec: 1.1,
            setup: Setup::Passive,
        }
    }
}

pub const KEYS: [&str; 12] = [
    "protocol.L",
    "protocol.mu",
    "protocol.nu_th",
    "protocol.pulse_interval_s",
    "protocol.group_a_delays",
    "channel.system_loss_db",
    "channel.channel_loss_db",
    "channel.dark_cps",
    "channel.window_s",
    "channel.e_sys",
    "channel.f_ec",
    "channel.setup",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| invalid(key, format!("{value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::Duplicate(key.to_string()));
            }
            cfg.set(key, value)?;
            seen.push(key.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "protocol.L" => self.packet_len = parse_num(key, value)?,
            "protocol.mu" => self.mu = Some(parse_num(key, value)?),
            "protocol.nu_th" => self.nu_th = Some(parse_num(key, value)?),
            "protocol.pulse_interval_s" => self.pulse_interval_s = parse_num(key, value)?,
            "protocol.group_a_delays" => self.group_a_delays = Some(parse_list(key, value)?),
            "channel.system_loss_db" => self.system_loss_db = parse_num(key, value)?,
            "channel.channel_loss_db" => self.channel_loss_db = parse_num(key, value)?,
            "channel.dark_cps" => self.dark_cps = parse_num(key, value)?,
            "channel.window_s" => self.window_s = parse_num(key, value)?,
            "channel.e_sys" => self.e_sys = parse_num(key, value)?,
            "channel.f_ec" => self.f_ec = parse_num(key, value)?,
            "channel.setup" => {
                self.setup = value
                    .parse()
                    .map_err(|_| invalid(key, format!("{value:?}, expected passive or active")))?
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Checks every key against its domain, naming the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.packet_len < 2 {
            return Err(invalid("protocol.L", "must be >= 2"));
        }
        if let Some(mu) = self.mu {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(invalid("protocol.mu", "must be finite and >= 0"));
            }
        }
        if self.nu_th == Some(0) {
            return Err(invalid("protocol.nu_th", "must be >= 1"));
        }
        if !(self.pulse_interval_s > 0.0 && self.pulse_interval_s.is_finite()) {
            return Err(invalid("protocol.pulse_interval_s", "must be > 0"));
        }
        if let Some(delays) = &self.group_a_delays {
            DelayGroupMap::from_group_a(self.packet_len, delays)
                .map_err(|e| invalid("protocol.group_a_delays", e.to_string()))?;
        }
        for (key, v) in [
            ("channel.system_loss_db", self.system_loss_db),
            ("channel.channel_loss_db", self.channel_loss_db),
            ("channel.dark_cps", self.dark_cps),
            ("channel.window_s", self.window_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(key, "must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.dark_prob()) {
            return Err(invalid(
                "channel.dark_cps",
                "dark_cps × window_s must be a probability",
            ));
        }
        if !(0.0..=0.5).contains(&self.e_sys) {
            return Err(invalid("channel.e_sys", "must lie in [0, 0.5]"));
        }
        if !(self.f_ec >= 1.0 && self.f_ec.is_finite()) {
            return Err(invalid("channel.f_ec", "must be >= 1"));
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("protocol.L", self.packet_len.to_string());
        if let Some(mu) = self.mu {
            line("protocol.mu", mu.to_string());
        }
        if let Some(nu) = self.nu_th {
            line("protocol.nu_th", nu.to_string());
        }
        line(
            "protocol.pulse_interval_s",
            self.pulse_interval_s.to_string(),
        );
        if let Some(delays) = &self.group_a_delays {
            let list: Vec<String> = delays.iter().map(|d| d.to_string()).collect();
            line("protocol.group_a_delays", list.join(","));
        }
        line("channel.system_loss_db", self.system_loss_db.to_string());
        line("channel.channel_loss_db", self.channel_loss_db.to_string());
        line("channel.dark_cps", self.dark_cps.to_string());
        line("channel.window_s", self.window_s.to_string());
        line("channel.e_sys", self.e_sys.to_string());
        line("channel.f_ec", self.f_ec.to_string());
        line("channel.setup", self.setup.to_string());
        out
    }

    pub fn dark_prob(&self) -> f64 {
        self.dark_cps * self.window_s
    }

    pub fn channel(&self) -> ChannelModel {
        ChannelModel {
            system_loss_db: self.system_loss_db,
            channel_loss_db: self.channel_loss_db,
            dark_prob: self.dark_prob(),
            e_sys: self.e_sys,
            f_ec: self.f_ec,
            setup: self.setup,
        }
    }

    /// Protocol parameters with `μ = 0` and `ν_th = 1` standing in for
    /// values the config leaves open.
    pub fn params_template(&self) -> ProtocolParams {
        ProtocolParams {
            packet_len: self.packet_len,
            mu: self.mu.unwrap_or(0.0),
            nu_th: self.nu_th.unwrap_or(1),
            pulse_interval_s: self.pulse_interval_s,
        }
    }

    pub fn require_mu(&self) -> Result<f64, ConfigError> {
        self.mu
            .ok_or_else(|| ConfigError::Missing("protocol.mu".to_string()))
    }

    pub fn groups(&self) -> DelayGroupMap {
        match &self.group_a_delays {
            Some(delays) => DelayGroupMap::from_group_a(self.packet_len, delays)
                .unwrap_or_else(|_| DelayGroupMap::for_packet_len(self.packet_len)),
            None => DelayGroupMap::for_packet_len(self.packet_len),
        }
    }
}
