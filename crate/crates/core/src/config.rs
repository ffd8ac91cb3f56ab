//! Scenario configuration: one flat key/value table whose defaults are the
//! reference cell setup.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{PolicyConfig, PolicyKind};
use crate::radio::{FachDiscipline, RadioRates};
use crate::traffic::{OnOffParams, PacketSizes};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_tcp: usize,
    pub n_dch: usize,

    pub policy: PolicyKind,
    pub scheduler: FachDiscipline,
    /// Upper queue threshold, packets.
    pub t_h: u64,
    /// Lower queue threshold, packets.
    pub t_l: u64,
    /// Flow-size threshold, packets.
    pub s: u64,
    /// Inactivity timer, seconds.
    pub t_out: f64,

    pub fach_rate_bps: f64,
    pub dch_rate_bps: f64,
    pub switch_delay_s: f64,

    pub cbr_enabled: bool,
    pub cbr_packet_bytes: u32,
    pub cbr_interval_s: f64,

    pub pareto_shape: f64,
    pub mean_file_bytes: f64,
    pub t_on_s: f64,
    pub p_off: f64,
    pub t_off_s: f64,

    pub packet_bytes: u32,
    pub ack_bytes: u32,
    pub w_max: u32,
    pub initial_cwnd: u32,

    pub backhaul_rate_bps: f64,
    pub backhaul_delay_s: f64,
    pub radio_delay_s: f64,

    pub duration_s: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_tcp: 2,
            n_dch: 1,
            policy: PolicyKind::Qs,
            scheduler: FachDiscipline::Ps,
            t_h: 10,
            t_l: 1,
            s: 10,
            t_out: 0.5,
            fach_rate_bps: 33_000.0,
            dch_rate_bps: 384_000.0,
            switch_delay_s: 0.250,
            cbr_enabled: true,
            cbr_packet_bytes: 1000,
            cbr_interval_s: 1.0 / 3.0,
            pareto_shape: 1.1,
            mean_file_bytes: 30_000.0,
            t_on_s: 0.3,
            p_off: 0.33,
            t_off_s: 5.0,
            packet_bytes: 280,
            ack_bytes: 40,
            w_max: 20,
            initial_cwnd: 2,
            backhaul_rate_bps: 5_000_000.0,
            backhaul_delay_s: 0.030,
            radio_delay_s: 0.0,
            duration_s: 20_000.0,
            warmup_fraction: 0.05,
            seed: 1,
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be non-negative, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_tcp == 0 {
            return Err(invalid("n_tcp", "need at least one connection"));
        }
        if self.n_dch == 0 {
            return Err(invalid("n_dch", "need at least one dedicated channel"));
        }
        if self.t_h < self.t_l {
            return Err(invalid("t_h", format!("must be at least t_l ({}), got {}", self.t_l, self.t_h)));
        }
        positive("t_out", self.t_out)?;
        positive("fach_rate_bps", self.fach_rate_bps)?;
        positive("dch_rate_bps", self.dch_rate_bps)?;
        positive("switch_delay_s", self.switch_delay_s)?;
        if self.cbr_packet_bytes == 0 {
            return Err(invalid("cbr_packet_bytes", "must be positive"));
        }
        positive("cbr_interval_s", self.cbr_interval_s)?;
        if !(self.pareto_shape > 1.0 && self.pareto_shape.is_finite()) {
            return Err(invalid("pareto_shape", format!("must exceed 1, got {}", self.pareto_shape)));
        }
        positive("mean_file_bytes", self.mean_file_bytes)?;
        positive("t_on_s", self.t_on_s)?;
        if !(0.0..=1.0).contains(&self.p_off) {
            return Err(invalid("p_off", format!("must lie in [0, 1], got {}", self.p_off)));
        }
        positive("t_off_s", self.t_off_s)?;
        if self.packet_bytes == 0 {
            return Err(invalid("packet_bytes", "must be positive"));
        }
        if self.ack_bytes == 0 {
            return Err(invalid("ack_bytes", "must be positive"));
        }
        if self.w_max == 0 {
            return Err(invalid("w_max", "must be positive"));
        }
        if self.initial_cwnd == 0 {
            return Err(invalid("initial_cwnd", "must be positive"));
        }
        positive("backhaul_rate_bps", self.backhaul_rate_bps)?;
        non_negative("backhaul_delay_s", self.backhaul_delay_s)?;
        non_negative("radio_delay_s", self.radio_delay_s)?;
        positive("duration_s", self.duration_s)?;
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(invalid("warmup_fraction", format!("must lie in [0, 1), got {}", self.warmup_fraction)));
        }
        Ok(())
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig { kind: self.policy, t_high: self.t_h, t_low: self.t_l, s: self.s, t_out: self.t_out }
    }

    pub fn rates(&self) -> RadioRates {
        RadioRates { fach_bps: self.fach_rate_bps, dch_bps: self.dch_rate_bps }
    }

    pub fn packet_sizes(&self) -> PacketSizes {
        PacketSizes { data: self.packet_bytes, ack: self.ack_bytes, cbr: self.cbr_packet_bytes }
    }

    /// Mean file size expressed in DATA packets.
    pub fn mean_burst_packets(&self) -> f64 {
        self.mean_file_bytes / f64::from(self.packet_bytes)
    }

    pub fn on_off(&self) -> OnOffParams {
        OnOffParams {
            pareto_shape: self.pareto_shape,
            mean_burst_packets: self.mean_burst_packets(),
            mean_on_gap: self.t_on_s,
            p_off: self.p_off,
            mean_off: self.t_off_s,
        }
    }

    pub fn warmup_cutoff_s(&self) -> f64 {
        self.duration_s * self.warmup_fraction
    }
}
