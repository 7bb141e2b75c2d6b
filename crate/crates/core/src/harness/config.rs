//! Scenario files.
//!
//! TOML, every key checked: a misspelled attack parameter is an error, not
//! a silently honest run.
//!
//! ```toml
//! name = "delay_attack_b"
//! seed = 7
//!
//! [line]
//! r_low = 1000.0
//! r_high = 10000.0
//! bandwidth = 10000.0
//! noise_scale = 1e-18
//!
//! [clock]
//! t0 = 0.0
//!
//! [channel]
//! tau = 0.002
//!
//! [protocol]
//! kind = "B"
//!
//! [[attack]]
//! kind = "asym_delay"
//! leg = "BtoA"
//! delta = 0.004
//!
//! [expect]
//! t0_est = -0.002
//! attack_flag = false
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{install_all, AttackSpec};
use crate::auth::HashAlgorithm;
use crate::line::LineConfig;
use crate::protocols::{
    ModelInput, ProtocolKind, SearchParams, SyncScenario, DEFAULT_DETECTION_THRESHOLD,
    DEFAULT_KEY_BITS, DEFAULT_PROCESSING_DELAY, DEFAULT_QUANTUM,
};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("{field}: {msg}")]
    Invalid { field: String, msg: String },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

fn invalid(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_owned(),
        msg: msg.into(),
    }
}

/// Line parameters; the optional ones default as in
/// [`LineConfig::standard`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSection {
    pub r_low: f64,
    pub r_high: f64,
    pub bandwidth: f64,
    pub noise_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_wire: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bep_duration: Option<f64>,
}

impl LineSection {
    pub fn to_config(&self) -> LineConfig {
        let mut c = LineConfig::standard(self.r_low, self.r_high, self.bandwidth, self.noise_scale);
        if let Some(v) = self.r_wire {
            c.r_wire = v;
        }
        if let Some(v) = self.sample_rate {
            c.sample_rate = v;
        }
        if let Some(v) = self.tau_f {
            c.tau_f = v;
        }
        if let Some(v) = self.bep_duration {
            c.bep_duration = v;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockSection {
    /// Bob's initial offset, seconds.
    pub t0: f64,
    /// Timestamp resolution, seconds; 0 disables quantization.
    pub quantum: f64,
}

impl Default for ClockSection {
    fn default() -> Self {
        Self {
            t0: 0.0,
            quantum: DEFAULT_QUANTUM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub tau: f64,
    pub processing_delay: f64,
    pub timeout_factor: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            tau: 2e-3,
            processing_delay: DEFAULT_PROCESSING_DELAY,
            timeout_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub kind: ProtocolKind,
    #[serde(default)]
    pub k_start: u64,
    #[serde(default = "one")]
    pub k_count: u64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub input: ModelInput,
    /// Relative recording noise per sample.
    #[serde(default)]
    pub measurement_noise: f64,
    #[serde(default)]
    pub hash: HashAlgorithm,
    /// Longest wait before the combined-check probe; default 10 BEPs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_wait: Option<f64>,
}

fn one() -> u64 {
    1
}

fn default_window() -> usize {
    SearchParams::default().window
}

fn default_threshold() -> f64 {
    DEFAULT_DETECTION_THRESHOLD
}

fn default_key_bits() -> u64 {
    DEFAULT_KEY_BITS
}

/// Inputs of the plotted noise series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeriesSection {
    /// Length of the generated trace behind the autocorrelation series.
    pub noise_duration: f64,
    pub max_lag: usize,
    pub histogram_bins: usize,
}

impl Default for SeriesSection {
    fn default() -> Self {
        Self {
            noise_duration: 0.1,
            max_lag: 40,
            histogram_bins: 20,
        }
    }
}

/// Optional assertions checked after the run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0_est: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_est: Option<f64>,
    /// Absolute tolerance for the two estimates, seconds.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_flag: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detected: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incomplete: Option<bool>,
}

fn default_tolerance() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub seed: u64,
    #[serde(default = "default_key_bits")]
    pub key_bits: u64,
    pub line: LineSection,
    #[serde(default)]
    pub clock: ClockSection,
    #[serde(default)]
    pub channel: ChannelSection,
    pub protocol: ProtocolSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attack: Vec<AttackSpec>,
    #[serde(default)]
    pub series: SeriesSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expectations>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every field against the preconditions of the component it
    /// configures, naming the first offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.line
            .to_config()
            .validate()
            .map_err(|e| invalid("line", e.to_string()))?;
        let nonneg = |field: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("must be a finite value >= 0, got {v}")))
            }
        };
        if !self.clock.t0.is_finite() {
            return Err(invalid("clock.t0", "must be finite"));
        }
        nonneg("clock.quantum", self.clock.quantum)?;
        nonneg("channel.tau", self.channel.tau)?;
        nonneg("channel.processing_delay", self.channel.processing_delay)?;
        if !(self.channel.timeout_factor >= 1.0) {
            return Err(invalid("channel.timeout_factor", "must be at least 1"));
        }
        if self.key_bits == 0 {
            return Err(invalid("key_bits", "must be positive"));
        }
        let p = &self.protocol;
        if matches!(p.kind, ProtocolKind::C | ProtocolKind::Combined) && p.k_count == 0 {
            return Err(invalid("protocol.k_count", "protocol C needs at least one BEP"));
        }
        if p.window == 0 {
            return Err(invalid("protocol.window", "must be positive"));
        }
        if !(p.threshold > 0.0) {
            return Err(invalid("protocol.threshold", "must be positive"));
        }
        nonneg("protocol.measurement_noise", p.measurement_noise)?;
        if let Some(w) = p.max_wait {
            nonneg("protocol.max_wait", w)?;
        }
        if !(self.series.noise_duration > 0.0) {
            return Err(invalid("series.noise_duration", "must be positive"));
        }
        if self.series.histogram_bins == 0 {
            return Err(invalid("series.histogram_bins", "must be positive"));
        }
        for (i, a) in self.attack.iter().enumerate() {
            a.validate().map_err(|e| invalid(&format!("attack[{i}]"), e.to_string()))?;
        }
        if let Some(e) = &self.expect {
            nonneg("expect.tolerance", e.tolerance)?;
        }
        Ok(())
    }

    /// The simulated deployment with all attacks installed.
    pub fn build(&self) -> Result<SyncScenario, ConfigError> {
        self.validate()?;
        let line = self.line.to_config();
        let mut s = SyncScenario::new(line, self.channel.tau, self.clock.t0, self.seed);
        s.set_quantum((self.clock.quantum > 0.0).then_some(self.clock.quantum));
        s.processing_delay = self.channel.processing_delay;
        s.timeout_factor = self.channel.timeout_factor;
        s.set_key_bits(self.key_bits);
        s.hash = self.protocol.hash;
        s.search = SearchParams {
            window: self.protocol.window,
            threshold: self.protocol.threshold,
            input: self.protocol.input,
        };
        s.measurement_noise = self.protocol.measurement_noise;
        if let Some(w) = self.protocol.max_wait {
            s.probe.max_wait = w;
        }
        install_all(&self.attack, &mut s).map_err(|e| invalid("attack", e.to_string()))?;
        Ok(s)
    }
}
