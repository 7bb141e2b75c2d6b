//! Running a scenario and what comes out of it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::line::Levels;
use crate::noise::{
    empirical_autocorrelation, generate_bandlimited_gaussian, theoretical_autocorrelation, NoiseSpec,
};
use crate::protocols::{
    combined_check, protocol_a, protocol_b, protocol_c, BepRecord, ProtocolError, ProtocolKind,
    SyncResult, SyncScenario,
};
use crate::rng::derive_seed;

use super::config::{ConfigError, Expectations, ScenarioConfig};

/// Stream for the trace behind the autocorrelation series.
const SERIES_STREAM: u64 = 7;

/// How the protocol run ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    /// A message never arrived (removed or delayed past the timeout).
    Incomplete(String),
    /// Any other protocol error, e.g. an exhausted key.
    Error(String),
}

/// One named pass/fail check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsqTable {
    pub levels: Levels,
    pub beps: Vec<BepRecord>,
}

/// Everything a run produced. Deterministic for a given config; no wall
/// clock inside, so identical runs serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub outcome: Outcome,
    /// Attack flag raised, or for the authenticated protocols a stalled
    /// exchange (timeouts count as detection there).
    pub detected: bool,
    pub result: Option<SyncResult>,
    /// Protocol C's own result when the combined check ran.
    pub integrity: Option<SyncResult>,
    pub log_digest: String,
    pub log_entries: usize,
    pub hooks: Vec<String>,
    pub key_bits_consumed: u64,
    pub msq: MsqTable,
    pub series: BTreeMap<String, Vec<(f64, f64)>>,
    pub checks: Vec<Check>,
}

impl RunReport {
    /// True when every expectation held.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Human-readable summary table.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |x| format!("{x:.9e}"));
        let r = self.result.as_ref();
        let rows = [
            ("scenario", self.config.name.clone()),
            ("protocol", format!("{:?}", self.config.protocol.kind)),
            ("attacks", self.config.attack.iter().map(|a| a.name()).collect::<Vec<_>>().join(",")),
            ("outcome", match &self.outcome {
                Outcome::Completed => "completed".to_owned(),
                Outcome::Incomplete(why) => format!("incomplete ({why})"),
                Outcome::Error(why) => format!("error ({why})"),
            }),
            ("t0 (true)", format!("{:.9e}", self.config.clock.t0)),
            ("t0_est", fmt(r.and_then(|r| r.t0_est))),
            ("tau (nominal)", format!("{:.9e}", self.config.channel.tau)),
            ("tau_est", fmt(r.and_then(|r| r.tau_est))),
            ("residual", fmt(r.and_then(|r| r.residual))),
            ("auth_ok", r.map_or("-".into(), |r| r.auth_ok.to_string())),
            ("attack_flag", r.map_or("-".into(), |r| r.attack_flag.to_string())),
            ("detected", self.detected.to_string()),
            ("bob offset after", fmt(r.map(|r| r.bob_offset_after))),
            ("key bits used", self.key_bits_consumed.to_string()),
            ("log digest", self.log_digest.clone()),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<18} {v}");
        }
        if let Some(r) = r {
            for alarm in &r.alarms {
                let _ = writeln!(out, "{:<18} {}", "alarm", serde_json::to_string(alarm).expect("alarm serializes"));
            }
        }
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<18} [{}] {} {}",
                "check",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        out
    }
}

fn execute(config: &ScenarioConfig, s: &mut SyncScenario) -> Result<(SyncResult, Option<SyncResult>), ProtocolError> {
    let p = &config.protocol;
    let range = p.k_start..p.k_start + p.k_count;
    match p.kind {
        ProtocolKind::A => protocol_a(s).map(|r| (r, None)),
        ProtocolKind::B => protocol_b(s).map(|r| (r, None)),
        ProtocolKind::C => protocol_c(s, range).map(|r| (r, None)),
        ProtocolKind::Combined => {
            let c = protocol_c(s, range)?;
            let combined = combined_check(s)?;
            Ok((combined, Some(c)))
        }
    }
}

fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64)> {
    let Some(lo) = values.iter().copied().reduce(f64::min) else {
        return Vec::new();
    };
    let hi = values.iter().copied().fold(lo, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0.0; bins];
    for &v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1.0;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + (i as f64 + 0.5) * width, c))
        .collect()
}

fn series(config: &ScenarioConfig, result: Option<&SyncResult>, beps: &[BepRecord]) -> BTreeMap<String, Vec<(f64, f64)>> {
    let line = config.line.to_config();
    let mut out = BTreeMap::new();
    let spec = NoiseSpec::new(
        line.bandwidth,
        line.noise_scale * line.r_low,
        derive_seed(config.seed, SERIES_STREAM),
    );
    if let Ok(trace) = generate_bandlimited_gaussian(&spec, config.series.noise_duration, line.sample_rate) {
        if let Ok(acf) = empirical_autocorrelation(&trace, config.series.max_lag) {
            let theory = acf
                .iter()
                .map(|&(tau, _)| (tau, theoretical_autocorrelation(spec.bandwidth, spec.spectral_density, tau)))
                .collect();
            out.insert("autocorrelation".to_owned(), acf);
            out.insert("autocorrelation_theory".to_owned(), theory);
        }
    }
    out.insert("residual".to_owned(), result.map(|r| r.curve.clone()).unwrap_or_default());
    let msq: Vec<f64> = beps.iter().map(|b| b.msq_voltage).collect();
    out.insert("msq_histogram".to_owned(), histogram(&msq, config.series.histogram_bins));
    out
}

fn check_expectations(e: &Expectations, report: &RunReport) -> Vec<Check> {
    let mut checks = Vec::new();
    let r = report.result.as_ref();
    let mut estimate = |name: &str, want: Option<f64>, got: Option<f64>| {
        if let Some(want) = want {
            let passed = got.is_some_and(|g| (g - want).abs() <= e.tolerance);
            checks.push(Check {
                name: name.to_owned(),
                passed,
                detail: format!("want {want:e} ± {:e}, got {got:?}", e.tolerance),
            });
        }
    };
    estimate("t0_est", e.t0_est, r.and_then(|r| r.t0_est));
    estimate("tau_est", e.tau_est, r.and_then(|r| r.tau_est));
    let mut flag = |name: &str, want: Option<bool>, got: bool| {
        if let Some(want) = want {
            checks.push(Check {
                name: name.to_owned(),
                passed: want == got,
                detail: format!("want {want}, got {got}"),
            });
        }
    };
    flag("attack_flag", e.attack_flag, r.is_some_and(|r| r.attack_flag));
    flag("detected", e.detected, report.detected);
    flag("incomplete", e.incomplete, matches!(report.outcome, Outcome::Incomplete(_)));
    checks
}

/// Builds the scenario, runs the configured protocol and assembles the
/// report, including the checks from the `[expect]` section.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunReport, ConfigError> {
    let mut scenario = config.build()?;
    let (outcome, result, integrity) = match execute(config, &mut scenario) {
        Ok((r, c)) => (Outcome::Completed, Some(r), c),
        Err(ProtocolError::Incomplete(why)) => (Outcome::Incomplete(why), None, scenario.integrity.clone()),
        Err(e) => (Outcome::Error(e.to_string()), None, scenario.integrity.clone()),
    };
    let authenticated = config.protocol.kind != ProtocolKind::A;
    let detected = result.as_ref().is_some_and(|r| r.attack_flag)
        || (authenticated && matches!(outcome, Outcome::Incomplete(_)));

    let mut report = RunReport {
        config: config.clone(),
        outcome,
        detected,
        series: series(config, result.as_ref(), &scenario.beps),
        result,
        integrity,
        log_digest: scenario.log.digest(),
        log_entries: scenario.log.len(),
        hooks: scenario.channel.hook_names(),
        key_bits_consumed: scenario.key_bits_consumed(),
        msq: MsqTable {
            levels: scenario.line.levels(),
            beps: scenario.beps.clone(),
        },
        checks: Vec::new(),
    };
    if let Some(e) = &config.expect {
        report.checks = check_expectations(e, &report);
    }
    if let Outcome::Error(why) = &report.outcome {
        report.checks.push(Check {
            name: "protocol".into(),
            passed: false,
            detail: why.clone(),
        });
    }
    Ok(report)
}
