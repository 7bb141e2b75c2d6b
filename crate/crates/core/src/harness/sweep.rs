//! One-parameter sweeps over a scenario template.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::rng::derive_seed;

use super::config::{ConfigError, ScenarioConfig};
use super::report::{run_scenario, RunReport};

/// Seed assignment across the runs of a sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Every run uses the template's seed.
    #[default]
    Fixed,
    /// Run `i` uses a seed derived from the template's seed and `i`.
    PerValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub report: RunReport,
}

fn slot<'a>(root: &'a mut Value, path: &str) -> Option<&'a mut Value> {
    path.split('.').try_fold(root, |node, key| match node {
        Value::Object(map) => map.get_mut(key),
        Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
        _ => None,
    })
}

fn numeric_slot<'a>(tree: &'a mut Value, path: &str) -> Result<&'a mut Value, ConfigError> {
    match slot(tree, path) {
        Some(v) if v.is_number() => Ok(v),
        _ => Err(ConfigError::UnknownParameter(path.to_owned())),
    }
}

/// Copy of `template` with the numeric field at dotted `path` (e.g.
/// `clock.t0`, `attack.0.delta`) set to `value`.
pub fn with_parameter(template: &ScenarioConfig, path: &str, value: f64) -> Result<ScenarioConfig, ConfigError> {
    let mut tree = serde_json::to_value(template).expect("config serializes");
    let target = numeric_slot(&mut tree, path)?;
    *target = if target.is_f64() {
        serde_json::json!(value)
    } else if value.fract() == 0.0 && value >= 0.0 {
        serde_json::json!(value as u64)
    } else {
        return Err(ConfigError::Invalid {
            field: path.to_owned(),
            msg: format!("integer field cannot take {value}"),
        });
    };
    let config: ScenarioConfig = serde_json::from_value(tree).map_err(|e| ConfigError::Invalid {
        field: path.to_owned(),
        msg: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

/// Runs the template once per value, in parallel, keeping input order.
pub fn sweep(
    template: &ScenarioConfig,
    parameter: &str,
    values: &[f64],
    seeds: SeedPolicy,
) -> Result<Vec<SweepRow>, ConfigError> {
    // An empty sweep still rejects a bad name.
    numeric_slot(&mut serde_json::to_value(template).expect("config serializes"), parameter)?;
    values
        .par_iter()
        .enumerate()
        .map(|(i, &value)| {
            let mut config = with_parameter(template, parameter, value)?;
            if seeds == SeedPolicy::PerValue {
                config.seed = derive_seed(template.seed, i as u64);
            }
            Ok(SweepRow {
                value,
                report: run_scenario(&config)?,
            })
        })
        .collect()
}

/// Text table: value, t0_est, tau_est, residual, attack_flag, detected.
pub fn sweep_table(parameter: &str, rows: &[SweepRow]) -> String {
    let mut out = format!("{parameter:>14} {:>16} {:>16} {:>12} {:>6} {:>8}\n", "t0_est", "tau_est", "residual", "flag", "detected");
    let fmt = |v: Option<f64>, w: usize| v.map_or_else(|| format!("{:>w$}", "-"), |x| format!("{x:>w$.6e}"));
    for row in rows {
        let r = row.report.result.as_ref();
        out.push_str(&format!(
            "{:>14.6e} {} {} {} {:>6} {:>8}\n",
            row.value,
            fmt(r.and_then(|r| r.t0_est), 16),
            fmt(r.and_then(|r| r.tau_est), 16),
            fmt(r.and_then(|r| r.residual), 12),
            r.is_some_and(|r| r.attack_flag),
            row.report.detected
        ));
    }
    out
}
