//! Bundled scenarios, reports, sweeps and plot data.

use kljn_sync::harness::{
    bundled, bundled_names, emit_plot_data, run_scenario, sweep, sweep_table, ConfigError,
    PlotError, RunReport, ScenarioConfig, SeedPolicy,
};

const DELAY_TEMPLATE: &str = r#"
name = "delay_sweep"
seed = 11

[line]
r_low = 1000.0
r_high = 10000.0
bandwidth = 10000.0
noise_scale = 1e-18

[clock]
t0 = 0.003

[channel]
tau = 0.002

[protocol]
kind = "A"

[[attack]]
kind = "asym_delay"
leg = "BtoA"
delta = 0.0
"#;

fn honest(name: &str) -> RunReport {
    run_scenario(&bundled(name).unwrap()).unwrap()
}

#[test]
fn every_bundled_scenario_meets_its_expectations() {
    let mut failures = Vec::new();
    for name in bundled_names() {
        let report = run_scenario(&bundled(name).unwrap()).unwrap();
        assert!(!report.checks.is_empty(), "{name} checks nothing");
        if !report.passed() {
            failures.push(format!("{name}:\n{}", report.summary()));
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn honest_protocol_a_recovers_the_configured_offset() {
    let report = honest("honest_protocol_a");
    let r = report.result.unwrap();
    assert!((r.t0_est.unwrap() - report.config.clock.t0).abs() <= 2e-6);
    assert!(!r.attack_flag);
}

#[test]
fn protocol_b_cannot_see_a_delay_attack() {
    let report = honest("delay_attack_b");
    let r = report.result.unwrap();
    assert!(!r.attack_flag && r.auth_ok);
    // Bob to Alice delayed by 4 ms: t0 low by 2 ms, tau high by 2 ms.
    assert!((r.t0_est.unwrap() + 2e-3).abs() <= 2e-6);
    assert!((r.tau_est.unwrap() - 4e-3).abs() <= 1e-6);
}

#[test]
fn reports_are_deterministic_and_round_trip() {
    for name in ["honest_combined", "substitute_b", "remove_a"] {
        let config = bundled(name).unwrap();
        let first = run_scenario(&config).unwrap();
        let second = run_scenario(&config).unwrap();
        assert_eq!(first.to_json(), second.to_json(), "{name}");
        let back = RunReport::from_json(&first.to_json()).unwrap();
        assert_eq!(back, first, "{name}");
        assert_eq!(back.config, config);
    }
}

#[test]
fn config_survives_toml_round_trip() {
    for name in bundled_names() {
        let config = bundled(name).unwrap();
        assert_eq!(ScenarioConfig::from_toml(&config.to_toml()).unwrap(), config, "{name}");
    }
}

#[test]
fn delay_sweep_halves_into_the_offset() {
    let template = ScenarioConfig::from_toml(DELAY_TEMPLATE).unwrap();
    let deltas = [0.0, 1e-3, 2e-3, 4e-3];
    let rows = sweep(&template, "attack.0.delta", &deltas, SeedPolicy::Fixed).unwrap();
    assert_eq!(rows.len(), deltas.len());
    for (row, delta) in rows.iter().zip(deltas) {
        assert_eq!(row.value, delta);
        let t0 = row.report.result.as_ref().unwrap().t0_est.unwrap();
        assert!((t0 - (0.003 - delta / 2.0)).abs() <= 2e-6, "delta {delta}: {t0}");
    }
    let table = sweep_table("attack.0.delta", &rows);
    assert_eq!(table.lines().count(), 1 + deltas.len());
}

#[test]
fn offset_sweep_on_protocol_c_tracks_every_value() {
    let mut template = bundled("honest_protocol_c").unwrap();
    template.expect = None;
    let dt = 1.0 / template.line.to_config().sample_rate;
    let values: Vec<f64> = (-20..=20).step_by(5).map(|n| f64::from(n) * dt).collect();
    for policy in [SeedPolicy::Fixed, SeedPolicy::PerValue] {
        let rows = sweep(&template, "clock.t0", &values, policy).unwrap();
        for row in &rows {
            let r = row.report.result.as_ref().unwrap();
            let err = (r.t0_est.unwrap() - row.value).abs();
            assert!(err <= dt, "t0 {:e}: error {err:e}", row.value);
            assert!(!r.attack_flag);
        }
        let seeds: Vec<u64> = rows.iter().map(|r| r.report.config.seed).collect();
        match policy {
            SeedPolicy::Fixed => assert!(seeds.iter().all(|&s| s == template.seed)),
            SeedPolicy::PerValue => assert!(seeds.windows(2).all(|w| w[0] != w[1])),
        }
    }
}

#[test]
fn empty_sweep_is_an_empty_table() {
    let template = bundled("honest_protocol_a").unwrap();
    assert!(sweep(&template, "clock.t0", &[], SeedPolicy::Fixed).unwrap().is_empty());
    assert_eq!(sweep_table("clock.t0", &[]).lines().count(), 1);
}

#[test]
fn unknown_sweep_parameter_is_rejected() {
    let template = bundled("honest_protocol_a").unwrap();
    for bad in ["clock.nope", "name", "attack.0.delta", ""] {
        let err = sweep(&template, bad, &[1.0], SeedPolicy::Fixed).unwrap_err();
        assert_eq!(err, ConfigError::UnknownParameter(bad.to_owned()));
        let err = sweep(&template, bad, &[], SeedPolicy::Fixed).unwrap_err();
        assert_eq!(err, ConfigError::UnknownParameter(bad.to_owned()));
    }
}

fn columns(text: &str) -> Vec<(f64, f64)> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let (x, y) = l.split_once(' ').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect()
}

#[test]
fn autocorrelation_plot_follows_the_sinc() {
    let report = honest("honest_protocol_c");
    let measured = columns(&emit_plot_data(&report, "autocorrelation").unwrap());
    let theory = columns(&emit_plot_data(&report, "autocorrelation_theory").unwrap());
    assert_eq!(measured.len(), theory.len());
    assert_eq!(measured.len(), report.config.series.max_lag + 1);
    let peak = theory[0].1;
    // 0.1 s at 10 kHz is about 2000 independent samples: a few percent of
    // the peak per lag.
    for ((x, got), (tx, want)) in measured.iter().zip(&theory) {
        assert_eq!(x, tx);
        assert!((got - want).abs() < 0.1 * peak, "lag {x:e}: {got:e} vs {want:e}");
    }
    // First zero of the sinc at 1/(2B) = 10 samples at 20B.
    assert!(theory[10].1.abs() < 1e-12 * peak);
    assert!(theory[5].1 > 0.5 * peak);
}

#[test]
fn residual_plot_has_one_valley_at_minus_t0() {
    let report = honest("honest_protocol_c");
    let curve = columns(&emit_plot_data(&report, "residual").unwrap());
    assert_eq!(curve.len(), 201);
    let t0 = report.config.clock.t0;
    let dt = 1.0 / report.config.line.to_config().sample_rate;
    let (at, floor) = curve.iter().copied().fold((0.0, f64::INFINITY), |b, p| if p.1 < b.1 { p } else { b });
    assert!((at + t0).abs() < 0.5 * dt, "minimum at {at:e}, t0 {t0:e}");
    assert!(floor < 1e-6);
    // Everything away from the valley sits orders of magnitude higher.
    for (x, y) in &curve {
        if (x - at).abs() > 1.5 * dt {
            assert!(*y > 1e3 * floor.max(1e-12), "{x:e}: {y:e}");
        }
    }
}

#[test]
fn unknown_series_is_an_error() {
    let report = honest("honest_protocol_a");
    match emit_plot_data(&report, "fig9").unwrap_err() {
        PlotError::UnknownSeries { name, available } => {
            assert_eq!(name, "fig9");
            assert!(available.contains("residual") && available.contains("autocorrelation"));
        }
    }
}

#[test]
fn invalid_configs_name_the_field() {
    let text = DELAY_TEMPLATE.replace("tau = 0.002", "tau = -1.0");
    match ScenarioConfig::from_toml(&text).and_then(|c| run_scenario(&c).map(|_| ())) {
        Err(ConfigError::Invalid { field, .. }) => assert!(field.contains("tau"), "{field}"),
        other => panic!("expected a field error, got {other:?}"),
    }
    let text = DELAY_TEMPLATE.replace("seed = 11", "seed = 11\ncolour = 3");
    assert!(matches!(ScenarioConfig::from_toml(&text), Err(ConfigError::Parse(_))));
}
