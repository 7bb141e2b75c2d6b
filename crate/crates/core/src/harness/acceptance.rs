//! The acceptance suite: ten criteria, each a self-contained experiment
//! with its own pass/fail verdict.

use std::fmt;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::adversary::{install, passive_bit_guess, AttackSpec};
use crate::auth::{sign, verify_with, HashAlgorithm, KeyLedger};
use crate::line::{
    classify_bep, infer_partner_choice, simulate_bep, timing_defaults, BitState, LineConfig,
    ResistorChoice,
};
use crate::noise::{
    autocorrelation_standard_error, empirical_autocorrelation, generate_bandlimited_gaussian,
    theoretical_autocorrelation, NoiseSpec,
};
use crate::protocols::{
    combined_check, protocol_a, protocol_b, protocol_c, Alarm, ProtocolKind, SyncScenario, TimeField,
};
use crate::rng::{derive_seed, stream_rng};
use crate::timebase::{Direction, Party};

use super::bundled::{bundled, BUNDLED};
use super::report::run_scenario;
use super::stats::ks_two_sample;

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionReport {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: f64,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {} {}: {} [{:.2} s]",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.elapsed
        )
    }
}

pub const TITLES: [&str; 10] = [
    "noise autocorrelation matches the band-limited sinc",
    "timing defaults at 10 kHz",
    "two-way transfer recovers offset and delay exactly",
    "asymmetric-delay bias algebra",
    "substitution detection and tag forgery",
    "offset recovery from cable simulation",
    "integrity detection of line and delay attacks",
    "LH/HL indistinguishability and key agreement",
    "attack detection matrix",
    "bundled scenarios are deterministic",
];

fn line() -> LineConfig {
    LineConfig::standard(1e3, 1e4, 10e3, 1e-18)
}

type Verdict = (bool, String);

fn criterion_1() -> Verdict {
    let (b, s0, fs) = (10e3, 1e-6, 200e3);
    let started = Instant::now();
    let spec = NoiseSpec::new(b, s0, 1);
    let trace = generate_bandlimited_gaussian(&spec, 10.0, fs).expect("valid spec");
    let acf = empirical_autocorrelation(&trace, 20).expect("long trace");
    let elapsed = started.elapsed().as_secs_f64();

    let mut ok = true;
    let mut parts = Vec::new();
    for lag in [0usize, 5, 10, 20] {
        let (tau, emp) = acf[lag];
        let theory = theoretical_autocorrelation(b, s0, tau);
        let se = autocorrelation_standard_error(b, s0, fs, trace.len(), lag);
        let z = (emp - theory) / se;
        ok &= z.abs() <= 5.0;
        parts.push(format!("lag {lag}: z={z:+.2}"));
    }
    let rel0 = (acf[0].1 - s0 * b).abs() / (s0 * b);
    ok &= rel0 <= 0.03 && elapsed < 10.0;
    (ok, format!("{}; lag-0 error {:.3}%; {elapsed:.2} s", parts.join(", "), 100.0 * rel0))
}

fn criterion_2() -> Verdict {
    let (tau_f, bep) = timing_defaults(10e3);
    (
        tau_f == 10e-6 && bep == 10e-3,
        format!("tau_f = {tau_f:e} s, BEP = {bep:e} s"),
    )
}

fn criterion_3() -> Verdict {
    let started = Instant::now();
    let mut rng = stream_rng(3, 0);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let t0 = rng.random_range(-10e-3..10e-3);
        let tau = rng.random_range(0.0..5e-3);
        let mut s = SyncScenario::new(line(), tau, t0, i);
        s.set_quantum(None);
        let r = protocol_a(&mut s).expect("honest exchange completes");
        let e = (r.t0_est.unwrap() - t0).abs().max((r.tau_est.unwrap() - tau).abs());
        worst = worst.max(e);
    }
    let elapsed = started.elapsed().as_secs_f64();
    (
        worst <= 1e-12 && elapsed < 5.0,
        format!("1000 pairs, worst error {worst:.2e} s, {elapsed:.2} s"),
    )
}

fn criterion_4() -> Verdict {
    let (t0, tau) = (5e-3, 2e-3);
    let mut cases = 0;
    let mut failures = Vec::new();
    for kind in [ProtocolKind::A, ProtocolKind::B] {
        for leg in [Direction::AtoB, Direction::BtoA] {
            for delta in [1e-3, 2e-3, 4e-3, 8e-3] {
                let mut s = SyncScenario::new(line(), tau, t0, 4);
                s.set_quantum(None);
                install(&AttackSpec::AsymDelay { leg, delta, from: 0.0 }, &mut s).expect("valid attack");
                let r = match kind {
                    ProtocolKind::A => protocol_a(&mut s),
                    _ => protocol_b(&mut s),
                }
                .expect("exchange completes");
                let want_t0 = match leg {
                    Direction::AtoB => t0 + delta / 2.0,
                    Direction::BtoA => t0 - delta / 2.0,
                };
                let want_tau = tau + delta / 2.0;
                let ok = (r.t0_est.unwrap() - want_t0).abs() <= 1e-12
                    && (r.tau_est.unwrap() - want_tau).abs() <= 1e-12
                    && !r.attack_flag
                    && r.auth_ok;
                cases += 1;
                if !ok {
                    failures.push(format!("{kind:?}/{leg}/{delta:e}"));
                }
            }
        }
    }
    (
        failures.is_empty(),
        format!("{} of {cases} cases exact{}", cases - failures.len(), if failures.is_empty() { String::new() } else { format!(", failing: {}", failures.join(" ")) }),
    )
}

fn criterion_5() -> Verdict {
    let fields = [TimeField::T1, TimeField::T1Star, TimeField::T2Star, TimeField::T2];
    let messages: usize = (0..100u64)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = stream_rng(500 + i, 0);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let attack = AttackSpec::Substitute {
                field: fields[i as usize % 4],
                shift: sign * rng.random_range(1e-6..1e-2),
                forge_tag: i % 2 == 0,
            };
            let mut s = SyncScenario::new(line(), 2e-3, rng.random_range(-5e-3..5e-3), 500 + i);
            install(&attack, &mut s).expect("valid attack");
            protocol_b(&mut s).is_ok_and(|r| r.attack_flag && !r.auth_ok && r.t0_est.is_none())
        })
        .count();
    let files: usize = (0..100u64)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = stream_rng(550 + i, 0);
            let attack = AttackSpec::SubstituteFile {
                party: if i % 2 == 0 { Party::Alice } else { Party::Bob },
                sample: rng.random_range(0..2000),
                factor: 1.0 + rng.random_range(1e-6..0.1) * if rng.random::<bool>() { 1.0 } else { -1.0 },
                forge_tag: i % 4 < 2,
            };
            let mut s = SyncScenario::new(line(), 2e-3, 0.0, 550 + i);
            install(&attack, &mut s).expect("valid attack");
            protocol_c(&mut s, 0..1).is_ok_and(|r| r.attack_flag && !r.correction_applied)
        })
        .count();

    let mut rng = stream_rng(5, 1);
    let mut ledger = KeyLedger::from_bytes((0..4096).map(|_| rng.random()).collect());
    let payload = b"sync;Response;forged";
    let genuine = sign(payload, HashAlgorithm::Sha256, &mut ledger).expect("key available");
    let forged_ok = (0..10_000)
        .filter(|_| {
            let mut tag = genuine.clone();
            rng.fill(&mut tag.ciphertext[..]);
            tag != genuine && verify_with(HashAlgorithm::Sha256, payload, &tag, &ledger).unwrap_or(false)
        })
        .count();
    (
        messages == 100 && files == 100 && forged_ok == 0,
        format!("message substitutions flagged {messages}/100, file substitutions flagged {files}/100, forged tags verified {forged_ok}/10000"),
    )
}

fn honest_c_trial(seed: u64, dt: f64) -> (f64, f64, f64) {
    let mut rng = stream_rng(seed, 0);
    let t0 = rng.random_range(-25.0..25.0) * dt;
    let mut s = SyncScenario::new(line(), 2e-3, t0, seed);
    let r = protocol_c(&mut s, 0..1).expect("honest protocol C completes");
    (t0, r.t0_est.unwrap(), r.residual.unwrap())
}

fn criterion_6() -> Verdict {
    let dt = 1.0 / line().sample_rate;
    let started = Instant::now();
    let trials: Vec<_> = (0..100u64).into_par_iter().map(|i| honest_c_trial(600 + i, dt)).collect();
    let elapsed = started.elapsed().as_secs_f64();
    let within = trials.iter().filter(|(t0, est, _)| (est - t0).abs() <= dt).count();
    let worst_err = trials.iter().map(|(t0, est, _)| (est - t0).abs() / dt).fold(0.0, f64::max);
    let worst_res = trials.iter().map(|t| t.2).fold(0.0, f64::max);
    (
        within >= 99 && worst_res < 1e-4 && elapsed < 60.0,
        format!("{within}/100 within 1 sample (worst {worst_err:.2e} samples), max honest residual {worst_res:.2e}, {elapsed:.2} s"),
    )
}

fn line_mod_residual(seed: u64, factor: f64) -> (f64, bool) {
    let dt = 1.0 / line().sample_rate;
    let mut rng = stream_rng(seed, 0);
    let t0 = rng.random_range(-25.0..25.0) * dt;
    let mut s = SyncScenario::new(line(), 2e-3, t0, seed);
    let at = 0.5 * s.line.bep_duration;
    install(
        &AttackSpec::LineMod {
            at,
            r_wire_factor: Some(factor),
            new_tau: None,
        },
        &mut s,
    )
    .expect("valid attack");
    let r = protocol_c(&mut s, 0..1).expect("protocol C completes");
    (r.residual.unwrap(), r.attack_flag)
}

fn criterion_7() -> Verdict {
    let attacked: Vec<_> = (0..100u64).into_par_iter().map(|i| line_mod_residual(700 + i, 1.5)).collect();
    let honest: Vec<_> = (0..100u64)
        .into_par_iter()
        .map(|i| honest_c_trial(700 + i, 1.0 / line().sample_rate).2)
        .collect();
    let flagged = attacked.iter().filter(|(r, f)| *r > 1e-2 && *f).count();
    let min_attacked = attacked.iter().map(|a| a.0).fold(f64::INFINITY, f64::min);
    let max_honest = honest.iter().copied().fold(0.0, f64::max);
    let separation = min_attacked / max_honest;

    let q = crate::protocols::DEFAULT_QUANTUM;
    let mut delay_cases = 0;
    let mut delay_caught = 0;
    for leg in [Direction::AtoB, Direction::BtoA] {
        for delta in [4.0 * q, 8.0 * q, 1e-3, 4e-3] {
            for from in [0.0, 0.015] {
                let mut s = SyncScenario::new(line(), 2e-3, 15e-6, 770);
                install(&AttackSpec::AsymDelay { leg, delta, from }, &mut s).expect("valid attack");
                protocol_c(&mut s, 0..1).expect("protocol C completes");
                let r = combined_check(&mut s).expect("probe completes");
                delay_cases += 1;
                if r.attack_flag && r.alarms.iter().any(|a| matches!(a, Alarm::TauDeviation { .. })) {
                    delay_caught += 1;
                }
            }
        }
    }

    let boundary: Vec<String> = [1.05, 1.1, 1.15, 1.2, 1.3]
        .iter()
        .map(|&f| {
            let r: Vec<_> = (0..10u64).map(|i| line_mod_residual(790 + i, f).0).collect();
            let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
            format!("x{f}: min {lo:.2e}")
        })
        .collect();

    (
        flagged == 100 && separation >= 100.0 && delay_caught == delay_cases,
        format!(
            "R_wire x1.5 flagged {flagged}/100 (min residual {min_attacked:.3e}, honest max {max_honest:.2e}, separation {separation:.1e}); asymmetric delay caught {delay_caught}/{delay_cases}; boundary {}",
            boundary.join(", ")
        ),
    )
}

struct BepObservation {
    choice_a: ResistorChoice,
    choice_b: ResistorChoice,
    msq_alice: f64,
    agreed: Option<bool>,
    eve_correct: Option<bool>,
}

fn criterion_8() -> Verdict {
    use ResistorChoice::*;
    let config = line();
    let obs: Vec<BepObservation> = (0..2000u64)
        .into_par_iter()
        .map(|k| {
            let seed = derive_seed(8, k);
            let mut rng = stream_rng(seed, 0);
            let choice_a = ResistorChoice::from_bit(rng.random());
            let choice_b = ResistorChoice::from_bit(rng.random());
            let (a, b) = simulate_bep(choice_a, choice_b, &config, seed).expect("valid config");
            let true_bit = u8::from(choice_a == High);
            let mixed = choice_a != choice_b;
            let agreed = match (classify_bep(&a, &config), classify_bep(&b, &config)) {
                (Ok(BitState::Mixed), Ok(BitState::Mixed)) if mixed => {
                    let ka = infer_partner_choice(choice_a, BitState::Mixed, Party::Alice).unwrap().key_bit;
                    let kb = infer_partner_choice(choice_b, BitState::Mixed, Party::Bob).unwrap().key_bit;
                    Some(ka == kb && ka == Some(true_bit))
                }
                _ => None,
            };
            let eve_correct = mixed
                .then(|| passive_bit_guess(&a.voltage, &a.current, &config).ok())
                .flatten()
                .map(|g| g == true_bit);
            BepObservation {
                choice_a,
                choice_b,
                msq_alice: a.msq_voltage,
                agreed,
                eve_correct,
            }
        })
        .collect();

    let pop = |ca, cb| -> Vec<f64> {
        obs.iter()
            .filter(|o| o.choice_a == ca && o.choice_b == cb)
            .map(|o| o.msq_alice)
            .collect()
    };
    let (lh, hl) = (pop(Low, High), pop(High, Low));
    let (d, p) = ks_two_sample(&lh, &hl);

    let guesses: Vec<bool> = obs.iter().filter_map(|o| o.eve_correct).collect();
    let n = guesses.len() as f64;
    let accuracy = guesses.iter().filter(|&&c| c).count() as f64 / n;
    let sigma = (0.25 / n).sqrt();
    let eve_ok = (accuracy - 0.5).abs() <= 3.0 * sigma;

    let agreements: Vec<bool> = obs.iter().filter_map(|o| o.agreed).collect();
    let agreed = agreements.iter().filter(|&&a| a).count();
    (
        p > 0.01 && eve_ok && agreed == agreements.len() && !agreements.is_empty(),
        format!(
            "KS LH({}) vs HL({}): D={d:.4}, p={p:.3}; Eve {:.4} over {} MIXED (bound 0.5±{:.4}); agreement {agreed}/{}",
            lh.len(),
            hl.len(),
            accuracy,
            guesses.len(),
            3.0 * sigma,
            agreements.len()
        ),
    )
}

/// Attack columns of the detection matrix.
pub fn matrix_attacks() -> Vec<(&'static str, Option<AttackSpec>)> {
    vec![
        ("none", None),
        (
            "substitute",
            Some(AttackSpec::Substitute {
                field: TimeField::T2,
                shift: 1e-3,
                forge_tag: true,
            }),
        ),
        (
            "asym_delay",
            Some(AttackSpec::AsymDelay {
                leg: Direction::BtoA,
                delta: 4e-3,
                from: 0.0,
            }),
        ),
        (
            "line_mod",
            Some(AttackSpec::LineMod {
                at: 5e-3,
                r_wire_factor: Some(1.5),
                new_tau: None,
            }),
        ),
    ]
}

/// `(protocol label, bundled base scenario, attacks it must detect)`.
pub const MATRIX_ROWS: [(&str, &str, &[&str]); 3] = [
    ("A", "honest_protocol_a", &[]),
    ("B", "honest_protocol_b", &["substitute"]),
    ("C+Combined", "honest_combined", &["substitute", "asym_delay", "line_mod"]),
];

/// Runs every cell; returns `(protocol, attack, expected, detected)`.
pub fn detection_matrix() -> Vec<(&'static str, &'static str, bool, bool)> {
    let mut cells = Vec::new();
    for (label, base, expected) in MATRIX_ROWS {
        for (attack, spec) in matrix_attacks() {
            let mut config = bundled(base).expect("bundled scenario parses");
            config.expect = None;
            config.attack = spec.into_iter().collect();
            let report = run_scenario(&config).expect("matrix scenario runs");
            cells.push((label, attack, expected.contains(&attack), report.detected));
        }
    }
    cells
}

fn criterion_9() -> Verdict {
    let cells = detection_matrix();
    let flipped: Vec<String> = cells
        .iter()
        .filter(|c| c.2 != c.3)
        .map(|c| format!("{}/{} expected {} got {}", c.0, c.1, c.2, c.3))
        .collect();
    let rows: Vec<String> = MATRIX_ROWS
        .iter()
        .map(|(label, _, _)| {
            let caught: Vec<&str> = cells.iter().filter(|c| c.0 == *label && c.3).map(|c| c.1).collect();
            format!("{label} detects {{{}}}", caught.join(", "))
        })
        .collect();
    (
        flipped.is_empty(),
        if flipped.is_empty() { rows.join("; ") } else { format!("{}; flipped: {}", rows.join("; "), flipped.join(", ")) },
    )
}

fn criterion_10() -> Verdict {
    let differing: Vec<&str> = BUNDLED
        .par_iter()
        .filter_map(|(name, _)| {
            let config = bundled(name).expect("bundled scenario parses");
            let first = run_scenario(&config).expect("runs").to_json();
            let second = run_scenario(&config).expect("runs").to_json();
            (first != second).then_some(*name)
        })
        .collect();
    (
        differing.is_empty(),
        format!("{} bundled scenarios, {} differ between runs{}", BUNDLED.len(), differing.len(), if differing.is_empty() { String::new() } else { format!(": {}", differing.join(", ")) }),
    )
}

/// Runs criterion `id` (1 to 10).
pub fn run_criterion(id: u8) -> Option<CriterionReport> {
    let f: fn() -> Verdict = match id {
        1 => criterion_1,
        2 => criterion_2,
        3 => criterion_3,
        4 => criterion_4,
        5 => criterion_5,
        6 => criterion_6,
        7 => criterion_7,
        8 => criterion_8,
        9 => criterion_9,
        10 => criterion_10,
        _ => return None,
    };
    let started = Instant::now();
    let (passed, detail) = f();
    Some(CriterionReport {
        id,
        title: TITLES[id as usize - 1],
        passed,
        detail,
        elapsed: started.elapsed().as_secs_f64(),
    })
}

pub fn run_all() -> Vec<CriterionReport> {
    (1..=10).filter_map(run_criterion).collect()
}
