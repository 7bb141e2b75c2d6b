//! Integrity-check synchronization (protocol C) and the combined check.
//!
//! Per BEP `k` both parties record `F(k)`, exchange it with an
//! authenticated transfer, and search for the shift of the partner record
//! that makes the cable model reproduce their own measurement. A clean
//! minimum gives the offset; a high one means the line or the timing has
//! been tampered with.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::auth::{sign, verify_with, AuthTag, HashAlgorithm, KeyLedger};
use crate::line::{
    classify_bep, infer_partner_choice, simulate_bep_at, BepMeasurement, BepTiming, LineConfig,
    ResistorChoice,
};
use crate::noise::NoiseTrace;
use crate::rng::{derive_seed, stream_rng};
use crate::timebase::{Direction, Envelope, EventKind, Outgoing, Party, Scheduler};

use super::bepfile::{build_bep_file, config_digest, BepFile};
use super::message::{SignedFile, WireMessage};
use super::offset::{search, OffsetEstimate};
use super::two_way::protocol_b;
use super::{streams, Alarm, BepRecord, ProtocolError, ProtocolKind, SyncResult, SyncScenario};

/// Receiver-side checks on one transferred file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FileVerdict {
    /// Tag present and the decrypted digest matches the content.
    pub tag_ok: bool,
    /// The file is for the BEP the receiver is expecting.
    pub index_ok: bool,
    /// Recorded under the receiver's own line parameters.
    pub config_ok: bool,
    /// Claims to come from the other end of the line.
    pub sender_ok: bool,
    /// The tag used fresh key bits.
    pub span_ok: bool,
}

impl FileVerdict {
    pub fn accepted(&self) -> bool {
        self.tag_ok && self.index_ok && self.config_ok && self.sender_ok && self.span_ok
    }
}

/// Both directions of one file exchange. A side that never received a
/// file has `None` for it.
#[derive(Debug, Clone, PartialEq)]
pub struct FileExchange {
    pub at_bob: Option<BepFile>,
    pub at_alice: Option<BepFile>,
    pub bob_verdict: Option<FileVerdict>,
    pub alice_verdict: Option<FileVerdict>,
    pub alarms: Vec<Alarm>,
}

impl FileExchange {
    pub fn accepted(&self) -> bool {
        self.bob_verdict.is_some_and(|v| v.accepted()) && self.alice_verdict.is_some_and(|v| v.accepted())
    }
}

struct Exchange<'a> {
    alice_ledger: &'a mut KeyLedger,
    bob_ledger: &'a mut KeyLedger,
    hash: HashAlgorithm,
    expected_index: u64,
    expected_config: crate::auth::Digest,
    bob_file: Option<BepFile>,
    deadline: f64,
    out: FileExchange,
    failure: Option<ProtocolError>,
    late: usize,
    finished_at: f64,
}

fn signed(file: BepFile, hash: HashAlgorithm, ledger: &mut KeyLedger) -> Result<WireMessage, ProtocolError> {
    let tag = sign(file.payload_text().as_bytes(), hash, ledger)?;
    Ok(WireMessage::File(Box::new(SignedFile { file, tag: Some(tag) })))
}

impl Exchange<'_> {
    fn check(&mut self, receiver: Party, file: &BepFile, tag: Option<&AuthTag>) -> FileVerdict {
        let sender = match receiver {
            Party::Bob => Party::Alice,
            _ => Party::Bob,
        };
        let hash = self.hash;
        let ledger = match receiver {
            Party::Bob => &mut *self.bob_ledger,
            _ => &mut *self.alice_ledger,
        };
        let mut verdict = FileVerdict {
            tag_ok: tag.is_some_and(|t| {
                verify_with(hash, file.payload_text().as_bytes(), t, ledger).unwrap_or(false)
            }),
            index_ok: file.bep_index == self.expected_index,
            config_ok: file.config_digest == self.expected_config,
            sender_ok: file.party == sender,
            span_ok: false,
        };
        if verdict.tag_ok {
            verdict.span_ok = ledger.commit(tag.expect("verified tag").span).is_ok();
        }

        let alarms = &mut self.out.alarms;
        if !verdict.tag_ok {
            alarms.push(Alarm::AuthFailure {
                receiver,
                what: format!("F({}) tag does not verify", file.bep_index),
            });
        } else if !verdict.span_ok {
            alarms.push(Alarm::AuthFailure {
                receiver,
                what: format!("F({}) tag reuses key bits", file.bep_index),
            });
        }
        if !verdict.index_ok {
            alarms.push(Alarm::StaleFile {
                receiver,
                expected: self.expected_index,
                got: file.bep_index,
            });
        }
        if !verdict.config_ok {
            alarms.push(Alarm::FileMismatch {
                receiver,
                what: "line configuration digest differs".into(),
            });
        }
        if !verdict.sender_ok {
            alarms.push(Alarm::FileMismatch {
                receiver,
                what: format!("file claims sender {}", file.party),
            });
        }
        verdict
    }

    fn on_deliver(&mut self, env: &Envelope<WireMessage>) -> Vec<Outgoing<WireMessage>> {
        let now = env.deliver_absolute;
        self.finished_at = self.finished_at.max(now);
        if now > self.deadline {
            self.late += 1;
            return Vec::new();
        }
        let WireMessage::File(signed_file) = &env.payload else {
            return Vec::new();
        };
        let receiver = env.direction.receiver();
        let verdict = self.check(receiver, &signed_file.file, signed_file.tag.as_ref());
        match receiver {
            Party::Bob => {
                self.out.at_bob = Some(signed_file.file.clone());
                self.out.bob_verdict = Some(verdict);
                // Answering a rejected file would reuse Alice's key bits.
                if !verdict.accepted() {
                    return Vec::new();
                }
                let Some(file) = self.bob_file.take() else {
                    return Vec::new();
                };
                match signed(file, self.hash, self.bob_ledger) {
                    Ok(payload) => vec![Outgoing {
                        send_at: now,
                        direction: Direction::BtoA,
                        payload,
                    }],
                    Err(e) => {
                        self.failure = Some(e);
                        Vec::new()
                    }
                }
            }
            _ => {
                self.out.at_alice = Some(signed_file.file.clone());
                self.out.alice_verdict = Some(verdict);
                Vec::new()
            }
        }
    }
}

/// Authenticated transfer of `F_A(k)` to Bob and then `F_B(k)` to Alice,
/// starting at absolute time `send_at`. Bob answers only after accepting
/// Alice's file, so the two tags use consecutive key spans.
pub fn exchange_files(
    scenario: &mut SyncScenario,
    file_a: BepFile,
    file_b: BepFile,
    send_at: f64,
) -> Result<FileExchange, ProtocolError> {
    let expected_index = file_a.bep_index;
    let first = signed(file_a, scenario.hash, &mut scenario.alice_ledger)?;
    let mut state = Exchange {
        alice_ledger: &mut scenario.alice_ledger,
        bob_ledger: &mut scenario.bob_ledger,
        hash: scenario.hash,
        expected_index,
        expected_config: config_digest(&scenario.line, scenario.hash),
        bob_file: Some(file_b),
        deadline: send_at + scenario.timeout_factor * (2.0 * scenario.tau + scenario.processing_delay),
        out: FileExchange {
            at_bob: None,
            at_alice: None,
            bob_verdict: None,
            alice_verdict: None,
            alarms: Vec::new(),
        },
        failure: None,
        late: 0,
        finished_at: send_at,
    };
    let mut sched = Scheduler::new(&mut scenario.channel, &mut scenario.log);
    sched.post(Outgoing {
        send_at,
        direction: Direction::AtoB,
        payload: first,
    });
    sched.run_until_idle(|env| state.on_deliver(env))?;
    if let Some(err) = state.failure {
        return Err(err);
    }
    scenario.now = scenario.now.max(state.finished_at);
    if !state.out.alarms.is_empty() {
        return Ok(state.out);
    }
    if state.late > 0 || state.out.at_alice.is_none() {
        return Err(ProtocolError::Incomplete(format!(
            "file exchange for BEP {expected_index} did not complete"
        )));
    }
    Ok(state.out)
}

/// Adds independent Gaussian recording noise of relative size `sigma`
/// (to the record's RMS) to both traces.
fn add_recording_noise(meas: &BepMeasurement, sigma: f64, seed: u64) -> Result<BepMeasurement, ProtocolError> {
    if sigma == 0.0 {
        return Ok(meas.clone());
    }
    let mut rng = stream_rng(seed, streams::MEASUREMENT);
    let mut noisy = |trace: &NoiseTrace| {
        let rms = trace.mean_square().sqrt();
        let samples = trace
            .samples()
            .iter()
            .map(|&x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x + sigma * rms * z
            })
            .collect();
        NoiseTrace::new(samples, trace.sample_rate(), trace.unit())
    };
    let voltage = noisy(&meas.voltage).map_err(crate::line::LineError::from)?;
    let current = noisy(&meas.current).map_err(crate::line::LineError::from)?;
    Ok(BepMeasurement::new(meas.party, meas.bep_index, meas.local_start, voltage, current))
}

fn record(
    k: u64,
    choice_a: ResistorChoice,
    choice_b: ResistorChoice,
    meas_a: &BepMeasurement,
    meas_b: &BepMeasurement,
    line: &LineConfig,
) -> BepRecord {
    let state_alice = classify_bep(meas_a, line).ok();
    let state_bob = classify_bep(meas_b, line).ok();
    let bit = |own, state: Option<_>, role| {
        state
            .and_then(|s| infer_partner_choice(own, s, role).ok())
            .and_then(|p| p.key_bit)
    };
    BepRecord {
        bep_index: k,
        choice_a,
        choice_b,
        msq_voltage: meas_a.msq_voltage,
        msq_current: meas_a.msq_current,
        state_alice,
        state_bob,
        key_bit_alice: bit(choice_a, state_alice, Party::Alice),
        key_bit_bob: bit(choice_b, state_bob, Party::Bob),
    }
}

/// One side's offset search. A flat residual becomes an alarm carrying
/// the best estimate; other failures are hard errors.
fn side_estimate(
    pairs: &[(&BepFile, &BepFile)],
    scenario: &SyncScenario,
) -> Result<(OffsetEstimate, Option<Alarm>), ProtocolError> {
    let est = search(pairs, scenario.line.r_wire, &scenario.search)?;
    let alarm = (!(est.residual <= scenario.search.threshold)).then_some(Alarm::Residual {
        residual: est.residual,
        threshold: scenario.search.threshold,
    });
    Ok((est, alarm))
}

/// Runs BEPs `k_range`, exchanges their files and estimates Bob's offset,
/// pooling the residual over all BEPs in the range. On a clean run Bob
/// corrects his clock with his own estimate.
pub fn protocol_c(scenario: &mut SyncScenario, k_range: Range<u64>) -> Result<SyncResult, ProtocolError> {
    if k_range.is_empty() {
        return Err(ProtocolError::Precondition("protocol C needs at least one BEP".into()));
    }
    scenario.line.validate()?;
    let consumed_before = scenario.alice_ledger.consumed();
    let bep = scenario.line.bep_duration;
    let mut result = SyncResult::new(ProtocolKind::C, scenario.bob.offset);

    let mut own_a = Vec::new();
    let mut own_b = Vec::new();
    let mut got_a = Vec::new();
    let mut got_b = Vec::new();
    for k in k_range {
        let start = k as f64 * bep;
        let end = start + bep;
        let bep_seed = derive_seed(scenario.seed, k);
        let mut choices = stream_rng(bep_seed, streams::CHOICE);
        let choice_a = ResistorChoice::from_bit(choices.random());
        let choice_b = ResistorChoice::from_bit(choices.random());

        for &(at, factor) in scenario.wire.steps() {
            if at >= start && at < end {
                scenario
                    .log
                    .push(at, None, EventKind::Line(format!("r_wire x{factor}")), String::from("-"));
            }
        }
        let timing = BepTiming {
            bep_index: k,
            absolute_start: start,
            alice_offset: scenario.alice.offset,
            bob_offset: scenario.bob.offset,
        };
        let (meas_a, meas_b) = simulate_bep_at(
            choice_a,
            choice_b,
            &scenario.line,
            &timing,
            &scenario.wire,
            derive_seed(bep_seed, streams::BEP),
        )?;
        let sigma = scenario.measurement_noise;
        let meas_a = add_recording_noise(&meas_a, sigma, derive_seed(bep_seed, 0))?;
        let meas_b = add_recording_noise(&meas_b, sigma, derive_seed(bep_seed, 1))?;
        scenario
            .beps
            .push(record(k, choice_a, choice_b, &meas_a, &meas_b, &scenario.line));

        let file_a = build_bep_file(&meas_a, &scenario.line, scenario.hash)?;
        let file_b = build_bep_file(&meas_b, &scenario.line, scenario.hash)?;
        let send_at = end.max(scenario.now);
        let exchange = exchange_files(scenario, file_a.clone(), file_b.clone(), send_at)?;
        if !exchange.alarms.is_empty() {
            for alarm in exchange.alarms {
                result.raise(alarm);
            }
            result.key_bits_consumed = scenario.alice_ledger.consumed() - consumed_before;
            scenario.integrity = Some(result.clone());
            return Ok(result);
        }
        own_a.push(file_a);
        own_b.push(file_b);
        got_a.push(exchange.at_alice.expect("complete exchange"));
        got_b.push(exchange.at_bob.expect("complete exchange"));
    }

    let pairs_a: Vec<_> = own_a.iter().zip(&got_a).collect();
    let pairs_b: Vec<_> = own_b.iter().zip(&got_b).collect();
    let (alice, alarm_a) = side_estimate(&pairs_a, scenario)?;
    let (bob, alarm_b) = side_estimate(&pairs_b, scenario)?;

    result.t0_est = Some(-alice.dt_star);
    result.peer_t0_est = Some(bob.dt_star);
    result.residual = Some(alice.residual.max(bob.residual));
    result.curve = alice.curve;
    for alarm in [alarm_a, alarm_b].into_iter().flatten() {
        result.raise(alarm);
    }
    if !result.attack_flag {
        scenario.bob.correct(bob.dt_star);
        result.correction_applied = true;
    }
    result.bob_offset_after = scenario.bob.offset;
    result.key_bits_consumed = scenario.alice_ledger.consumed() - consumed_before;
    scenario.integrity = Some(result.clone());
    Ok(result)
}

/// Authenticated probe at a random time after protocol C. Passes only if
/// the offset reads zero, the propagation time is nominal and the
/// integrity run was clean.
pub fn combined_check(scenario: &mut SyncScenario) -> Result<SyncResult, ProtocolError> {
    let integrity = scenario.integrity.clone().ok_or_else(|| {
        ProtocolError::Precondition("combined check needs a completed protocol C run".into())
    })?;
    let mut rng = stream_rng(scenario.seed, streams::PROBE);
    let wait = rng.random::<f64>() * scenario.probe.max_wait;
    scenario.now += wait;
    let probe = protocol_b(scenario)?;

    let mut result = SyncResult::new(ProtocolKind::Combined, scenario.bob.offset);
    result.t0_est = probe.t0_est;
    result.tau_est = probe.tau_est;
    result.peer_t0_est = probe.peer_t0_est;
    result.residual = integrity.residual;
    result.curve = integrity.curve.clone();
    result.correction_applied = integrity.correction_applied;
    result.key_bits_consumed = integrity.key_bits_consumed + probe.key_bits_consumed;

    if integrity.attack_flag || integrity.residual.is_none_or(|r| !(r <= scenario.search.threshold)) {
        result.raise(Alarm::IntegrityFailed);
    }
    for alarm in probe.alarms {
        result.raise(alarm);
    }
    if let Some(t0) = probe.t0_est {
        if !(t0.abs() < scenario.probe.t0_tolerance) {
            result.raise(Alarm::OffsetNotZero {
                t0_est: t0,
                tolerance: scenario.probe.t0_tolerance,
            });
        }
    }
    if let Some(tau) = probe.tau_est {
        if !((tau - scenario.tau).abs() <= scenario.probe.tau_tolerance) {
            result.raise(Alarm::TauDeviation {
                tau_est: tau,
                nominal: scenario.tau,
                tolerance: scenario.probe.tau_tolerance,
            });
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::ModelInput;

    fn scenario(t0_samples: i64) -> SyncScenario {
        let line = LineConfig::standard(1e3, 1e4, 10e3, 1e-18);
        let dt = 1.0 / line.sample_rate;
        SyncScenario::new(line, 2e-3, t0_samples as f64 * dt, 11)
    }

    #[test]
    fn honest_run_corrects_bob() {
        let mut s = scenario(7);
        let dt = 1.0 / s.line.sample_rate;
        let r = protocol_c(&mut s, 0..1).unwrap();
        assert!(!r.attack_flag, "{:?}", r.alarms);
        assert!((r.t0_est.unwrap() - 7.0 * dt).abs() < dt);
        assert!((r.peer_t0_est.unwrap() - 7.0 * dt).abs() < dt);
        assert!(r.residual.unwrap() < 1e-4);
        assert!(r.correction_applied);
        assert!(s.bob.offset.abs() < dt);
        assert_eq!(r.key_bits_consumed, 512);
        assert!(s.ledgers_consistent());
        assert_eq!(s.beps.len(), 1);
    }

    #[test]
    fn pooled_run_uses_every_bep() {
        let mut s = scenario(-4);
        let r = protocol_c(&mut s, 2..5).unwrap();
        assert!(!r.attack_flag);
        assert_eq!(s.beps.len(), 3);
        assert_eq!(r.key_bits_consumed, 3 * 512);
        assert!(s.now >= 5.0 * s.line.bep_duration);
    }

    #[test]
    fn current_input_agrees() {
        let mut v = scenario(5);
        let mut c = scenario(5);
        c.search.input = ModelInput::Current;
        let rv = protocol_c(&mut v, 0..1).unwrap();
        let rc = protocol_c(&mut c, 0..1).unwrap();
        let dt = 1.0 / v.line.sample_rate;
        assert!((rv.t0_est.unwrap() - rc.t0_est.unwrap()).abs() <= dt);
    }

    #[test]
    fn wire_step_flags_and_skips_correction() {
        let mut s = scenario(3);
        let mid = 0.5 * s.line.bep_duration;
        s.wire.push_step(mid, 1.5);
        let before = s.bob.offset;
        let r = protocol_c(&mut s, 0..1).unwrap();
        assert!(r.attack_flag);
        assert!(r.residual.unwrap() > 1e-2);
        assert!(!r.correction_applied);
        assert_eq!(s.bob.offset, before);
        assert_eq!(s.log.count(&EventKind::Line("r_wire x1.5".into())), 1);
    }

    #[test]
    fn empty_range_is_rejected() {
        let mut s = scenario(0);
        assert!(matches!(protocol_c(&mut s, 3..3), Err(ProtocolError::Precondition(_))));
    }

    #[test]
    fn combined_needs_protocol_c_first() {
        let mut s = scenario(0);
        assert!(matches!(combined_check(&mut s), Err(ProtocolError::Precondition(_))));
    }

    #[test]
    fn combined_passes_when_honest() {
        let mut s = scenario(9);
        protocol_c(&mut s, 0..1).unwrap();
        let r = combined_check(&mut s).unwrap();
        assert!(!r.attack_flag, "{:?}", r.alarms);
        assert!(r.t0_est.unwrap().abs() < 2e-6);
        assert!((r.tau_est.unwrap() - 2e-3).abs() <= 1e-6);
    }

    #[test]
    fn exchange_verdicts_are_clean_when_honest() {
        let mut s = scenario(0);
        let (a, b) = simulate_bep_at(
            ResistorChoice::Low,
            ResistorChoice::High,
            &s.line,
            &BepTiming::default(),
            &s.wire,
            1,
        )
        .unwrap();
        let fa = build_bep_file(&a, &s.line, s.hash).unwrap();
        let fb = build_bep_file(&b, &s.line, s.hash).unwrap();
        let ex = exchange_files(&mut s, fa.clone(), fb.clone(), 0.01).unwrap();
        assert!(ex.accepted());
        assert_eq!(ex.at_bob, Some(fa));
        assert_eq!(ex.at_alice, Some(fb));
    }
}
