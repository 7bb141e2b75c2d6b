//! Two-way time transfer, undefended (A) and authenticated (B).
//!
//! i. Alice sends `t1`. ii. Bob stamps arrival `t1* = t1 + τ + t0`.
//! iii. Bob answers at `t2*` with `(t1*, t2*)`. iv. Alice stamps arrival
//! `t2 = t2* − t0 + τ`. v. Alice shares `t2`. Then
//! `t0 = (t1* − t1 − t2 + t2*)/2` and `τ = (t1* − t1 + t2 − t2*)/2`.

use serde::{Deserialize, Serialize};

use crate::auth::{sign, verify_with, AuthError, HashAlgorithm, KeyLedger};
use crate::timebase::{ClockState, Direction, Envelope, Outgoing, Party, Scheduler};

use super::message::{MessageKind, SyncMessage, WireMessage};
use super::{Alarm, ProtocolError, ProtocolKind, SyncResult, SyncScenario};

/// The four timestamps as one party holds them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoWayTimestamps {
    pub t1: f64,
    pub t1_star: f64,
    pub t2_star: f64,
    pub t2: f64,
}

impl TwoWayTimestamps {
    pub fn offset(&self) -> f64 {
        (self.t1_star - self.t1 - self.t2 + self.t2_star) / 2.0
    }

    pub fn propagation(&self) -> f64 {
        (self.t1_star - self.t1 + self.t2 - self.t2_star) / 2.0
    }
}

/// Undefended synchronization. Never raises the attack flag.
pub fn protocol_a(scenario: &mut SyncScenario) -> Result<SyncResult, ProtocolError> {
    run(scenario, false)
}

/// Authenticated synchronization: every message carries an encrypted
/// digest. Any verification failure discards the estimates.
pub fn protocol_b(scenario: &mut SyncScenario) -> Result<SyncResult, ProtocolError> {
    run(scenario, true)
}

#[derive(Default)]
struct Partial {
    t1: Option<f64>,
    t1_star: Option<f64>,
    t2_star: Option<f64>,
    t2: Option<f64>,
}

impl Partial {
    fn complete(&self) -> Option<TwoWayTimestamps> {
        Some(TwoWayTimestamps {
            t1: self.t1?,
            t1_star: self.t1_star?,
            t2_star: self.t2_star?,
            t2: self.t2?,
        })
    }
}

struct Run<'a> {
    alice: ClockState,
    bob: ClockState,
    quantum: Option<f64>,
    processing_delay: f64,
    authenticated: bool,
    hash: HashAlgorithm,
    alice_ledger: &'a mut KeyLedger,
    bob_ledger: &'a mut KeyLedger,
    deadline: f64,
    alice_view: Partial,
    bob_view: Partial,
    alarms: Vec<Alarm>,
    failure: Option<ProtocolError>,
    late: usize,
    finished_at: f64,
}

impl Run<'_> {
    fn ledger(&mut self, party: Party) -> &mut KeyLedger {
        match party {
            Party::Bob => self.bob_ledger,
            _ => self.alice_ledger,
        }
    }

    fn outgoing(&mut self, sender: Party, mut msg: SyncMessage, send_at: f64) -> Option<Outgoing<WireMessage>> {
        if self.authenticated {
            let hash = self.hash;
            match sign(&msg.signed_bytes(), hash, self.ledger(sender)) {
                Ok(tag) => msg.tag = Some(tag),
                Err(e) => {
                    self.failure = Some(e.into());
                    return None;
                }
            }
        }
        Some(Outgoing {
            send_at,
            direction: Direction::from_sender(sender).expect("Alice or Bob"),
            payload: WireMessage::Sync(msg),
        })
    }

    /// Receiver-side tag check; commits the span on success.
    fn accept(&mut self, receiver: Party, msg: &SyncMessage) -> bool {
        if !self.authenticated {
            return true;
        }
        let what = format!("{:?}", msg.kind);
        let outcome = match &msg.tag {
            None => Err("missing tag".to_owned()),
            Some(tag) => {
                let hash = self.hash;
                let ledger = self.ledger(receiver);
                match verify_with(hash, &msg.signed_bytes(), tag, ledger) {
                    Ok(true) => ledger.commit(tag.span).map_err(|e| e.to_string()),
                    Ok(false) => Err("digest mismatch".to_owned()),
                    Err(e) => Err(e.to_string()),
                }
            }
        };
        match outcome {
            Ok(()) => true,
            Err(reason) => {
                self.alarms.push(Alarm::AuthFailure {
                    receiver,
                    what: format!("{what}: {reason}"),
                });
                false
            }
        }
    }

    fn on_deliver(&mut self, env: &Envelope<WireMessage>) -> Vec<Outgoing<WireMessage>> {
        let now = env.deliver_absolute;
        self.finished_at = self.finished_at.max(now);
        if now > self.deadline {
            self.late += 1;
            return Vec::new();
        }
        let WireMessage::Sync(msg) = &env.payload else {
            return Vec::new();
        };
        let receiver = env.direction.receiver();
        if !self.accept(receiver, msg) {
            return Vec::new();
        }
        let q = self.quantum;
        match (env.direction, msg.kind) {
            (Direction::AtoB, MessageKind::TimeStamp) => {
                let t1_star = self.bob.read(now, q);
                let t2_star = ClockState::next_tick(self.bob.local_time(now) + self.processing_delay, q);
                self.bob_view.t1 = msg.t1;
                self.bob_view.t1_star = Some(t1_star);
                self.bob_view.t2_star = Some(t2_star);
                let send_at = self.bob.absolute_time(t2_star);
                self.outgoing(Party::Bob, SyncMessage::response(t1_star, t2_star), send_at)
                    .into_iter()
                    .collect()
            }
            (Direction::BtoA, MessageKind::Response) => {
                let t2 = self.alice.read(now, q);
                self.alice_view.t1_star = msg.t1_star;
                self.alice_view.t2_star = msg.t2_star;
                self.alice_view.t2 = Some(t2);
                self.outgoing(Party::Alice, SyncMessage::share(t2), now)
                    .into_iter()
                    .collect()
            }
            (Direction::AtoB, MessageKind::Share) => {
                self.bob_view.t2 = msg.t2;
                Vec::new()
            }
            _ => Vec::new(),
        }
    }
}

fn run(scenario: &mut SyncScenario, authenticated: bool) -> Result<SyncResult, ProtocolError> {
    let protocol = if authenticated { ProtocolKind::B } else { ProtocolKind::A };
    let consumed_before = scenario.alice_ledger.consumed();
    let q = scenario.quantum;
    let t1 = ClockState::next_tick(scenario.alice.local_time(scenario.now), q);
    let start = scenario.alice.absolute_time(t1);

    let mut state = Run {
        alice: scenario.alice,
        bob: scenario.bob,
        quantum: q,
        processing_delay: scenario.processing_delay,
        authenticated,
        hash: scenario.hash,
        alice_ledger: &mut scenario.alice_ledger,
        bob_ledger: &mut scenario.bob_ledger,
        deadline: start + scenario.timeout_factor * (2.0 * scenario.tau + scenario.processing_delay),
        alice_view: Partial {
            t1: Some(t1),
            ..Partial::default()
        },
        bob_view: Partial::default(),
        alarms: Vec::new(),
        failure: None,
        late: 0,
        finished_at: start,
    };

    let first = state.outgoing(Party::Alice, SyncMessage::time_stamp(t1), start);
    let mut sched = Scheduler::new(&mut scenario.channel, &mut scenario.log);
    if let Some(first) = first {
        sched.post(first);
    }
    sched.run_until_idle(|env| state.on_deliver(env))?;

    if let Some(err) = state.failure {
        return Err(err);
    }
    scenario.now = scenario.now.max(state.finished_at);

    let mut result = SyncResult::new(protocol, scenario.bob.offset);
    result.key_bits_consumed = state.alice_ledger.consumed() - consumed_before;
    if !state.alarms.is_empty() {
        for alarm in state.alarms {
            result.raise(alarm);
        }
        return Ok(result);
    }
    if state.late > 0 {
        return Err(ProtocolError::Incomplete(format!(
            "{} message(s) arrived after the {:.3e} s timeout",
            state.late,
            state.deadline - start
        )));
    }
    let bob = state.bob_view.complete().ok_or_else(|| {
        ProtocolError::Incomplete("Bob is missing timestamps (message removed?)".into())
    })?;
    if state.alice_view.complete().is_none() {
        return Err(ProtocolError::Incomplete(
            "Alice is missing timestamps (message removed?)".into(),
        ));
    }
    result.t0_est = Some(bob.offset());
    result.tau_est = Some(bob.propagation());
    result.peer_t0_est = state.alice_view.complete().map(|a| a.offset());
    Ok(result)
}

impl From<AuthError> for Alarm {
    fn from(e: AuthError) -> Self {
        Alarm::AuthFailure {
            receiver: Party::Eve,
            what: e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::line::LineConfig;
    use crate::timebase::EventKind;

    fn scenario(t0: f64, tau: f64) -> SyncScenario {
        let line = LineConfig::standard(1e3, 1e4, 10e3, 1e-18);
        SyncScenario::new(line, tau, t0, 7)
    }

    #[test]
    fn all_zero_gives_zero() {
        let mut s = scenario(0.0, 0.0);
        s.processing_delay = 0.0;
        s.set_quantum(None);
        let r = protocol_a(&mut s).unwrap();
        assert_eq!(r.t0_est, Some(0.0));
        assert_eq!(r.tau_est, Some(0.0));
        assert!(!r.attack_flag);
    }

    #[test]
    fn honest_offset_and_delay_recovered() {
        let mut s = scenario(5e-3, 2e-3);
        let r = protocol_a(&mut s).unwrap();
        assert!((r.t0_est.unwrap() - 5e-3).abs() < 1e-12);
        assert!((r.tau_est.unwrap() - 2e-3).abs() < 1e-12);
        assert_eq!(r.peer_t0_est, r.t0_est);
    }

    #[test]
    fn three_deliveries_in_honest_run() {
        let mut s = scenario(1e-3, 2e-3);
        protocol_a(&mut s).unwrap();
        assert_eq!(s.log.count(&EventKind::Deliver), 3);
        assert_eq!(s.log.count(&EventKind::Send), 3);
    }

    #[test]
    fn round_trip_is_two_tau_plus_processing() {
        let mut s = scenario(0.0, 2e-3);
        s.set_quantum(None);
        protocol_a(&mut s).unwrap();
        let delivers: Vec<_> = s
            .log
            .entries()
            .iter()
            .filter(|e| e.kind == EventKind::Deliver)
            .collect();
        assert!((delivers[1].time - 5e-3).abs() < 1e-15);
    }

    #[test]
    fn authentication_is_estimate_neutral() {
        let mut a = scenario(5e-3, 2e-3);
        let mut b = scenario(5e-3, 2e-3);
        let ra = protocol_a(&mut a).unwrap();
        let rb = protocol_b(&mut b).unwrap();
        assert_eq!(ra.t0_est, rb.t0_est);
        assert_eq!(ra.tau_est, rb.tau_est);
        assert!(rb.auth_ok && !rb.attack_flag);
        assert_eq!(rb.key_bits_consumed, 3 * 256);
        assert_eq!(b.alice_ledger.consumed(), b.bob_ledger.consumed());
        assert!(b.ledgers_consistent());
    }

    #[test]
    fn key_exhaustion_propagates() {
        let mut s = scenario(0.0, 1e-3);
        s.set_key_bits(300);
        assert!(matches!(
            protocol_b(&mut s),
            Err(ProtocolError::Auth(AuthError::KeyExhausted { .. }))
        ));
    }

    #[test]
    fn negative_offsets_work() {
        let mut s = scenario(-3.25e-3, 1.5e-3);
        let r = protocol_a(&mut s).unwrap();
        assert!((r.t0_est.unwrap() + 3.25e-3).abs() < 1e-12);
    }
}
