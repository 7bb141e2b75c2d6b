//! Party clocks and a deterministic two-way message channel.
//!
//! Alice holds the master clock. Every other clock reads
//! `local = absolute + t0`. The channel delivers envelopes after a
//! per-direction delay; installed hooks see every envelope first and may
//! rewrite, delay or drop it. Everything that happens is written to an
//! [`EventLog`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Party {
    Alice,
    Bob,
    Eve,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::Alice => "Alice",
            Party::Bob => "Bob",
            Party::Eve => "Eve",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockState {
    pub party: Party,
    pub offset: f64,
    pub is_master: bool,
}

impl ClockState {
    pub fn master(party: Party) -> Self {
        Self {
            party,
            offset: 0.0,
            is_master: true,
        }
    }

    pub fn with_offset(party: Party, offset: f64) -> Self {
        Self {
            party,
            offset,
            is_master: false,
        }
    }

    pub fn local_time(&self, absolute: f64) -> f64 {
        local_time(self, absolute)
    }

    pub fn absolute_time(&self, local: f64) -> f64 {
        local - self.offset
    }

    /// Clock reading at `absolute`, rounded to the nearest multiple of
    /// `quantum` when one is set.
    pub fn read(&self, absolute: f64, quantum: Option<f64>) -> f64 {
        quantize(self.local_time(absolute), quantum)
    }

    /// First local tick at or after `local`.
    pub fn next_tick(local: f64, quantum: Option<f64>) -> f64 {
        match quantum {
            Some(q) if q > 0.0 => {
                let ticks = (local / q).round();
                // Values already on a tick (up to rounding) stay put.
                if (ticks * q - local).abs() <= 1e-9 * q || ticks * q > local {
                    ticks * q
                } else {
                    (ticks + 1.0) * q
                }
            }
            _ => local,
        }
    }

    /// Shifts the clock back by an estimated offset.
    pub fn correct(&mut self, estimated_offset: f64) {
        self.offset -= estimated_offset;
    }
}

/// `t* = t + t0`.
pub fn local_time(clock: &ClockState, absolute: f64) -> f64 {
    absolute + clock.offset
}

pub fn quantize(value: f64, quantum: Option<f64>) -> f64 {
    match quantum {
        Some(q) if q > 0.0 => (value / q).round() * q,
        _ => value,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    AtoB,
    BtoA,
}

impl Direction {
    pub fn sender(self) -> Party {
        match self {
            Direction::AtoB => Party::Alice,
            Direction::BtoA => Party::Bob,
        }
    }

    pub fn receiver(self) -> Party {
        match self {
            Direction::AtoB => Party::Bob,
            Direction::BtoA => Party::Alice,
        }
    }

    pub fn from_sender(party: Party) -> Option<Self> {
        match party {
            Party::Alice => Some(Direction::AtoB),
            Party::Bob => Some(Direction::BtoA),
            Party::Eve => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AtoB => "AtoB",
            Direction::BtoA => "BtoA",
        })
    }
}

/// Anything that can travel through the channel.
pub trait WirePayload: Clone {
    /// Canonical bytes, used for the log digest.
    fn wire_bytes(&self) -> Vec<u8>;
}

/// Short hex digest of a payload for log lines.
pub fn payload_digest<P: WirePayload>(payload: &P) -> String {
    let digest = Sha256::digest(payload.wire_bytes());
    hex::encode(&digest[..8])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<P> {
    pub id: u64,
    pub payload: P,
    pub sent_absolute: f64,
    pub deliver_absolute: f64,
    pub direction: Direction,
}

/// What a hook did to an envelope.
#[derive(Debug, Clone, PartialEq)]
pub enum HookAction {
    Pass,
    /// Recorded without change.
    Observe,
    /// Payload rewritten in place.
    Rewrite(String),
    /// Extra delay in seconds.
    Delay(f64),
    Drop,
}

pub trait ChannelHook<P>: Send {
    fn name(&self) -> &str;
    fn intercept(&mut self, envelope: &mut Envelope<P>) -> HookAction;
}

pub struct ChannelState<P> {
    pub delay_ab: f64,
    pub delay_ba: f64,
    hooks: Vec<Box<dyn ChannelHook<P>>>,
    next_id: u64,
}

impl<P> fmt::Debug for ChannelState<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChannelState")
            .field("delay_ab", &self.delay_ab)
            .field("delay_ba", &self.delay_ba)
            .field(
                "hooks",
                &self.hooks.iter().map(|h| h.name().to_owned()).collect::<Vec<_>>(),
            )
            .finish()
    }
}

impl<P: WirePayload> ChannelState<P> {
    /// Honest channel with delay `tau` both ways.
    pub fn symmetric(tau: f64) -> Self {
        Self {
            delay_ab: tau,
            delay_ba: tau,
            hooks: Vec::new(),
            next_id: 0,
        }
    }

    pub fn add_hook(&mut self, hook: Box<dyn ChannelHook<P>>) {
        self.hooks.push(hook);
    }

    pub fn hook_names(&self) -> Vec<String> {
        self.hooks.iter().map(|h| h.name().to_owned()).collect()
    }

    pub fn delay(&self, direction: Direction) -> f64 {
        match direction {
            Direction::AtoB => self.delay_ab,
            Direction::BtoA => self.delay_ba,
        }
    }

    /// Puts `payload` on the wire at `now`. Returns the envelope as it will
    /// be delivered, or `None` if a hook dropped it.
    pub fn send(
        &mut self,
        payload: P,
        direction: Direction,
        now: f64,
        log: &mut EventLog,
    ) -> Option<Envelope<P>> {
        let mut envelope = Envelope {
            id: self.next_id,
            payload,
            sent_absolute: now,
            deliver_absolute: now + self.delay(direction),
            direction,
        };
        self.next_id += 1;
        log.push(now, Some(direction), EventKind::Send, payload_digest(&envelope.payload));

        for hook in &mut self.hooks {
            let before = payload_digest(&envelope.payload);
            match hook.intercept(&mut envelope) {
                HookAction::Pass => {}
                HookAction::Observe => {
                    log.push(now, Some(direction), EventKind::Hook(format!("{}:observe", hook.name())), before);
                }
                HookAction::Rewrite(what) => {
                    let after = payload_digest(&envelope.payload);
                    log.push(
                        now,
                        Some(direction),
                        EventKind::Hook(format!("{}:rewrite:{what}", hook.name())),
                        format!("{before}>{after}"),
                    );
                }
                HookAction::Delay(by) => {
                    envelope.deliver_absolute += by;
                    log.push(
                        now,
                        Some(direction),
                        EventKind::Hook(format!("{}:delay:{by:e}", hook.name())),
                        before,
                    );
                }
                HookAction::Drop => {
                    log.push(now, Some(direction), EventKind::Drop, before);
                    return None;
                }
            }
        }
        if envelope.deliver_absolute < envelope.sent_absolute {
            envelope.deliver_absolute = envelope.sent_absolute;
        }
        Some(envelope)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    Send,
    Deliver,
    Drop,
    Hook(String),
    /// A change to the line itself rather than to a message.
    Line(String),
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::Send => f.write_str("send"),
            EventKind::Deliver => f.write_str("deliver"),
            EventKind::Drop => f.write_str("drop"),
            EventKind::Hook(s) => write!(f, "hook:{s}"),
            EventKind::Line(s) => write!(f, "line:{s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub time: f64,
    pub direction: Option<Direction>,
    pub kind: EventKind,
    pub digest: String,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = self.direction.map_or_else(|| "-".to_owned(), |d| d.to_string());
        write!(f, "{:.12},{},{},{}", self.time, dir, self.kind, self.digest)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    entries: Vec<LogEntry>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, direction: Option<Direction>, kind: EventKind, digest: String) {
        self.entries.push(LogEntry {
            time,
            direction,
            kind,
            digest,
        });
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, kind: &EventKind) -> usize {
        self.entries.iter().filter(|e| &e.kind == kind).count()
    }

    pub fn hook_entries(&self) -> impl Iterator<Item = &LogEntry> {
        self.entries
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Hook(_) | EventKind::Line(_) | EventKind::Drop))
    }

    /// One line per event: `time,direction,kind,digest`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    /// SHA-256 of [`EventLog::to_text`], hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("event budget of {0} exhausted")]
    Livelock(usize),
}

pub const DEFAULT_EVENT_BUDGET: usize = 1_000_000;

/// A message a handler wants sent.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing<P> {
    pub send_at: f64,
    pub direction: Direction,
    pub payload: P,
}

enum Event<P> {
    Transmit(Outgoing<P>),
    Deliver(Envelope<P>),
}

struct Queued<P> {
    time: f64,
    seq: u64,
    event: Event<P>,
}

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    // Min-heap on (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Single-threaded discrete-event loop over one channel.
pub struct Scheduler<'a, P: WirePayload> {
    channel: &'a mut ChannelState<P>,
    log: &'a mut EventLog,
    queue: BinaryHeap<Queued<P>>,
    seq: u64,
    budget: usize,
}

impl<'a, P: WirePayload> Scheduler<'a, P> {
    pub fn new(channel: &'a mut ChannelState<P>, log: &'a mut EventLog) -> Self {
        Self {
            channel,
            log,
            queue: BinaryHeap::new(),
            seq: 0,
            budget: DEFAULT_EVENT_BUDGET,
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn post(&mut self, outgoing: Outgoing<P>) {
        let time = outgoing.send_at;
        self.enqueue(time, Event::Transmit(outgoing));
    }

    fn enqueue(&mut self, time: f64, event: Event<P>) {
        self.queue.push(Queued {
            time,
            seq: self.seq,
            event,
        });
        self.seq += 1;
    }

    /// Processes events in time order (ties in insertion order) until the
    /// queue is empty. `on_deliver` receives each delivered envelope and
    /// returns follow-up messages; send times earlier than the delivery are
    /// moved up to it. Returns the number of deliveries.
    pub fn run_until_idle<F>(&mut self, mut on_deliver: F) -> Result<usize, SchedulerError>
    where
        F: FnMut(&Envelope<P>) -> Vec<Outgoing<P>>,
    {
        let mut processed = 0usize;
        let mut deliveries = 0usize;
        while let Some(item) = self.queue.pop() {
            processed += 1;
            if processed > self.budget {
                return Err(SchedulerError::Livelock(self.budget));
            }
            match item.event {
                Event::Transmit(out) => {
                    if let Some(env) = self.channel.send(out.payload, out.direction, item.time, self.log) {
                        let at = env.deliver_absolute;
                        self.enqueue(at, Event::Deliver(env));
                    }
                }
                Event::Deliver(env) => {
                    deliveries += 1;
                    self.log.push(
                        env.deliver_absolute,
                        Some(env.direction),
                        EventKind::Deliver,
                        payload_digest(&env.payload),
                    );
                    for mut out in on_deliver(&env) {
                        if out.send_at < env.deliver_absolute {
                            out.send_at = env.deliver_absolute;
                        }
                        self.post(out);
                    }
                }
            }
        }
        Ok(deliveries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    struct Text(String);

    impl WirePayload for Text {
        fn wire_bytes(&self) -> Vec<u8> {
            self.0.as_bytes().to_vec()
        }
    }

    struct AddDelay(Direction, f64);
    impl ChannelHook<Text> for AddDelay {
        fn name(&self) -> &str {
            "delay"
        }
        fn intercept(&mut self, env: &mut Envelope<Text>) -> HookAction {
            if env.direction == self.0 {
                HookAction::Delay(self.1)
            } else {
                HookAction::Pass
            }
        }
    }

    struct Swap;
    impl ChannelHook<Text> for Swap {
        fn name(&self) -> &str {
            "swap"
        }
        fn intercept(&mut self, env: &mut Envelope<Text>) -> HookAction {
            env.payload = Text("forged".into());
            HookAction::Rewrite("body".into())
        }
    }

    struct Rewind;
    impl ChannelHook<Text> for Rewind {
        fn name(&self) -> &str {
            "rewind"
        }
        fn intercept(&mut self, _: &mut Envelope<Text>) -> HookAction {
            HookAction::Delay(-1.0)
        }
    }

    struct Echo;
    impl ChannelHook<Text> for Echo {
        fn name(&self) -> &str {
            "drop"
        }
        fn intercept(&mut self, _: &mut Envelope<Text>) -> HookAction {
            HookAction::Drop
        }
    }

    #[test]
    fn local_time_examples() {
        assert_eq!(ClockState::master(Party::Alice).local_time(7.0), 7.0);
        let bob = ClockState::with_offset(Party::Bob, 0.005);
        assert!((bob.local_time(1.0) - 1.005).abs() < 1e-15);
        let bob = ClockState::with_offset(Party::Bob, -3e-3);
        assert_eq!(bob.local_time(0.0), -0.003);
    }

    #[test]
    fn quantized_reads_and_ticks() {
        let bob = ClockState::with_offset(Party::Bob, 0.0);
        assert!((bob.read(1.2345e-3, Some(1e-6)) - 1.235e-3).abs() < 1e-15);
        assert_eq!(bob.read(0.3, None), 0.3);
        assert!((ClockState::next_tick(1.2341e-3, Some(1e-6)) - 1.235e-3).abs() < 1e-15);
        assert_eq!(ClockState::next_tick(2e-6, Some(1e-6)), 2e-6);
    }

    #[test]
    fn honest_delivery_after_tau() {
        let mut ch = ChannelState::symmetric(2e-3);
        let mut log = EventLog::new();
        let env = ch.send(Text("hi".into()), Direction::AtoB, 0.0, &mut log).unwrap();
        assert_eq!(env.deliver_absolute, 2e-3);
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn asymmetric_delay_composes_additively() {
        let mut ch = ChannelState::symmetric(2e-3);
        ch.add_hook(Box::new(AddDelay(Direction::BtoA, 4e-3)));
        let mut log = EventLog::new();
        let env = ch.send(Text("r".into()), Direction::BtoA, 10e-3, &mut log).unwrap();
        assert!((env.deliver_absolute - 16e-3).abs() < 1e-15);
        let env = ch.send(Text("r".into()), Direction::AtoB, 10e-3, &mut log).unwrap();
        assert!((env.deliver_absolute - 12e-3).abs() < 1e-15);
        assert_eq!(log.hook_entries().count(), 1);
    }

    #[test]
    fn substitution_keeps_delivery_time_and_logs_both_digests() {
        let mut ch = ChannelState::symmetric(1e-3);
        ch.add_hook(Box::new(Swap));
        let mut log = EventLog::new();
        let original = Text("genuine".into());
        let env = ch.send(original.clone(), Direction::AtoB, 0.0, &mut log).unwrap();
        assert_eq!(env.payload, Text("forged".into()));
        assert_eq!(env.deliver_absolute, 1e-3);
        let entry = log.hook_entries().next().unwrap();
        assert_eq!(
            entry.digest,
            format!("{}>{}", payload_digest(&original), payload_digest(&env.payload))
        );
    }

    #[test]
    fn hooks_cannot_break_causality() {
        let mut ch = ChannelState::symmetric(1e-3);
        ch.add_hook(Box::new(Rewind));
        let mut log = EventLog::new();
        let env = ch.send(Text("x".into()), Direction::AtoB, 5.0, &mut log).unwrap();
        assert!(env.deliver_absolute >= env.sent_absolute);
    }

    #[test]
    fn drops_are_logged_not_raised() {
        let mut ch = ChannelState::symmetric(1e-3);
        ch.add_hook(Box::new(Echo));
        let mut log = EventLog::new();
        assert!(ch.send(Text("x".into()), Direction::AtoB, 0.0, &mut log).is_none());
        assert_eq!(log.count(&EventKind::Drop), 1);
    }

    #[test]
    fn empty_queue_gives_empty_log() {
        let mut ch: ChannelState<Text> = ChannelState::symmetric(1e-3);
        let mut log = EventLog::new();
        let n = Scheduler::new(&mut ch, &mut log).run_until_idle(|_| vec![]).unwrap();
        assert_eq!(n, 0);
        assert!(log.is_empty());
    }

    #[test]
    fn single_message_logs_send_and_deliver() {
        let mut ch = ChannelState::symmetric(1e-3);
        let mut log = EventLog::new();
        let mut sched = Scheduler::new(&mut ch, &mut log);
        sched.post(Outgoing {
            send_at: 0.0,
            direction: Direction::AtoB,
            payload: Text("m".into()),
        });
        assert_eq!(sched.run_until_idle(|_| vec![]).unwrap(), 1);
        let kinds: Vec<_> = log.entries().iter().map(|e| e.kind.clone()).collect();
        assert_eq!(kinds, vec![EventKind::Send, EventKind::Deliver]);
        assert_eq!(log.entries()[1].time, 1e-3);
    }

    #[test]
    fn ties_break_in_insertion_order() {
        let mut ch = ChannelState::symmetric(1e-3);
        let mut log = EventLog::new();
        let mut sched = Scheduler::new(&mut ch, &mut log);
        for name in ["first", "second", "third"] {
            sched.post(Outgoing {
                send_at: 0.0,
                direction: Direction::AtoB,
                payload: Text(name.into()),
            });
        }
        let mut order = Vec::new();
        sched
            .run_until_idle(|env| {
                order.push(env.payload.0.clone());
                vec![]
            })
            .unwrap();
        assert_eq!(order, ["first", "second", "third"]);
    }

    #[test]
    fn ping_pong_livelock_is_caught() {
        let mut ch = ChannelState::symmetric(1e-3);
        let mut log = EventLog::new();
        let mut sched = Scheduler::new(&mut ch, &mut log).with_budget(100);
        sched.post(Outgoing {
            send_at: 0.0,
            direction: Direction::AtoB,
            payload: Text("ping".into()),
        });
        let err = sched
            .run_until_idle(|env| {
                vec![Outgoing {
                    send_at: env.deliver_absolute,
                    direction: match env.direction {
                        Direction::AtoB => Direction::BtoA,
                        Direction::BtoA => Direction::AtoB,
                    },
                    payload: env.payload.clone(),
                }]
            })
            .unwrap_err();
        assert_eq!(err, SchedulerError::Livelock(100));
    }

    #[test]
    fn log_lines_have_four_fields() {
        let mut log = EventLog::new();
        log.push(0.002, Some(Direction::AtoB), EventKind::Deliver, "ab".into());
        log.push(0.5, None, EventKind::Line("r_wire*1.5".into()), "-".into());
        assert_eq!(
            log.to_text(),
            "0.002000000000,AtoB,deliver,ab\n0.500000000000,-,line:r_wire*1.5,-\n"
        );
    }
}
