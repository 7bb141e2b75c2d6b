//! The three synchronization protocols and the scenario they run in.
//!
//! * [`protocol_a`]: plain two-way time transfer; exact on an honest
//!   symmetric channel, blind to every attack.
//! * [`protocol_b`]: the same exchange with one-time-pad authenticated
//!   digests; catches substituted messages but not delay changes.
//! * [`protocol_c`]: authenticated exchange of BEP records followed by the
//!   cable-simulation offset search; [`combined_check`] adds a random
//!   authenticated probe that monitors `t0` and `τ`.

mod bepfile;
mod integrity;
mod message;
mod offset;
mod two_way;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{AuthError, HashAlgorithm, KeyLedger};
use crate::line::{BitState, LineConfig, LineError, ResistorChoice, WireSchedule};
use crate::rng::stream_rng;
use crate::timebase::{ChannelState, ClockState, EventLog, Party, SchedulerError};

pub use bepfile::{build_bep_file, config_digest, BepFile, BepFileError};
pub use integrity::{combined_check, exchange_files, protocol_c, FileExchange, FileVerdict};
pub use message::{MessageKind, SignedFile, SyncMessage, TimeField, WireMessage};
pub use offset::{
    estimate_offset, estimate_offset_pooled, search, ModelInput, OffsetError, OffsetEstimate,
    SearchParams, DEFAULT_DETECTION_THRESHOLD,
};
pub use two_way::{protocol_a, protocol_b, TwoWayTimestamps};

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("protocol incomplete: {0}")]
    Incomplete(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error(transparent)]
    Line(#[from] LineError),
    #[error(transparent)]
    File(#[from] BepFileError),
    #[error(transparent)]
    Offset(#[from] OffsetError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolKind {
    A,
    B,
    C,
    Combined,
}

/// Why a run raised its attack flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "alarm", rename_all = "snake_case")]
pub enum Alarm {
    /// A tag failed to verify or referenced unusable key bits.
    AuthFailure { receiver: Party, what: String },
    /// A file arrived with the wrong BEP index.
    StaleFile { receiver: Party, expected: u64, got: u64 },
    /// A file was recorded under different line parameters or claims the
    /// wrong sender.
    FileMismatch { receiver: Party, what: String },
    /// Minimum cable-model residual above the detection threshold.
    Residual { residual: f64, threshold: f64 },
    /// Probe after integrity synchronization saw a nonzero offset.
    OffsetNotZero { t0_est: f64, tolerance: f64 },
    /// Probe saw a propagation time away from the nominal one.
    TauDeviation { tau_est: f64, nominal: f64, tolerance: f64 },
    /// Integrity synchronization was not clean, so the probe cannot pass.
    IntegrityFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncResult {
    pub protocol: ProtocolKind,
    /// Bob's offset as estimated by the party applying the correction;
    /// `None` when estimates were discarded.
    pub t0_est: Option<f64>,
    pub tau_est: Option<f64>,
    /// Cable-model residual (protocol C and the combined check).
    pub residual: Option<f64>,
    /// The other party's independent offset estimate, when there is one.
    pub peer_t0_est: Option<f64>,
    pub auth_ok: bool,
    pub attack_flag: bool,
    pub alarms: Vec<Alarm>,
    pub correction_applied: bool,
    /// Bob's clock offset when the run ended.
    pub bob_offset_after: f64,
    pub key_bits_consumed: u64,
    /// `(Δt*, residual)` from Alice's offset search.
    pub curve: Vec<(f64, f64)>,
}

impl SyncResult {
    fn new(protocol: ProtocolKind, bob_offset: f64) -> Self {
        Self {
            protocol,
            t0_est: None,
            tau_est: None,
            residual: None,
            peer_t0_est: None,
            auth_ok: true,
            attack_flag: false,
            alarms: Vec::new(),
            correction_applied: false,
            bob_offset_after: bob_offset,
            key_bits_consumed: 0,
            curve: Vec::new(),
        }
    }

    fn raise(&mut self, alarm: Alarm) {
        if matches!(alarm, Alarm::AuthFailure { .. }) {
            self.auth_ok = false;
        }
        self.attack_flag = true;
        self.alarms.push(alarm);
    }
}

/// Acceptance limits for the probe run by [`combined_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    pub t0_tolerance: f64,
    pub tau_tolerance: f64,
    /// The probe starts uniformly within this long after the integrity run.
    pub max_wait: f64,
}

/// What happened in one simulated BEP, for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BepRecord {
    pub bep_index: u64,
    pub choice_a: ResistorChoice,
    pub choice_b: ResistorChoice,
    pub msq_voltage: f64,
    pub msq_current: f64,
    pub state_alice: Option<BitState>,
    pub state_bob: Option<BitState>,
    pub key_bit_alice: Option<u8>,
    pub key_bit_bob: Option<u8>,
}

pub(crate) mod streams {
    pub const KEY: u64 = 1;
    pub const CHOICE: u64 = 2;
    pub const BEP: u64 = 3;
    pub const PROBE: u64 = 4;
    pub const MEASUREMENT: u64 = 5;
    pub const ADVERSARY: u64 = 6;
}

/// Everything one simulated deployment needs: line physics, clocks,
/// channel with any adversary hooks, key ledgers and a shared event log.
#[derive(Debug)]
pub struct SyncScenario {
    pub line: LineConfig,
    /// Nominal one-way propagation delay of the message channel.
    pub tau: f64,
    /// Bob's delay between receiving a time stamp and answering it.
    pub processing_delay: f64,
    pub alice: ClockState,
    pub bob: ClockState,
    /// Timestamp resolution; `None` disables quantization.
    pub quantum: Option<f64>,
    pub channel: ChannelState<WireMessage>,
    /// Actual wire resistance over time; the line config holds the nominal one.
    pub wire: WireSchedule,
    pub alice_ledger: KeyLedger,
    pub bob_ledger: KeyLedger,
    pub hash: HashAlgorithm,
    pub search: SearchParams,
    pub probe: ProbeParams,
    /// Relative standard deviation of additive recording noise.
    pub measurement_noise: f64,
    /// Two-way exchanges give up after this many nominal round trips.
    pub timeout_factor: f64,
    pub seed: u64,
    /// Absolute time at which the next protocol step may start.
    pub now: f64,
    pub log: EventLog,
    pub beps: Vec<BepRecord>,
    /// Outcome of the latest integrity synchronization.
    pub integrity: Option<SyncResult>,
    /// Activation times of installed line modifications.
    pub line_mod_times: Vec<f64>,
}

pub const DEFAULT_QUANTUM: f64 = 1e-6;
pub const DEFAULT_PROCESSING_DELAY: f64 = 1e-3;
pub const DEFAULT_KEY_BITS: u64 = 1 << 16;

impl SyncScenario {
    /// Honest scenario: symmetric channel with delay `tau`, Bob's clock
    /// ahead by `bob_offset`, 1 µs timestamps, 1 ms processing delay and
    /// a 64 kbit shared key drawn from `seed`.
    pub fn new(line: LineConfig, tau: f64, bob_offset: f64, seed: u64) -> Self {
        let quantum = Some(DEFAULT_QUANTUM);
        let mut scenario = Self {
            line,
            tau,
            processing_delay: DEFAULT_PROCESSING_DELAY,
            alice: ClockState::master(Party::Alice),
            bob: ClockState::with_offset(Party::Bob, bob_offset),
            quantum,
            channel: ChannelState::symmetric(tau),
            wire: WireSchedule::constant(),
            alice_ledger: KeyLedger::from_bytes(Vec::new()),
            bob_ledger: KeyLedger::from_bytes(Vec::new()),
            hash: HashAlgorithm::Sha256,
            search: SearchParams::default(),
            probe: ProbeParams {
                t0_tolerance: 2.0 * DEFAULT_QUANTUM,
                tau_tolerance: DEFAULT_QUANTUM,
                max_wait: 10.0 * line.bep_duration,
            },
            measurement_noise: 0.0,
            timeout_factor: 10.0,
            seed,
            now: 0.0,
            log: EventLog::new(),
            beps: Vec::new(),
            integrity: None,
            line_mod_times: Vec::new(),
        };
        scenario.set_key_bits(DEFAULT_KEY_BITS);
        scenario
    }

    /// Sets the timestamp resolution and rescales the probe tolerances to
    /// it (2 quanta for `t0`, 1 for `τ`).
    pub fn set_quantum(&mut self, quantum: Option<f64>) {
        self.quantum = quantum;
        let q = quantum.unwrap_or(DEFAULT_QUANTUM);
        self.probe.t0_tolerance = 2.0 * q;
        self.probe.tau_tolerance = q;
    }

    /// Replaces both ledgers with a fresh shared key of `bits` bits.
    pub fn set_key_bits(&mut self, bits: u64) {
        let mut rng = stream_rng(self.seed, streams::KEY);
        let mut bytes = vec![0u8; bits.div_ceil(8) as usize];
        rng.fill_bytes(&mut bytes);
        let bits: Vec<u8> = (0..bits)
            .map(|i| (bytes[(i / 8) as usize] >> (7 - i % 8)) & 1)
            .collect();
        self.alice_ledger = KeyLedger::from_bits(&bits);
        self.bob_ledger = self.alice_ledger.clone();
    }

    /// Installs a key for both parties, e.g. one produced by earlier BEPs.
    pub fn set_shared_key(&mut self, ledger: KeyLedger) {
        self.alice_ledger = ledger.clone();
        self.bob_ledger = ledger;
    }

    /// Nominal round trip: two flights plus Bob's processing delay.
    pub fn nominal_round_trip(&self) -> f64 {
        2.0 * self.tau + self.processing_delay
    }

    pub fn key_bits_consumed(&self) -> u64 {
        self.alice_ledger.consumed()
    }

    /// True when neither ledger has handed out a key bit twice.
    pub fn ledgers_consistent(&self) -> bool {
        self.alice_ledger.audit() && self.bob_ledger.audit()
    }
}
