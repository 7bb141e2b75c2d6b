//! Eve: channel hooks and line mutations.

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::line::{classify_msq, BitState, LineConfig, DEFAULT_GUARD_BAND};
use crate::noise::NoiseTrace;
use crate::protocols::{MessageKind, SignedFile, SyncScenario, TimeField, WireMessage};
use crate::rng::stream_rng;
use crate::timebase::{ChannelHook, Direction, Envelope, HookAction, Party};

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("invalid attack parameters: {0}")]
    Invalid(String),
    #[error("two line modifications activate at {0} s")]
    Conflicting(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Which message a removal attack drops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageClass {
    TimeStamp,
    Response,
    Share,
    File,
}

impl MessageClass {
    fn matches(self, payload: &WireMessage) -> bool {
        match (self, payload) {
            (MessageClass::File, WireMessage::File(_)) => true,
            (MessageClass::TimeStamp, WireMessage::Sync(m)) => m.kind == MessageKind::TimeStamp,
            (MessageClass::Response, WireMessage::Sync(m)) => m.kind == MessageKind::Response,
            (MessageClass::Share, WireMessage::Sync(m)) => m.kind == MessageKind::Share,
            _ => false,
        }
    }
}

fn default_shift() -> f64 {
    1e-3
}

fn default_factor() -> f64 {
    1.01
}

/// One of Eve's behaviors, as written in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    /// Records traffic, changes nothing.
    Passive {},
    /// Adds `shift` seconds to a timestamp field in flight. With
    /// `forge_tag` the tag is replaced by random bits, since Eve cannot
    /// compute a valid one.
    Substitute {
        field: TimeField,
        #[serde(default = "default_shift")]
        shift: f64,
        #[serde(default)]
        forge_tag: bool,
    },
    /// Multiplies one sample of `party`'s BEP files by `factor`.
    SubstituteFile {
        party: Party,
        #[serde(default)]
        sample: usize,
        #[serde(default = "default_factor")]
        factor: f64,
        #[serde(default)]
        forge_tag: bool,
    },
    /// Replaces each of `party`'s files with the previous one, tag and all.
    ReplayFile { party: Party },
    /// Adds `delta` seconds to every message on `leg` sent at or after `from`.
    AsymDelay {
        leg: Direction,
        delta: f64,
        #[serde(default)]
        from: f64,
    },
    /// Changes the line at absolute time `at`: the wire resistance by a
    /// factor, the message propagation time to `new_tau`, or both.
    LineMod {
        at: f64,
        #[serde(default)]
        r_wire_factor: Option<f64>,
        #[serde(default)]
        new_tau: Option<f64>,
    },
    /// Drops every message of one class.
    Remove { message: MessageClass },
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::Passive {} => "passive",
            AttackSpec::Substitute { .. } => "substitute",
            AttackSpec::SubstituteFile { .. } => "substitute_file",
            AttackSpec::ReplayFile { .. } => "replay_file",
            AttackSpec::AsymDelay { .. } => "asym_delay",
            AttackSpec::LineMod { .. } => "line_mod",
            AttackSpec::Remove { .. } => "remove",
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |msg: String| Err(AttackError::Invalid(msg));
        match *self {
            AttackSpec::Substitute { shift, .. } if !shift.is_finite() || shift == 0.0 => {
                bad(format!("substitute.shift must be finite and nonzero, got {shift}"))
            }
            AttackSpec::SubstituteFile { factor, .. } if !factor.is_finite() || factor == 1.0 => {
                bad(format!("substitute_file.factor must be finite and not 1, got {factor}"))
            }
            AttackSpec::SubstituteFile { party: Party::Eve, .. } | AttackSpec::ReplayFile { party: Party::Eve } => {
                bad("files come from Alice or Bob".into())
            }
            AttackSpec::AsymDelay { delta, from, .. } => {
                if !(delta >= 0.0 && delta.is_finite()) {
                    bad(format!("asym_delay.delta must be >= 0, got {delta}"))
                } else if !(from >= 0.0 && from.is_finite()) {
                    bad(format!("asym_delay.from must be >= 0, got {from}"))
                } else {
                    Ok(())
                }
            }
            AttackSpec::LineMod {
                at,
                r_wire_factor,
                new_tau,
            } => {
                if !(at >= 0.0 && at.is_finite()) {
                    bad(format!("line_mod.at must be a time >= 0, got {at}"))
                } else if r_wire_factor.is_none() && new_tau.is_none() {
                    bad("line_mod needs r_wire_factor, new_tau or both".into())
                } else if r_wire_factor.is_some_and(|f| !(f > 0.0 && f.is_finite())) {
                    bad("line_mod.r_wire_factor must be positive".into())
                } else if new_tau.is_some_and(|t| !(t >= 0.0 && t.is_finite())) {
                    bad("line_mod.new_tau must be >= 0".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Passive listener: every envelope shows up in the log as observed.
#[derive(Debug, Default)]
pub struct Recorder {
    pub seen: usize,
}

impl<P> ChannelHook<P> for Recorder {
    fn name(&self) -> &str {
        "eve-passive"
    }

    fn intercept(&mut self, _envelope: &mut Envelope<P>) -> HookAction {
        self.seen += 1;
        HookAction::Observe
    }
}

fn forge(tag: &mut Option<crate::auth::AuthTag>, rng: &mut ChaCha8Rng) {
    if let Some(tag) = tag {
        rng.fill_bytes(&mut tag.ciphertext);
    }
}

struct FieldSubstitution {
    field: TimeField,
    shift: f64,
    forge_tag: bool,
    rng: ChaCha8Rng,
}

impl ChannelHook<WireMessage> for FieldSubstitution {
    fn name(&self) -> &str {
        "eve-substitute"
    }

    fn intercept(&mut self, envelope: &mut Envelope<WireMessage>) -> HookAction {
        let WireMessage::Sync(msg) = &mut envelope.payload else {
            return HookAction::Pass;
        };
        if msg.kind != self.field.carried_by() {
            return HookAction::Pass;
        }
        let Some(value) = msg.field_mut(self.field).as_mut() else {
            return HookAction::Pass;
        };
        *value += self.shift;
        if self.forge_tag {
            forge(&mut msg.tag, &mut self.rng);
        }
        HookAction::Rewrite(format!("{:?}+{:e}", self.field, self.shift))
    }
}

struct FileTamper {
    party: Party,
    sample: usize,
    factor: f64,
    forge_tag: bool,
    rng: ChaCha8Rng,
}

impl ChannelHook<WireMessage> for FileTamper {
    fn name(&self) -> &str {
        "eve-substitute-file"
    }

    fn intercept(&mut self, envelope: &mut Envelope<WireMessage>) -> HookAction {
        let WireMessage::File(signed) = &mut envelope.payload else {
            return HookAction::Pass;
        };
        if signed.file.party != self.party || signed.file.is_empty() {
            return HookAction::Pass;
        }
        let n = self.sample.min(signed.file.len() - 1);
        signed.file.voltage[n] *= self.factor;
        if self.forge_tag {
            forge(&mut signed.tag, &mut self.rng);
        }
        HookAction::Rewrite(format!("F({}).voltage[{n}]x{}", signed.file.bep_index, self.factor))
    }
}

struct FileReplay {
    party: Party,
    stored: Option<SignedFile>,
}

impl ChannelHook<WireMessage> for FileReplay {
    fn name(&self) -> &str {
        "eve-replay"
    }

    fn intercept(&mut self, envelope: &mut Envelope<WireMessage>) -> HookAction {
        let WireMessage::File(signed) = &mut envelope.payload else {
            return HookAction::Pass;
        };
        if signed.file.party != self.party {
            return HookAction::Pass;
        }
        let fresh = (**signed).clone();
        match self.stored.replace(fresh) {
            None => HookAction::Observe,
            Some(old) => {
                let what = format!("F({})<-F({})", signed.file.bep_index, old.file.bep_index);
                **signed = old;
                HookAction::Rewrite(what)
            }
        }
    }
}

struct DelayLeg {
    name: &'static str,
    leg: Option<Direction>,
    delta: f64,
    from: f64,
}

impl<P> ChannelHook<P> for DelayLeg {
    fn name(&self) -> &str {
        self.name
    }

    fn intercept(&mut self, envelope: &mut Envelope<P>) -> HookAction {
        let on_leg = self.leg.is_none_or(|leg| leg == envelope.direction);
        if on_leg && envelope.sent_absolute >= self.from {
            HookAction::Delay(self.delta)
        } else {
            HookAction::Pass
        }
    }
}

struct Removal {
    message: MessageClass,
}

impl ChannelHook<WireMessage> for Removal {
    fn name(&self) -> &str {
        "eve-remove"
    }

    fn intercept(&mut self, envelope: &mut Envelope<WireMessage>) -> HookAction {
        if self.message.matches(&envelope.payload) {
            HookAction::Drop
        } else {
            HookAction::Pass
        }
    }
}

/// Installs one attack. Returns an error for invalid parameters or a
/// second line modification at an instant already taken.
pub fn install(attack: &AttackSpec, scenario: &mut SyncScenario) -> Result<(), AttackError> {
    attack.validate()?;
    let index = scenario.channel.hook_names().len() as u64;
    let rng = || stream_rng(crate::rng::derive_seed(scenario.seed, index), crate::protocols::streams::ADVERSARY);
    match *attack {
        AttackSpec::Passive {} => scenario.channel.add_hook(Box::new(Recorder::default())),
        AttackSpec::Substitute {
            field,
            shift,
            forge_tag,
        } => scenario.channel.add_hook(Box::new(FieldSubstitution {
            field,
            shift,
            forge_tag,
            rng: rng(),
        })),
        AttackSpec::SubstituteFile {
            party,
            sample,
            factor,
            forge_tag,
        } => scenario.channel.add_hook(Box::new(FileTamper {
            party,
            sample,
            factor,
            forge_tag,
            rng: rng(),
        })),
        AttackSpec::ReplayFile { party } => {
            scenario.channel.add_hook(Box::new(FileReplay { party, stored: None }))
        }
        AttackSpec::AsymDelay { leg, delta, from } => scenario.channel.add_hook(Box::new(DelayLeg {
            name: "eve-asym-delay",
            leg: Some(leg),
            delta,
            from,
        })),
        AttackSpec::LineMod {
            at,
            r_wire_factor,
            new_tau,
        } => {
            if scenario.line_mod_times.contains(&at) {
                return Err(AttackError::Conflicting(at));
            }
            scenario.line_mod_times.push(at);
            if let Some(factor) = r_wire_factor {
                scenario.wire.push_step(at, factor);
            }
            if let Some(tau) = new_tau {
                scenario.channel.add_hook(Box::new(DelayLeg {
                    name: "eve-line-length",
                    leg: None,
                    delta: tau - scenario.tau,
                    from: at,
                }));
            }
        }
        AttackSpec::Remove { message } => scenario.channel.add_hook(Box::new(Removal { message })),
    }
    Ok(())
}

/// Installs attacks in order.
pub fn install_all(attacks: &[AttackSpec], scenario: &mut SyncScenario) -> Result<(), AttackError> {
    attacks.iter().try_for_each(|a| install(a, scenario))
}

/// Passive Eve's guess of the key bit of a MIXED BEP from the line alone.
///
/// She can only compare mean-square values with the analytic levels. LH
/// and HL produce the same levels, so the best she can do is call the bit
/// by which side of the MIXED level the fluctuation happened to fall.
pub fn passive_bit_guess(voltage: &NoiseTrace, current: &NoiseTrace, config: &LineConfig) -> Result<u8, AttackError> {
    let msq_u = voltage.mean_square();
    let state = classify_msq(msq_u, config, DEFAULT_GUARD_BAND)
        .map_err(|e| AttackError::Precondition(e.to_string()))?;
    if state != BitState::Mixed {
        return Err(AttackError::Precondition(format!("BEP is {state:?}, not MIXED")));
    }
    let levels = config.levels();
    let score = msq_u / levels.voltage[1] + current.mean_square() / levels.current[1];
    Ok(u8::from(score > 2.0))
}
