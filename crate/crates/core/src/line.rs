//! The KLJN loop: two resistor/noise-generator pairs joined by a wire.
//!
//! Each generator has density `noise_scale·R` over `[0, B]`, which is the
//! Johnson-noise condition that makes the LH and HL connections produce
//! identical line statistics. The wire is lumped into a single series
//! resistance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{generate_samples, NoiseError, NoiseSpec, NoiseTrace, Unit};
use crate::rng::derive_seed;
use crate::timebase::Party;

#[derive(Debug, Error, PartialEq)]
pub enum LineError {
    #[error("invalid line config: {0}")]
    InvalidConfig(String),
    #[error("ambiguous measurement: ⟨U²⟩ = {msq:.6e} lies within the guard band of threshold {threshold:.6e}")]
    Ambiguous { msq: f64, threshold: f64 },
    #[error("measurement too short: {got} samples, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("inconsistent state: own resistor {own:?} cannot produce {state:?}")]
    InconsistentState { own: ResistorChoice, state: BitState },
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Flying time and bit-exchange period for bandwidth `B`:
/// `1000·τ_f ≈ 100/B ≈ BEP`.
///
/// At `B = 10 kHz` this gives `τ_f = 10 µs`, which is also the clock
/// resolution a 2 km line needs.
pub fn timing_defaults(bandwidth: f64) -> (f64, f64) {
    (0.1 / bandwidth, 100.0 / bandwidth)
}

/// Channel physics shared by Alice and Bob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineConfig {
    pub r_low: f64,
    pub r_high: f64,
    pub r_wire: f64,
    pub bandwidth: f64,
    /// Generator density per ohm, V²/(Hz·Ω).
    pub noise_scale: f64,
    pub tau_f: f64,
    pub bep_duration: f64,
    pub sample_rate: f64,
}

impl LineConfig {
    /// Config with the default timing (`τ_f = 0.1/B`, `BEP = 100/B`),
    /// `R_wire = R_L/100` and `f_s = 20·B`.
    pub fn standard(r_low: f64, r_high: f64, bandwidth: f64, noise_scale: f64) -> Self {
        let (tau_f, bep_duration) = timing_defaults(bandwidth);
        Self {
            r_low,
            r_high,
            r_wire: r_low / 100.0,
            bandwidth,
            noise_scale,
            tau_f,
            bep_duration,
            sample_rate: 20.0 * bandwidth,
        }
    }

    pub fn validate(&self) -> Result<(), LineError> {
        let bad = |msg: String| Err(LineError::InvalidConfig(msg));
        let all_finite = [
            self.r_low,
            self.r_high,
            self.r_wire,
            self.bandwidth,
            self.noise_scale,
            self.tau_f,
            self.bep_duration,
            self.sample_rate,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return bad("all fields must be finite".into());
        }
        if !(self.r_low > 0.0 && self.r_low < self.r_high) {
            return bad(format!(
                "need 0 < r_low < r_high, got {} and {}",
                self.r_low, self.r_high
            ));
        }
        if self.r_wire < 0.0 {
            return bad(format!("r_wire must be non-negative, got {}", self.r_wire));
        }
        if self.bandwidth <= 0.0 {
            return bad(format!("bandwidth must be positive, got {}", self.bandwidth));
        }
        if self.noise_scale < 0.0 {
            return bad(format!("noise_scale must be non-negative, got {}", self.noise_scale));
        }
        if self.tau_f <= 0.0 || self.bep_duration <= 0.0 {
            return bad("tau_f and bep_duration must be positive".into());
        }
        if self.sample_rate < 2.0 * self.bandwidth {
            return bad(format!(
                "sample_rate {} is below the Nyquist rate {}",
                self.sample_rate,
                2.0 * self.bandwidth
            ));
        }
        if self.samples_per_bep() == 0 {
            return bad("bep_duration is shorter than one sample".into());
        }
        Ok(())
    }

    pub fn samples_per_bep(&self) -> usize {
        (self.bep_duration * self.sample_rate).round() as usize
    }

    pub fn resistance(&self, choice: ResistorChoice) -> f64 {
        match choice {
            ResistorChoice::Low => self.r_low,
            ResistorChoice::High => self.r_high,
        }
    }

    /// Analytic mean-square line voltage and current for each bit state,
    /// from the two-source divider with the wire resistance neglected.
    pub fn levels(&self) -> Levels {
        let p = self.noise_scale * self.bandwidth;
        let (l, h) = (self.r_low, self.r_high);
        Levels {
            voltage: [p * l / 2.0, p * l * h / (l + h), p * h / 2.0],
            current: [p / (2.0 * l), p / (l + h), p / (2.0 * h)],
        }
    }
}

/// Analytic levels ordered `[LL, MIXED, HH]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Levels {
    pub voltage: [f64; 3],
    pub current: [f64; 3],
}

impl Levels {
    /// Geometric midpoints between adjacent voltage levels.
    pub fn voltage_thresholds(&self) -> [f64; 2] {
        let [ll, mx, hh] = self.voltage;
        [(ll * mx).sqrt(), (mx * hh).sqrt()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResistorChoice {
    #[serde(rename = "L")]
    Low,
    #[serde(rename = "H")]
    High,
}

impl ResistorChoice {
    pub fn from_bit(high: bool) -> Self {
        if high {
            Self::High
        } else {
            Self::Low
        }
    }
}

/// What the line statistics reveal. LH and HL collapse into `Mixed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BitState {
    #[serde(rename = "LL")]
    Ll,
    #[serde(rename = "MIXED")]
    Mixed,
    #[serde(rename = "HH")]
    Hh,
}

impl BitState {
    pub fn of(a: ResistorChoice, b: ResistorChoice) -> Self {
        match (a, b) {
            (ResistorChoice::Low, ResistorChoice::Low) => Self::Ll,
            (ResistorChoice::High, ResistorChoice::High) => Self::Hh,
            _ => Self::Mixed,
        }
    }
}

/// One party's record of a bit exchange period.
#[derive(Debug, Clone, PartialEq)]
pub struct BepMeasurement {
    pub party: Party,
    pub bep_index: u64,
    /// Start of the record on the party's own clock.
    pub local_start: f64,
    pub voltage: NoiseTrace,
    pub current: NoiseTrace,
    pub msq_voltage: f64,
    pub msq_current: f64,
}

impl BepMeasurement {
    pub fn new(
        party: Party,
        bep_index: u64,
        local_start: f64,
        voltage: NoiseTrace,
        current: NoiseTrace,
    ) -> Self {
        debug_assert_eq!(voltage.len(), current.len());
        Self {
            party,
            bep_index,
            local_start,
            msq_voltage: voltage.mean_square(),
            msq_current: current.mean_square(),
            voltage,
            current,
        }
    }
}

/// Wire resistance over absolute time: the configured value until the
/// first step, then each step's multiplier of the configured value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WireSchedule {
    steps: Vec<(f64, f64)>,
}

impl WireSchedule {
    pub fn constant() -> Self {
        Self::default()
    }

    /// Adds a step at `at` (absolute seconds) to `factor·R_wire`.
    pub fn push_step(&mut self, at: f64, factor: f64) {
        let pos = self.steps.partition_point(|s| s.0 <= at);
        self.steps.insert(pos, (at, factor));
    }

    pub fn has_step_at(&self, at: f64) -> bool {
        self.steps.iter().any(|s| s.0 == at)
    }

    pub fn factor_at(&self, t: f64) -> f64 {
        self.steps
            .iter()
            .rev()
            .find(|s| s.0 <= t)
            .map_or(1.0, |s| s.1)
    }

    pub fn is_constant(&self) -> bool {
        self.steps.is_empty()
    }

    /// `(at, factor)` pairs in time order.
    pub fn steps(&self) -> &[(f64, f64)] {
        &self.steps
    }
}

/// Where a BEP sits on the absolute timeline and how each clock reads it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BepTiming {
    pub bep_index: u64,
    pub absolute_start: f64,
    pub alice_offset: f64,
    pub bob_offset: f64,
}

impl Default for BepTiming {
    fn default() -> Self {
        Self {
            bep_index: 0,
            absolute_start: 0.0,
            alice_offset: 0.0,
            bob_offset: 0.0,
        }
    }
}

/// Simulates one BEP at index 0 on synchronized clocks with a constant wire.
pub fn simulate_bep(
    choice_a: ResistorChoice,
    choice_b: ResistorChoice,
    config: &LineConfig,
    seed: u64,
) -> Result<(BepMeasurement, BepMeasurement), LineError> {
    simulate_bep_at(
        choice_a,
        choice_b,
        config,
        &BepTiming::default(),
        &WireSchedule::constant(),
        seed,
    )
}

/// Simulates one BEP.
///
/// Loop current `I = (U_A − U_B)/(R_A + R_B + R_wire(t))`, positive from
/// Alice to Bob. Alice's terminal reads `U_A − I·R_A`, Bob's `U_B + I·R_B`,
/// and both record the same current. Samples are taken on a common
/// absolute grid starting at `timing.absolute_start`; each record is
/// stamped with its owner's clock.
pub fn simulate_bep_at(
    choice_a: ResistorChoice,
    choice_b: ResistorChoice,
    config: &LineConfig,
    timing: &BepTiming,
    wire: &WireSchedule,
    seed: u64,
) -> Result<(BepMeasurement, BepMeasurement), LineError> {
    config.validate()?;
    let n = config.samples_per_bep();
    let fs = config.sample_rate;
    let r_a = config.resistance(choice_a);
    let r_b = config.resistance(choice_b);

    let source = |r: f64, stream: u64| {
        let spec = NoiseSpec::new(
            config.bandwidth,
            config.noise_scale * r,
            derive_seed(seed, stream),
        );
        generate_samples(&spec, n, fs)
    };
    let u_a = source(r_a, 0)?;
    let u_b = source(r_b, 1)?;

    let mut current = Vec::with_capacity(n);
    let mut v_alice = Vec::with_capacity(n);
    let mut v_bob = Vec::with_capacity(n);
    for (i, (&ua, &ub)) in u_a.samples().iter().zip(u_b.samples()).enumerate() {
        let t = timing.absolute_start + i as f64 / fs;
        let r_wire = config.r_wire * wire.factor_at(t);
        let amps = (ua - ub) / (r_a + r_b + r_wire);
        current.push(amps);
        v_alice.push(ua - amps * r_a);
        v_bob.push(ub + amps * r_b);
    }

    let current_a = NoiseTrace::new(current, fs, Unit::Ampere)?;
    let current_b = current_a.clone();
    let meas_a = BepMeasurement::new(
        Party::Alice,
        timing.bep_index,
        timing.absolute_start + timing.alice_offset,
        NoiseTrace::new(v_alice, fs, Unit::Volt)?,
        current_a,
    );
    let meas_b = BepMeasurement::new(
        Party::Bob,
        timing.bep_index,
        timing.absolute_start + timing.bob_offset,
        NoiseTrace::new(v_bob, fs, Unit::Volt)?,
        current_b,
    );
    Ok((meas_a, meas_b))
}

/// Default relative guard band around each classification threshold.
pub const DEFAULT_GUARD_BAND: f64 = 0.05;

/// Classifies a measurement by its mean-square voltage.
pub fn classify_bep(meas: &BepMeasurement, config: &LineConfig) -> Result<BitState, LineError> {
    classify_bep_with_guard(meas, config, DEFAULT_GUARD_BAND)
}

pub fn classify_bep_with_guard(
    meas: &BepMeasurement,
    config: &LineConfig,
    guard_band: f64,
) -> Result<BitState, LineError> {
    let need = config.samples_per_bep().div_ceil(2);
    if meas.voltage.len() < need {
        return Err(LineError::TooShort {
            got: meas.voltage.len(),
            need,
        });
    }
    classify_msq(meas.msq_voltage, config, guard_band)
}

/// Classifies a bare mean-square voltage against the analytic levels.
pub fn classify_msq(msq: f64, config: &LineConfig, guard_band: f64) -> Result<BitState, LineError> {
    let [low, high] = config.levels().voltage_thresholds();
    for threshold in [low, high] {
        if (msq - threshold).abs() <= guard_band * threshold {
            return Err(LineError::Ambiguous { msq, threshold });
        }
    }
    Ok(if msq < low {
        BitState::Ll
    } else if msq < high {
        BitState::Mixed
    } else {
        BitState::Hh
    })
}

/// A party's conclusion about the other side's resistor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartnerInference {
    pub partner: ResistorChoice,
    /// Secure key bit (LH → 0, HL → 1, Alice's choice first); `None` for
    /// LL and HH, which carry no secret.
    pub key_bit: Option<u8>,
}

pub fn infer_partner_choice(
    own: ResistorChoice,
    state: BitState,
    role: Party,
) -> Result<PartnerInference, LineError> {
    use ResistorChoice::*;
    let partner = match (state, own) {
        (BitState::Ll, Low) => Low,
        (BitState::Hh, High) => High,
        (BitState::Mixed, Low) => High,
        (BitState::Mixed, High) => Low,
        _ => return Err(LineError::InconsistentState { own, state }),
    };
    let key_bit = (state == BitState::Mixed).then(|| {
        let alice = if role == Party::Bob { partner } else { own };
        u8::from(alice == High)
    });
    Ok(PartnerInference { partner, key_bit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ResistorChoice::*;

    /// R_L = 1 Ω, R_H = 10 Ω, noise_scale·B = 1, no wire.
    fn normalized() -> LineConfig {
        let mut c = LineConfig::standard(1.0, 10.0, 1e3, 1e-3);
        c.r_wire = 0.0;
        c
    }

    #[test]
    fn timing_defaults_scale_with_bandwidth() {
        let (tau_f, bep) = timing_defaults(10e3);
        assert!((tau_f - 10e-6).abs() < 1e-18);
        assert!((bep - 10e-3).abs() < 1e-15);
        assert_eq!(timing_defaults(1.0), (0.1, 100.0));
    }

    #[test]
    fn standard_config_is_valid() {
        let c = LineConfig::standard(1e3, 1e4, 10e3, 1e-18);
        c.validate().unwrap();
        assert_eq!(c.r_wire, 10.0);
        assert_eq!(c.samples_per_bep(), 2000);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = normalized();
        c.r_high = 0.5;
        assert!(matches!(c.validate(), Err(LineError::InvalidConfig(_))));
        let mut c = normalized();
        c.sample_rate = c.bandwidth;
        assert!(c.validate().is_err());
        let mut c = normalized();
        c.r_wire = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn silent_generators_give_zero_traces() {
        let mut c = normalized();
        c.noise_scale = 0.0;
        let (a, b) = simulate_bep(Low, High, &c, 3).unwrap();
        assert_eq!(a.msq_voltage, 0.0);
        assert_eq!(b.msq_current, 0.0);
        assert!(a.voltage.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn level_ordering() {
        let l = normalized().levels();
        assert!(l.voltage[0] < l.voltage[1] && l.voltage[1] < l.voltage[2]);
        assert!((l.voltage[0] - 0.5).abs() < 1e-12);
        assert!((l.voltage[1] - 10.0 / 11.0).abs() < 1e-12);
        assert!((l.voltage[2] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn classify_on_level_and_between() {
        let c = normalized();
        let levels = c.levels();
        assert_eq!(classify_msq(levels.voltage[0], &c, 0.05).unwrap(), BitState::Ll);
        assert_eq!(classify_msq(levels.voltage[2], &c, 0.05).unwrap(), BitState::Hh);
        assert_eq!(classify_msq(0.91, &c, 0.05).unwrap(), BitState::Mixed);
        let [t, _] = levels.voltage_thresholds();
        assert!(matches!(
            classify_msq(t * 1.01, &c, 0.05),
            Err(LineError::Ambiguous { .. })
        ));
    }

    #[test]
    fn classify_rejects_short_records() {
        let c = normalized();
        let (mut a, _) = simulate_bep(Low, Low, &c, 1).unwrap();
        let short: Vec<f64> = a.voltage.samples()[..10].to_vec();
        a.voltage = NoiseTrace::new(short, c.sample_rate, Unit::Volt).unwrap();
        assert!(matches!(
            classify_bep(&a, &c),
            Err(LineError::TooShort { .. })
        ));
    }

    #[test]
    fn partner_inference() {
        let i = infer_partner_choice(Low, BitState::Mixed, Party::Alice).unwrap();
        assert_eq!(i, PartnerInference { partner: High, key_bit: Some(0) });
        let i = infer_partner_choice(High, BitState::Mixed, Party::Alice).unwrap();
        assert_eq!(i, PartnerInference { partner: Low, key_bit: Some(1) });
        // Bob holding H in a mixed state means Alice holds L: LH, bit 0.
        let i = infer_partner_choice(High, BitState::Mixed, Party::Bob).unwrap();
        assert_eq!(i.key_bit, Some(0));
        let i = infer_partner_choice(Low, BitState::Ll, Party::Bob).unwrap();
        assert_eq!(i, PartnerInference { partner: Low, key_bit: None });
        assert!(matches!(
            infer_partner_choice(High, BitState::Ll, Party::Alice),
            Err(LineError::InconsistentState { .. })
        ));
        assert!(infer_partner_choice(Low, BitState::Hh, Party::Alice).is_err());
    }

    #[test]
    fn ohm_consistency_holds_per_sample() {
        let c = LineConfig::standard(1e3, 1e4, 10e3, 1e-18);
        let mut wire = WireSchedule::constant();
        wire.push_step(0.005, 1.5);
        let (a, b) = simulate_bep_at(High, Low, &c, &BepTiming::default(), &wire, 5).unwrap();
        for (i, ((va, vb), amps)) in a
            .voltage
            .samples()
            .iter()
            .zip(b.voltage.samples())
            .zip(a.current.samples())
            .enumerate()
        {
            let t = i as f64 / c.sample_rate;
            let r = c.r_wire * wire.factor_at(t);
            let reconstructed = (va - vb) / r;
            assert!((reconstructed - amps).abs() <= 1e-9 * amps.abs().max(1e-30));
        }
    }

    #[test]
    fn local_stamps_follow_clock_offsets() {
        let c = normalized();
        let timing = BepTiming {
            bep_index: 4,
            absolute_start: 0.04,
            alice_offset: 0.0,
            bob_offset: 3e-3,
        };
        let (a, b) = simulate_bep_at(Low, High, &c, &timing, &WireSchedule::constant(), 1).unwrap();
        assert_eq!(a.local_start, 0.04);
        assert!((b.local_start - 0.043).abs() < 1e-15);
        assert_eq!(b.bep_index, 4);
        assert_eq!(a.party, Party::Alice);
        assert_eq!(b.party, Party::Bob);
    }

    #[test]
    fn wire_schedule_steps() {
        let mut w = WireSchedule::constant();
        assert_eq!(w.factor_at(1.0), 1.0);
        w.push_step(2.0, 1.5);
        w.push_step(1.0, 0.5);
        assert_eq!(w.factor_at(0.5), 1.0);
        assert_eq!(w.factor_at(1.0), 0.5);
        assert_eq!(w.factor_at(3.0), 1.5);
        assert!(w.has_step_at(2.0));
    }
}
