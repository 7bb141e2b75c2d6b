//! Clock-offset search by cable simulation.
//!
//! The partner's record is shifted by a trial `Δt*` on its local axis and
//! fed, together with the own record, into the lumped Ohm's-law cable
//! model. The shift where simulated and measured data agree gives the
//! offset: seen from Alice, Bob's clock is ahead by `t0 = −Δt*`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timebase::Party;

use super::bepfile::BepFile;

#[derive(Debug, Error, PartialEq)]
pub enum OffsetError {
    #[error("wire resistance must be positive for the cable model, got {0}")]
    NoWireResistance(f64),
    #[error("sample rates differ: {0} vs {1}")]
    SampleRateMismatch(f64, f64),
    #[error("files must come from opposite ends of the line")]
    SameParty,
    #[error("overlap of {overlap} samples at Δt* = {dt_star:e} s is below half of {len}")]
    InsufficientOverlap { dt_star: f64, overlap: usize, len: usize },
    #[error("no record pairs to estimate from")]
    NoData,
    #[error("residual nowhere below {threshold}: minimum {} at Δt* = {:e} s", .estimate.residual, .estimate.dt_star)]
    FlatResidual { threshold: f64, estimate: Box<OffsetEstimate> },
}

/// Which measured quantity drives the cable model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelInput {
    /// Terminal voltages in, wire current compared.
    #[default]
    Voltage,
    /// Own current and partner voltage in, own terminal voltage compared.
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchParams {
    /// Grid half-width in samples.
    pub window: usize,
    /// Residual above which the line or timing is declared compromised.
    pub threshold: f64,
    pub input: ModelInput,
}

pub const DEFAULT_DETECTION_THRESHOLD: f64 = 0.01;

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            window: 100,
            threshold: DEFAULT_DETECTION_THRESHOLD,
            input: ModelInput::Voltage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    /// Refined shift of the partner record, seconds.
    pub dt_star: f64,
    /// Residual at `dt_star`.
    pub residual: f64,
    /// Best grid shift in samples.
    pub grid_shift: i64,
    /// `(Δt*, residual)` over the grid.
    pub curve: Vec<(f64, f64)>,
}

/// Residual sums for one own/partner pair at one shift.
struct Sums {
    err: f64,
    norm: f64,
    overlap: usize,
}

/// One own record paired with the partner's record.
struct Pair<'a> {
    own: &'a BepFile,
    partner: &'a BepFile,
}

impl Pair<'_> {
    /// Sums at a shift given in (possibly fractional) samples.
    fn sums(&self, shift: f64, r_wire: f64, input: ModelInput) -> Sums {
        let fs = self.own.sample_rate;
        // Position on the partner's sample axis of own sample 0 after the
        // partner record is moved by `shift` samples.
        let base = (self.own.local_start - self.partner.local_start) * fs - shift;
        let last = self.partner.len() as f64 - 1.0;
        let own_is_alice = self.own.party == Party::Alice;

        let mut sums = Sums {
            err: 0.0,
            norm: 0.0,
            overlap: 0,
        };
        for n in 0..self.own.len() {
            let p = base + n as f64;
            if p < 0.0 || p > last {
                continue;
            }
            let i = p.floor() as usize;
            let frac = p - i as f64;
            let partner_v = if frac == 0.0 || i + 1 >= self.partner.len() {
                self.partner.voltage[i]
            } else {
                self.partner.voltage[i] * (1.0 - frac) + self.partner.voltage[i + 1] * frac
            };
            let own_v = self.own.voltage[n];
            let own_i = self.own.current[n];
            let (v_alice, v_bob) = if own_is_alice {
                (own_v, partner_v)
            } else {
                (partner_v, own_v)
            };
            let (simulated, measured) = match input {
                ModelInput::Voltage => ((v_alice - v_bob) / r_wire, own_i),
                // U_cA − U_cB = I·R_wire solved for the own terminal.
                ModelInput::Current => {
                    if own_is_alice {
                        (v_bob + own_i * r_wire, own_v)
                    } else {
                        (v_alice - own_i * r_wire, own_v)
                    }
                }
            };
            let d = simulated - measured;
            sums.err += d * d;
            sums.norm += measured * measured;
            sums.overlap += 1;
        }
        sums
    }
}

struct Problem<'a> {
    pairs: Vec<Pair<'a>>,
    r_wire: f64,
    input: ModelInput,
    dt: f64,
}

impl Problem<'_> {
    /// Mean over pairs of the normalized residual at `shift` samples.
    fn residual(&self, shift: f64) -> Result<f64, OffsetError> {
        let mut total = 0.0;
        for pair in &self.pairs {
            let s = pair.sums(shift, self.r_wire, self.input);
            if 2 * s.overlap < pair.own.len() {
                return Err(OffsetError::InsufficientOverlap {
                    dt_star: shift * self.dt,
                    overlap: s.overlap,
                    len: pair.own.len(),
                });
            }
            total += if s.norm > 0.0 {
                s.err / s.norm
            } else if s.err > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
        }
        Ok(total / self.pairs.len() as f64)
    }

    /// Shifts at which the partner samples land exactly on the own grid,
    /// modulo one sample. The residual has its kinks there.
    fn phase(&self) -> f64 {
        let pair = &self.pairs[0];
        ((pair.own.local_start - pair.partner.local_start) / self.dt).rem_euclid(1.0)
    }

    /// Minimum within the unit segment `[left, left + 1]`, which must run
    /// between two kinks. Linear interpolation makes the residual quadratic
    /// in the shift there, so a parabola through the ends and the midpoint
    /// is exact away from the record edges.
    fn segment_minimum(&self, left: f64) -> Result<(f64, f64), OffsetError> {
        let r0 = self.residual(left)?;
        let rm = self.residual(left + 0.5)?;
        let r1 = self.residual(left + 1.0)?;
        let curvature = 2.0 * (r0 - 2.0 * rm + r1);
        let mut best = if r0 <= r1 { (left, r0) } else { (left + 1.0, r1) };
        if curvature > 0.0 {
            let slope = r1 - r0;
            let x = 0.5 - slope / (2.0 * curvature);
            if x > 0.0 && x < 1.0 {
                let r = self.residual(left + x)?;
                if r < best.1 {
                    best = (left + x, r);
                }
            }
        }
        Ok(best)
    }
}

/// Searches for the shift of `partner` that best explains `own`'s
/// measurement. Returns `Δt*` in seconds with its residual.
pub fn estimate_offset(
    own: &BepFile,
    partner: &BepFile,
    r_wire: f64,
    params: &SearchParams,
) -> Result<OffsetEstimate, OffsetError> {
    estimate_offset_pooled(&[(own, partner)], r_wire, params)
}

/// Like [`estimate_offset`] with the residual averaged over several BEPs
/// before minimizing.
pub fn estimate_offset_pooled(
    pairs: &[(&BepFile, &BepFile)],
    r_wire: f64,
    params: &SearchParams,
) -> Result<OffsetEstimate, OffsetError> {
    let estimate = search(pairs, r_wire, params)?;
    if !(estimate.residual <= params.threshold) {
        return Err(OffsetError::FlatResidual {
            threshold: params.threshold,
            estimate: Box::new(estimate),
        });
    }
    Ok(estimate)
}

/// The grid search and refinement without the threshold verdict.
pub fn search(
    pairs: &[(&BepFile, &BepFile)],
    r_wire: f64,
    params: &SearchParams,
) -> Result<OffsetEstimate, OffsetError> {
    if !(r_wire > 0.0) {
        return Err(OffsetError::NoWireResistance(r_wire));
    }
    let (first_own, _) = pairs.first().ok_or(OffsetError::NoData)?;
    let fs = first_own.sample_rate;
    for (own, partner) in pairs {
        if own.sample_rate != partner.sample_rate || own.sample_rate != fs {
            return Err(OffsetError::SampleRateMismatch(own.sample_rate, partner.sample_rate));
        }
        if own.party == partner.party {
            return Err(OffsetError::SameParty);
        }
    }
    let problem = Problem {
        pairs: pairs.iter().map(|(own, partner)| Pair { own, partner }).collect(),
        r_wire,
        input: params.input,
        dt: 1.0 / fs,
    };

    let w = params.window as i64;
    let mut curve = Vec::with_capacity(2 * params.window + 1);
    let mut best: Option<(i64, f64)> = None;
    for j in -w..=w {
        let r = problem.residual(j as f64)?;
        curve.push((j as f64 * problem.dt, r));
        // Equal residuals prefer the smaller shift.
        let better = match best {
            None => true,
            Some((bj, br)) => r < br || (r == br && j.abs() < bj.abs()),
        };
        if better {
            best = Some((j, r));
        }
    }
    let (grid_shift, grid_residual) = best.expect("grid is never empty");

    // Refine over the kink-to-kink segments covering [grid - 1, grid + 1].
    let phase = problem.phase();
    let mut refined = (grid_shift as f64, grid_residual);
    let first = (grid_shift as f64 - 1.0 - phase).floor() as i64;
    let last = (grid_shift as f64 + 1.0 - phase).ceil() as i64 - 1;
    for k in first..=last {
        let left = k as f64 + phase;
        if left < -w as f64 || left + 1.0 > w as f64 {
            continue;
        }
        let candidate = problem.segment_minimum(left)?;
        if candidate.1 < refined.1 {
            refined = candidate;
        }
    }

    Ok(OffsetEstimate {
        dt_star: refined.0 * problem.dt,
        residual: refined.1,
        grid_shift,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth::HashAlgorithm;
    use crate::line::{simulate_bep_at, BepTiming, LineConfig, ResistorChoice, WireSchedule};
    use crate::protocols::bepfile::build_bep_file;

    fn pair(offset_samples: f64, wire: &WireSchedule, seed: u64) -> (BepFile, BepFile, LineConfig) {
        let config = LineConfig::standard(1e3, 1e4, 10e3, 1e-18);
        let timing = BepTiming {
            bep_index: 0,
            absolute_start: 0.0,
            alice_offset: 0.0,
            bob_offset: offset_samples / config.sample_rate,
        };
        let (a, b) = simulate_bep_at(
            ResistorChoice::High,
            ResistorChoice::Low,
            &config,
            &timing,
            wire,
            seed,
        )
        .unwrap();
        (
            build_bep_file(&a, &config, HashAlgorithm::Sha256).unwrap(),
            build_bep_file(&b, &config, HashAlgorithm::Sha256).unwrap(),
            config,
        )
    }

    #[test]
    fn synchronized_files_give_zero_shift() {
        let (a, b, c) = pair(0.0, &WireSchedule::constant(), 1);
        let est = estimate_offset(&a, &b, c.r_wire, &SearchParams::default()).unwrap();
        assert_eq!(est.grid_shift, 0);
        assert!(est.dt_star.abs() < 1e-9);
        assert!(est.residual < 1e-6, "{}", est.residual);
        assert_eq!(est.curve.len(), 201);
    }

    #[test]
    fn bob_ahead_three_samples() {
        let (a, b, c) = pair(3.0, &WireSchedule::constant(), 2);
        let est = estimate_offset(&a, &b, c.r_wire, &SearchParams::default()).unwrap();
        assert_eq!(est.grid_shift, -3);
        let t0_est = -est.dt_star;
        assert!((t0_est * c.sample_rate - 3.0).abs() < 1.0);
    }

    #[test]
    fn fractional_offset_is_found_on_a_kink() {
        for frac in [0.25, 0.5, 0.9] {
            let (a, b, c) = pair(-6.0 + frac, &WireSchedule::constant(), 9);
            let est = estimate_offset(&a, &b, c.r_wire, &SearchParams::default()).unwrap();
            let t0_samples = -est.dt_star * c.sample_rate;
            assert!((t0_samples - (-6.0 + frac)).abs() < 1e-3, "{t0_samples}");
            assert!(est.residual < 1e-12, "{}", est.residual);
        }
    }

    #[test]
    fn both_sides_see_opposite_shifts() {
        let (a, b, c) = pair(-7.0, &WireSchedule::constant(), 3);
        let p = SearchParams::default();
        let alice = estimate_offset(&a, &b, c.r_wire, &p).unwrap();
        let bob = estimate_offset(&b, &a, c.r_wire, &p).unwrap();
        assert!(((alice.dt_star + bob.dt_star) * c.sample_rate).abs() < 1.0);
        assert!((bob.dt_star * c.sample_rate + 7.0).abs() < 0.01);
    }

    #[test]
    fn current_input_agrees_with_voltage_input() {
        let (a, b, c) = pair(5.0, &WireSchedule::constant(), 4);
        let v = estimate_offset(&a, &b, c.r_wire, &SearchParams::default()).unwrap();
        let i = estimate_offset(
            &a,
            &b,
            c.r_wire,
            &SearchParams {
                input: ModelInput::Current,
                ..SearchParams::default()
            },
        )
        .unwrap();
        assert!(((v.dt_star - i.dt_star) * c.sample_rate).abs() < 1.0);
    }

    #[test]
    fn line_modification_leaves_no_good_shift() {
        let mut wire = WireSchedule::constant();
        wire.push_step(0.005, 1.5);
        let (a, b, c) = pair(0.0, &wire, 5);
        match estimate_offset(&a, &b, c.r_wire, &SearchParams::default()) {
            Err(OffsetError::FlatResidual { estimate, .. }) => {
                assert!(estimate.residual > 0.01, "{}", estimate.residual);
                assert!(estimate.curve.iter().all(|p| p.1 > 0.01));
            }
            other => panic!("expected flat residual, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (a, b, _) = pair(0.0, &WireSchedule::constant(), 6);
        let p = SearchParams::default();
        assert_eq!(estimate_offset(&a, &b, 0.0, &p), Err(OffsetError::NoWireResistance(0.0)));
        assert_eq!(estimate_offset(&a, &a, 10.0, &p), Err(OffsetError::SameParty));
        let mut wide = p;
        wide.window = 1500;
        assert!(matches!(
            estimate_offset(&a, &b, 10.0, &wide),
            Err(OffsetError::InsufficientOverlap { .. })
        ));
        let mut other = b.clone();
        other.sample_rate *= 2.0;
        assert!(matches!(
            estimate_offset(&a, &other, 10.0, &p),
            Err(OffsetError::SampleRateMismatch(..))
        ));
    }
}
