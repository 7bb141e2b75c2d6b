//! Mean-square line statistics against an independent divider model.

use kljn_sync::line::{
    classify_bep, infer_partner_choice, simulate_bep, BitState, LineConfig, ResistorChoice,
};
use kljn_sync::rng::stream_rng;
use kljn_sync::timebase::Party;
use rand::Rng;

use ResistorChoice::{High, Low};

fn line() -> LineConfig {
    LineConfig::standard(1e3, 1e4, 1e4, 1e-18)
}

/// Mean-square terminal voltages and loop current for two Johnson sources
/// of density `k·R` joined through a wire `rw`, derived from superposition:
/// each source contributes through its own divider ratio.
fn divider(k_b: f64, ra: f64, rb: f64, rw: f64) -> (f64, f64, f64) {
    let (pa, pb) = (k_b * ra, k_b * rb);
    let total = ra + rb + rw;
    let va = (pa * (rb + rw).powi(2) + pb * ra * ra) / (total * total);
    let vb = (pb * (ra + rw).powi(2) + pa * rb * rb) / (total * total);
    let i = (pa + pb) / (total * total);
    (va, vb, i)
}

fn averaged(a: ResistorChoice, b: ResistorChoice, config: &LineConfig, beps: u64) -> (f64, f64, f64) {
    let mut sums = (0.0, 0.0, 0.0);
    for k in 0..beps {
        let (alice, bob) = simulate_bep(a, b, config, 1000 + k).unwrap();
        sums.0 += alice.msq_voltage;
        sums.1 += bob.msq_voltage;
        sums.2 += alice.msq_current;
        assert_eq!(alice.msq_current, bob.msq_current);
    }
    let n = beps as f64;
    (sums.0 / n, sums.1 / n, sums.2 / n)
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want
}

#[test]
fn mean_squares_follow_the_divider_for_every_state() {
    let config = line();
    let k_b = config.noise_scale * config.bandwidth;
    for (a, b) in [(Low, Low), (Low, High), (High, Low), (High, High)] {
        let (va, vb, i) = averaged(a, b, &config, 40);
        let (ra, rb) = (config.resistance(a), config.resistance(b));
        let (wa, wb, wi) = divider(k_b, ra, rb, config.r_wire);
        for (what, got, want) in [("U_A", va, wa), ("U_B", vb, wb), ("I", i, wi)] {
            assert!(rel(got, want) < 0.05, "{a:?}{b:?} {what}: {got:e} vs {want:e}");
        }
    }
}

#[test]
fn mixed_states_are_indistinguishable() {
    let config = line();
    let (lh_v, _, lh_i) = averaged(Low, High, &config, 40);
    let (hl_v, _, hl_i) = averaged(High, Low, &config, 40);
    // With the wire neglected LH and HL give identical statistics; a 1 %
    // wire leaves well under the sampling scatter.
    assert!(rel(lh_v, hl_v) < 0.06, "{lh_v:e} vs {hl_v:e}");
    assert!(rel(lh_i, hl_i) < 0.06, "{lh_i:e} vs {hl_i:e}");
    let mixed = config.levels().voltage[1];
    assert!(rel(lh_v, mixed) < 0.05 && rel(hl_v, mixed) < 0.05);
}

#[test]
fn analytic_levels_match_the_wireless_divider() {
    let mut config = line();
    config.r_wire = 0.0;
    let k_b = config.noise_scale * config.bandwidth;
    let levels = config.levels();
    for (idx, (a, b)) in [(1e3, 1e3), (1e3, 1e4), (1e4, 1e4)].into_iter().enumerate() {
        let (va, vb, i) = divider(k_b, a, b, 0.0);
        assert!(rel(levels.voltage[idx], va) < 1e-12);
        assert!(rel(levels.voltage[idx], vb) < 1e-12);
        assert!(rel(levels.current[idx], i) < 1e-12);
    }
}

#[test]
fn random_choices_yield_agreed_keys() {
    let config = line();
    let mut rng = stream_rng(77, 0);
    let mut mixed = 0;
    let mut guarded = 0;
    let total = 300;
    for k in 0..total {
        let a = ResistorChoice::from_bit(rng.random());
        let b = ResistorChoice::from_bit(rng.random());
        let (ma, mb) = simulate_bep(a, b, &config, 5000 + k).unwrap();
        // BEPs inside the guard band are discarded by either side.
        let (Ok(sa), Ok(sb)) = (classify_bep(&ma, &config), classify_bep(&mb, &config)) else {
            guarded += 1;
            continue;
        };
        assert_eq!(sa, BitState::of(a, b), "BEP {k}");
        assert_eq!(sb, sa, "BEP {k}");
        let ia = infer_partner_choice(a, sa, Party::Alice).unwrap();
        let ib = infer_partner_choice(b, sb, Party::Bob).unwrap();
        assert_eq!(ia.partner, b);
        assert_eq!(ib.partner, a);
        assert_eq!(ia.key_bit, ib.key_bit);
        if let Some(bit) = ia.key_bit {
            mixed += 1;
            assert_eq!(bit, u8::from(a == High));
        }
    }
    assert!(guarded < total / 10, "{guarded} of {total} BEPs in the guard band");
    // Binomial(kept, 1/2): five standard deviations is under 45.
    let kept = (total - guarded) as i64;
    assert!((2 * mixed - kept).abs() < 90, "{mixed} mixed of {kept}");
}
