//! Clock synchronization for the Kirchhoff-law-Johnson-noise key exchange:
//! a line simulator, the undefended, authenticated and integrity-checked
//! synchronization protocols, an adversary toolkit and a scenario harness.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod auth;
pub mod harness;
pub mod line;
pub mod noise;
pub mod protocols;
pub mod rng;
pub mod timebase;
