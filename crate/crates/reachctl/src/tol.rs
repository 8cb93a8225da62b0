//! Process-wide numeric tolerances.
//!
//! Geometry predicates use one absolute tolerance on O(1)-scaled data; the LP
//! layer has its own feasibility tolerance. Both can be overridden once at
//! startup (the CLI does this from `--tol-geom` / `--tol-lp`).

use std::sync::atomic::{AtomicU64, Ordering};

pub const DEFAULT_GEOM: f64 = 1e-9;
pub const DEFAULT_LP: f64 = 1e-8;
/// Margin used wherever a strict inequality has to be certified numerically.
pub const SLACK_MIN: f64 = 1e-6;
/// Constraint violation allowed along simulated trajectories.
pub const SIM: f64 = 1e-6;
/// Time resolution of event localization.
pub const EVENT_TIME: f64 = 1e-10;

static GEOM: AtomicU64 = AtomicU64::new(DEFAULT_GEOM.to_bits());
static LP: AtomicU64 = AtomicU64::new(DEFAULT_LP.to_bits());

pub fn geom() -> f64 {
    f64::from_bits(GEOM.load(Ordering::Relaxed))
}

pub fn lp() -> f64 {
    f64::from_bits(LP.load(Ordering::Relaxed))
}

pub fn set_geom(v: f64) {
    assert!(v > 0.0 && v.is_finite(), "geometry tolerance must be positive");
    GEOM.store(v.to_bits(), Ordering::Relaxed);
}

pub fn set_lp(v: f64) {
    assert!(v > 0.0 && v.is_finite(), "LP tolerance must be positive");
    LP.store(v.to_bits(), Ordering::Relaxed);
}
