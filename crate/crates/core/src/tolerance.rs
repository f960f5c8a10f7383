//! Numerical thresholds shared across the crate.
//!
//! Every module reads its thresholds from [`Tolerances`]; tests construct a
//! tightened copy instead of patching constants.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative symmetry tolerance for SPD inputs.
    pub symmetry: f64,
    /// Eigenvalues below `-psd_clip * lambda_max` mean "not PSD"; those above are clipped to 0.
    pub psd_clip: f64,
    /// Kalman-matrix rank threshold relative to the largest singular value.
    pub controllability: f64,
    /// PSD-order slack when checking Gramian monotonicity along a grid.
    pub gramian_monotone: f64,
    /// Slack for pairings and Jacobian eigenvalues in the monotonicity certificate.
    pub monotone: f64,
    /// Newton residual target for K_t inversion, scaled by `1 + |x|`.
    pub newton: f64,
    pub newton_max_iter: usize,
    pub fallback_max_iter: usize,
    /// Injectivity probe skips `t < probe_min_fraction * T`.
    pub probe_min_fraction: f64,
    /// Feedback is never evaluated closer than this to the horizon.
    pub horizon_guard: f64,
    /// Spectral radius slack for `W(0,t) W(0,T)^{-1}`.
    pub radius_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            symmetry: 1e-12,
            psd_clip: 1e-12,
            controllability: 1e-10,
            gramian_monotone: 1e-10,
            monotone: 1e-10,
            newton: 1e-10,
            newton_max_iter: 50,
            fallback_max_iter: 20_000,
            probe_min_fraction: 1e-3,
            horizon_guard: 1e-9,
            radius_slack: 1e-9,
        }
    }
}
