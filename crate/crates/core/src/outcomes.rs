//! Correlated (DLE, time-to-improvement) outcome generation.
//!
//! A bivariate normal pair `(Z1, Z2)` with correlation `rho` drives both
//! endpoints: a DLE occurs when `Phi(Z1) < p_tox`, and `Phi(Z2)` is the
//! quantile of the Weibull improvement-time distribution. With `rho > 0`
//! toxicity goes together with early improvement; a negative `rho` flips
//! that pairing.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math::std_normal_cdf;

/// Weibull rate of improvement on control.
pub const CONTROL_RATE: f64 = 0.085;
/// Weibull shape of improvement on control.
pub const CONTROL_SHAPE: f64 = 0.797;
pub const DEFAULT_RHO: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientOutcome {
    pub dle: bool,
    /// Whole day of improvement, or the follow-up horizon when censored.
    pub time: f64,
    pub event: bool,
}

/// Shared outcome-generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModel {
    pub control_rate: f64,
    pub control_shape: f64,
    pub rho: f64,
    pub follow_up_days: u32,
}

impl Default for OutcomeModel {
    fn default() -> Self {
        Self {
            control_rate: CONTROL_RATE,
            control_shape: CONTROL_SHAPE,
            rho: DEFAULT_RHO,
            follow_up_days: 28,
        }
    }
}

impl OutcomeModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.control_rate > 0.0 && self.control_shape > 0.0) {
            return Err(invalid("weibull", "rate and shape must be positive"));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(invalid("rho", format!("{} not in [-1, 1]", self.rho)));
        }
        if self.follow_up_days == 0 {
            return Err(invalid("follow_up_days", "must be at least 1"));
        }
        Ok(())
    }

    /// P(improvement by the end of follow-up) at hazard ratio `hr`.
    pub fn improvement_probability(&self, hr: f64) -> f64 {
        1.0 - weibull_survival(
            self.control_rate,
            self.control_shape,
            hr,
            self.follow_up_days as f64,
        )
    }
}

/// S(t) = exp(-hr * rate * t^shape).
pub fn weibull_survival(rate: f64, shape: f64, hr: f64, t: f64) -> f64 {
    (-hr * rate * t.powf(shape)).exp()
}

/// Improvement time for the quantile `draw` in (0, 1), rounded up to whole
/// days and censored at `follow_up` days. Returns `(time, event)`.
pub fn weibull_improvement_time(
    rate: f64,
    shape: f64,
    hr: f64,
    draw: f64,
    follow_up: u32,
) -> (f64, bool) {
    let t = (-(-draw).ln_1p() / (hr * rate)).powf(1.0 / shape);
    let day = t.ceil().max(1.0);
    if day > follow_up as f64 || !day.is_finite() {
        (follow_up as f64, false)
    } else {
        (day, true)
    }
}

/// Latent bivariate normal pair with correlation `rho`.
pub fn latent_pair<R: Rng + ?Sized>(rho: f64, rng: &mut R) -> (f64, f64) {
    let z1: f64 = rng.sample(StandardNormal);
    let e: f64 = rng.sample(StandardNormal);
    (z1, rho * z1 + (1.0 - rho * rho).max(0.0).sqrt() * e)
}

/// One patient's correlated outcomes.
pub fn correlated_outcome<R: Rng + ?Sized>(
    p_tox: f64,
    hr: f64,
    model: &OutcomeModel,
    rng: &mut R,
) -> PatientOutcome {
    let (z1, z2) = latent_pair(model.rho, rng);
    outcome_from_latent(p_tox, hr, model, z1, z2)
}

pub fn outcome_from_latent(
    p_tox: f64,
    hr: f64,
    model: &OutcomeModel,
    z1: f64,
    z2: f64,
) -> PatientOutcome {
    let dle = std_normal_cdf(z1) < p_tox;
    let (time, event) = weibull_improvement_time(
        model.control_rate,
        model.control_shape,
        hr,
        std_normal_cdf(z2),
        model.follow_up_days,
    );
    PatientOutcome { dle, time, event }
}
