//! Decision vocabulary shared by the single-agent and combination escalation
//! engines.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Target and overdose thresholds on the additional DLE risk over control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscalationPolicy {
    /// Target additional risk.
    pub gamma: f64,
    /// Half-width of the acceptable interval around `gamma`.
    pub delta: f64,
    /// A dose is safe while P(excess >= gamma + 2 delta) stays below this.
    pub c_overdose: f64,
}

impl Default for EscalationPolicy {
    fn default() -> Self {
        Self {
            gamma: 0.20,
            delta: 0.05,
            c_overdose: 0.25,
        }
    }
}

impl EscalationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("gamma", format!("{} not in (0, 1)", self.gamma)));
        }
        if !(self.delta > 0.0 && self.delta < self.gamma) {
            return Err(invalid("delta", format!("{} not in (0, gamma)", self.delta)));
        }
        if !(self.c_overdose > 0.0 && self.c_overdose < 1.0) {
            return Err(invalid(
                "c_overdose",
                format!("{} not in (0, 1)", self.c_overdose),
            ));
        }
        Ok(())
    }

    /// Excess risk at or above which a dose counts as an overdose.
    pub fn overdose_threshold(&self) -> f64 {
        self.gamma + 2.0 * self.delta
    }

    pub fn target_interval(&self) -> (f64, f64) {
        (self.gamma - self.delta, self.gamma + self.delta)
    }

    pub fn is_safe(&self, p_overdose: f64) -> bool {
        p_overdose < self.c_overdose
    }
}

/// Posterior summary of one active dose (or combination).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseSummary {
    /// P(excess >= gamma + 2 delta).
    pub p_overdose: f64,
    /// P(excess in [gamma - delta, gamma + delta]).
    pub p_target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision<D> {
    StopForSafety,
    Stay,
    MoveTo(D),
}

impl<D: Copy> Decision<D> {
    /// Dose for the next cohort, `None` when stopping.
    pub fn next(&self, current: D) -> Option<D> {
        match *self {
            Decision::StopForSafety => None,
            Decision::Stay => Some(current),
            Decision::MoveTo(d) => Some(d),
        }
    }
}
