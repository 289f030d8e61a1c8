//! Sequential efficacy evaluation on time-to-improvement.
//!
//! A two-point prior on the hazard ratio (1 or the target) turns the
//! posterior into a likelihood-ratio update of the prior odds, with the Cox
//! partial likelihood (Breslow ties) standing in for the likelihood.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math::{in_unit_open, inv_logit, logit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: u64,
    pub treated: bool,
    /// Day of improvement, or the end of follow-up when censored.
    pub time: f64,
    /// `true` when improvement was observed.
    pub event: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    pub subjects: Vec<Subject>,
}

impl SurvivalDataset {
    pub fn new(subjects: Vec<Subject>) -> Self {
        Self { subjects }
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn events(&self) -> usize {
        self.subjects.iter().filter(|s| s.event).count()
    }
}

/// Cox log partial likelihood at a fixed hazard ratio for the treatment
/// indicator, Breslow approximation for tied event times.
pub fn cox_log_partial_likelihood(data: &[Subject], hr: f64) -> Result<f64> {
    if !(hr > 0.0 && hr.is_finite()) {
        return Err(invalid("hr", format!("hazard ratio {hr} must be positive")));
    }
    Ok(log_partial_likelihood_unchecked(data, hr.ln()))
}

fn log_partial_likelihood_unchecked(data: &[Subject], log_hr: f64) -> f64 {
    let mut order: Vec<&Subject> = data.iter().collect();
    order.sort_by(|a, b| b.time.total_cmp(&a.time));
    let hr = log_hr.exp();
    let (mut at_risk_treated, mut at_risk_control) = (0usize, 0usize);
    let mut total = 0.0;
    let mut i = 0;
    while i < order.len() {
        // every subject sharing this time enters the risk set first
        let t = order[i].time;
        let mut j = i;
        let (mut events, mut treated_events) = (0usize, 0usize);
        while j < order.len() && order[j].time == t {
            let s = order[j];
            if s.treated {
                at_risk_treated += 1;
            } else {
                at_risk_control += 1;
            }
            if s.event {
                events += 1;
                treated_events += s.treated as usize;
            }
            j += 1;
        }
        if events > 0 {
            let denom = hr * at_risk_treated as f64 + at_risk_control as f64;
            total += treated_events as f64 * log_hr - events as f64 * denom.ln();
        }
        i = j;
    }
    total
}

/// log L(hr) - log L(1).
pub fn log_likelihood_ratio(data: &[Subject], hr: f64) -> Result<f64> {
    Ok(cox_log_partial_likelihood(data, hr)? - cox_log_partial_likelihood(data, 1.0)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingBoundaries {
    pub lower: f64,
    pub upper: f64,
}

impl StoppingBoundaries {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower > 0.0 && self.lower < self.upper && self.upper < 1.0) {
            return Err(invalid(
                "boundaries",
                format!("need 0 < l < u < 1, got ({}, {})", self.lower, self.upper),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficacyConfig {
    /// Hazard ratio of improvement that counts as efficacious.
    pub target_hr: f64,
    /// Prior probability that the dose is efficacious.
    pub prior_efficacy: f64,
    pub boundaries: StoppingBoundaries,
    /// Maximum number of analyses.
    pub max_stages: usize,
    /// Cap on the number of pooled controls.
    pub shared_controls: usize,
    pub follow_up_days: u32,
}

impl Default for EfficacyConfig {
    fn default() -> Self {
        Self {
            target_hr: 1.75,
            prior_efficacy: 0.5,
            boundaries: StoppingBoundaries {
                lower: 0.224,
                upper: 0.839,
            },
            max_stages: 12,
            shared_controls: 30,
            follow_up_days: 28,
        }
    }
}

impl EfficacyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_hr > 0.0 && self.target_hr.is_finite()) {
            return Err(invalid("target_hr", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.prior_efficacy) {
            return Err(invalid("prior_efficacy", "must lie in [0, 1]"));
        }
        self.boundaries.validate()?;
        if self.max_stages == 0 {
            return Err(invalid("max_stages", "must be at least 1"));
        }
        if self.follow_up_days == 0 {
            return Err(invalid("follow_up_days", "must be at least 1"));
        }
        Ok(())
    }
}

/// Posterior probability from a log-likelihood ratio and prior probability,
/// computed on the log-odds scale.
pub fn posterior_from_llr(llr: f64, prior_efficacy: f64) -> f64 {
    if prior_efficacy <= 0.0 {
        return 0.0;
    }
    if prior_efficacy >= 1.0 {
        return 1.0;
    }
    inv_logit(logit(prior_efficacy) + llr)
}

pub fn posterior_efficacy_probability(data: &[Subject], cfg: &EfficacyConfig) -> Result<f64> {
    let llr = log_likelihood_ratio(data, cfg.target_hr)?;
    Ok(posterior_from_llr(llr, cfg.prior_efficacy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageDecision {
    StopFutility,
    StopEfficacy,
    Continue,
}

/// Decision at analysis `k` of at most `max_stages`. At the last analysis
/// anything short of the upper boundary is futility.
pub fn stage_decision(
    posterior: f64,
    k: usize,
    max_stages: usize,
    bounds: &StoppingBoundaries,
) -> StageDecision {
    debug_assert!(k >= 1 && k <= max_stages);
    if posterior > bounds.upper {
        StageDecision::StopEfficacy
    } else if posterior < bounds.lower || k >= max_stages {
        StageDecision::StopFutility
    } else {
        StageDecision::Continue
    }
}

/// Boundaries that give the same decisions under a different point prior.
pub fn translate_boundaries(
    bounds: &StoppingBoundaries,
    prior_old: f64,
    prior_new: f64,
) -> Result<StoppingBoundaries> {
    for (name, p) in [
        ("lower", bounds.lower),
        ("upper", bounds.upper),
        ("prior_old", prior_old),
        ("prior_new", prior_new),
    ] {
        if !in_unit_open(p) {
            return Err(invalid("translate_boundaries", format!("{name}={p} not in (0, 1)")));
        }
    }
    let shift = logit(prior_new) - logit(prior_old);
    if shift == 0.0 {
        return Ok(*bounds);
    }
    Ok(StoppingBoundaries {
        lower: inv_logit(logit(bounds.lower) + shift),
        upper: inv_logit(logit(bounds.upper) + shift),
    })
}

/// A control subject with the context needed for pooling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlRecord {
    pub subject: Subject,
    pub enrolled_day: u32,
}

/// Most recent controls, oldest evicted first.
#[derive(Debug, Clone, Default)]
pub struct ControlBuffer {
    capacity: usize,
    records: VecDeque<ControlRecord>,
}

impl ControlBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            records: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Insert a record keeping enrollment order; equal days keep insertion
    /// order.
    pub fn push(&mut self, record: ControlRecord) {
        if self.capacity == 0 {
            return;
        }
        let pos = self
            .records
            .iter()
            .rposition(|r| r.enrolled_day <= record.enrolled_day)
            .map_or(0, |p| p + 1);
        self.records.insert(pos, record);
        while self.records.len() > self.capacity {
            self.records.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ControlRecord> {
        self.records.iter()
    }
}

/// Dose's own subjects plus the buffered controls, each subject once.
pub fn assemble_analysis_set(own: &[Subject], buffer: &ControlBuffer) -> SurvivalDataset {
    let mut seen: HashSet<u64> = own.iter().map(|s| s.id).collect();
    let mut subjects = own.to_vec();
    for record in buffer.iter() {
        if seen.insert(record.subject.id) {
            subjects.push(record.subject);
        }
    }
    SurvivalDataset { subjects }
}
