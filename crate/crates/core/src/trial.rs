//! Trial replication on a weekly cohort timeline, and the batch runner.
//!
//! Each week one cohort of `c1` patients on an active arm and `c2` controls
//! is enrolled. DLE outcomes become known `safety_days` later and feed the
//! safety model; improvement times are complete after `follow_up_days`. A
//! dose graduates to efficacy evaluation once it is safe and two of its
//! cohorts have complete follow-up, and is reviewed again every time a
//! further cohort of it completes.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::efficacy::{
    assemble_analysis_set, posterior_efficacy_probability, stage_decision, ControlBuffer,
    ControlRecord, EfficacyConfig, StageDecision, Subject,
};
use crate::error::{invalid, Error, Result};
use crate::escalation::{Decision, DoseSummary, EscalationPolicy};
use crate::outcomes::{correlated_outcome, PatientOutcome};
use crate::safety_combo::{
    build_combo_skeletons, select_next_combo, ComboSampler, SafetyPriorCombo, DEFAULT_DRAWS,
    DEFAULT_QMC_SEED,
};
use crate::safety_mono::{
    build_skeleton, safe_dose_set, select_next_dose, summarize_doses, ArmCounts, MonoPosterior,
    SafetyPriorMono, Skeleton,
};
use crate::scenario::{classify_doses, DoseClass, Layout, Scenario};

/// Safety model as seen by the scheduler. Active arms are numbered from 1
/// as in [`Layout`]; arm 0 is control.
pub trait SafetyModel: Send + Sync {
    fn layout(&self) -> Layout;

    /// Number of cells in the count vectors passed to `summarize`.
    fn cells(&self) -> usize;

    /// Count cell of an arm.
    fn cell(&self, arm: usize) -> usize;

    /// Posterior summaries of every active arm, index `arm - 1`.
    fn summarize(&self, counts: &ArmCounts, policy: &EscalationPolicy) -> Result<Vec<DoseSummary>>;

    /// Next arm among `eligible` given the target criterion per arm.
    fn select(&self, current: usize, eligible: &[usize], p_target: &[f64]) -> Decision<usize>;

    /// Whether `lower` is no higher than `upper` in every agent.
    fn dominated(&self, lower: usize, upper: usize) -> bool;
}

#[derive(Debug, Clone)]
pub struct MonoModel {
    pub prior: SafetyPriorMono,
    pub skeleton: Skeleton,
}

impl MonoModel {
    pub fn new(prior: SafetyPriorMono, doses: usize) -> Result<Self> {
        prior.validate()?;
        let skeleton = build_skeleton(&prior, doses)?;
        Ok(Self { prior, skeleton })
    }
}

impl SafetyModel for MonoModel {
    fn layout(&self) -> Layout {
        Layout::Single {
            doses: self.skeleton.arms() - 1,
        }
    }

    fn cells(&self) -> usize {
        self.skeleton.arms()
    }

    fn cell(&self, arm: usize) -> usize {
        arm
    }

    fn summarize(&self, counts: &ArmCounts, policy: &EscalationPolicy) -> Result<Vec<DoseSummary>> {
        let posterior = MonoPosterior::fit(&self.prior, &self.skeleton, counts)?;
        Ok(summarize_doses(&posterior, policy))
    }

    fn select(&self, current: usize, eligible: &[usize], p_target: &[f64]) -> Decision<usize> {
        select_next_dose(current, eligible, p_target)
    }

    fn dominated(&self, lower: usize, upper: usize) -> bool {
        lower <= upper
    }
}

#[derive(Debug, Clone)]
pub struct ComboModel {
    layout: Layout,
    sampler: Arc<ComboSampler>,
}

impl ComboModel {
    pub fn new(prior: SafetyPriorCombo, a_levels: usize, b_levels: usize) -> Result<Self> {
        Self::with_draws(prior, a_levels, b_levels, DEFAULT_DRAWS, DEFAULT_QMC_SEED)
    }

    pub fn with_draws(
        prior: SafetyPriorCombo,
        a_levels: usize,
        b_levels: usize,
        draws: usize,
        seed: u64,
    ) -> Result<Self> {
        let grid = build_combo_skeletons(&prior, a_levels, b_levels)?;
        Ok(Self {
            layout: Layout::Combination { a_levels, b_levels },
            sampler: Arc::new(ComboSampler::new(&prior, &grid, draws, seed)?),
        })
    }

    fn pair(&self, arm: usize) -> (usize, usize) {
        self.layout.combination(arm).expect("active combination arm")
    }
}

impl SafetyModel for ComboModel {
    fn layout(&self) -> Layout {
        self.layout
    }

    fn cells(&self) -> usize {
        self.sampler.grid().cells()
    }

    fn cell(&self, arm: usize) -> usize {
        if arm == 0 {
            return 0;
        }
        let (j, l) = self.pair(arm);
        self.sampler.grid().cell(j, l)
    }

    fn summarize(&self, counts: &ArmCounts, policy: &EscalationPolicy) -> Result<Vec<DoseSummary>> {
        Ok(self.sampler.posterior(counts)?.summarize(policy))
    }

    fn select(&self, current: usize, eligible: &[usize], p_target: &[f64]) -> Decision<usize> {
        let pairs: Vec<(usize, usize)> = eligible.iter().map(|&a| self.pair(a)).collect();
        let layout = self.layout;
        let decision = select_next_combo(self.pair(current), &pairs, |(j, l)| {
            p_target[layout.arm_of(j, l) - 1]
        });
        match decision {
            Decision::StopForSafety => Decision::StopForSafety,
            Decision::Stay => Decision::Stay,
            Decision::MoveTo((j, l)) => Decision::MoveTo(layout.arm_of(j, l)),
        }
    }

    fn dominated(&self, lower: usize, upper: usize) -> bool {
        let (a, b) = (self.pair(lower), self.pair(upper));
        a.0 <= b.0 && a.1 <= b.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    /// Patients per cohort on the active arm.
    pub active_cohort: usize,
    /// Patients per cohort on control.
    pub control_cohort: usize,
    /// Maximum intake per dose level, active and control together.
    pub level_cap: usize,
    pub safety_days: u32,
    pub cohort_interval_days: u32,
    /// Pool the most recent controls of other doses into efficacy reviews.
    pub share_controls: bool,
    /// Controls from earlier candidates of the platform available to the
    /// pool at the start of the trial. They never count towards safety data
    /// or sample size.
    pub historical_controls: usize,
    /// Cohorts with efficacy data needed to graduate.
    pub graduation_cohorts: usize,
    pub schedule: Schedule,
    /// Efficacy outcomes of a cohort enter reviews only after the full
    /// follow-up; otherwise they count from the next weekly decision.
    pub efficacy_lag: bool,
    /// Keep applying the safety rule to graduated doses.
    pub monitor_graduated: bool,
    pub policy: EscalationPolicy,
    pub efficacy: EfficacyConfig,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            active_cohort: 4,
            control_cohort: 2,
            level_cap: 72,
            safety_days: 7,
            cohort_interval_days: 7,
            share_controls: true,
            historical_controls: 0,
            graduation_cohorts: 2,
            schedule: Schedule::Sequential,
            efficacy_lag: false,
            monitor_graduated: false,
            policy: EscalationPolicy::default(),
            efficacy: EfficacyConfig::default(),
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.active_cohort == 0 || self.control_cohort == 0 {
            return Err(invalid("cohort", "cohort sizes must be at least 1"));
        }
        if self.level_cap == 0 || !self.level_cap.is_multiple_of(self.cohort_size()) {
            return Err(invalid(
                "level_cap",
                format!(
                    "{} is not a positive multiple of the cohort size {}",
                    self.level_cap,
                    self.cohort_size()
                ),
            ));
        }
        if self.safety_days == 0 || self.cohort_interval_days == 0 {
            return Err(invalid("days", "safety window and cohort interval must be positive"));
        }
        if self.graduation_cohorts == 0 || self.graduation_cohorts > self.cohorts_per_level() {
            return Err(invalid("graduation_cohorts", "must lie in 1..=cohorts per level"));
        }
        self.policy.validate()?;
        self.efficacy.validate()
    }

    pub fn cohort_size(&self) -> usize {
        self.active_cohort + self.control_cohort
    }

    pub fn cohorts_per_level(&self) -> usize {
        self.level_cap / self.cohort_size()
    }

    /// Boundary-calibration stage count implied by the cap.
    pub fn max_stages(&self) -> usize {
        self.cohorts_per_level() - self.graduation_cohorts + 1
    }
}

/// How efficacy evaluation interleaves with escalation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Escalation keeps allocating the weekly cohort across every open dose,
    /// graduated ones included, and any safe dose with enough cohorts of
    /// efficacy data graduates.
    Concurrent,
    /// A dose graduates when escalation selects it and it already has enough
    /// cohorts. It then receives one cohort per review until a verdict, and
    /// escalation resumes from it afterwards.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DosePhase {
    Escalation,
    Graduated,
    StoppedSafety,
    StoppedFutility,
    StoppedEfficacy,
    /// Closed without an efficacy verdict.
    Exhausted,
}

impl DosePhase {
    fn is_open(self) -> bool {
        matches!(self, DosePhase::Escalation | DosePhase::Graduated)
    }
}

/// Final state of one active arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseOutcome {
    pub phase: DosePhase,
    /// Efficacy reviews performed.
    pub stage: usize,
    /// Reviews allowed after graduation.
    pub max_stages: usize,
    pub cohorts: usize,
    /// Active-arm patients plus the controls enrolled in its cohorts.
    pub patients: usize,
    pub last_posterior: Option<f64>,
    pub stop_day: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: u64,
    /// 0 for control.
    pub arm: usize,
    /// Active arm of the cohort the patient was enrolled in.
    pub cohort_arm: usize,
    pub enrolled_day: u32,
    pub outcome: PatientOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Enrolled {
        day: u32,
        arm: usize,
        dle: usize,
        control_dle: usize,
    },
    Safety {
        day: u32,
        p_overdose: Vec<f64>,
        p_target: Vec<f64>,
        safe: Vec<usize>,
    },
    Graduated {
        day: u32,
        arm: usize,
        complete_cohorts: usize,
    },
    Review {
        day: u32,
        arm: usize,
        stage: usize,
        max_stages: usize,
        analysed: usize,
        posterior: f64,
        decision: StageDecision,
    },
    Closed {
        day: u32,
        arm: usize,
        phase: DosePhase,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// Index `arm - 1`.
    pub doses: Vec<DoseOutcome>,
    pub recommended: Vec<usize>,
    pub stopped_for_safety: bool,
    pub total_patients: usize,
    pub duration_days: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patients: Option<Vec<PatientRecord>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEvent>>,
}

impl TrialResult {
    pub fn duration_weeks(&self) -> f64 {
        self.duration_days as f64 / 7.0
    }

    /// Arms that reached efficacy evaluation.
    pub fn graduated(&self) -> usize {
        self.doses.iter().filter(|d| d.stage > 0).count()
    }
}

/// Memo of safety summaries keyed by the data's sufficient statistics.
pub type SummaryCache = HashMap<ArmCounts, Vec<DoseSummary>>;

struct Cohort {
    arm: usize,
    day: u32,
    patients: std::ops::Range<usize>,
}

struct DoseState {
    phase: DosePhase,
    cohorts: Vec<usize>,
    stage: usize,
    max_stages: usize,
    reviewed: usize,
    last_posterior: Option<f64>,
    stop_day: Option<u32>,
}

const MAX_WEEKS: u32 = 2000;

struct Run<'a> {
    scenario: &'a Scenario,
    model: &'a dyn SafetyModel,
    cfg: &'a TrialConfig,
    rng: ChaCha8Rng,
    patients: Vec<PatientRecord>,
    historical: Vec<Subject>,
    cohorts: Vec<Cohort>,
    doses: Vec<DoseState>,
    trace: Option<Vec<TraceEvent>>,
}

impl Run<'_> {
    fn enroll(&mut self, arm: usize, day: u32) {
        let start = self.patients.len();
        let outcomes = &self.scenario.outcomes;
        let mut dle = [0usize; 2];
        for (n, on) in [(self.cfg.active_cohort, arm), (self.cfg.control_cohort, 0)] {
            for _ in 0..n {
                let outcome = correlated_outcome(
                    self.scenario.dle[on],
                    self.scenario.hazard_ratios[on],
                    outcomes,
                    &mut self.rng,
                );
                dle[(on == 0) as usize] += outcome.dle as usize;
                self.patients.push(PatientRecord {
                    id: self.patients.len() as u64,
                    arm: on,
                    cohort_arm: arm,
                    enrolled_day: day,
                    outcome,
                });
            }
        }
        self.doses[arm - 1].cohorts.push(self.cohorts.len());
        self.cohorts.push(Cohort {
            arm,
            day,
            patients: start..self.patients.len(),
        });
        self.log(|| TraceEvent::Enrolled {
            day,
            arm,
            dle: dle[0],
            control_dle: dle[1],
        });
    }

    fn log(&mut self, event: impl FnOnce() -> TraceEvent) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(event());
        }
    }

    fn close(&mut self, arm: usize, phase: DosePhase, day: u32) {
        let dose = &mut self.doses[arm - 1];
        dose.phase = phase;
        dose.stop_day = Some(day);
        self.log(|| TraceEvent::Closed { day, arm, phase });
    }

    fn safety_counts(&self, day: u32) -> ArmCounts {
        let mut counts = ArmCounts::zeros(self.model.cells());
        for p in &self.patients {
            if p.enrolled_day + self.cfg.safety_days <= day {
                counts.add(self.model.cell(p.arm), p.outcome.dle);
            }
        }
        counts
    }

    /// First day on which a cohort's efficacy outcomes can be analysed.
    fn ready_day(&self, cohort: &Cohort) -> u32 {
        cohort.day
            + if self.cfg.efficacy_lag {
                self.cfg.efficacy.follow_up_days
            } else {
                self.cfg.cohort_interval_days
            }
    }

    fn complete_cohorts(&self, arm: usize, day: u32) -> usize {
        self.doses[arm - 1]
            .cohorts
            .iter()
            .filter(|&&c| self.ready_day(&self.cohorts[c]) <= day)
            .count()
    }

    fn subject(p: &PatientRecord) -> Subject {
        Subject {
            id: p.id,
            treated: p.arm != 0,
            time: p.outcome.time,
            event: p.outcome.event,
        }
    }

    fn analysis_set(&self, arm: usize, day: u32) -> Vec<Subject> {
        let complete = |c: &Cohort| self.ready_day(c) <= day;
        let own: Vec<Subject> = self.doses[arm - 1]
            .cohorts
            .iter()
            .map(|&c| &self.cohorts[c])
            .filter(|c| complete(c))
            .flat_map(|c| self.patients[c.patients.clone()].iter().map(Self::subject))
            .collect();
        let capacity = if self.cfg.share_controls {
            self.cfg.efficacy.shared_controls
        } else {
            0
        };
        let mut buffer = ControlBuffer::new(capacity);
        if capacity > 0 {
            for &subject in &self.historical {
                buffer.push(ControlRecord {
                    subject,
                    enrolled_day: 0,
                });
            }
            for c in self.cohorts.iter().filter(|c| c.arm != arm && complete(c)) {
                for p in &self.patients[c.patients.clone()] {
                    if p.arm == 0 {
                        buffer.push(ControlRecord {
                            subject: Self::subject(p),
                            enrolled_day: p.enrolled_day,
                        });
                    }
                }
            }
        }
        assemble_analysis_set(&own, &buffer).subjects
    }

    fn review(&mut self, arm: usize, day: u32) -> Result<()> {
        let data = self.analysis_set(arm, day);
        let posterior = posterior_efficacy_probability(&data, &self.cfg.efficacy)?;
        let dose = &mut self.doses[arm - 1];
        dose.stage += 1;
        dose.last_posterior = Some(posterior);
        let (stage, max_stages) = (dose.stage, dose.max_stages);
        let decision = stage_decision(posterior, stage, max_stages, &self.cfg.efficacy.boundaries);
        self.log(|| TraceEvent::Review {
            day,
            arm,
            stage,
            max_stages,
            analysed: data.len(),
            posterior,
            decision,
        });
        let phase = match decision {
            StageDecision::Continue => return Ok(()),
            StageDecision::StopEfficacy => DosePhase::StoppedEfficacy,
            StageDecision::StopFutility => DosePhase::StoppedFutility,
        };
        self.close(arm, phase, day);
        // lower arms still in escalation are not taken further
        for lower in 1..=self.doses.len() {
            if lower != arm
                && self.doses[lower - 1].phase == DosePhase::Escalation
                && self.model.dominated(lower, arm)
            {
                self.close(lower, DosePhase::Exhausted, day);
            }
        }
        Ok(())
    }

    fn execute(mut self, cache: &mut SummaryCache, keep_patients: bool) -> Result<TrialResult> {
        if self.cfg.share_controls {
            let outcomes = &self.scenario.outcomes;
            self.historical = (0..self.cfg.historical_controls as u64)
                .map(|i| {
                    let o = correlated_outcome(self.scenario.dle[0], 1.0, outcomes, &mut self.rng);
                    Subject {
                        id: u64::MAX - i,
                        treated: false,
                        time: o.time,
                        event: o.event,
                    }
                })
                .collect();
        }
        let mut current = 1;
        let mut day = 0;
        let mut stopped_for_safety = false;
        self.enroll(current, day);
        for _ in 0..MAX_WEEKS {
            day += self.cfg.cohort_interval_days;
            let counts = self.safety_counts(day);
            let summaries = match cache.get(&counts) {
                Some(s) => s.clone(),
                None => {
                    let s = self.model.summarize(&counts, &self.cfg.policy)?;
                    cache.insert(counts, s.clone());
                    s
                }
            };
            match self.cfg.schedule {
                Schedule::Concurrent => {
                    self.step(day, &summaries, &mut current, &mut stopped_for_safety)?
                }
                Schedule::Sequential => {
                    self.step_sequential(day, &summaries, &mut current, &mut stopped_for_safety)?
                }
            }
            if stopped_for_safety || self.finished(day) {
                let patients = keep_patients.then(|| self.patients.clone());
                let mut result = self.finish(day, stopped_for_safety);
                result.patients = patients;
                return Ok(result);
            }
        }
        Err(Error::Integration(format!(
            "trial did not terminate within {MAX_WEEKS} weeks"
        )))
    }

    /// Applies the safety rule. Returns the safe set and the target
    /// criterion, or `None` when the trial stops for safety.
    fn apply_safety(
        &mut self,
        day: u32,
        summaries: &[DoseSummary],
        stopped_for_safety: &mut bool,
    ) -> Option<(Vec<usize>, Vec<f64>)> {
        let p_overdose: Vec<f64> = summaries.iter().map(|s| s.p_overdose).collect();
        let p_target: Vec<f64> = summaries.iter().map(|s| s.p_target).collect();
        let safe = safe_dose_set(&p_overdose, &self.cfg.policy);
        self.log(|| TraceEvent::Safety {
            day,
            p_overdose,
            p_target: p_target.clone(),
            safe: safe.clone(),
        });
        let arms = self.doses.len();
        let monitor = self.cfg.monitor_graduated;
        let evaluating = self.doses.iter().any(|d| d.phase == DosePhase::Graduated);
        if safe.is_empty() && (monitor || !evaluating) {
            for arm in 1..=arms {
                if self.doses[arm - 1].phase.is_open() {
                    self.close(arm, DosePhase::StoppedSafety, day);
                }
            }
            *stopped_for_safety = true;
            return None;
        }
        if monitor {
            for arm in 1..=arms {
                if self.doses[arm - 1].phase == DosePhase::Graduated && !safe.contains(&arm) {
                    self.close(arm, DosePhase::StoppedSafety, day);
                }
            }
        }
        Some((safe, p_target))
    }

    /// Reviews every graduated arm with newly analysable cohorts.
    fn review_ready(&mut self, day: u32) -> Result<()> {
        for arm in 1..=self.doses.len() {
            if self.doses[arm - 1].phase != DosePhase::Graduated {
                continue;
            }
            let complete = self.complete_cohorts(arm, day);
            if complete > self.doses[arm - 1].reviewed {
                self.doses[arm - 1].reviewed = complete;
                self.review(arm, day)?;
            }
        }
        Ok(())
    }

    fn graduate(&mut self, arm: usize, day: u32) -> Result<()> {
        let cap = self.cfg.cohorts_per_level();
        let complete = self.complete_cohorts(arm, day);
        let dose = &mut self.doses[arm - 1];
        dose.phase = DosePhase::Graduated;
        dose.max_stages = cap + 1 - complete.min(cap);
        dose.reviewed = complete;
        self.log(|| TraceEvent::Graduated {
            day,
            arm,
            complete_cohorts: complete,
        });
        self.review(arm, day)
    }

    /// Weekly decision point of the concurrent schedule. Sets `current` to
    /// the arm enrolled this week, if any.
    fn step(
        &mut self,
        day: u32,
        summaries: &[DoseSummary],
        current: &mut usize,
        stopped_for_safety: &mut bool,
    ) -> Result<()> {
        let Some((safe, p_target)) = self.apply_safety(day, summaries, stopped_for_safety) else {
            return Ok(());
        };
        self.review_ready(day)?;
        for arm in 1..=self.doses.len() {
            if self.doses[arm - 1].phase == DosePhase::Escalation
                && safe.contains(&arm)
                && self.complete_cohorts(arm, day) >= self.cfg.graduation_cohorts
            {
                self.graduate(arm, day)?;
            }
        }
        let cap = self.cfg.cohorts_per_level();
        let monitor = self.cfg.monitor_graduated;
        let eligible: Vec<usize> = (1..=self.doses.len())
            .filter(|&a| {
                let d = &self.doses[a - 1];
                let allowed = match d.phase {
                    DosePhase::Escalation => safe.contains(&a),
                    DosePhase::Graduated => !monitor || safe.contains(&a),
                    _ => false,
                };
                allowed && d.cohorts.len() < cap
            })
            .collect();
        if eligible.is_empty() {
            return Ok(());
        }
        if let Some(next) = self.model.select(*current, &eligible, &p_target).next(*current) {
            *current = next;
            self.enroll(next, day);
        }
        Ok(())
    }

    /// Weekly decision point of the sequential schedule.
    fn step_sequential(
        &mut self,
        day: u32,
        summaries: &[DoseSummary],
        current: &mut usize,
        stopped_for_safety: &mut bool,
    ) -> Result<()> {
        let Some((safe, p_target)) = self.apply_safety(day, summaries, stopped_for_safety) else {
            return Ok(());
        };
        self.review_ready(day)?;
        if let Some(arm) = (1..=self.doses.len()).find(|&a| self.doses[a - 1].phase == DosePhase::Graduated) {
            // weekly cohorts continue while earlier ones are in follow-up
            if self.doses[arm - 1].cohorts.len() < self.cfg.cohorts_per_level() {
                *current = arm;
                self.enroll(arm, day);
            }
            return Ok(());
        }
        let cap = self.cfg.cohorts_per_level();
        // a verdict at graduation hands the week back to escalation
        for _ in 0..=self.doses.len() {
            let eligible: Vec<usize> = safe
                .iter()
                .copied()
                .filter(|&a| {
                    let d = &self.doses[a - 1];
                    d.phase == DosePhase::Escalation && d.cohorts.len() < cap
                })
                .collect();
            if eligible.is_empty() {
                return Ok(());
            }
            let Some(next) = self.model.select(*current, &eligible, &p_target).next(*current) else {
                return Ok(());
            };
            *current = next;
            if self.complete_cohorts(next, day) >= self.cfg.graduation_cohorts {
                self.graduate(next, day)?;
                let dose = &self.doses[next - 1];
                if dose.phase != DosePhase::Graduated {
                    continue;
                }
                if dose.cohorts.len() >= cap {
                    return Ok(());
                }
            }
            self.enroll(next, day);
            return Ok(());
        }
        Ok(())
    }

    fn finished(&self, day: u32) -> bool {
        let enrolled_this_week = self.cohorts.last().is_some_and(|c| c.day == day);
        !enrolled_this_week && !self.doses.iter().any(|d| d.phase == DosePhase::Graduated)
    }

    fn finish(mut self, day: u32, stopped_for_safety: bool) -> TrialResult {
        for arm in 1..=self.doses.len() {
            if self.doses[arm - 1].phase.is_open() {
                self.close(arm, DosePhase::Exhausted, day);
            }
        }
        let cohort_size = self.cfg.cohort_size();
        let doses: Vec<DoseOutcome> = self
            .doses
            .iter()
            .map(|d| DoseOutcome {
                phase: d.phase,
                stage: d.stage,
                max_stages: d.max_stages,
                cohorts: d.cohorts.len(),
                patients: d.cohorts.len() * cohort_size,
                last_posterior: d.last_posterior,
                stop_day: d.stop_day,
            })
            .collect();
        let recommended = doses
            .iter()
            .enumerate()
            .filter(|(_, d)| d.phase == DosePhase::StoppedEfficacy)
            .map(|(i, _)| i + 1)
            .collect();
        TrialResult {
            doses,
            recommended,
            stopped_for_safety,
            total_patients: self.patients.len(),
            duration_days: day,
            patients: None,
            trace: self.trace,
        }
    }
}

fn check_compatible(scenario: &Scenario, model: &dyn SafetyModel, cfg: &TrialConfig) -> Result<()> {
    scenario.validate()?;
    cfg.validate()?;
    if scenario.layout != model.layout() {
        return Err(invalid(
            "scenario",
            format!(
                "`{}` has layout {:?} but the safety model expects {:?}",
                scenario.name,
                scenario.layout,
                model.layout()
            ),
        ));
    }
    if scenario.outcomes.follow_up_days != cfg.efficacy.follow_up_days {
        return Err(invalid("follow_up_days", "outcome and efficacy follow-up differ"));
    }
    Ok(())
}

/// RNG of replication `replication` under `seed`.
pub fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

fn new_run<'a>(
    scenario: &'a Scenario,
    model: &'a dyn SafetyModel,
    cfg: &'a TrialConfig,
    rng: ChaCha8Rng,
    trace: bool,
) -> Run<'a> {
    let arms = scenario.active_arms();
    Run {
        scenario,
        model,
        cfg,
        rng,
        patients: Vec::new(),
        historical: Vec::new(),
        cohorts: Vec::new(),
        doses: (0..arms)
            .map(|_| DoseState {
                phase: DosePhase::Escalation,
                cohorts: Vec::new(),
                stage: 0,
                max_stages: 0,
                reviewed: 0,
                last_posterior: None,
                stop_day: None,
            })
            .collect(),
        trace: trace.then(Vec::new),
    }
}

/// One replication.
pub fn run_trial(
    scenario: &Scenario,
    model: &dyn SafetyModel,
    cfg: &TrialConfig,
    seed: u64,
) -> Result<TrialResult> {
    check_compatible(scenario, model, cfg)?;
    new_run(scenario, model, cfg, replication_rng(seed, 0), false).execute(&mut SummaryCache::new(), false)
}

/// One replication with the full event trace and patient records.
pub fn run_trial_traced(
    scenario: &Scenario,
    model: &dyn SafetyModel,
    cfg: &TrialConfig,
    seed: u64,
) -> Result<TrialResult> {
    check_compatible(scenario, model, cfg)?;
    new_run(scenario, model, cfg, replication_rng(seed, 0), true).execute(&mut SummaryCache::new(), true)
}

/// Replication `replication` of a batch, sharing a summary memo.
pub fn run_replication(
    scenario: &Scenario,
    model: &dyn SafetyModel,
    cfg: &TrialConfig,
    seed: u64,
    replication: u64,
    cache: &mut SummaryCache,
) -> Result<TrialResult> {
    new_run(scenario, model, cfg, replication_rng(seed, replication), false).execute(cache, false)
}

/// Independent replications, collected in replication order so the output
/// does not depend on the number of threads. `threads = 0` uses the global
/// pool.
pub fn simulate_trials(
    scenario: &Scenario,
    model: &dyn SafetyModel,
    cfg: &TrialConfig,
    n_sims: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<TrialResult>> {
    check_compatible(scenario, model, cfg)?;
    if n_sims == 0 {
        return Err(invalid("n_sims", "must be at least 1"));
    }
    let work = || {
        (0..n_sims as u64)
            .into_par_iter()
            .map_init(SummaryCache::new, |cache, r| {
                run_replication(scenario, model, cfg, seed, r, cache)
            })
            .collect::<Result<Vec<_>>>()
    };
    if threads == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| invalid("threads", e.to_string()))?
            .install(work)
    }
}

pub fn run_batch(
    scenario: &Scenario,
    model: &dyn SafetyModel,
    cfg: &TrialConfig,
    n_sims: usize,
    seed: u64,
    threads: usize,
) -> Result<OperatingCharacteristics> {
    let results = simulate_trials(scenario, model, cfg, n_sims, seed, threads)?;
    Ok(OperatingCharacteristics::from_results(scenario, cfg, &results))
}

/// Safety bound on the true additional risk used to label doses.
pub fn safety_bound(policy: &EscalationPolicy) -> f64 {
    policy.overdose_threshold()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub scenario: String,
    pub n_sims: usize,
    pub classes: Vec<DoseClass>,
    /// Percentage of replications recommending each arm.
    pub recommended_pct: Vec<f64>,
    pub recommended_se: Vec<f64>,
    pub any_recommended_pct: f64,
    pub any_recommended_se: f64,
    /// `None` when the scenario has no desirable arm.
    pub all_desirable_pct: Option<f64>,
    pub any_desirable_pct: Option<f64>,
    pub any_desirable_se: Option<f64>,
    /// Every hazard ratio equals 1.
    pub null_scenario: bool,
    pub mean_patients: f64,
    pub patients_se: f64,
    pub median_patients: f64,
    pub patients_q05: f64,
    pub patients_q95: f64,
    pub min_patients: usize,
    pub max_patients: usize,
    /// Percentage of replications enrolling more than 150 patients.
    pub over_150_pct: f64,
    pub mean_duration_weeks: f64,
    pub safety_stop_pct: f64,
    /// Percentage of replications in which each arm reached efficacy
    /// evaluation.
    pub graduated_pct: Vec<f64>,
    pub futility_pct: Vec<f64>,
    pub safety_closed_pct: Vec<f64>,
}

fn pct_se(p: f64, n: usize) -> f64 {
    100.0 * (p * (1.0 - p) / n as f64).sqrt()
}

fn quantile(sorted: &[usize], q: f64) -> f64 {
    // linear interpolation between order statistics
    let h = (sorted.len() - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] as f64 + (h - lo as f64) * (sorted[hi] as f64 - sorted[lo] as f64)
}

impl OperatingCharacteristics {
    pub fn from_results(scenario: &Scenario, cfg: &TrialConfig, results: &[TrialResult]) -> Self {
        let n = results.len();
        let arms = scenario.active_arms();
        let classes = classify_doses(scenario, safety_bound(&cfg.policy));
        let frac = |f: &dyn Fn(&TrialResult) -> bool| {
            results.iter().filter(|r| f(r)).count() as f64 / n as f64
        };
        let per_arm = |f: &dyn Fn(&DoseOutcome) -> bool| -> Vec<f64> {
            (0..arms)
                .map(|a| 100.0 * frac(&|r: &TrialResult| f(&r.doses[a])))
                .collect()
        };
        let rec: Vec<f64> = (1..=arms)
            .map(|a| frac(&|r: &TrialResult| r.recommended.contains(&a)))
            .collect();
        let any = frac(&|r| !r.recommended.is_empty());
        let desirable: Vec<usize> = (1..=arms)
            .filter(|&a| classes[a - 1] == DoseClass::Desirable)
            .collect();
        let (all_d, any_d) = if desirable.is_empty() {
            (None, None)
        } else {
            (
                Some(frac(&|r| desirable.iter().all(|a| r.recommended.contains(a)))),
                Some(frac(&|r| desirable.iter().any(|a| r.recommended.contains(a)))),
            )
        };
        let mut sizes: Vec<usize> = results.iter().map(|r| r.total_patients).collect();
        sizes.sort_unstable();
        let mean = sizes.iter().sum::<usize>() as f64 / n as f64;
        let var = if n > 1 {
            sizes.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            scenario: scenario.name.clone(),
            n_sims: n,
            classes,
            recommended_pct: rec.iter().map(|p| 100.0 * p).collect(),
            recommended_se: rec.iter().map(|&p| pct_se(p, n)).collect(),
            any_recommended_pct: 100.0 * any,
            any_recommended_se: pct_se(any, n),
            all_desirable_pct: all_d.map(|p| 100.0 * p),
            any_desirable_pct: any_d.map(|p| 100.0 * p),
            any_desirable_se: any_d.map(|p| pct_se(p, n)),
            null_scenario: scenario.hazard_ratios.iter().all(|&h| h == 1.0),
            mean_patients: mean,
            patients_se: (var / n as f64).sqrt(),
            median_patients: quantile(&sizes, 0.5),
            patients_q05: quantile(&sizes, 0.05),
            patients_q95: quantile(&sizes, 0.95),
            min_patients: sizes[0],
            max_patients: sizes[n - 1],
            over_150_pct: 100.0 * frac(&|r| r.total_patients > 150),
            mean_duration_weeks: results.iter().map(|r| r.duration_weeks()).sum::<f64>() / n as f64,
            safety_stop_pct: 100.0 * frac(&|r| r.stopped_for_safety),
            graduated_pct: per_arm(&|d| d.stage > 0),
            futility_pct: per_arm(&|d| d.phase == DosePhase::StoppedFutility),
            safety_closed_pct: per_arm(&|d| d.phase == DosePhase::StoppedSafety),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::single_agent;

    fn mono() -> MonoModel {
        MonoModel::new(SafetyPriorMono::calibrated(), 3).unwrap()
    }

    #[test]
    fn same_seed_same_result() {
        let s = single_agent(1, 2).unwrap();
        let cfg = TrialConfig::default();
        let m = mono();
        let a = run_trial(&s, &m, &cfg, 11).unwrap();
        let b = run_trial(&s, &m, &cfg, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn traced_run_matches_plain_run() {
        let s = single_agent(0, 1).unwrap();
        let cfg = TrialConfig::default();
        let m = mono();
        let plain = run_trial(&s, &m, &cfg, 4).unwrap();
        let traced = run_trial_traced(&s, &m, &cfg, 4).unwrap();
        assert_eq!(plain.doses, traced.doses);
        assert_eq!(plain.total_patients, traced.patients.as_ref().unwrap().len());
        assert!(!traced.trace.unwrap().is_empty());
    }

    #[test]
    fn rejects_layout_mismatch() {
        let s = crate::scenario::combination(0, 0).unwrap();
        assert!(run_trial(&s, &mono(), &TrialConfig::default(), 1).is_err());
    }

    #[test]
    fn config_checks() {
        let mut cfg = TrialConfig::default();
        assert_eq!(cfg.cohorts_per_level(), 12);
        assert_eq!(cfg.max_stages(), 11);
        cfg.level_cap = 70;
        assert!(cfg.validate().is_err());
        let mut cfg = TrialConfig::default();
        cfg.policy.c_overdose = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        assert_eq!(quantile(&[1, 2, 3, 4], 0.5), 2.5);
        assert_eq!(quantile(&[5], 0.9), 5.0);
    }
}
