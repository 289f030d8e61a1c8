//! Simulation-based design calibration: efficacy stopping boundaries from
//! likelihood trajectories, and safety-prior hyperparameters by grid search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::efficacy::{cox_log_partial_likelihood, Subject};
use crate::error::{invalid, Error, Result};
use crate::escalation::EscalationPolicy;
use crate::math::{geometric_mean, in_unit_open, logit};
use crate::safety_combo::SafetyPriorCombo;
use crate::safety_mono::{ArmCounts, SafetyPriorMono};
use crate::scenario::{target_arm, Scenario};
use crate::trial::{ComboModel, MonoModel, SafetyModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    Null,
    Alternative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundarySearchConfig {
    pub active_cohort: usize,
    pub control_cohort: usize,
    /// External null controls present in every analysis.
    pub external_controls: usize,
    /// Maximum intake per dose, active and control.
    pub level_cap: usize,
    /// Cohorts in the first analysis.
    pub first_stage_cohorts: usize,
    pub target_hr: f64,
    pub prior_efficacy: f64,
    /// Proportion of controls improved by the end of follow-up.
    pub null_recovery: f64,
    pub follow_up_days: u32,
    /// Round event times up to whole days as the trial engine does.
    pub whole_days: bool,
    /// Weight on E(N0) + E(N1) in the criterion.
    pub lambda: f64,
    /// Type I error cap.
    pub alpha: f64,
    /// Trajectories per hypothesis.
    pub trajectories: usize,
    pub lower_range: (f64, f64),
    pub upper_range: (f64, f64),
    /// Step of the coarse pass; the fine pass uses `fine_step`.
    pub coarse_step: f64,
    pub fine_step: f64,
    /// Coarse optima refined by the fine pass.
    pub refine: usize,
}

impl Default for BoundarySearchConfig {
    fn default() -> Self {
        Self {
            active_cohort: 4,
            control_cohort: 2,
            external_controls: 30,
            level_cap: 72,
            first_stage_cohorts: 2,
            target_hr: 1.75,
            prior_efficacy: 0.5,
            null_recovery: 0.70,
            follow_up_days: 28,
            whole_days: false,
            lambda: 1.0 / 320.0,
            alpha: 0.10,
            trajectories: 20_000,
            lower_range: (0.01, 0.50),
            upper_range: (0.50, 0.99),
            coarse_step: 0.01,
            fine_step: 0.001,
            refine: 5,
        }
    }
}

impl BoundarySearchConfig {
    /// Structure `(c1, c2, n_c)` with every other setting at its default.
    pub fn structure(active_cohort: usize, control_cohort: usize, external_controls: usize) -> Self {
        Self {
            active_cohort,
            control_cohort,
            external_controls,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.active_cohort == 0 || self.control_cohort == 0 {
            return Err(invalid("cohort", "cohort sizes must be at least 1"));
        }
        let c = self.cohort_size();
        if !self.level_cap.is_multiple_of(c) || self.level_cap / c < self.first_stage_cohorts {
            return Err(invalid("level_cap", "must be a multiple of the cohort size covering the first stage"));
        }
        if self.first_stage_cohorts == 0 {
            return Err(invalid("first_stage_cohorts", "must be at least 1"));
        }
        if !(self.target_hr > 0.0) || !in_unit_open(self.prior_efficacy) || !in_unit_open(self.null_recovery) {
            return Err(invalid("hypotheses", "need hr > 0 and prior, recovery in (0, 1)"));
        }
        if !(self.lambda >= 0.0) || !in_unit_open(self.alpha) {
            return Err(invalid("criterion", "need lambda >= 0 and alpha in (0, 1)"));
        }
        if self.trajectories == 0 || self.follow_up_days == 0 {
            return Err(invalid("trajectories", "must be positive"));
        }
        let ok_range = |(a, b): (f64, f64)| in_unit_open(a) && in_unit_open(b) && a <= b;
        if !ok_range(self.lower_range) || !ok_range(self.upper_range) {
            return Err(invalid("range", "boundary ranges must lie in (0, 1)"));
        }
        if !(self.coarse_step > 0.0 && self.fine_step > 0.0) {
            return Err(invalid("step", "grid steps must be positive"));
        }
        Ok(())
    }

    pub fn cohort_size(&self) -> usize {
        self.active_cohort + self.control_cohort
    }

    pub fn stages(&self) -> usize {
        self.level_cap / self.cohort_size() - self.first_stage_cohorts + 1
    }

    /// Patients (active and control) enrolled by stage `k`, 1-based.
    pub fn sample_size(&self, k: usize) -> usize {
        (self.first_stage_cohorts + k - 1) * self.cohort_size()
    }

    fn control_rate(&self) -> f64 {
        -(1.0 - self.null_recovery).ln() / self.follow_up_days as f64
    }
}

/// Log partial likelihoods at HR 1 and the target HR after every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub log_lik_null: Vec<f64>,
    pub log_lik_alt: Vec<f64>,
}

impl Trajectory {
    pub fn log_likelihood_ratio(&self, k: usize) -> f64 {
        self.log_lik_alt[k] - self.log_lik_null[k]
    }
}

fn exponential_subject<R: Rng>(id: u64, treated: bool, rate: f64, cfg: &BoundarySearchConfig, rng: &mut R) -> Subject {
    let u: f64 = rng.random();
    let mut t = -(1.0 - u).ln() / rate;
    if cfg.whole_days {
        t = t.ceil().max(1.0);
    }
    let follow_up = cfg.follow_up_days as f64;
    let event = t <= follow_up;
    Subject {
        id,
        treated,
        time: if event { t } else { follow_up },
        event,
    }
}

/// Accrual to the last stage without early stopping. Trajectory `i` draws
/// from its own stream of `seed`, so any prefix of a larger set is
/// reproduced exactly.
pub fn simulate_likelihood_trajectories(
    cfg: &BoundarySearchConfig,
    hypothesis: Hypothesis,
    n_traj: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let stream_base = match hypothesis {
        Hypothesis::Null => 0,
        Hypothesis::Alternative => 1u64 << 40,
    };
    let hr = match hypothesis {
        Hypothesis::Null => 1.0,
        Hypothesis::Alternative => cfg.target_hr,
    };
    let rate = cfg.control_rate();
    (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream_base + i);
            let mut next_id = 0u64;
            let mut subject = |treated: bool, rate: f64, rng: &mut ChaCha8Rng| {
                next_id += 1;
                exponential_subject(next_id, treated, rate, cfg, rng)
            };
            let mut data: Vec<Subject> = (0..cfg.external_controls)
                .map(|_| subject(false, rate, &mut rng))
                .collect();
            let mut add_cohort = |data: &mut Vec<Subject>, rng: &mut ChaCha8Rng| {
                for _ in 0..cfg.active_cohort {
                    data.push(subject(true, rate * hr, rng));
                }
                for _ in 0..cfg.control_cohort {
                    data.push(subject(false, rate, rng));
                }
            };
            for _ in 0..cfg.first_stage_cohorts - 1 {
                add_cohort(&mut data, &mut rng);
            }
            let stages = cfg.stages();
            let mut traj = Trajectory {
                log_lik_null: Vec::with_capacity(stages),
                log_lik_alt: Vec::with_capacity(stages),
            };
            for _ in 0..stages {
                add_cohort(&mut data, &mut rng);
                traj.log_lik_null.push(cox_log_partial_likelihood(&data, 1.0)?);
                traj.log_lik_alt.push(cox_log_partial_likelihood(&data, cfg.target_hr)?);
            }
            Ok(traj)
        })
        .collect()
}

/// Posterior log-odds of efficacy per stage, the form every boundary
/// evaluation works on.
#[derive(Debug, Clone)]
pub struct TrajectorySet {
    pub hypothesis: Hypothesis,
    log_odds: Vec<Vec<f64>>,
}

impl TrajectorySet {
    pub fn new(hypothesis: Hypothesis, trajectories: &[Trajectory], prior_efficacy: f64) -> Self {
        let shift = logit(prior_efficacy);
        Self {
            hypothesis,
            log_odds: trajectories
                .iter()
                .map(|t| (0..t.log_lik_null.len()).map(|k| shift + t.log_likelihood_ratio(k)).collect())
                .collect(),
        }
    }

    pub fn simulate(cfg: &BoundarySearchConfig, hypothesis: Hypothesis, seed: u64) -> Result<Self> {
        let t = simulate_likelihood_trajectories(cfg, hypothesis, cfg.trajectories, seed)?;
        Ok(Self::new(hypothesis, &t, cfg.prior_efficacy))
    }

    pub fn len(&self) -> usize {
        self.log_odds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_odds.is_empty()
    }

    /// Stage (0-based) and verdict at which the boundaries stop a trajectory;
    /// `true` means efficacy.
    fn stop(&self, i: usize, lo: f64, hi: f64) -> (usize, bool) {
        let path = &self.log_odds[i];
        for (k, &x) in path.iter().enumerate() {
            if x > hi {
                return (k, true);
            }
            if x < lo {
                return (k, false);
            }
        }
        (path.len() - 1, false)
    }

    /// Rejection rate, mean sample size, and per-stage stopping proportions.
    fn operate(&self, cfg: &BoundarySearchConfig, l: f64, u: f64) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let (lo, hi) = (logit(l), logit(u));
        let stages = cfg.stages();
        let mut futility = vec![0.0; stages];
        let mut efficacy = vec![0.0; stages];
        let (mut reject, mut patients) = (0usize, 0usize);
        for i in 0..self.len() {
            let (k, eff) = self.stop(i, lo, hi);
            if eff {
                reject += 1;
                efficacy[k] += 1.0;
            } else {
                futility[k] += 1.0;
            }
            patients += cfg.sample_size(k + 1);
        }
        let n = self.len().max(1) as f64;
        futility.iter_mut().chain(efficacy.iter_mut()).for_each(|x| *x /= n);
        (reject as f64 / n, patients as f64 / n, futility, efficacy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEvaluation {
    pub lower: f64,
    pub upper: f64,
    pub type1: f64,
    pub power: f64,
    pub expected_n0: f64,
    pub expected_n1: f64,
    pub criterion: f64,
    /// Per-stage stopping proportions under the null.
    pub null_futility: Vec<f64>,
    pub null_efficacy: Vec<f64>,
    /// Per-stage stopping proportions under the alternative.
    pub alt_futility: Vec<f64>,
    pub alt_efficacy: Vec<f64>,
}

impl BoundaryEvaluation {
    pub fn feasible(&self, alpha: f64) -> bool {
        self.type1 <= alpha
    }
}

pub fn evaluate_boundaries(
    null: &TrajectorySet,
    alt: &TrajectorySet,
    l: f64,
    u: f64,
    cfg: &BoundarySearchConfig,
) -> Result<BoundaryEvaluation> {
    if !(in_unit_open(l) && in_unit_open(u) && l < u) {
        return Err(invalid("boundaries", format!("need 0 < l < u < 1, got ({l}, {u})")));
    }
    let (type1, n0, nf, ne) = null.operate(cfg, l, u);
    let (power, n1, af, ae) = alt.operate(cfg, l, u);
    Ok(BoundaryEvaluation {
        lower: l,
        upper: u,
        type1,
        power,
        expected_n0: n0,
        expected_n1: n1,
        criterion: power - cfg.lambda * (n0 + n1),
        null_futility: nf,
        null_efficacy: ne,
        alt_futility: af,
        alt_efficacy: ae,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub config: BoundarySearchConfig,
    pub seed: u64,
    pub best: BoundaryEvaluation,
    /// Every feasible pair visited by the search.
    pub feasible: Vec<BoundaryEvaluation>,
    /// Monte Carlo standard error of the power at the optimum.
    pub power_se: f64,
}

fn ladder((a, b): (f64, f64), step: f64) -> Vec<f64> {
    let n = ((b - a) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((a + i as f64 * step) * 1e6).round() / 1e6).collect()
}

/// Larger criterion, then smaller E(N0) + E(N1), then lower (l, u).
fn better(a: &BoundaryEvaluation, b: &BoundaryEvaluation) -> bool {
    let en = |e: &BoundaryEvaluation| e.expected_n0 + e.expected_n1;
    (a.criterion, -en(a), -a.lower, -a.upper)
        .partial_cmp(&(b.criterion, -en(b), -b.lower, -b.upper))
        .is_some_and(|o| o.is_gt())
}

fn search(
    null: &TrajectorySet,
    alt: &TrajectorySet,
    cfg: &BoundarySearchConfig,
    pairs: Vec<(f64, f64)>,
) -> Vec<BoundaryEvaluation> {
    pairs
        .into_par_iter()
        .filter(|(l, u)| l < u)
        .map(|(l, u)| evaluate_boundaries(null, alt, l, u, cfg).expect("pair in range"))
        .filter(|e| e.feasible(cfg.alpha))
        .collect()
}

/// Coarse grid over the full ranges, then a fine grid around the best
/// coarse pairs.
pub fn optimize_boundaries(cfg: &BoundarySearchConfig, seed: u64) -> Result<BoundaryReport> {
    cfg.validate()?;
    let null = TrajectorySet::simulate(cfg, Hypothesis::Null, seed)?;
    let alt = TrajectorySet::simulate(cfg, Hypothesis::Alternative, seed)?;
    optimize_on(cfg, &null, &alt, seed)
}

/// As [`optimize_boundaries`] on pre-simulated trajectories.
pub fn optimize_on(
    cfg: &BoundarySearchConfig,
    null: &TrajectorySet,
    alt: &TrajectorySet,
    seed: u64,
) -> Result<BoundaryReport> {
    cfg.validate()?;
    let grid = |lr: (f64, f64), ur: (f64, f64), step: f64| {
        let us = ladder(ur, step);
        ladder(lr, step)
            .into_iter()
            .flat_map(|l| us.iter().map(move |&u| (l, u)))
            .collect::<Vec<_>>()
    };
    let mut coarse = search(null, alt, cfg, grid(cfg.lower_range, cfg.upper_range, cfg.coarse_step));
    if coarse.is_empty() {
        return Err(Error::InfeasibleBoundaries { cap: cfg.alpha });
    }
    coarse.sort_by(|a, b| if better(a, b) { std::cmp::Ordering::Less } else { std::cmp::Ordering::Greater });
    let clamp = |(a, b): (f64, f64), (lo, hi): (f64, f64)| (a.max(lo), b.min(hi));
    let mut fine_pairs = Vec::new();
    for e in coarse.iter().take(cfg.refine.max(1)) {
        let w = cfg.coarse_step;
        fine_pairs.extend(grid(
            clamp((e.lower - w, e.lower + w), cfg.lower_range),
            clamp((e.upper - w, e.upper + w), cfg.upper_range),
            cfg.fine_step,
        ));
    }
    fine_pairs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    fine_pairs.dedup();
    let fine = search(null, alt, cfg, fine_pairs);
    let mut feasible = coarse;
    feasible.extend(fine);
    let best = feasible
        .iter()
        .fold(None::<&BoundaryEvaluation>, |acc, e| match acc {
            Some(b) if !better(e, b) => Some(b),
            _ => Some(e),
        })
        .expect("non-empty")
        .clone();
    let power_se = (best.power * (1.0 - best.power) / alt.len() as f64).sqrt();
    Ok(BoundaryReport {
        config: cfg.clone(),
        seed,
        best,
        feasible,
        power_se,
    })
}

/// Settings of the safety-only simulations behind prior calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyRunConfig {
    pub active_cohort: usize,
    pub control_cohort: usize,
    /// Cohorts per simulated escalation.
    pub cohorts: usize,
    pub sims_per_scenario: usize,
    pub policy: EscalationPolicy,
}

impl Default for SafetyRunConfig {
    fn default() -> Self {
        Self {
            active_cohort: 4,
            control_cohort: 2,
            cohorts: 12,
            sims_per_scenario: 500,
            policy: EscalationPolicy::default(),
        }
    }
}

/// Final pick of a safety-only escalation: the safe arm maximizing the
/// target criterion, or `None` after a safety stop.
pub fn safety_only_trial<M: SafetyModel, R: Rng>(
    model: &M,
    scenario: &Scenario,
    run: &SafetyRunConfig,
    rng: &mut R,
) -> Result<Option<usize>> {
    let mut counts = ArmCounts::zeros(model.cells());
    let mut current = 1usize;
    let draw = |arm: usize, rng: &mut R| rng.random::<f64>() < scenario.dle[arm];
    for _ in 0..run.cohorts {
        for _ in 0..run.active_cohort {
            let y = draw(current, rng);
            counts.add(model.cell(current), y);
        }
        for _ in 0..run.control_cohort {
            let y = draw(0, rng);
            counts.add(0, y);
        }
        let summary = model.summarize(&counts, &run.policy)?;
        let p_target: Vec<f64> = summary.iter().map(|s| s.p_target).collect();
        let safe: Vec<usize> = (1..=summary.len())
            .filter(|&a| run.policy.is_safe(summary[a - 1].p_overdose))
            .collect();
        match model.select(current, &safe, &p_target).next(current) {
            Some(next) => current = next,
            None => return Ok(None),
        }
    }
    let summary = model.summarize(&counts, &run.policy)?;
    Ok((1..=summary.len())
        .filter(|&a| run.policy.is_safe(summary[a - 1].p_overdose))
        .fold(None::<usize>, |best, a| match best {
            Some(b) if summary[b - 1].p_target >= summary[a - 1].p_target => Some(b),
            _ => Some(a),
        }))
}

/// Proportion of safety-only runs selecting the scenario's target arm.
pub fn target_selection_rate<M: SafetyModel>(
    model: &M,
    scenario: &Scenario,
    run: &SafetyRunConfig,
    seed: u64,
) -> Result<f64> {
    let target = target_arm(scenario, run.policy.gamma);
    let hits = (0..run.sims_per_scenario as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            Ok((safety_only_trial(model, scenario, run, &mut rng)? == Some(target)) as usize)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / run.sims_per_scenario.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperparameterGrid {
    pub p0: f64,
    pub nu: Vec<f64>,
    pub mu2: Vec<f64>,
    pub var1: Vec<f64>,
    pub var2: Vec<f64>,
}

impl Default for HyperparameterGrid {
    fn default() -> Self {
        Self {
            p0: 0.10,
            nu: vec![0.075, 0.100, 0.125, 0.150],
            mu2: vec![-0.5, -0.25, 0.0, 0.25, 0.5],
            var1: vec![0.6, 1.0, 1.4, 1.8],
            var2: vec![0.15, 0.25, 0.35, 0.45],
        }
    }
}

impl HyperparameterGrid {
    pub fn validate(&self) -> Result<()> {
        if [&self.nu, &self.mu2, &self.var1, &self.var2].iter().any(|v| v.is_empty()) {
            return Err(invalid("grid", "every hyperparameter needs at least one value"));
        }
        Ok(())
    }

    /// Grid points in lexicographic order (nu, mu2, var1, var2).
    pub fn points(&self) -> Vec<[f64; 4]> {
        let mut out = Vec::new();
        for &nu in &self.nu {
            for &mu2 in &self.mu2 {
                for &v1 in &self.var1 {
                    for &v2 in &self.var2 {
                        out.push([nu, mu2, v1, v2]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointResult {
    pub point: Vec<f64>,
    pub selection: Vec<f64>,
    pub geometric_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorCalibration {
    pub best: GridPointResult,
    pub grid: Vec<GridPointResult>,
}

fn pick(grid: Vec<GridPointResult>) -> PriorCalibration {
    // first maximizer in grid order
    let best = grid
        .iter()
        .fold(None::<&GridPointResult>, |acc, g| match acc {
            Some(b) if b.geometric_mean >= g.geometric_mean => Some(b),
            _ => Some(g),
        })
        .expect("non-empty grid")
        .clone();
    PriorCalibration { best, grid }
}

fn evaluate_point<M: SafetyModel>(
    model: &M,
    point: Vec<f64>,
    scenarios: &[Scenario],
    run: &SafetyRunConfig,
    seed: u64,
) -> Result<GridPointResult> {
    let selection = scenarios
        .iter()
        .enumerate()
        .map(|(i, s)| target_selection_rate(model, s, run, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GridPointResult {
        point,
        geometric_mean: geometric_mean(&selection),
        selection,
    })
}

/// Single-agent grid search maximizing the geometric mean of target-dose
/// selection across `scenarios`. Every grid point sees the same seeds.
pub fn calibrate_safety_prior(
    grid: &HyperparameterGrid,
    scenarios: &[Scenario],
    run: &SafetyRunConfig,
    seed: u64,
) -> Result<PriorCalibration> {
    grid.validate()?;
    let doses = scenarios
        .first()
        .ok_or_else(|| invalid("scenarios", "need at least one scenario"))?
        .active_arms();
    let results = grid
        .points()
        .into_iter()
        .map(|[nu, mu2, v1, v2]| {
            let prior = SafetyPriorMono::new(grid.p0, nu, mu2, v1, v2)?;
            let model = MonoModel::new(prior, doses)?;
            evaluate_point(&model, vec![nu, mu2, v1, v2], scenarios, run, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pick(results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComboHyperparameterGrid {
    pub p0: f64,
    pub nu: Vec<f64>,
    pub mu_slope: Vec<f64>,
    pub var1: Vec<f64>,
    pub var_slope: Vec<f64>,
    pub var_eta: Vec<f64>,
    pub draws: usize,
}

impl Default for ComboHyperparameterGrid {
    fn default() -> Self {
        Self {
            p0: 0.10,
            nu: vec![0.050, 0.075, 0.100],
            mu_slope: vec![-0.25, 0.0, 0.25],
            var1: vec![0.2, 0.6, 1.0],
            var_slope: vec![0.15, 0.25, 0.35],
            var_eta: vec![0.02, 0.04, 0.10, 0.20, 1.0],
            draws: 1 << 12,
        }
    }
}

impl ComboHyperparameterGrid {
    /// Grid points in lexicographic order (nu, mu_slope, var1, var_slope, var_eta).
    pub fn points(&self) -> Vec<[f64; 5]> {
        let mut out = Vec::new();
        for &nu in &self.nu {
            for &m in &self.mu_slope {
                for &v1 in &self.var1 {
                    for &vs in &self.var_slope {
                        for &ve in &self.var_eta {
                            out.push([nu, m, v1, vs, ve]);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Dual-agent counterpart of [`calibrate_safety_prior`], with `nu` and the
/// slope hyperparameters shared by both agents.
pub fn calibrate_combo_prior(
    grid: &ComboHyperparameterGrid,
    scenarios: &[Scenario],
    run: &SafetyRunConfig,
    seed: u64,
) -> Result<PriorCalibration> {
    let points = grid.points();
    if points.is_empty() {
        return Err(invalid("grid", "every hyperparameter needs at least one value"));
    }
    let (a, b) = match scenarios.first().map(|s| s.layout) {
        Some(crate::scenario::Layout::Combination { a_levels, b_levels }) => (a_levels, b_levels),
        _ => return Err(invalid("scenarios", "need combination scenarios")),
    };
    let results = points
        .into_iter()
        .map(|[nu, m, v1, vs, ve]| {
            let prior = SafetyPriorCombo::new(grid.p0, nu, nu, m, m, v1, vs, ve)?;
            let model = ComboModel::with_draws(prior, a, b, grid.draws, crate::safety_combo::DEFAULT_QMC_SEED)?;
            evaluate_point(&model, vec![nu, m, v1, vs, ve], scenarios, run, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pick(results))
}
