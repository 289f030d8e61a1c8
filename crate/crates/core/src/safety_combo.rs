//! Dual-agent dose escalation.
//!
//! Each agent alone follows the two-parameter logistic model with a shared
//! intercept; the combination risk starts from independent action and the
//! odds are multiplied by `exp(eta * d * s)` for an interaction `eta`. The
//! parameter vector is `(theta1, log theta21, log theta22, eta)` with a
//! normal prior, and posterior probabilities are computed by importance
//! weighting of a fixed set of quasi-random prior draws.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::escalation::{Decision, DoseSummary, EscalationPolicy};
use crate::math::{in_unit_open, inv_logit, log_probs, logit, std_normal_quantile};
use crate::qmc::shifted_sobol;
use crate::safety_mono::ArmCounts;

pub const DEFAULT_DRAWS: usize = 1 << 14;
pub const DEFAULT_QMC_SEED: u64 = 0x5eed_c0b0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyPriorCombo {
    /// Means of (theta1, log theta21, log theta22, eta).
    pub mean: [f64; 4],
    /// Variances of the same components.
    pub var: [f64; 4],
    /// Cov(theta1, log theta21).
    #[serde(default)]
    pub cov_1_21: f64,
    /// Cov(theta1, log theta22).
    #[serde(default)]
    pub cov_1_22: f64,
    pub p0: f64,
    pub nu_d: f64,
    pub nu_s: f64,
}

impl SafetyPriorCombo {
    /// Prior with `mu1 = logit(p0 / 2)`, zero interaction mean and no
    /// covariances.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p0: f64,
        nu_d: f64,
        nu_s: f64,
        mu21: f64,
        mu22: f64,
        var1: f64,
        var_slope: f64,
        var_eta: f64,
    ) -> Result<Self> {
        let prior = Self {
            mean: [logit(p0 / 2.0), mu21, mu22, 0.0],
            var: [var1, var_slope, var_slope, var_eta],
            cov_1_21: 0.0,
            cov_1_22: 0.0,
            p0,
            nu_d,
            nu_s,
        };
        prior.validate()?;
        Ok(prior)
    }

    /// Hyperparameters selected by the combination calibration.
    pub fn calibrated() -> Self {
        Self::new(0.10, 0.075, 0.075, 0.0, 0.0, 0.6, 0.25, 0.10).expect("valid prior")
    }

    pub fn validate(&self) -> Result<()> {
        if !in_unit_open(self.p0) {
            return Err(invalid("p0", format!("{} not in (0, 1)", self.p0)));
        }
        if !(in_unit_open(self.nu_d) && in_unit_open(self.nu_s)) {
            return Err(invalid("nu", "ladder increments must lie in (0, 1)"));
        }
        if (self.mean[0] - logit(self.p0 / 2.0)).abs() > 1e-9 {
            return Err(invalid("mu1", "must equal logit(p0 / 2)"));
        }
        if self.cholesky().is_none() {
            return Err(invalid("covariance", "prior covariance is not positive definite"));
        }
        Ok(())
    }

    pub fn covariance(&self) -> [[f64; 4]; 4] {
        let v = self.var;
        [
            [v[0], self.cov_1_21, self.cov_1_22, 0.0],
            [self.cov_1_21, v[1], 0.0, 0.0],
            [self.cov_1_22, 0.0, v[2], 0.0],
            [0.0, 0.0, 0.0, v[3]],
        ]
    }

    /// Lower Cholesky factor of the prior covariance.
    pub fn cholesky(&self) -> Option<[[f64; 4]; 4]> {
        let a = self.covariance();
        let mut l = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    let d = a[i][i] - s;
                    if !(d > 0.0) {
                        return None;
                    }
                    l[i][i] = d.sqrt();
                } else {
                    l[i][j] = (a[i][j] - s) / l[j][j];
                }
            }
        }
        Some(l)
    }
}

/// Combination DLE probability at parameters
/// `theta = (theta1, log theta21, log theta22, eta)`.
pub fn combo_dle_probability(theta: &[f64; 4], d: f64, s: f64) -> f64 {
    inv_logit(combo_log_odds(theta, d, s))
}

fn combo_log_odds(theta: &[f64; 4], d: f64, s: f64) -> f64 {
    let (_, lq_d) = log_probs(theta[0] + theta[1].exp() * d);
    let (_, lq_s) = log_probs(theta[0] + theta[2].exp() * s);
    // independent action: log(1 - p) adds across agents
    let lq = lq_d + lq_s;
    let lp = (-lq.exp_m1()).ln();
    lp - lq + theta[3] * d * s
}

/// Grid of `a_levels x b_levels` combinations with per-agent skeletons.
/// Arm `(j, l)` with `j in 0..=a_levels`, `l in 0..=b_levels`; `(0, 0)` is
/// the control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboGrid {
    pub d: Vec<f64>,
    pub s: Vec<f64>,
}

impl ComboGrid {
    pub fn from_levels(d: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        for levels in [&d, &s] {
            if levels.first() != Some(&0.0) || levels.len() < 2 {
                return Err(invalid("skeleton", "needs a zero control and one active level"));
            }
            if levels.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(invalid("skeleton", "levels must increase strictly"));
            }
        }
        Ok(Self { d, s })
    }

    pub fn a_levels(&self) -> usize {
        self.d.len() - 1
    }

    pub fn b_levels(&self) -> usize {
        self.s.len() - 1
    }

    /// Number of (j, l) cells including single-agent and control cells.
    pub fn cells(&self) -> usize {
        self.d.len() * self.s.len()
    }

    pub fn cell(&self, j: usize, l: usize) -> usize {
        j * self.s.len() + l
    }
}

/// Per-agent levels placing the prior-mean model's risk at `(d_j, s_0)` and
/// `(d_0, s_l)` on the ladders `p0 + nu_d j` and `p0 + nu_s l`.
pub fn build_combo_skeletons(prior: &SafetyPriorCombo, a_levels: usize, b_levels: usize) -> Result<ComboGrid> {
    let q = inv_logit(prior.mean[0]);
    let solve = |nu: f64, count: usize, log_slope: f64| -> Result<Vec<f64>> {
        let mut levels = vec![0.0];
        for j in 1..=count {
            let p = prior.p0 + nu * j as f64;
            if !in_unit_open(p) {
                return Err(Error::PriorProbabilityOutOfRange { level: j, value: p });
            }
            // 1 - (1 - x)(1 - q) = p
            let x = 1.0 - (1.0 - p) / (1.0 - q);
            if !in_unit_open(x) {
                return Err(Error::PriorProbabilityOutOfRange { level: j, value: p });
            }
            levels.push((logit(x) - prior.mean[0]) / log_slope.exp());
        }
        Ok(levels)
    };
    ComboGrid::from_levels(
        solve(prior.nu_d, a_levels, prior.mean[1])?,
        solve(prior.nu_s, b_levels, prior.mean[2])?,
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafetyDataCombo {
    a_levels: usize,
    b_levels: usize,
    records: Vec<((usize, usize), bool)>,
}

impl SafetyDataCombo {
    pub fn new(grid: &ComboGrid) -> Self {
        Self {
            a_levels: grid.a_levels(),
            b_levels: grid.b_levels(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, j: usize, l: usize, dle: bool) -> Result<()> {
        if j > self.a_levels || l > self.b_levels {
            return Err(Error::ArmOutOfRange {
                arm: j * (self.b_levels + 1) + l,
                arms: (self.a_levels + 1) * (self.b_levels + 1),
            });
        }
        self.records.push(((j, l), dle));
        Ok(())
    }

    /// Counts indexed by `ComboGrid::cell`.
    pub fn counts(&self) -> ArmCounts {
        let mut counts = ArmCounts::zeros((self.a_levels + 1) * (self.b_levels + 1));
        for &((j, l), dle) in &self.records {
            counts.add(j * (self.b_levels + 1) + l, dle);
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComboQuery {
    /// P(p(d_j, s_l) - p_0 in [lower, upper]).
    Excess { j: usize, l: usize, lower: f64, upper: f64 },
    /// P(p_0 in [lower, upper]).
    Control { lower: f64, upper: f64 },
}

/// Prior draws with per-cell log-likelihood terms and excess risks,
/// reusable across any number of posterior evaluations.
#[derive(Debug, Clone)]
pub struct ComboSampler {
    grid: ComboGrid,
    draws: usize,
    /// `[draw * cells + cell]`
    log_p: Vec<f64>,
    log_q: Vec<f64>,
    excess: Vec<f64>,
    control: Vec<f64>,
}

impl ComboSampler {
    pub fn new(prior: &SafetyPriorCombo, grid: &ComboGrid, draws: usize, seed: u64) -> Result<Self> {
        let chol = prior
            .cholesky()
            .ok_or_else(|| invalid("covariance", "not positive definite"))?;
        let points = shifted_sobol(draws, 4, seed);
        let thetas = points.iter().map(|u| {
            let z: Vec<f64> = u.iter().map(|&x| std_normal_quantile(x)).collect();
            let mut theta = prior.mean;
            for i in 0..4 {
                for k in 0..=i {
                    theta[i] += chol[i][k] * z[k];
                }
            }
            theta
        });
        Ok(Self::from_draws(grid, thetas))
    }

    /// Sampler over explicit parameter draws.
    pub fn from_draws(grid: &ComboGrid, thetas: impl Iterator<Item = [f64; 4]>) -> Self {
        let cells = grid.cells();
        let mut sampler = Self {
            grid: grid.clone(),
            draws: 0,
            log_p: Vec::new(),
            log_q: Vec::new(),
            excess: Vec::new(),
            control: Vec::new(),
        };
        for theta in thetas {
            let p0 = combo_dle_probability(&theta, 0.0, 0.0);
            sampler.control.push(p0);
            for cell in 0..cells {
                let (j, l) = (cell / grid.s.len(), cell % grid.s.len());
                let x = combo_log_odds(&theta, grid.d[j], grid.s[l]);
                let (lp, lq) = log_probs(x);
                sampler.log_p.push(lp);
                sampler.log_q.push(lq);
                sampler.excess.push(inv_logit(x) - p0);
            }
            sampler.draws += 1;
        }
        sampler
    }

    pub fn grid(&self) -> &ComboGrid {
        &self.grid
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    /// Self-normalized importance weights for the given data.
    pub fn posterior(&self, counts: &ArmCounts) -> Result<ComboPosterior<'_>> {
        let cells = self.grid.cells();
        if counts.arms() != cells {
            return Err(Error::ArmOutOfRange {
                arm: counts.arms(),
                arms: cells,
            });
        }
        let observed: Vec<(usize, f64, f64)> = (0..cells)
            .filter(|&c| counts.patients[c] > 0)
            .map(|c| {
                let y = counts.dle[c] as f64;
                (c, y, counts.patients[c] as f64 - y)
            })
            .collect();
        let mut logw = vec![0.0; self.draws];
        for (i, w) in logw.iter_mut().enumerate() {
            let base = i * cells;
            for &(c, y, n) in &observed {
                *w += y * self.log_p[base + c] + n * self.log_q[base + c];
            }
        }
        let peak = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return Err(Error::Integration("all importance weights vanish".into()));
        }
        let mut total = 0.0;
        for w in logw.iter_mut() {
            *w = (*w - peak).exp();
            total += *w;
        }
        for w in logw.iter_mut() {
            *w /= total;
        }
        Ok(ComboPosterior {
            sampler: self,
            weights: logw,
        })
    }
}

pub struct ComboPosterior<'a> {
    sampler: &'a ComboSampler,
    weights: Vec<f64>,
}

impl ComboPosterior<'_> {
    pub fn probability(&self, query: &ComboQuery) -> f64 {
        let s = self.sampler;
        match *query {
            ComboQuery::Excess { j, l, lower, upper } => {
                let cell = s.grid.cell(j, l);
                let cells = s.grid.cells();
                self.weights
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| {
                        let e = s.excess[i * cells + cell];
                        e >= lower && e <= upper
                    })
                    .map(|(_, w)| w)
                    .sum()
            }
            ComboQuery::Control { lower, upper } => self
                .weights
                .iter()
                .zip(&s.control)
                .filter(|(_, &p)| p >= lower && p <= upper)
                .map(|(w, _)| w)
                .sum(),
        }
    }

    /// Kish effective sample size of the weights.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Overdose and target probabilities for every active combination in
    /// `(j, l)` row-major order.
    pub fn summarize(&self, policy: &EscalationPolicy) -> Vec<DoseSummary> {
        let g = &self.sampler.grid;
        let (lo, hi) = policy.target_interval();
        let mut out = Vec::with_capacity(g.a_levels() * g.b_levels());
        for j in 1..=g.a_levels() {
            for l in 1..=g.b_levels() {
                out.push(DoseSummary {
                    p_overdose: self.probability(&ComboQuery::Excess {
                        j,
                        l,
                        lower: policy.overdose_threshold(),
                        upper: f64::INFINITY,
                    }),
                    p_target: self.probability(&ComboQuery::Excess {
                        j,
                        l,
                        lower: lo,
                        upper: hi,
                    }),
                });
            }
        }
        out
    }
}

/// Posterior probabilities with the default draw count and seed.
pub fn combo_posterior_expectations(
    prior: &SafetyPriorCombo,
    grid: &ComboGrid,
    data: &SafetyDataCombo,
    queries: &[ComboQuery],
) -> Result<Vec<f64>> {
    let sampler = ComboSampler::new(prior, grid, DEFAULT_DRAWS, DEFAULT_QMC_SEED)?;
    let posterior = sampler.posterior(&data.counts())?;
    Ok(queries.iter().map(|q| posterior.probability(q)).collect())
}

/// Next combination among safe candidates: the current one or a one-level
/// move of a single agent. Maximizes the target criterion; ties go to the
/// lower `j + l`, then the lower `j`.
pub fn select_next_combo(
    current: (usize, usize),
    safe: &[(usize, usize)],
    criterion: impl Fn((usize, usize)) -> f64,
) -> Decision<(usize, usize)> {
    if safe.is_empty() {
        return Decision::StopForSafety;
    }
    if safe == [current] {
        return Decision::Stay;
    }
    let adjacent = |c: &(usize, usize)| c.0.abs_diff(current.0) + c.1.abs_diff(current.1) <= 1;
    let mut candidates: Vec<(usize, usize)> = safe.iter().copied().filter(adjacent).collect();
    if candidates.is_empty() {
        let distance = |c: &(usize, usize)| c.0.abs_diff(current.0) + c.1.abs_diff(current.1);
        let nearest = safe
            .iter()
            .copied()
            .min_by_key(|c| (distance(c), c.0 + c.1, c.0))
            .expect("non-empty");
        candidates.push(nearest);
    }
    candidates.sort_by_key(|c| (c.0 + c.1, c.0));
    let mut best = candidates[0];
    for &c in &candidates[1..] {
        if criterion(c) > criterion(best) {
            best = c;
        }
    }
    if best == current {
        Decision::Stay
    } else {
        Decision::MoveTo(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_anchor_matches_half_rule() {
        let prior = SafetyPriorCombo::calibrated();
        let p = combo_dle_probability(&prior.mean, 0.0, 0.0);
        assert!((p - (1.0 - 0.95f64 * 0.95)).abs() < 1e-12);
        assert!((p - 0.0975).abs() < 1e-12);
    }

    #[test]
    fn independence_when_eta_is_zero() {
        // marginals of 0.2 and 0.3 from theta1 = 0 and chosen slopes
        let d = logit(0.2) - 0.0;
        let s = logit(0.3) - 0.0;
        let theta = [0.0, 0.0, 0.0, 0.0];
        let p = combo_dle_probability(&theta, d, s);
        // with theta1 = 0 the marginals are inv_logit(d) and inv_logit(s)
        assert!((p - (1.0 - 0.8 * 0.7)).abs() < 1e-12);
    }

    #[test]
    fn synergy_raises_risk() {
        let base = [-2.0, 0.0, 0.0, 0.0];
        let syn = [-2.0, 0.0, 0.0, 0.5];
        assert!(combo_dle_probability(&syn, 1.0, 1.2) > combo_dle_probability(&base, 1.0, 1.2));
        assert_eq!(
            combo_dle_probability(&syn, 1.0, 0.0),
            combo_dle_probability(&base, 1.0, 0.0)
        );
    }

    #[test]
    fn skeletons_anchor_and_increase() {
        let prior = SafetyPriorCombo::calibrated();
        let grid = build_combo_skeletons(&prior, 2, 3).unwrap();
        assert_eq!(grid.d[0], 0.0);
        assert_eq!(grid.s[0], 0.0);
        assert!(grid.d.windows(2).all(|w| w[0] < w[1]));
        assert!(grid.s.windows(2).all(|w| w[0] < w[1]));
        let bad = SafetyPriorCombo::new(0.10, 0.5, 0.075, 0.0, 0.0, 0.6, 0.25, 0.1).unwrap();
        assert!(build_combo_skeletons(&bad, 2, 3).is_err());
    }

    #[test]
    fn selection_tie_break() {
        let crit = |c: (usize, usize)| match c {
            (1, 1) => 0.3,
            (2, 1) | (1, 2) => 0.5,
            _ => 0.0,
        };
        assert_eq!(
            select_next_combo((1, 1), &[(1, 1), (2, 1), (1, 2)], crit),
            Decision::MoveTo((1, 2))
        );
        assert_eq!(select_next_combo((1, 1), &[], crit), Decision::StopForSafety);
        assert_eq!(select_next_combo((2, 2), &[(2, 2)], crit), Decision::Stay);
        // diagonal moves are not admissible
        assert_eq!(
            select_next_combo((1, 1), &[(1, 1), (2, 2)], |c| if c == (2, 2) { 1.0 } else { 0.0 }),
            Decision::Stay
        );
    }
}
