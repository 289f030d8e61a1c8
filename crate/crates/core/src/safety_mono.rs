//! Single-agent randomized Bayesian dose escalation.
//!
//! The DLE probability at standardized level `d` is
//! `inv_logit(theta1 + theta2 * d)` with `(theta1, log theta2)` bivariate
//! normal a priori. The control arm sits at `d = 0`, so its risk depends on
//! the intercept only. Decisions are driven by posterior probabilities of
//! the additional risk `p_j - p_0` falling in fixed intervals.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::escalation::{Decision, DoseSummary, EscalationPolicy};
use crate::math::{in_unit_open, inv_logit, log_probs, logit};

/// `m` active doses plus the control at index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DoseGrid {
    m: usize,
}

impl DoseGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(invalid("m", "at least one active dose is required"));
        }
        Ok(Self { m })
    }

    pub fn active_doses(&self) -> usize {
        self.m
    }

    /// Active doses and the control.
    pub fn arms(&self) -> usize {
        self.m + 1
    }
}

/// Prior on `(theta1, log theta2)` together with the prior DLE ladder
/// `p0 + nu * j` used to place the skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyPriorMono {
    pub mu1: f64,
    pub mu2: f64,
    /// Variance of theta1.
    pub var1: f64,
    /// Variance of log theta2.
    pub var2: f64,
    #[serde(default)]
    pub cov12: f64,
    pub p0: f64,
    pub nu: f64,
}

impl SafetyPriorMono {
    /// Prior with `mu1 = logit(p0)` and zero covariance.
    pub fn new(p0: f64, nu: f64, mu2: f64, var1: f64, var2: f64) -> Result<Self> {
        let prior = Self {
            mu1: logit(p0),
            mu2,
            var1,
            var2,
            cov12: 0.0,
            p0,
            nu,
        };
        prior.validate()?;
        Ok(prior)
    }

    /// Hyperparameters selected by the safety calibration for three doses.
    pub fn calibrated() -> Self {
        Self::new(0.10, 0.125, -0.25, 1.40, 0.35).expect("calibrated prior is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if !in_unit_open(self.p0) {
            return Err(invalid("p0", format!("{} not in (0, 1)", self.p0)));
        }
        if !in_unit_open(self.nu) {
            return Err(invalid("nu", format!("{} not in (0, 1)", self.nu)));
        }
        if (self.mu1 - logit(self.p0)).abs() > 1e-9 {
            return Err(invalid("mu1", "must equal logit(p0) so the control sits at 0"));
        }
        if !(self.var1 > 0.0 && self.var2 > 0.0) {
            return Err(invalid("var", "prior variances must be positive"));
        }
        if self.var1 * self.var2 - self.cov12 * self.cov12 <= 0.0 {
            return Err(invalid("cov12", "prior covariance is not positive definite"));
        }
        if !(self.mu2.is_finite()) {
            return Err(invalid("mu2", "must be finite"));
        }
        Ok(())
    }

    /// Prior DLE probabilities `p0 + nu * j` for `j = 0..=m`.
    pub fn prior_ladder(&self, m: usize) -> Result<Vec<f64>> {
        (0..=m)
            .map(|j| {
                let p = self.p0 + self.nu * j as f64;
                if in_unit_open(p) {
                    Ok(p)
                } else {
                    Err(Error::PriorProbabilityOutOfRange { level: j, value: p })
                }
            })
            .collect()
    }

    fn precision(&self) -> [f64; 3] {
        let det = self.var1 * self.var2 - self.cov12 * self.cov12;
        [self.var2 / det, -self.cov12 / det, self.var1 / det]
    }
}

/// Standardized dose levels, control first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton(Vec<f64>);

impl Skeleton {
    pub fn from_levels(levels: Vec<f64>) -> Result<Self> {
        if levels.first() != Some(&0.0) {
            return Err(invalid("skeleton", "control level must be exactly 0"));
        }
        if levels.iter().skip(1).any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(invalid("skeleton", "active levels must be positive"));
        }
        Ok(Self(levels))
    }

    pub fn levels(&self) -> &[f64] {
        &self.0
    }

    pub fn arms(&self) -> usize {
        self.0.len()
    }
}

/// Back-solve the standardized levels so the prior-mean model reproduces the
/// prior DLE ladder.
pub fn build_skeleton(prior: &SafetyPriorMono, m: usize) -> Result<Skeleton> {
    let ladder = prior.prior_ladder(m)?;
    let slope = prior.mu2.exp();
    let mut levels: Vec<f64> = ladder
        .iter()
        .map(|&p| (logit(p) - prior.mu1) / slope)
        .collect();
    levels[0] = 0.0;
    Ok(Skeleton(levels))
}

/// Two-parameter logistic DLE probability.
pub fn dle_probability(theta1: f64, theta2: f64, d: f64) -> f64 {
    inv_logit(theta1 + theta2 * d)
}

/// Binary DLE outcomes by arm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafetyDataMono {
    arms: usize,
    records: Vec<(usize, bool)>,
}

impl SafetyDataMono {
    pub fn new(grid: DoseGrid) -> Self {
        Self {
            arms: grid.arms(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, arm: usize, dle: bool) -> Result<()> {
        if arm >= self.arms {
            return Err(Error::ArmOutOfRange {
                arm,
                arms: self.arms,
            });
        }
        self.records.push((arm, dle));
        Ok(())
    }

    pub fn records(&self) -> &[(usize, bool)] {
        &self.records
    }

    pub fn counts(&self) -> ArmCounts {
        let mut counts = ArmCounts::zeros(self.arms);
        for &(arm, dle) in &self.records {
            counts.add(arm, dle);
        }
        counts
    }
}

/// Sufficient statistics of binary outcomes: patients and DLEs per arm.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArmCounts {
    pub patients: Vec<u32>,
    pub dle: Vec<u32>,
}

impl ArmCounts {
    pub fn zeros(arms: usize) -> Self {
        Self {
            patients: vec![0; arms],
            dle: vec![0; arms],
        }
    }

    pub fn add(&mut self, arm: usize, dle: bool) {
        self.patients[arm] += 1;
        self.dle[arm] += dle as u32;
    }

    pub fn arms(&self) -> usize {
        self.patients.len()
    }

    pub fn total(&self) -> u32 {
        self.patients.iter().sum()
    }
}

/// A posterior probability query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskQuery {
    /// P(p_arm - p_0 in [lower, upper]).
    Excess { arm: usize, lower: f64, upper: f64 },
    /// P(p_0 in [lower, upper]).
    Control { lower: f64, upper: f64 },
}

impl RiskQuery {
    pub fn excess_at_least(arm: usize, threshold: f64) -> Self {
        RiskQuery::Excess {
            arm,
            lower: threshold,
            upper: f64::INFINITY,
        }
    }

    pub fn excess_within(arm: usize, lower: f64, upper: f64) -> Self {
        RiskQuery::Excess { arm, lower, upper }
    }
}

// Integration grid, in units of the (inflated) Laplace standard deviations.
const HALF_WIDTH: f64 = 8.0;
const OUTER_NODES: usize = 49;
const INNER_NODES: usize = 49;
const SCALE_INFLATION: f64 = 1.5;

/// Posterior over `(theta1, log theta2)`, integrated on a tensor trapezoid
/// grid aligned with the Laplace approximation at the posterior mode.
///
/// The inner coordinate is the conditional direction of `log theta2` given
/// `theta1`. Excess-risk events are monotone in `theta2` for a fixed
/// intercept, so every event is an interval of the inner coordinate with
/// closed-form end points. Partial cells are integrated with cubic Hermite
/// interpolation using the analytic derivative of the integrand.
#[derive(Debug, Clone)]
pub struct MonoPosterior {
    levels: Vec<f64>,
    mode: [f64; 2],
    inner_scale: f64,
    outer: Vec<OuterLine>,
    inner_step: f64,
    normalizer: f64,
}

#[derive(Debug, Clone)]
struct OuterLine {
    theta1: f64,
    weight: f64,
    /// Centre of the inner coordinate at this intercept.
    centre: f64,
    g: Vec<f64>,
    dg: Vec<f64>,
    cumulative: Vec<f64>,
}

struct LogPosterior<'a> {
    prior: &'a SafetyPriorMono,
    precision: [f64; 3],
    levels: &'a [f64],
    counts: &'a ArmCounts,
}

impl LogPosterior<'_> {
    /// Unnormalized log density with its gradient and Hessian in (theta1, u).
    fn eval(&self, t1: f64, u: f64, with_hessian: bool) -> (f64, [f64; 2], [f64; 3]) {
        let [p11, p12, p22] = self.precision;
        let x1 = t1 - self.prior.mu1;
        let x2 = u - self.prior.mu2;
        let mut value = -0.5 * (p11 * x1 * x1 + 2.0 * p12 * x1 * x2 + p22 * x2 * x2);
        let mut grad = [-(p11 * x1 + p12 * x2), -(p12 * x1 + p22 * x2)];
        let mut hess = [-p11, -p12, -p22];
        let slope = u.exp();
        for (arm, &d) in self.levels.iter().enumerate() {
            let n = self.counts.patients[arm];
            if n == 0 {
                continue;
            }
            let y = self.counts.dle[arm] as f64;
            let n = n as f64;
            let eta = t1 + slope * d;
            let (lp, lq) = log_probs(eta);
            value += y * lp + (n - y) * lq;
            let p = inv_logit(eta);
            let resid = y - n * p;
            let deta_du = slope * d;
            grad[0] += resid;
            grad[1] += resid * deta_du;
            if with_hessian {
                let w = n * p * (1.0 - p);
                hess[0] -= w;
                hess[1] -= w * deta_du;
                hess[2] += -w * deta_du * deta_du + resid * deta_du;
            }
        }
        (value, grad, hess)
    }
}

fn neg_definite(h: &[f64; 3]) -> bool {
    h[0] < 0.0 && h[0] * h[2] - h[1] * h[1] > 0.0
}

impl MonoPosterior {
    pub fn fit(prior: &SafetyPriorMono, skeleton: &Skeleton, counts: &ArmCounts) -> Result<Self> {
        if counts.arms() != skeleton.arms() {
            return Err(Error::ArmOutOfRange {
                arm: counts.arms().saturating_sub(1),
                arms: skeleton.arms(),
            });
        }
        let lp = LogPosterior {
            prior,
            precision: prior.precision(),
            levels: skeleton.levels(),
            counts,
        };
        let mode = find_mode(&lp)?;
        let (_, _, h) = lp.eval(mode[0], mode[1], true);
        // Laplace covariance, falling back to the prior where the curvature
        // at the mode is not usable.
        let cov = if neg_definite(&h) {
            let det = h[0] * h[2] - h[1] * h[1];
            [-h[2] / det, h[1] / det, -h[0] / det]
        } else {
            [prior.var1, prior.cov12, prior.var2]
        };
        let outer_scale = SCALE_INFLATION * cov[0].sqrt();
        let slope = cov[1] / cov[0];
        let inner_scale = SCALE_INFLATION * (cov[2] - cov[1] * cov[1] / cov[0]).max(1e-12).sqrt();

        let outer_step = 2.0 * HALF_WIDTH / (OUTER_NODES - 1) as f64;
        let inner_step = 2.0 * HALF_WIDTH / (INNER_NODES - 1) as f64;
        let (log_peak, _, _) = lp.eval(mode[0], mode[1], false);

        let mut outer = Vec::with_capacity(OUTER_NODES);
        for i in 0..OUTER_NODES {
            let z1 = -HALF_WIDTH + i as f64 * outer_step;
            let theta1 = mode[0] + outer_scale * z1;
            let centre = mode[1] + slope * (theta1 - mode[0]);
            let mut g = Vec::with_capacity(INNER_NODES);
            let mut dg = Vec::with_capacity(INNER_NODES);
            for k in 0..INNER_NODES {
                let u = centre + inner_scale * (-HALF_WIDTH + k as f64 * inner_step);
                let (value, grad, _) = lp.eval(theta1, u, false);
                if !value.is_finite() {
                    return Err(Error::Integration(format!(
                        "non-finite log posterior at theta1={theta1}, u={u}"
                    )));
                }
                let gk = (value - log_peak).exp();
                g.push(gk);
                // derivative with respect to the inner z coordinate
                dg.push(gk * grad[1] * inner_scale);
            }
            let mut cumulative = Vec::with_capacity(INNER_NODES);
            cumulative.push(0.0);
            for k in 1..INNER_NODES {
                let cell = hermite_partial(g[k - 1], dg[k - 1], g[k], dg[k], inner_step, 1.0);
                cumulative.push(cumulative[k - 1] + cell);
            }
            let end_weight = if i == 0 || i == OUTER_NODES - 1 { 0.5 } else { 1.0 };
            outer.push(OuterLine {
                theta1,
                weight: end_weight * outer_step,
                centre,
                g,
                dg,
                cumulative,
            });
        }
        let normalizer: f64 = outer
            .iter()
            .map(|line| line.weight * line.cumulative[INNER_NODES - 1])
            .sum();
        if !(normalizer.is_finite() && normalizer > 0.0) {
            return Err(Error::Integration(format!(
                "posterior normalizer {normalizer} is not positive"
            )));
        }
        Ok(Self {
            levels: skeleton.levels().to_vec(),
            mode,
            inner_scale,
            outer,
            inner_step,
            normalizer,
        })
    }

    /// Posterior mode in `(theta1, log theta2)`.
    pub fn mode(&self) -> [f64; 2] {
        self.mode
    }

    pub fn probability(&self, query: &RiskQuery) -> f64 {
        match *query {
            RiskQuery::Excess { arm, lower, upper } => self.excess_probability(arm, lower, upper),
            RiskQuery::Control { lower, upper } => self.control_probability(lower, upper),
        }
    }

    /// Posterior expectation of `f(theta1, theta2)` by the node rule.
    pub fn expectation(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut total = 0.0;
        for line in &self.outer {
            let mut inner = 0.0;
            for (k, &g) in line.g.iter().enumerate() {
                let u = self.inner_u(line, k);
                let w = if k == 0 || k == INNER_NODES - 1 { 0.5 } else { 1.0 };
                inner += w * g * f(line.theta1, u.exp());
            }
            total += line.weight * inner * self.inner_step;
        }
        total / self.normalizer
    }

    /// Posterior mean DLE probability on an arm.
    pub fn mean_dle(&self, arm: usize) -> f64 {
        let d = self.levels[arm];
        self.expectation(|t1, t2| dle_probability(t1, t2, d))
    }

    fn inner_u(&self, line: &OuterLine, k: usize) -> f64 {
        line.centre + self.inner_scale * (-HALF_WIDTH + k as f64 * self.inner_step)
    }

    fn excess_probability(&self, arm: usize, lower: f64, upper: f64) -> f64 {
        if lower > upper {
            return 0.0;
        }
        let d = self.levels[arm];
        if d == 0.0 {
            return if lower <= 0.0 && 0.0 <= upper { 1.0 } else { 0.0 };
        }
        let mut total = 0.0;
        for line in &self.outer {
            let p0 = inv_logit(line.theta1);
            let a = self.cutoff_z(line, p0, d, lower);
            let b = self.cutoff_z(line, p0, d, upper);
            let mass = self.inner_cdf(line, b) - self.inner_cdf(line, a);
            total += line.weight * mass.max(0.0);
        }
        (total / self.normalizer).clamp(0.0, 1.0)
    }

    /// Inner coordinate at which `p_arm - p_0` crosses `excess`.
    fn cutoff_z(&self, line: &OuterLine, p0: f64, d: f64, excess: f64) -> f64 {
        if excess <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let target = p0 + excess;
        if target >= 1.0 {
            return f64::INFINITY;
        }
        let u = ((logit(target) - line.theta1) / d).ln();
        (u - line.centre) / self.inner_scale
    }

    fn inner_cdf(&self, line: &OuterLine, z: f64) -> f64 {
        let last = INNER_NODES - 1;
        if z <= -HALF_WIDTH {
            return 0.0;
        }
        if z >= HALF_WIDTH {
            return line.cumulative[last];
        }
        let pos = (z + HALF_WIDTH) / self.inner_step;
        let k = (pos.floor() as usize).min(last - 1);
        let tau = pos - k as f64;
        line.cumulative[k]
            + hermite_partial(
                line.g[k],
                line.dg[k],
                line.g[k + 1],
                line.dg[k + 1],
                self.inner_step,
                tau,
            )
    }

    fn control_probability(&self, lower: f64, upper: f64) -> f64 {
        let lo = if lower <= 0.0 { f64::NEG_INFINITY } else { logit(lower) };
        let hi = if upper >= 1.0 { f64::INFINITY } else { logit(upper) };
        // Linear interpolation of the outer marginal across partial cells.
        let marginal: Vec<f64> = self
            .outer
            .iter()
            .map(|line| line.cumulative[INNER_NODES - 1])
            .collect();
        let step = self.outer[1].theta1 - self.outer[0].theta1;
        let mut total = 0.0;
        for i in 0..self.outer.len() - 1 {
            let (t0, t1) = (self.outer[i].theta1, self.outer[i + 1].theta1);
            let a = lo.max(t0);
            let b = hi.min(t1);
            if b <= a {
                continue;
            }
            let f = |t: f64| marginal[i] + (marginal[i + 1] - marginal[i]) * (t - t0) / step;
            total += 0.5 * (f(a) + f(b)) * (b - a);
        }
        let width = step.abs();
        (total / width * self.outer_step_weight() / self.normalizer).clamp(0.0, 1.0)
    }

    fn outer_step_weight(&self) -> f64 {
        self.outer[1].weight
    }
}

/// Integral over the first `tau` fraction of a cell of width `h` of the
/// cubic Hermite interpolant through `(g0, d0)` and `(g1, d1)`.
fn hermite_partial(g0: f64, d0: f64, g1: f64, d1: f64, h: f64, tau: f64) -> f64 {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    let t4 = t3 * tau;
    let h00 = 0.5 * t4 - t3 + tau;
    let h10 = 0.25 * t4 - 2.0 * t3 / 3.0 + 0.5 * t2;
    let h01 = -0.5 * t4 + t3;
    let h11 = 0.25 * t4 - t3 / 3.0;
    h * (h00 * g0 + h10 * h * d0 + h01 * g1 + h11 * h * d1)
}

fn find_mode(lp: &LogPosterior<'_>) -> Result<[f64; 2]> {
    let mut x = [lp.prior.mu1, lp.prior.mu2];
    let prior_cov = [lp.prior.var1, lp.prior.cov12, lp.prior.var2];
    let (mut value, _, _) = lp.eval(x[0], x[1], false);
    for _ in 0..200 {
        let (_, g, h) = lp.eval(x[0], x[1], true);
        let step = if neg_definite(&h) {
            let det = h[0] * h[2] - h[1] * h[1];
            [
                -(h[2] * g[0] - h[1] * g[1]) / det,
                -(-h[1] * g[0] + h[0] * g[1]) / det,
            ]
        } else {
            [
                prior_cov[0] * g[0] + prior_cov[1] * g[1],
                prior_cov[1] * g[0] + prior_cov[2] * g[1],
            ]
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = [x[0] + scale * step[0], x[1] + scale * step[1]];
            let (v, _, _) = lp.eval(cand[0], cand[1], false);
            if v.is_finite() && v >= value {
                x = cand;
                value = v;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        let size = (scale * step[0]).abs() + (scale * step[1]).abs();
        if !accepted || size < 1e-11 {
            break;
        }
    }
    if !(x[0].is_finite() && x[1].is_finite()) {
        return Err(Error::Integration("mode search diverged".into()));
    }
    Ok(x)
}

/// Posterior probabilities for a batch of queries.
pub fn posterior_expectations(
    prior: &SafetyPriorMono,
    skeleton: &Skeleton,
    data: &SafetyDataMono,
    queries: &[RiskQuery],
) -> Result<Vec<f64>> {
    let posterior = MonoPosterior::fit(prior, skeleton, &data.counts())?;
    Ok(queries.iter().map(|q| posterior.probability(q)).collect())
}

/// Overdose and target probabilities for every active dose.
pub fn summarize_doses(posterior: &MonoPosterior, policy: &EscalationPolicy) -> Vec<DoseSummary> {
    let (lo, hi) = policy.target_interval();
    (1..posterior.levels.len())
        .map(|arm| DoseSummary {
            p_overdose: posterior
                .probability(&RiskQuery::excess_at_least(arm, policy.overdose_threshold())),
            p_target: posterior.probability(&RiskQuery::excess_within(arm, lo, hi)),
        })
        .collect()
}

/// Active doses (1-based) whose overdose probability is below the threshold.
pub fn safe_dose_set(p_overdose: &[f64], policy: &EscalationPolicy) -> Vec<usize> {
    p_overdose
        .iter()
        .enumerate()
        .filter(|(_, &p)| policy.is_safe(p))
        .map(|(i, _)| i + 1)
        .collect()
}

/// Next dose among the safe doses within one level of `current`, maximizing
/// the target-interval probability. Ties go to the lower dose.
///
/// `p_target[j - 1]` is the criterion for dose `j`.
pub fn select_next_dose(current: usize, safe: &[usize], p_target: &[f64]) -> Decision<usize> {
    if safe.is_empty() {
        return Decision::StopForSafety;
    }
    if safe == [current] {
        return Decision::Stay;
    }
    let mut candidates: Vec<usize> = safe
        .iter()
        .copied()
        .filter(|&j| j.abs_diff(current) <= 1)
        .collect();
    if candidates.is_empty() {
        // current has been closed to enrollment; fall back to the nearest
        let nearest = safe
            .iter()
            .copied()
            .min_by_key(|&j| (j.abs_diff(current), j))
            .expect("non-empty");
        candidates.push(nearest);
    }
    candidates.sort_unstable();
    let mut best = candidates[0];
    for &j in &candidates[1..] {
        if p_target[j - 1] > p_target[best - 1] {
            best = j;
        }
    }
    if best == current {
        Decision::Stay
    } else {
        Decision::MoveTo(best)
    }
}
