//! Reference computations shared by the oracle and acceptance tests.
#![allow(dead_code)]

use agile_core::efficacy::Subject;
use agile_core::escalation::EscalationPolicy;
use agile_core::math::{inv_logit, log_probs};
use agile_core::safety_combo::*;
use agile_core::safety_mono::{ArmCounts, RiskQuery, SafetyPriorMono, Skeleton};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Dense 2000 x 2000 trapezoid over a +-6 prior-SD box. Evaluates the event
/// indicator at each node, with no use of the production integration path.
pub fn dense_grid(
    prior: &SafetyPriorMono,
    skeleton: &Skeleton,
    counts: &ArmCounts,
    queries: &[RiskQuery],
) -> Vec<f64> {
    const N: usize = 2000;
    let (s1, s2) = (prior.var1.sqrt(), prior.var2.sqrt());
    let t1s: Vec<f64> = (0..N)
        .map(|i| prior.mu1 - 6.0 * s1 + 12.0 * s1 * i as f64 / (N - 1) as f64)
        .collect();
    let us: Vec<f64> = (0..N)
        .map(|i| prior.mu2 - 6.0 * s2 + 12.0 * s2 * i as f64 / (N - 1) as f64)
        .collect();
    let levels = skeleton.levels();
    let mut logw = vec![0.0; N * N];
    let mut peak = f64::NEG_INFINITY;
    for (i, &t1) in t1s.iter().enumerate() {
        for (k, &u) in us.iter().enumerate() {
            let z1 = (t1 - prior.mu1) / s1;
            let z2 = (u - prior.mu2) / s2;
            let mut v = -0.5 * (z1 * z1 + z2 * z2);
            for (arm, &d) in levels.iter().enumerate() {
                let n = counts.patients[arm] as f64;
                if n == 0.0 {
                    continue;
                }
                let y = counts.dle[arm] as f64;
                let (lp, lq) = log_probs(t1 + u.exp() * d);
                v += y * lp + (n - y) * lq;
            }
            logw[i * N + k] = v;
            peak = peak.max(v);
        }
    }
    let tw = |i: usize| if i == 0 || i == N - 1 { 0.5 } else { 1.0 };
    let mut norm = 0.0;
    let mut sums = vec![0.0; queries.len()];
    for (i, &t1) in t1s.iter().enumerate() {
        let p0 = inv_logit(t1);
        for (k, &u) in us.iter().enumerate() {
            let w = tw(i) * tw(k) * (logw[i * N + k] - peak).exp();
            norm += w;
            for (q, s) in queries.iter().zip(sums.iter_mut()) {
                let hit = match *q {
                    RiskQuery::Excess { arm, lower, upper } => {
                        let excess = inv_logit(t1 + u.exp() * levels[arm]) - p0;
                        excess >= lower && excess <= upper
                    }
                    RiskQuery::Control { lower, upper } => p0 >= lower && p0 <= upper,
                };
                if hit {
                    *s += w;
                }
            }
        }
    }
    sums.iter().map(|s| s / norm).collect()
}

pub struct Oracle {
    thetas: Vec<[f64; 4]>,
}

impl Oracle {
    pub fn new(prior: &SafetyPriorCombo, draws: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd: Vec<f64> = prior.var.iter().map(|v| v.sqrt()).collect();
        let thetas = (0..draws)
            .map(|_| {
                let mut t = [0.0; 4];
                for k in 0..4 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    t[k] = prior.mean[k] + sd[k] * z;
                }
                t
            })
            .collect();
        Self { thetas }
    }

    // independence model plus interaction, written from the definition
    pub fn risk(t: &[f64; 4], d: f64, s: f64) -> f64 {
        let pd = 1.0 / (1.0 + (-(t[0] + t[1].exp() * d)).exp());
        let ps = 1.0 / (1.0 + (-(t[0] + t[2].exp() * s)).exp());
        let p = 1.0 - (1.0 - pd) * (1.0 - ps);
        let odds = p / (1.0 - p) * (t[3] * d * s).exp();
        odds / (1.0 + odds)
    }

    pub fn probability(&self, grid: &ComboGrid, data: &[((usize, usize), u32, u32)], query: impl Fn(f64, f64) -> bool, cell: (usize, usize)) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        let logw: Vec<f64> = self
            .thetas
            .iter()
            .map(|t| {
                data.iter()
                    .map(|&((j, l), n, y)| {
                        let p = Self::risk(t, grid.d[j], grid.s[l]);
                        y as f64 * p.ln() + (n - y) as f64 * (1.0 - p).ln()
                    })
                    .sum()
            })
            .collect();
        let peak = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (t, lw) in self.thetas.iter().zip(&logw) {
            let w = (lw - peak).exp();
            let p0 = Self::risk(t, 0.0, 0.0);
            let p = Self::risk(t, grid.d[cell.0], grid.s[cell.1]);
            den += w;
            if query(p - p0, p0) {
                num += w;
            }
        }
        num / den
    }
}

/// Largest gap between the production combination posterior and a
/// 2^20-draw prior-sampling estimate over the standard queries.
pub fn combo_oracle_deviation(data: &[((usize, usize), u32, u32)]) -> f64 {
    let prior = SafetyPriorCombo::calibrated();
    let grid = build_combo_skeletons(&prior, 2, 3).unwrap();
    let sampler = ComboSampler::new(&prior, &grid, DEFAULT_DRAWS, DEFAULT_QMC_SEED).unwrap();
    let mut counts = ArmCounts::zeros(grid.cells());
    for &((j, l), n, y) in data {
        let c = grid.cell(j, l);
        counts.patients[c] += n;
        counts.dle[c] += y;
    }
    let post = sampler.posterior(&counts).unwrap();
    let oracle = Oracle::new(&prior, 1 << 20, 0x0dd_ba11);
    let policy = EscalationPolicy::default();
    let (lo, hi) = policy.target_interval();
    let over = policy.overdose_threshold();
    let mut worst: f64 = 0.0;
    for j in 1..=2 {
        for l in 1..=3 {
            let a = post.probability(&ComboQuery::Excess { j, l, lower: over, upper: f64::INFINITY });
            let b = oracle.probability(&grid, data, |e, _| e >= over, (j, l));
            let c = post.probability(&ComboQuery::Excess { j, l, lower: lo, upper: hi });
            let d = oracle.probability(&grid, data, |e, _| e >= lo && e <= hi, (j, l));
            worst = worst.max((a - b).abs()).max((c - d).abs());
        }
    }
    let a = post.probability(&ComboQuery::Control { lower: 0.0, upper: 0.15 });
    let b = oracle.probability(&grid, data, |_, p0| p0 <= 0.15, (1, 1));
    worst = worst.max((a - b).abs());
    worst
}

/// Product over observed events of psi^z / sum_{at risk} psi^z.
pub fn cox_product_form(data: &[Subject], hr: f64) -> f64 {
    let mut log_l = 0.0;
    for s in data.iter().filter(|s| s.event) {
        let num = if s.treated { hr.ln() } else { 0.0 };
        let den: f64 = data
            .iter()
            .filter(|r| r.time >= s.time)
            .map(|r| if r.treated { hr } else { 1.0 })
            .sum();
        log_l += num - den.ln();
    }
    log_l
}
