//! Properties of boundary search and prior calibration.

use agile_core::calibration::{
    evaluate_boundaries, simulate_likelihood_trajectories, BoundarySearchConfig, Hypothesis,
    Trajectory, TrajectorySet,
};
use agile_core::efficacy::{cox_log_partial_likelihood, Subject};
use agile_core::math::{geometric_mean, inv_logit};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn small_cfg() -> BoundarySearchConfig {
    BoundarySearchConfig { trajectories: 2000, ..BoundarySearchConfig::structure(4, 2, 30) }
}

fn sets() -> &'static (TrajectorySet, TrajectorySet) {
    static SETS: OnceLock<(TrajectorySet, TrajectorySet)> = OnceLock::new();
    SETS.get_or_init(|| {
        let cfg = small_cfg();
        (
            TrajectorySet::simulate(&cfg, Hypothesis::Null, 5).unwrap(),
            TrajectorySet::simulate(&cfg, Hypothesis::Alternative, 5).unwrap(),
        )
    })
}

#[test]
fn trajectories_are_prefix_stable() {
    let cfg = small_cfg();
    let short = simulate_likelihood_trajectories(&cfg, Hypothesis::Alternative, 30, 9).unwrap();
    let long = simulate_likelihood_trajectories(&cfg, Hypothesis::Alternative, 120, 9).unwrap();
    assert_eq!(short[..], long[..30]);
    assert_eq!(short[0].log_lik_null.len(), cfg.stages());
}

#[test]
fn evaluation_ignores_trajectory_order() {
    let cfg = small_cfg();
    let null = simulate_likelihood_trajectories(&cfg, Hypothesis::Null, 400, 2).unwrap();
    let alt = simulate_likelihood_trajectories(&cfg, Hypothesis::Alternative, 400, 2).unwrap();
    let a = evaluate_boundaries(
        &TrajectorySet::new(Hypothesis::Null, &null, 0.5),
        &TrajectorySet::new(Hypothesis::Alternative, &alt, 0.5),
        0.25,
        0.85,
        &cfg,
    )
    .unwrap();
    let rev = |t: &[Trajectory]| t.iter().rev().cloned().collect::<Vec<_>>();
    let b = evaluate_boundaries(
        &TrajectorySet::new(Hypothesis::Null, &rev(&null), 0.5),
        &TrajectorySet::new(Hypothesis::Alternative, &rev(&alt), 0.5),
        0.25,
        0.85,
        &cfg,
    )
    .unwrap();
    assert_eq!(a.type1, b.type1);
    assert_eq!(a.power, b.power);
    assert!((a.expected_n0 - b.expected_n0).abs() < 1e-9);
}

#[test]
fn stage_proportions_sum_to_one() {
    let (null, alt) = sets();
    let e = evaluate_boundaries(null, alt, 0.224, 0.839, &small_cfg()).unwrap();
    for (f, s) in [(&e.null_futility, &e.null_efficacy), (&e.alt_futility, &e.alt_efficacy)] {
        let total: f64 = f.iter().chain(s.iter()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
    assert!((e.null_efficacy.iter().sum::<f64>() - e.type1).abs() < 1e-12);
    assert!((e.alt_efficacy.iter().sum::<f64>() - e.power).abs() < 1e-12);
}

#[test]
fn null_first_stage_posterior_stays_below_the_upper_bound() {
    let cfg = small_cfg();
    let null = simulate_likelihood_trajectories(&cfg, Hypothesis::Null, 4000, 13).unwrap();
    let mean = null.iter().map(|t| inv_logit(t.log_likelihood_ratio(0))).sum::<f64>() / 4000.0;
    assert!(mean < 0.6, "{mean}");
    assert!(mean < 0.839 - 0.2);
}

/// The same design with Weibull improvement times: one trajectory of
/// `cfg.stages()` analyses.
fn weibull_trajectory(cfg: &BoundarySearchConfig, hr: f64, rng: &mut ChaCha8Rng) -> Trajectory {
    let shape: f64 = 0.797;
    // rate chosen so that 70% of controls improve by the end of follow-up
    let horizon = cfg.follow_up_days as f64;
    let rate = -(1.0 - cfg.null_recovery).ln() / horizon.powf(shape);
    let mut id = 0;
    let mut draw = |treated: bool, rng: &mut ChaCha8Rng| {
        id += 1;
        let h = if treated { hr } else { 1.0 };
        let u: f64 = rng.random();
        let t = (-(1.0 - u).ln() / (h * rate)).powf(1.0 / shape);
        let event = t <= horizon;
        Subject { id, treated, time: if event { t } else { horizon }, event }
    };
    let mut data: Vec<Subject> = (0..cfg.external_controls).map(|_| draw(false, rng)).collect();
    let mut cohort = |data: &mut Vec<Subject>, rng: &mut ChaCha8Rng| {
        for _ in 0..cfg.active_cohort {
            data.push(draw(true, rng));
        }
        for _ in 0..cfg.control_cohort {
            data.push(draw(false, rng));
        }
    };
    for _ in 0..cfg.first_stage_cohorts - 1 {
        cohort(&mut data, rng);
    }
    let mut t = Trajectory { log_lik_null: vec![], log_lik_alt: vec![] };
    for _ in 0..cfg.stages() {
        cohort(&mut data, rng);
        t.log_lik_null.push(cox_log_partial_likelihood(&data, 1.0).unwrap());
        t.log_lik_alt.push(cox_log_partial_likelihood(&data, cfg.target_hr).unwrap());
    }
    t
}

#[test]
fn weibull_and_exponential_times_give_the_same_operating_characteristics() {
    let n = 4000;
    for ext in [0, 30] {
        let cfg = BoundarySearchConfig { trajectories: n, ..BoundarySearchConfig::structure(4, 2, ext) };
        let exp_null = TrajectorySet::simulate(&cfg, Hypothesis::Null, 21).unwrap();
        let exp_alt = TrajectorySet::simulate(&cfg, Hypothesis::Alternative, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let wb_null: Vec<_> = (0..n).map(|_| weibull_trajectory(&cfg, 1.0, &mut rng)).collect();
        let wb_alt: Vec<_> =
            (0..n).map(|_| weibull_trajectory(&cfg, cfg.target_hr, &mut rng)).collect();
        let wb_null = TrajectorySet::new(Hypothesis::Null, &wb_null, 0.5);
        let wb_alt = TrajectorySet::new(Hypothesis::Alternative, &wb_alt, 0.5);
        let a = evaluate_boundaries(&exp_null, &exp_alt, 0.224, 0.839, &cfg).unwrap();
        let b = evaluate_boundaries(&wb_null, &wb_alt, 0.224, 0.839, &cfg).unwrap();
        for (x, y) in [(a.type1, b.type1), (a.power, b.power)] {
            let p = 0.5 * (x + y);
            let se = (2.0 * p * (1.0 - p) / n as f64).sqrt();
            assert!((x - y).abs() < 3.0 * se, "ext {ext}: {x} vs {y}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rejection_falls_as_boundaries_rise(
        l in 0.02f64..0.45,
        dl in 0.0f64..0.05,
        u in 0.55f64..0.95,
        du in 0.0f64..0.04,
    ) {
        let (null, alt) = sets();
        let cfg = small_cfg();
        let base = evaluate_boundaries(null, alt, l, u, &cfg).unwrap();
        let higher_u = evaluate_boundaries(null, alt, l, u + du, &cfg).unwrap();
        let higher_l = evaluate_boundaries(null, alt, l + dl, u, &cfg).unwrap();
        prop_assert!(higher_u.type1 <= base.type1);
        prop_assert!(higher_u.power <= base.power);
        prop_assert!(higher_l.type1 <= base.type1);
        prop_assert!(higher_l.power <= base.power);
        // a feasible pair stays feasible when the upper boundary rises
        if base.feasible(cfg.alpha) {
            prop_assert!(higher_u.feasible(cfg.alpha));
        }
    }

    #[test]
    fn geometric_mean_lies_between_extremes(xs in proptest::collection::vec(0.001f64..1.0, 1..8)) {
        let g = geometric_mean(&xs);
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(0.0, f64::max);
        prop_assert!(g >= lo * (1.0 - 1e-12) && g <= hi * (1.0 + 1e-12));
        let arith = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assert!(g <= arith * (1.0 + 1e-12));
    }
}
