//! Structural invariants of simulated trials.

use agile_core::config::RunConfig;
use agile_core::scenario::{self, Scenario};
use agile_core::trial::{
    run_trial, run_trial_traced, simulate_trials, DosePhase, SafetyModel, TraceEvent, TrialConfig,
    TrialResult,
};
use proptest::prelude::*;

fn baseline() -> (Box<dyn SafetyModel>, TrialConfig) {
    let cfg = RunConfig::builtin("single-baseline").unwrap();
    (cfg.model().unwrap(), cfg.trial)
}

fn traced(scenario: &Scenario, cfg: &TrialConfig, seed: u64) -> TrialResult {
    let (model, _) = baseline();
    run_trial_traced(scenario, model.as_ref(), cfg, seed).unwrap()
}

fn check_intake(result: &TrialResult, cfg: &TrialConfig, arms: usize) {
    let patients = result.patients.as_ref().unwrap();
    assert_eq!(patients.len(), result.total_patients);
    assert!(result.total_patients <= arms * cfg.level_cap);
    for arm in 1..=arms {
        let intake = patients.iter().filter(|p| p.cohort_arm == arm).count();
        assert!(intake <= cfg.level_cap, "arm {arm} enrolled {intake}");
        assert_eq!(intake, result.doses[arm - 1].patients);
        let active = patients.iter().filter(|p| p.cohort_arm == arm && p.arm == arm).count();
        assert_eq!(active * cfg.control_cohort, (intake - active) * cfg.active_cohort);
        if let Some(stop) = result.doses[arm - 1].stop_day {
            assert!(
                patients.iter().filter(|p| p.cohort_arm == arm).all(|p| p.enrolled_day <= stop),
                "arm {arm} enrolled after closing on day {stop}"
            );
        }
    }
}

fn check_closures(result: &TrialResult) {
    let trace = result.trace.as_ref().unwrap();
    let patients = result.patients.as_ref().unwrap();
    for event in trace {
        if let TraceEvent::Closed { day, arm, phase } = event {
            assert!(!matches!(phase, DosePhase::Escalation | DosePhase::Graduated));
            assert!(patients
                .iter()
                .filter(|p| p.cohort_arm == *arm)
                .all(|p| p.enrolled_day <= *day));
        }
    }
}

#[test]
fn intake_caps_and_closures_hold_across_scenarios() {
    let (_, cfg) = baseline();
    for s in 0..scenario::SINGLE_SAFETY_SCENARIOS {
        for e in 0..scenario::SINGLE_EFFICACY_SCENARIOS {
            let sc = scenario::single_agent(s, e).unwrap();
            for seed in 0..8 {
                let r = traced(&sc, &cfg, 1000 * s as u64 + 100 * e as u64 + seed);
                check_intake(&r, &cfg, 3);
                check_closures(&r);
            }
        }
    }
}

#[test]
fn unshared_reviews_see_only_own_cohorts() {
    let (_, mut cfg) = baseline();
    cfg.share_controls = false;
    for (s, e) in [(0, 4), (1, 4), (0, 2), (2, 3)] {
        let sc = scenario::single_agent(s, e).unwrap();
        for seed in 0..10 {
            let r = traced(&sc, &cfg, seed);
            let patients = r.patients.as_ref().unwrap();
            for event in r.trace.as_ref().unwrap() {
                if let TraceEvent::Review { day, arm, analysed, .. } = event {
                    let own = patients
                        .iter()
                        .filter(|p| p.cohort_arm == *arm && p.enrolled_day <= *day)
                        .count();
                    assert!(*analysed <= own, "arm {arm} analysed {analysed} of {own}");
                }
            }
        }
    }
}

#[test]
fn shared_pool_adds_at_most_the_capacity() {
    let (_, cfg) = baseline();
    let sc = scenario::single_agent(0, 4).unwrap();
    for seed in 0..10 {
        let r = traced(&sc, &cfg, seed);
        let patients = r.patients.as_ref().unwrap();
        for event in r.trace.as_ref().unwrap() {
            if let TraceEvent::Review { day, arm, analysed, .. } = event {
                let own = patients
                    .iter()
                    .filter(|p| p.cohort_arm == *arm && p.enrolled_day <= *day)
                    .count();
                assert!(*analysed <= own + cfg.efficacy.shared_controls);
            }
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let (model, cfg) = baseline();
    let sc = scenario::single_agent(1, 3).unwrap();
    let one = simulate_trials(&sc, model.as_ref(), &cfg, 40, 77, 1).unwrap();
    let two = simulate_trials(&sc, model.as_ref(), &cfg, 40, 77, 2).unwrap();
    let pool = simulate_trials(&sc, model.as_ref(), &cfg, 40, 77, 0).unwrap();
    assert_eq!(one, two);
    assert_eq!(one, pool);
}

#[test]
fn single_replication_batch_matches_single_run() {
    let (model, cfg) = baseline();
    let sc = scenario::single_agent(2, 2).unwrap();
    let batch = simulate_trials(&sc, model.as_ref(), &cfg, 1, 5, 1).unwrap();
    let single = run_trial(&sc, model.as_ref(), &cfg, 5).unwrap();
    assert_eq!(batch, vec![single]);
}

fn shifted(base: &Scenario, delta: f64) -> Scenario {
    let mut s = base.clone();
    for p in s.dle.iter_mut().skip(1) {
        *p = (*p + delta).min(0.95);
    }
    s
}

/// Raising every active arm's toxicity never raises the number of arms that
/// reach efficacy evaluation, on average over a common set of seeds.
#[test]
fn more_toxicity_never_graduates_more_arms() {
    let (model, cfg) = baseline();
    for (s, e) in [(0, 4), (1, 2), (2, 3)] {
        let base = scenario::single_agent(s, e).unwrap();
        let mut previous = f64::INFINITY;
        for delta in [0.0, 0.1, 0.2, 0.3] {
            let sc = shifted(&base, delta);
            let results = simulate_trials(&sc, model.as_ref(), &cfg, 200, 31, 0).unwrap();
            let mean =
                results.iter().map(|r| r.graduated() as f64).sum::<f64>() / results.len() as f64;
            assert!(
                mean <= previous + 0.05,
                "single-{s}-{e} +{delta}: {mean} graduated after {previous}"
            );
            previous = mean;
        }
    }
}

#[test]
fn recommended_arms_stopped_for_efficacy() {
    let (model, cfg) = baseline();
    let sc = scenario::single_agent(0, 3).unwrap();
    for r in simulate_trials(&sc, model.as_ref(), &cfg, 50, 9, 0).unwrap() {
        for (i, d) in r.doses.iter().enumerate() {
            assert_eq!(r.recommended.contains(&(i + 1)), d.phase == DosePhase::StoppedEfficacy);
            assert!(d.stage <= d.max_stages);
            assert!(d.patients <= cfg.level_cap);
        }
        assert!(!r.stopped_for_safety || r.recommended.is_empty());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_scenarios_respect_caps(
        excess in proptest::collection::vec(0.0f64..0.5, 3),
        hrs in proptest::collection::vec(1.0f64..2.2, 3),
        seed in any::<u64>(),
    ) {
        let (_, cfg) = baseline();
        let mut dle = vec![0.10];
        let mut acc = 0.10;
        for x in &excess {
            acc = (acc + x / 3.0).min(0.9);
            dle.push(acc);
        }
        let mut hazard_ratios = vec![1.0];
        hazard_ratios.extend(hrs);
        let mut sc = scenario::single_agent(0, 0).unwrap();
        sc.dle = dle;
        sc.hazard_ratios = hazard_ratios;
        let r = traced(&sc, &cfg, seed);
        check_intake(&r, &cfg, 3);
        check_closures(&r);
    }
}
