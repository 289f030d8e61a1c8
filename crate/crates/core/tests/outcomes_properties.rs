//! Marginals and dependence of the correlated outcome generator.

use agile_core::outcomes::{
    correlated_outcome, latent_pair, weibull_improvement_time, weibull_survival, OutcomeModel,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const N: usize = 100_000;

fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn latent_correlation_is_recovered() {
    for rho in [-0.8, -0.3, 0.0, 0.5, 0.8, 0.95] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..N).map(|_| latent_pair(rho, &mut rng)).unzip();
        let r = correlation(&xs, &ys);
        assert!((r - rho).abs() < 0.02, "rho {rho}: {r}");
    }
}

#[test]
fn marginals_do_not_depend_on_rho() {
    let (p_tox, hr) = (0.3, 1.75);
    for rho in [-0.8, 0.0, 0.8] {
        let model = OutcomeModel { rho, ..OutcomeModel::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws: Vec<_> = (0..N).map(|_| correlated_outcome(p_tox, hr, &model, &mut rng)).collect();
        let dle = draws.iter().filter(|o| o.dle).count() as f64 / N as f64;
        let se = (p_tox * (1.0 - p_tox) / N as f64).sqrt();
        assert!((dle - p_tox).abs() < 3.0 * se, "rho {rho}: DLE rate {dle}");
        let q = model.improvement_probability(hr);
        let improved = draws.iter().filter(|o| o.event).count() as f64 / N as f64;
        let se = (q * (1.0 - q) / N as f64).sqrt();
        assert!((improved - q).abs() < 3.0 * se, "rho {rho}: improvement rate {improved} vs {q}");
        for day in [3.0, 10.0, 20.0] {
            let s = weibull_survival(model.control_rate, model.control_shape, hr, day);
            let emp = draws.iter().filter(|o| !o.event || o.time > day).count() as f64 / N as f64;
            let se = (s * (1.0 - s) / N as f64).sqrt();
            assert!((emp - s).abs() < 3.0 * se, "rho {rho}: S({day}) {emp} vs {s}");
        }
    }
}

#[test]
fn zero_rho_gives_independent_endpoints() {
    let model = OutcomeModel { rho: 0.0, ..OutcomeModel::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws: Vec<_> = (0..N).map(|_| correlated_outcome(0.3, 1.5, &model, &mut rng)).collect();
    let rate = |dle: bool| {
        let group: Vec<_> = draws.iter().filter(|o| o.dle == dle).collect();
        group.iter().filter(|o| o.event).count() as f64 / group.len() as f64
    };
    assert!((rate(true) - rate(false)).abs() < 0.015);
}

#[test]
fn positive_rho_pairs_toxicity_with_early_improvement() {
    let model = OutcomeModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws: Vec<_> = (0..N).map(|_| correlated_outcome(0.3, 1.0, &model, &mut rng)).collect();
    let mean_time = |dle: bool| {
        let group: Vec<_> = draws.iter().filter(|o| o.dle == dle).collect();
        group.iter().map(|o| o.time).sum::<f64>() / group.len() as f64
    };
    assert!(mean_time(true) < mean_time(false) - 2.0);
}

#[test]
fn control_improvement_by_day_28() {
    // 1 - exp(-0.085 * 28^0.797)
    let q = OutcomeModel::default().improvement_probability(1.0);
    let expected = 1.0 - (-0.085f64 * 28f64.powf(0.797)).exp();
    assert!((q - expected).abs() < 1e-15);
    assert!((q - 0.7).abs() < 0.01, "{q}");
}

proptest! {
    #[test]
    fn survival_is_proportional_hazards(t in 0.1f64..60.0, hr in 0.2f64..4.0) {
        let s0 = weibull_survival(0.085, 0.797, 1.0, t);
        let s1 = weibull_survival(0.085, 0.797, hr, t);
        prop_assert!((s1 - s0.powf(hr)).abs() < 1e-12);
    }

    #[test]
    fn improvement_time_is_monotone_in_the_draw(a in 0.001f64..0.999, b in 0.001f64..0.999, hr in 0.5f64..3.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (t_lo, _) = weibull_improvement_time(0.085, 0.797, hr, lo, 28);
        let (t_hi, _) = weibull_improvement_time(0.085, 0.797, hr, hi, 28);
        prop_assert!(t_lo <= t_hi);
        prop_assert!((1.0..=28.0).contains(&t_lo));
    }

    #[test]
    fn improvement_time_inverts_the_survival_function(u in 0.001f64..0.99, hr in 0.5f64..3.0) {
        let (day, event) = weibull_improvement_time(0.085, 0.797, hr, u, 28);
        if event {
            // whole day d satisfies F(d - 1) < u <= F(d)
            let f = |t: f64| 1.0 - weibull_survival(0.085, 0.797, hr, t);
            prop_assert!(u <= f(day) + 1e-12);
            prop_assert!(day == 1.0 || f(day - 1.0) < u + 1e-12);
        } else {
            prop_assert!(u > 1.0 - weibull_survival(0.085, 0.797, hr, 28.0) - 1e-12);
        }
    }
}
