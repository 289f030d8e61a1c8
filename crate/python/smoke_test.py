"""Smoke test for the `agile` extension module.

Build and stage the module first:

    cargo build --release -p agile-py --features extension-module
    cp target/release/libagile.so python/agile.so
    python3 python/smoke_test.py
"""

import math

import agile


def main():
    # control anchors the skeleton
    safety = agile.MonoSafety(doses=3)
    levels = safety.skeleton()
    assert levels[0] == 0.0 and abs(levels[1] - 1.233) < 1e-3, levels
    assert abs(agile.dle_probability(math.log(0.1 / 0.9), 1.0, 0.0) - 0.1) < 1e-12

    summary = safety.summarize([3, 6, 0, 0], [0, 0, 0, 0])
    assert len(summary) == 3 and all(0.0 <= p <= 1.0 for pair in summary for p in pair)
    assert safety.next_dose(1, [2, 4, 0, 0], [0, 0, 0, 0]) in (1, 2)
    assert safety.next_dose(1, [2, 4, 0, 0], [0, 4, 0, 0]) is None

    ll = agile.cox_log_partial_likelihood([5.0, 28.0], [True, False], [True, False], 1.0)
    assert abs(ll - math.log(0.5)) < 1e-12
    post = agile.posterior_efficacy_probability([5.0, 28.0], [True, False], [True, False])
    assert abs(post - 0.56) < 1e-12
    lo, hi = agile.translate_boundaries(0.224, 0.839, 0.5, 0.5)
    assert (lo, hi) == (0.224, 0.839)
    assert 0.49 <= agile.weibull_survival(14.0) <= 0.51

    oc = agile.simulate("single-0-1", n_sims=20, seed=3)
    assert oc["n_sims"] == 20 and len(oc["recommended_pct"]) == 3
    trial = agile.run_trial("single-4-0", seed=5)
    assert trial["total_patients"] > 0 and trial["trace"]

    cfg = agile.load_run_config("single-baseline")
    assert cfg["trial"]["active_cohort"] == 4

    report = agile.optimize_boundaries(trajectories=500, seed=1)
    assert report["best"]["type1"] <= 0.10

    print("agile", agile.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
