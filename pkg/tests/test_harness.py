import io
import json
import math

import numpy as np
import pytest

from fedgmm.harness import (
    CSV_HEADER,
    ConfigError,
    ExperimentConfig,
    bound_table,
    build_plans,
    run_experiment,
    run_trial,
    summarize,
    trial_seed,
    write_csv,
)


def cfg(**kw):
    base = dict(k=5, c=0.0, m=10_000, delta=3.0, D=27.0, trials=1, master_seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


def test_validation_messages():
    with pytest.raises(ConfigError, match="delta > 1.5"):
        cfg(delta=1.2, D=27).validate()
    with pytest.raises(ConfigError, match="D >= 9\\*delta"):
        cfg(D=20).validate()
    with pytest.raises(ConfigError, match="trials"):
        cfg(trials=0).validate()
    with pytest.raises(ConfigError, match="kind"):
        cfg(attacks=[{"kind": "bogus"}]).validate()
    with pytest.raises(ConfigError, match="unknown config keys"):
        ExperimentConfig.from_dict({"k": 1, "c": 0, "m": 10, "colour": 1})


def test_config_json_roundtrip(tmp_path):
    c = cfg(attacks=[{"kind": "cluster_killer", "params": {"targets": [1]}}], means=[0, 30, 60, 90, 120])
    p = tmp_path / "c.json"
    p.write_text(json.dumps(c.to_dict()))
    assert ExperimentConfig.load(p) == c


def test_trial_seed_counter_based():
    seeds = [trial_seed(7, i) for i in range(100)]
    assert len(set(seeds)) == 100
    assert trial_seed(7, 42) == seeds[42]
    assert trial_seed(8, 0) != seeds[0]


def test_build_plans_optimal():
    plans = build_plans(cfg(k=25, c=5.0, attacks=[{"kind": "lower_bound", "allocation": "optimal"}]))
    assert plans[0].kind == "lower_bound"
    assert math.fsum(plans[0].eps_alloc) == pytest.approx(5.0)
    assert np.count_nonzero(plans[0].eps_alloc) == 2


@pytest.mark.parametrize("k", [5, 1])
def test_clean_collaboration(k):
    rec = run_trial(cfg(k=k), trial_seed(3, 0))
    assert rec.aborted is None
    assert 0 <= rec.khat < 0.05
    assert rec.overlap_violations == 0


def test_trial_deterministic():
    c = cfg(c=1.0, attacks=[{"kind": "lower_bound", "allocation": "optimal"}])
    a, b = run_trial(c, 99), run_trial(c, 99)
    assert a == b


def test_abort_reported():
    c = cfg(k=1, c=0.1, m=1000, attacks=[{"kind": "uniform_spread", "params": {"c": 5}}], trials=2)
    rep = run_experiment(c)
    assert rep.trials_completed == 0 and rep.trials_aborted == 2
    assert "rho" in rep.abort_reasons[0]
    assert math.isnan(rep.khat_mean)
    json.loads(rep.to_json())


def test_single_trial_reduces_to_run_trial():
    c = cfg(c=1.0, attacks=[{"kind": "lower_bound", "allocation": "optimal"}])
    rep = run_experiment(c)
    assert rep.khat_mean == run_trial(c, trial_seed(c.master_seed, 0)).khat
    assert rep.khat_stderr == 0.0


def test_threads_do_not_change_report():
    c = cfg(c=1.0, trials=6, attacks=[{"kind": "lower_bound", "allocation": "optimal"}])
    one = run_experiment(c, threads=1)
    four = run_experiment(c, threads=4)
    assert one.to_json() == four.to_json()


def test_env_threads(monkeypatch):
    from fedgmm.harness import resolve_threads

    monkeypatch.setenv("FEDGMM_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2


def test_summary_order_independent():
    c = cfg(trials=4, c=1.0, attacks=[{"kind": "lower_bound", "allocation": "optimal"}])
    recs = [run_trial(c, trial_seed(3, i), i) for i in range(4)]
    assert summarize(c, recs).khat_mean == summarize(c, recs[::-1]).khat_mean


@pytest.mark.slow
def test_stderr_scaling():
    c = cfg(k=1, c=0.3, m=2000, attacks=[{"kind": "lower_bound", "allocation": "optimal"}])
    # a standard error from 4 trials is itself ~40% noisy, so each T gets the
    # mean over 8 independent replicate experiments
    errs = {}
    for t in (4, 16, 64):
        c.trials = t
        reps = []
        for rep in range(8):
            c.master_seed = 1000 * t + rep
            reps.append(run_experiment(c).khat_stderr)
        errs[t] = float(np.mean(reps))
    ratios = [errs[4] / errs[16], errs[16] / errs[64]]
    # 1/sqrt(T) scaling: each fourfold step should shrink the spread by about 2
    assert all(2 / 1.6 <= r <= 2 * 1.6 for r in ratios), (errs, ratios)


def test_killed_flags_follow_targets():
    c = cfg(k=10, c=4.2, m=20_000, trials=3, attacks=[{"kind": "cluster_killer", "params": {"targets": [0, 1]}}])
    rep = run_experiment(c)
    rates = [row["killed_rate"] for row in rep.per_component]
    assert rates[:2] == [1.0, 1.0] and max(rates[2:]) == 0.0
    assert 0 <= rep.fallback_fraction <= 1


def test_report_has_bounds():
    rep = run_experiment(cfg(k=10, c=2.0, attacks=[{"kind": "lower_bound", "allocation": "optimal"}]))
    assert rep.bound_lower == pytest.approx(0.2 / math.sqrt(8 * math.pi))
    assert rep.bound_upper_theorem > rep.bound_lower
    assert rep.seeds == [trial_seed(3, 0)]


def test_bound_table_and_csv():
    rows = bound_table([3.0, 4.0], [0.0, 0.5, 1.0])
    assert len(rows) == 6
    assert rows[2]["lower"] == 2 * rows[1]["lower"]
    buf = io.StringIO(newline="")
    write_csv(rows, buf)
    text = buf.getvalue()
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert "\r" not in text and text.count("\n") == 7
    with pytest.raises(ValueError):
        bound_table([3.0], [-0.1])


def test_bound_table_delta_agreement():
    grid = np.linspace(0.01, 1, 100)
    rows = bound_table([3.0, 4.0], grid)
    a = np.array([r["upper_theorem"] for r in rows[:100]])
    b = np.array([r["upper_theorem"] for r in rows[100:]])
    assert np.max(np.abs(a - b)) < 0.02
