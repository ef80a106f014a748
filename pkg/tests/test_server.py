import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedgmm.adversary import AttackPlan, run_attacks
from fedgmm.bounds import eps_hat
from fedgmm.gauss import WindowShape, std_normal_pdf, window_mass_inverse
from fedgmm.population import build_mixture, sample_population
from fedgmm.server import (
    ClusterEstimate,
    ServerParams,
    default_backoff,
    density_filter,
    estimate_cluster,
    form_cliques,
    phase_sizes,
    robust_clustering,
    run_server,
    split_phases,
)

S3 = WindowShape(3.0)


def params(k=1, c=0.0, backoff=0.02, delta=3.0):
    return ServerParams(WindowShape(delta), k, c, backoff)


def test_backoff_schedule():
    assert default_backoff(1e3) == pytest.approx(0.1)
    assert default_backoff(1e9) == 0.02


def test_heavy_size_and_split(rng):
    p = params(k=10, backoff=0.1)
    assert p.heavy_size == pytest.approx(200 * math.log(100), rel=1e-12)
    n = 10 * 10_000
    H, T1, T2 = split_phases(rng.standard_normal(n), p, rng)
    q = p.heavy_size / 10_000
    assert abs(H.size - n * q) < 4 * math.sqrt(n * q * (1 - q))
    assert np.array_equal(np.sort(np.concatenate([H, T1, T2])), np.arange(n))


def test_split_empty_and_too_small(rng):
    assert all(a.size == 0 for a in split_phases(np.empty(0), params(), rng))
    with pytest.raises(ValueError, match="too small"):
        phase_sizes(100, params(backoff=0.05))
    with pytest.raises(ValueError):
        params(backoff=0.0)


def test_filter_geometry():
    rng = np.random.default_rng(4)
    p = params(backoff=0.05)
    m = 100_000
    sizes = phase_sizes(m, p)
    edge = window_mass_inverse(S3.rho - 0.05, S3) + 0.1
    ok = 0
    for _ in range(10):
        H = np.linspace(-6, 6, 601)
        T1 = rng.standard_normal(rng.binomial(m, sizes.m1 / m))
        keep = density_filter(H, T1, p, sizes.m1)
        inner = np.abs(H) < 0.5
        ok += keep[inner].mean() >= 0.99 and not keep[np.abs(H) > edge].any()
    assert ok >= 9


def test_filter_edge_cases():
    p = params()
    assert not density_filter(np.array([0.0, 1.0]), np.empty(0), p, 10).any()
    t1 = np.random.default_rng(0).standard_normal(5000)
    keep = density_filter(np.array([0.7, 0.7, 0.7]), t1, p, 5000)
    assert len(set(keep.tolist())) == 1


def test_cliques():
    cl, rej = form_cliques([0.1, 27.2, 0.3], S3)
    assert [c.tolist() for c in cl] == [[0.1, 0.3], [27.2]] and rej == []
    chain = np.linspace(0, 3.2 * 3, 20)
    cl, rej = form_cliques(chain, S3)
    assert cl == [] and len(rej) == 1
    assert form_cliques([], S3) == ([], [])


def test_estimate_cluster_median_rules():
    p = params()
    t2 = np.array([1.0, 2.0, 3.0, 4.0])
    est, pos = estimate_cluster(np.array([2.5]), t2, p, 4.0)
    assert est.mu_tilde == 2.5 and pos.tolist() == [0, 1, 2, 3]
    est, _ = estimate_cluster(np.array([5.0]), np.full(7, 5.0), p, 7.0)
    assert est.mu_tilde == 5.0 and est.support_lo == est.support_hi
    est, pos = estimate_cluster(np.array([50.0]), t2, p, 4.0)
    assert est is None and pos.size == 0


def test_cluster_estimate_roundtrip():
    e = ClusterEstimate(1.5, 0.01, -1.0, 4.0, 99)
    assert ClusterEstimate.from_dict(e.to_dict()) == e


@pytest.mark.slow
def test_single_component_clean():
    m, hits = 100_000, 0
    p = params(backoff=0.02)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        out = robust_clustering(rng.standard_normal(m), p, rng)
        if len(out) != 1:
            continue
        e = out[0]
        l = max(0.0, e.support_hi - e.support_lo - 6.0)
        hits += abs(e.mu_tilde) <= 0.02 and e.eps_tilde <= 0.02 + l * std_normal_pdf(3.0) + 0.01
    assert hits >= 19


def test_two_components_recovered():
    model = build_mixture(2, 3.0, 27.0)
    good = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pop = sample_population(model, 10_000, 0.0, rng)
        out = run_server(pop.values, ServerParams(model.shape, 2, 0.0, default_backoff(10_000)), rng)
        mus = [c.mu_tilde for c in out.clusters]
        good += len(mus) == 2 and abs(mus[0]) <= 0.05 and abs(mus[1] - 27) <= 0.05
        assert out.overlap_violations == 0
    assert good >= 19


@pytest.mark.slow
def test_kill_one_spare_other():
    model = build_mixture(2, 3.0, 27.0)
    good = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pop = sample_population(model, 10_000, 2.5, rng)
        run_attacks(model, [AttackPlan("cluster_killer", [], {"targets": [0]})], pop, rng)
        out = run_server(pop.values, ServerParams(model.shape, 2, 2.5, default_backoff(10_000)), rng)
        mus = np.array([c.mu_tilde for c in out.clusters])
        good += not np.any(np.abs(mus) < 9) and np.any(np.abs(mus - 27) <= 0.05)
    assert good >= 19


@pytest.mark.slow
def test_sandwich_at_03():
    model = build_mixture(1, 3.0, 27.0)
    eps, m = 0.3, 100_000
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pop = sample_population(model, m, eps, rng)
        run_attacks(model, [AttackPlan("lower_bound", [eps])], pop, rng)
        p = ServerParams(model.shape, 1, eps, default_backoff(m))
        out = run_server(pop.values, p, rng)
        assert out.overlap_violations == 0
        if len(out.clusters) != 1:
            continue
        e = out.clusters[0].eps_tilde
        hits += eps - 0.05 <= e <= eps_hat(eps, model.shape) + p.delta_backoff + 0.05
        true_eps = np.count_nonzero(pop.corrupted[out.members[0]]) / out.sizes.m2
        assert true_eps - 5 / math.sqrt(m) <= e
    assert hits >= 18


def test_deterministic(rng):
    vals = np.random.default_rng(1).standard_normal(20_000)
    p = params(backoff=0.05)
    a = run_server(vals, p, np.random.default_rng(7))
    b = run_server(vals, p, np.random.default_rng(7))
    assert a.clusters == b.clusters


@settings(max_examples=15, deadline=None)
@given(extra=st.lists(st.floats(20.0, 200.0), min_size=1, max_size=20))
def test_far_t2_points_leave_estimates_unchanged(extra):
    rng = np.random.default_rng(0)
    p = params(backoff=0.05)
    t2 = np.sort(rng.standard_normal(3000))
    clique = np.array([-0.2, 0.1])
    base, _ = estimate_cluster(clique, t2, p, 3000.0)
    more = np.sort(np.concatenate([t2, extra]))
    again, _ = estimate_cluster(clique, more, p, 3000.0)
    assert again == base
