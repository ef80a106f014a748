import json

import numpy as np
import pytest

from fedgmm.population import (
    CORRUPTED_LABEL,
    Population,
    SeparationError,
    build_mixture,
    client_count,
    sample_population,
)


def test_even_means():
    assert build_mixture(3, 3.0, 27.0).means == (0.0, 27.0, 54.0)
    assert build_mixture(1, 3.0, 27.0).k == 1


def test_separation_violations():
    with pytest.raises(SeparationError, match=r"0 \(index 0\) and 10 \(index 1\)"):
        build_mixture(2, 3.0, 27.0, means=[0, 10])
    with pytest.raises(SeparationError, match="9\\*delta"):
        build_mixture(2, 3.0, 20.0)
    with pytest.raises(ValueError):
        build_mixture(2, 3.0, 27.0, means=[0.0])


def test_unsorted_explicit_means_allowed():
    m = build_mixture(3, 2.0, 18.0, means=[40, 0, 20])
    assert m.means == (40.0, 0.0, 20.0)


def test_no_corruption_without_budget(rng):
    pop = sample_population(build_mixture(3, 3.0, 27.0), 1000, 0.0, rng)
    assert not pop.corrupted.any()
    assert pop.n == 3000


def test_corrupted_count_binomial(rng):
    k, c, m = 4, 1.0, 10_000
    pop = sample_population(build_mixture(k, 3.0, 27.0), m, c, rng)
    n, p = pop.n, c / (k + c)
    assert n == client_count(k, c, m) == 50_000
    assert abs(pop.corrupted.sum() - c * m) < 4 * np.sqrt(n * p * (1 - p))
    assert np.isnan(pop.values[pop.corrupted]).all()
    assert (pop.true_label[pop.corrupted] == CORRUPTED_LABEL).all()


def test_labels_uniform(rng):
    k = 5
    pop = sample_population(build_mixture(k, 3.0, 27.0), 20_000, 0.0, rng)
    counts = np.bincount(pop.true_label, minlength=k)
    n, p = pop.n, 1 / k
    assert np.all(np.abs(counts - n * p) < 4 * np.sqrt(n * p * (1 - p)))


def test_component_means_recovered(rng):
    model = build_mixture(3, 3.0, 27.0)
    m = 10_000
    pop = sample_population(model, m, 0.0, rng)
    for i, mu in enumerate(model.means):
        assert abs(pop.values[pop.true_label == i].mean() - mu) < 5 / np.sqrt(m)


def test_fractional_budget_rounds(rng):
    assert client_count(3, 0.25, 10) == 32
    pop = sample_population(build_mixture(3, 3.0, 27.0), 10, 0.25, rng)
    assert pop.n == 32


def test_fill_corrupted_checks_shape(rng):
    pop = sample_population(build_mixture(2, 3.0, 27.0), 100, 1.0, rng)
    with pytest.raises(ValueError, match="corrupted slots"):
        pop.fill_corrupted(np.zeros(pop.corrupted.sum() + 1))
    pop.fill_corrupted(np.full(pop.corrupted.sum(), 7.0))
    assert (pop.values[pop.corrupted] == 7.0).all()


@pytest.mark.parametrize("suffix", [".json", ".npz"])
def test_roundtrip_bit_exact(tmp_path, rng, suffix):
    pop = sample_population(build_mixture(3, 3.0, 27.0), 200, 0.7, rng)
    path = tmp_path / f"pop{suffix}"
    pop.save(path)
    back = Population.load(path)
    assert np.array_equal(back.values, pop.values, equal_nan=True)
    assert np.array_equal(back.corrupted, pop.corrupted)
    assert np.array_equal(back.true_label, pop.true_label)
    assert (back.m, back.c) == (pop.m, pop.c)


def test_json_format_guard():
    with pytest.raises(ValueError, match="format"):
        Population.from_dict(json.loads('{"format": "other"}'))
