"""Attack suite for the corrupted clients.

Attacks see the component means and how many corrupted slots they own, never
the genuine clients' values.  Every attack returns exactly one value per slot;
slots an attack has no use for are *parked*: spread out far beyond the
mixture, one point per window, where the density filter discards them.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gauss import SQRT_2PI, deficit_inverse, plateau_density, sample_plateau_density, window_mass
from .population import MixtureModel, Population

ATTACK_KINDS = ("null", "lower_bound", "uniform_spread", "cluster_killer")
KILL_OFFSET = 1.6
_PARK_GAP = 10.0  # in units of separation D


class AttackInfeasible(ValueError):
    """The requested attack cannot be mounted with the given parameters."""


@dataclass
class AttackPlan:
    """What an adversary intends to do.

    ``eps_alloc`` holds per-component masses in units of m.  ``params`` is
    kind specific:

    * lower_bound: ``mu_prime`` ("midpoint" | "left" | "right" or a list)
    * uniform_spread: ``margin``
    * cluster_killer: ``targets``, ``margin``; after running, ``achieved``
    """

    kind: str
    eps_alloc: list[float] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise AttackInfeasible(f"unknown attack kind {self.kind!r}; choose from {ATTACK_KINDS}")
        self.eps_alloc = [float(e) for e in self.eps_alloc]
        if any(e < 0 for e in self.eps_alloc):
            raise AttackInfeasible("per-component masses must be non-negative")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "eps_alloc": list(self.eps_alloc), "params": dict(self.params)}

    @classmethod
    def from_dict(cls, data: dict) -> AttackPlan:
        return cls(data["kind"], list(data.get("eps_alloc", [])), dict(data.get("params", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> AttackPlan:
        return cls.from_dict(json.loads(text))


def park(model: MixtureModel, n: int) -> np.ndarray:
    """``n`` harmless positions far to the right of every component."""
    start = max(model.means) + _PARK_GAP * model.separation
    return start + 2.5 * model.delta * np.arange(n, dtype=float)


def optimal_allocation(c: float, k: int) -> np.ndarray:
    """Split ``c`` evenly over k' = round(c / sqrt(2 pi)) components (clamped to [1, k])."""
    if not c > 0:
        raise AttackInfeasible(f"allocation needs c > 0, got {c!r}")
    kp = min(max(int(round(c / SQRT_2PI)), 1), k)
    alloc = np.zeros(k)
    alloc[:kp] = c / kp
    return alloc


# ---------------------------------------------------------------------------
# lower-bound attack
# ---------------------------------------------------------------------------


def attack_density(x, eps: float, mu: float, mu_prime: float):
    """psi(x) = (f_eps(x - mu') - phi(x - mu)) / eps."""
    x = np.asarray(x, dtype=float)
    genuine = np.exp(-0.5 * (x - mu) ** 2) / SQRT_2PI
    return (plateau_density(x, eps, mu_prime) - genuine) / eps


def resolve_mu_prime(mu: float, eps: float, rule) -> float:
    lo, hi = mu - SQRT_2PI * eps, mu
    if rule == "midpoint":
        return 0.5 * (lo + hi)
    if rule == "left":
        return lo
    if rule == "right":
        return hi
    val = float(rule)
    tol = 1e-12 * max(1.0, abs(mu))
    if not lo - tol <= val <= hi + tol:
        raise AttackInfeasible(
            f"mu'={val:g} outside [{lo:g}, {hi:g}]; psi would not be a density"
        )
    return val


def propose_and_accept(eps: float, mu: float, mu_prime: float, n_proposals: int, rng):
    """Run ``n_proposals`` rejection steps targeting psi; return the accepted draws.

    Proposals come from f_eps(. - mu') / (1 + eps); a draw y is kept with
    probability 1 - phi(y - mu) / f_eps(y - mu').  Acceptance rate is eps / (1 + eps).
    """
    y = sample_plateau_density(eps, mu_prime, rng, size=n_proposals)
    genuine = np.exp(-0.5 * (y - mu) ** 2) / SQRT_2PI
    keep = rng.random(n_proposals) * plateau_density(y, eps, mu_prime) >= genuine
    return y[keep]


def sample_attack_density(eps: float, mu: float, mu_prime: float, n: int, rng) -> np.ndarray:
    out: list[np.ndarray] = []
    have = 0
    rate = eps / (1.0 + eps)
    while have < n:
        batch = int(math.ceil((n - have) / rate * 1.1)) + 16
        got = propose_and_accept(eps, mu, mu_prime, batch, rng)
        out.append(got)
        have += got.size
    return np.concatenate(out)[:n] if out else np.empty(0)


def lower_bound_attack(
    model: MixtureModel, plan: AttackPlan, n_slots: int, rng: np.random.Generator, c: float
) -> np.ndarray:
    """Fill ``n_slots`` values: component i with probability eps_i / c, then a draw from psi.

    Pooled with component i's genuine samples this looks like the plateau
    density, so the server cannot tell mu_i apart from anything in
    [mu', mu' + sqrt(2 pi) eps_i].
    """
    if plan.kind != "lower_bound":
        raise AttackInfeasible(f"expected a lower_bound plan, got {plan.kind!r}")
    eps = np.asarray(plan.eps_alloc, dtype=float)
    if eps.size != model.k:
        raise AttackInfeasible(f"allocation has {eps.size} entries for k={model.k}")
    total = eps.sum()
    if c <= 0 or total > c * (1 + 1e-12):
        raise AttackInfeasible(f"allocation sums to {total:g}, exceeding budget c={c:g}")
    rule = plan.params.get("mu_prime", "midpoint")
    rules = rule if isinstance(rule, (list, tuple)) else [rule] * model.k
    probs = np.append(eps / c, max(0.0, 1.0 - total / c))
    labels = rng.choice(model.k + 1, size=n_slots, p=probs / probs.sum())
    values = np.empty(n_slots)
    for i in range(model.k):
        idx = np.flatnonzero(labels == i)
        if idx.size == 0:
            continue
        mu = model.means[i]
        mp = resolve_mu_prime(mu, eps[i], rules[i])
        values[idx] = sample_attack_density(eps[i], mu, mp, idx.size, rng)
    rest = np.flatnonzero(labels == model.k)
    values[rest] = park(model, rest.size)
    return values


# ---------------------------------------------------------------------------
# deterministic placements
# ---------------------------------------------------------------------------


def uniform_spread_offset(eps: float, model: MixtureModel, margin: float = 1e-3) -> float:
    """Offset from the mean of the farthest point that still survives filtering."""
    try:
        far = deficit_inverse(eps, model.shape)
    except ValueError:
        raise AttackInfeasible(
            f"per-component mass {eps:g} must stay below rho={model.shape.rho:.6g}"
        ) from None
    return max(far - margin, 0.0)


def uniform_spread_attack(
    model: MixtureModel, c: float, m: int, n_slots: int, margin: float = 1e-3
) -> np.ndarray:
    """Attack every component equally with mass c/k placed at its filter edge."""
    placed = _spread_points(model, c, m, n_slots, margin)
    return np.concatenate([placed, park(model, n_slots - placed.size)])


def _spread_points(model: MixtureModel, c: float, m: int, n_slots: int, margin: float) -> np.ndarray:
    off = uniform_spread_offset(c / model.k, model, margin)
    want = int(round(c * m))
    counts = np.full(model.k, want // model.k)
    counts[: want % model.k] += 1
    return np.repeat(model.as_array() + off, counts)[:n_slots]


def kill_blob_mass(model: MixtureModel) -> float:
    """Per-blob mass (units of m) needed at offset 1.6 delta: rho - f(1.6 delta)."""
    d = model.delta
    return model.shape.rho - window_mass(KILL_OFFSET * d, model.shape)


def cluster_killer_attack(
    model: MixtureModel,
    targets: Sequence[int],
    m: int,
    n_slots: int,
    margin: float = 0.05,
) -> tuple[np.ndarray, list[int]]:
    """Stretch each target component past 3 delta with two blobs at mu +- 1.6 delta.

    Returns the values and the targets actually attacked; with too few slots
    the attack covers as many targets (in the given order) as it can afford.
    """
    placed, achieved = _kill_points(model, targets, m, n_slots, margin)
    return np.concatenate([placed, park(model, n_slots - placed.size)]), achieved


def _kill_points(model, targets, m, n_slots, margin):
    d = model.delta
    blob = int(math.ceil(kill_blob_mass(model) * m * (1.0 + margin)))
    affordable = min(len(targets), n_slots // (2 * blob))
    achieved = [int(t) for t in list(targets)[:affordable]]
    parts = [np.empty(0)]
    for t in achieved:
        mu = model.means[t]
        parts.append(np.full(blob, mu - KILL_OFFSET * d))
        parts.append(np.full(blob, mu + KILL_OFFSET * d))
    return np.concatenate(parts), achieved


def null_attack(model: MixtureModel, n_slots: int, rng) -> np.ndarray:
    """Corrupted clients behave honestly."""
    labels = rng.integers(0, model.k, size=n_slots)
    return model.as_array()[labels] + rng.standard_normal(n_slots)


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------


def run_attacks(
    model: MixtureModel, plans: Sequence[AttackPlan], population: Population, rng
) -> list[AttackPlan]:
    """Fill the population's corrupted slots by running ``plans`` in order.

    Deterministic placements take the slots they need first-come; a
    lower_bound or null plan takes every slot that is left.  Slots no plan
    uses are parked.  Returns the plans with execution notes in ``params``.
    """
    n_slots = population.corrupted_slots.size
    m = population.m
    chunks: list[np.ndarray] = []
    left = n_slots
    executed: list[AttackPlan] = []
    for plan in plans:
        notes = dict(plan.params)
        if plan.kind == "cluster_killer":
            vals, achieved = _kill_points(
                model, notes.get("targets", []), m, left, notes.get("margin", 0.05)
            )
            notes["achieved"] = achieved
        elif plan.kind == "uniform_spread":
            c_spread = notes.get("c", sum(plan.eps_alloc) if plan.eps_alloc else population.c)
            vals = _spread_points(model, c_spread, m, left, notes.get("margin", 1e-3))
        elif plan.kind == "lower_bound":
            # standalone: label law eps_i / c; composite: spread over the slots that are left
            budget = population.c if left == n_slots else max(left / m, sum(plan.eps_alloc))
            vals = lower_bound_attack(model, plan, left, rng, c=budget)
        else:
            vals = null_attack(model, left, rng)
        notes["slots_used"] = int(vals.size)
        chunks.append(vals)
        left -= vals.size
        executed.append(AttackPlan(plan.kind, plan.eps_alloc, notes))
    chunks.append(park(model, left))
    population.fill_corrupted(np.concatenate(chunks) if chunks else np.empty(0))
    return executed
