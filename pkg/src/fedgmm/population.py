"""Ground-truth mixture and the client corruption process."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .gauss import WindowShape

CORRUPTED_LABEL = -1
POPULATION_FORMAT = "fedgmm.population/1"


class SeparationError(ValueError):
    """Component means closer than the required minimum separation."""


@dataclass(frozen=True)
class MixtureModel:
    means: tuple[float, ...]
    shape: WindowShape
    separation: float

    @property
    def k(self) -> int:
        return len(self.means)

    @property
    def delta(self) -> float:
        return self.shape.delta

    def as_array(self) -> np.ndarray:
        return np.asarray(self.means, dtype=float)


def build_mixture(
    k: int, delta: float, separation: float, means: Sequence[float] | None = None
) -> MixtureModel:
    """Place ``k`` unit-variance components at least ``separation`` apart.

    With ``means=None`` the components sit at ``0, D, 2D, ...``.
    """
    if k < 1:
        raise ValueError(f"need at least one component, got k={k}")
    shape = WindowShape(delta)
    if separation < 9.0 * shape.delta:
        raise SeparationError(
            f"separation D={separation:g} must be at least 9*delta={9.0 * shape.delta:g}"
        )
    if means is None:
        mu = tuple(float(i) * separation for i in range(k))
    else:
        mu = tuple(float(x) for x in means)
        if len(mu) != k:
            raise ValueError(f"expected {k} means, got {len(mu)}")
        order = sorted(range(k), key=lambda i: mu[i])
        for a, b in zip(order, order[1:]):
            if mu[b] - mu[a] < separation:
                raise SeparationError(
                    f"means {mu[a]:g} (index {a}) and {mu[b]:g} (index {b}) are "
                    f"{mu[b] - mu[a]:g} apart, less than D={separation:g}"
                )
    return MixtureModel(mu, shape, float(separation))


@dataclass
class Population:
    """Per-client values, corruption flags and true component labels.

    Corrupted clients carry ``CORRUPTED_LABEL`` and a NaN value until the
    adversary fills them in.
    """

    values: np.ndarray
    corrupted: np.ndarray
    true_label: np.ndarray
    m: int
    c: float

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def corrupted_slots(self) -> np.ndarray:
        return np.flatnonzero(self.corrupted)

    @property
    def genuine(self) -> np.ndarray:
        return ~self.corrupted

    def fill_corrupted(self, attack_values: np.ndarray) -> None:
        attack_values = np.asarray(attack_values, dtype=float)
        slots = self.corrupted_slots
        if attack_values.shape != slots.shape:
            raise ValueError(
                f"adversary returned {attack_values.size} values for {slots.size} corrupted slots"
            )
        self.values[slots] = attack_values

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": POPULATION_FORMAT,
            "m": self.m,
            "c": self.c,
            "value": [None if math.isnan(v) else v for v in self.values.tolist()],
            "corrupted": self.corrupted.tolist(),
            "label": self.true_label.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> Population:
        if data.get("format") != POPULATION_FORMAT:
            raise ValueError(f"unknown population format {data.get('format')!r}")
        values = np.array([math.nan if v is None else v for v in data["value"]], dtype=float)
        return cls(
            values=values,
            corrupted=np.array(data["corrupted"], dtype=bool),
            true_label=np.array(data["label"], dtype=np.int64),
            m=int(data["m"]),
            c=float(data["c"]),
        )

    def save(self, path: str | Path) -> None:
        """Write JSON (``.json``) or a columnar ``.npz`` archive."""
        path = Path(path)
        if path.suffix == ".npz":
            np.savez(
                path,
                value=self.values,
                corrupted=self.corrupted,
                label=self.true_label,
                meta=np.array([self.m, self.c], dtype=float),
            )
        else:
            path.write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> Population:
        path = Path(path)
        if path.suffix == ".npz":
            with np.load(path) as z:
                m, c = z["meta"]
                return cls(z["value"].copy(), z["corrupted"].copy(), z["label"].copy(), int(m), float(c))
        return cls.from_dict(json.loads(path.read_text()))


def client_count(k: int, c: float, m: int) -> int:
    return int(round((k + c) * m))


def sample_population(model: MixtureModel, m: int, c: float, rng: np.random.Generator) -> Population:
    """Draw round((k+c) m) clients; each is corrupted with probability c/(k+c)."""
    if m < 1:
        raise ValueError(f"m must be positive, got {m}")
    if c < 0:
        raise ValueError(f"c must be non-negative, got {c}")
    k = model.k
    n = client_count(k, c, m)
    corrupted = rng.random(n) < c / (k + c)
    labels = rng.integers(0, k, size=n)
    values = model.as_array()[labels] + rng.standard_normal(n)
    labels[corrupted] = CORRUPTED_LABEL
    values[corrupted] = np.nan
    return Population(values, corrupted, labels.astype(np.int64), int(m), float(c))
