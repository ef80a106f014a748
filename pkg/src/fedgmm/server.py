"""Server side: robust clustering of the reported values.

Pipeline: random three-way split into H / T1 / T2, density filter of H
against T1, 1-D clique formation at threshold 3 delta, then a median and a
contamination estimate per clique from the T2 points near it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import kill_budget
from .gauss import WindowShape, normal_mass

PHASE_H, PHASE_T1, PHASE_T2 = 0, 1, 2


def default_backoff(m: float) -> float:
    """delta(m) = max(0.02, m^(-1/3)); goes to zero while m_h still grows."""
    return max(0.02, float(m) ** (-1.0 / 3.0))


@dataclass(frozen=True)
class ServerParams:
    shape: WindowShape
    k: int
    c: float
    delta_backoff: float

    def __post_init__(self) -> None:
        if not 0.0 < self.delta_backoff < self.shape.rho:
            raise ValueError(
                f"backoff must lie in (0, rho={self.shape.rho:.6g}), got {self.delta_backoff!r}"
            )
        if self.k < 1 or self.c < 0:
            raise ValueError(f"invalid k={self.k}, c={self.c}")

    @property
    def heavy_size(self) -> float:
        """m_h = (2 / delta^2) log(k / delta)."""
        d = self.delta_backoff
        return 2.0 / (d * d) * math.log(self.k / d)


@dataclass(frozen=True)
class PhaseSizes:
    m: float
    m_h: float
    m1: float
    m2: float


def phase_sizes(n: int, params: ServerParams) -> PhaseSizes:
    m = n / (params.k + params.c)
    m_h = params.heavy_size
    if m_h >= m:
        raise ValueError(
            f"m_h={m_h:.1f} >= m={m:.1f}: backoff {params.delta_backoff:g} is too small for this m"
        )
    half = 0.5 * (m - m_h)
    return PhaseSizes(m, m_h, half, half)


@dataclass(frozen=True)
class ClusterEstimate:
    mu_tilde: float
    eps_tilde: float
    support_lo: float
    support_hi: float
    count: int

    def to_dict(self) -> dict:
        return {
            "mu_tilde": self.mu_tilde,
            "eps_tilde": self.eps_tilde,
            "support_lo": self.support_lo,
            "support_hi": self.support_hi,
            "count": self.count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ClusterEstimate:
        return cls(
            float(d["mu_tilde"]),
            float(d["eps_tilde"]),
            float(d["support_lo"]),
            float(d["support_hi"]),
            int(d["count"]),
        )


@dataclass
class ServerOutput:
    """Cluster list plus everything needed for diagnostics."""

    clusters: list[ClusterEstimate]
    sizes: PhaseSizes
    phase: np.ndarray
    members: list[np.ndarray] = field(default_factory=list)  # S_c as indices into values
    discarded: list[tuple[float, float]] = field(default_factory=list)
    dropped_empty: int = 0
    overlap_violations: int = 0


def split_phases(values, params: ServerParams, rng: np.random.Generator):
    """Assign every point to H, T1 or T2 with odds m_h : m1 : m2.

    Returns index arrays ``(H, T1, T2)`` into ``values``.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    phase = _assign(values.size, phase_sizes(values.size, params), rng)
    return tuple(np.flatnonzero(phase == p) for p in (PHASE_H, PHASE_T1, PHASE_T2))


def _assign(n: int, sizes: PhaseSizes, rng) -> np.ndarray:
    p = np.array([sizes.m_h, sizes.m1, sizes.m2]) / sizes.m
    return rng.choice(3, size=n, p=p / p.sum()).astype(np.int8)


def window_counts(points: np.ndarray, sorted_ref: np.ndarray, radius: float) -> np.ndarray:
    """For each point, how many of ``sorted_ref`` lie strictly within ``radius``."""
    hi = np.searchsorted(sorted_ref, points + radius, side="left")
    lo = np.searchsorted(sorted_ref, points - radius, side="right")
    return hi - lo


def density_filter(H, T1, params: ServerParams, m1: float) -> np.ndarray:
    """Boolean mask over H: keep h with at least (rho - delta) m1 T1 points within delta.

    ``m1`` is the expected per-component T1 count.  Only T1 points are
    counted, never other H points.
    """
    H = np.asarray(H, dtype=float)
    t1 = np.sort(np.asarray(T1, dtype=float))
    if t1.size == 0:
        return np.zeros(H.shape, dtype=bool)
    need = (params.shape.rho - params.delta_backoff) * m1
    return window_counts(H, t1, params.shape.delta) >= need


def form_cliques(H_kept, shape: WindowShape) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Split filtered points into 1-D connected groups (gap < 3 delta).

    Groups of diameter < 3 delta are cliques; longer ones are returned
    separately as non-cliques and play no further part.
    """
    pts = np.sort(np.asarray(H_kept, dtype=float))
    if pts.size == 0:
        return [], []
    reach = 3.0 * shape.delta
    breaks = np.flatnonzero(np.diff(pts) >= reach) + 1
    cliques, rejected = [], []
    for group in np.split(pts, breaks):
        (cliques if group[-1] - group[0] < reach else rejected).append(group)
    return cliques, rejected


def window_union_mask(sorted_t2: np.ndarray, clique: np.ndarray, radius: float):
    """Slice bounds into ``sorted_t2`` and a mask of points within ``radius`` of the clique."""
    q = np.sort(clique)
    a = int(np.searchsorted(sorted_t2, q[0] - radius, side="right"))
    b = int(np.searchsorted(sorted_t2, q[-1] + radius, side="left"))
    x = sorted_t2[a:b]
    pos = np.clip(np.searchsorted(q, x), 1, q.size - 1) if q.size > 1 else np.zeros(x.size, int)
    if q.size > 1:
        dist = np.minimum(np.abs(x - q[pos - 1]), np.abs(q[pos] - x))
    else:
        dist = np.abs(x - q[0])
    return a, b, dist < radius


def estimate_cluster(
    clique, sorted_t2: np.ndarray, params: ServerParams, m2: float
) -> tuple[ClusterEstimate | None, np.ndarray]:
    """Median and contamination estimate from the T2 points near ``clique``.

    Returns the estimate (None when no T2 point is near) and the positions of
    S_c inside ``sorted_t2``.
    """
    d = params.shape.delta
    a, _, mask = window_union_mask(sorted_t2, np.asarray(clique, dtype=float), d)
    pos = a + np.flatnonzero(mask)
    if pos.size == 0:
        return None, pos
    s = sorted_t2[pos]
    lo, hi = float(s[0]), float(s[-1])
    spread = max(0.0, hi - lo - 2.0 * d)
    raw = pos.size / m2 - normal_mass(-d, spread + d) + params.delta_backoff
    eps = min(max(raw, 0.0), kill_budget(params.shape))
    return ClusterEstimate(float(np.median(s)), eps, lo, hi, int(pos.size)), pos


def run_server(values, params: ServerParams, rng: np.random.Generator) -> ServerOutput:
    values = np.asarray(values, dtype=float)
    n = values.size
    sizes = phase_sizes(n, params) if n else PhaseSizes(0.0, params.heavy_size, 0.0, 0.0)
    phase = _assign(n, sizes, rng) if n else np.empty(0, dtype=np.int8)
    h = values[phase == PHASE_H]
    t1 = values[phase == PHASE_T1]
    t2_idx = np.flatnonzero(phase == PHASE_T2)
    order = np.argsort(values[t2_idx], kind="stable")
    t2_idx = t2_idx[order]
    t2 = values[t2_idx]

    kept = h[density_filter(h, t1, params, sizes.m1)]
    cliques, rejected = form_cliques(kept, params.shape)

    out = ServerOutput([], sizes, phase, discarded=[(float(g[0]), float(g[-1])) for g in rejected])
    cover = np.zeros(t2.size, dtype=np.int32)
    found = []
    for q in cliques:
        est, pos = estimate_cluster(q, t2, params, sizes.m2)
        cover[pos] += 1
        if est is None:
            out.dropped_empty += 1
            continue
        found.append((est, t2_idx[pos]))
    found.sort(key=lambda item: item[0].mu_tilde)
    out.clusters = [e for e, _ in found]
    out.members = [idx for _, idx in found]
    out.overlap_violations = int(np.count_nonzero(cover > 1))
    return out


def robust_clustering(values, params: ServerParams, rng: np.random.Generator) -> list[ClusterEstimate]:
    """Cluster estimates sorted by mu_tilde."""
    return run_server(values, params, rng).clusters
