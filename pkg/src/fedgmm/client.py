"""Client side: shrink the verified sample toward the nearest server estimate."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bounds import BoundContext, DomainError, median_error_bound
from .server import ClusterEstimate


@dataclass(frozen=True)
class ClientDecision:
    estimate: float
    used_cluster: int | None
    weight_on_verified: float


def verified_weight(eps_tilde: float, ctx: BoundContext) -> float | None:
    """g(eps)^2 / (1 + g(eps)^2), or None if the cluster should not be trusted."""
    if eps_tilde >= ctx.kill_budget:
        return None
    try:
        g = median_error_bound(eps_tilde, ctx)
    except DomainError:
        return None
    g2 = g * g
    return g2 / (1.0 + g2)


def _nearest(mus: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Index of the nearest entry of sorted ``mus``; ties go to the smaller value."""
    pos = np.searchsorted(mus, x)
    left = np.clip(pos - 1, 0, mus.size - 1)
    right = np.clip(pos, 0, mus.size - 1)
    return np.where(np.abs(x - mus[left]) <= np.abs(mus[right] - x), left, right)


def combine_estimates(clusters: Sequence[ClusterEstimate], x_v: float, ctx: BoundContext) -> ClientDecision:
    """Final estimate for one client holding verified sample ``x_v``."""
    est, used, w = combine_all(clusters, np.array([x_v], dtype=float), ctx)
    return ClientDecision(float(est[0]), None if used[0] < 0 else int(used[0]), float(w[0]))


def combine_all(clusters: Sequence[ClusterEstimate], x, ctx: BoundContext):
    """Vectorised ``combine_estimates`` over many verified samples.

    Returns ``(estimates, used_cluster, weight_on_verified)`` where
    ``used_cluster`` is -1 for clients that fell back to their own sample.
    Indices refer to ``clusters`` as given.
    """
    x = np.asarray(x, dtype=float)
    est = x.copy()
    used = np.full(x.shape, -1, dtype=np.int64)
    weight = np.ones(x.shape)
    if not clusters or x.size == 0:
        return est, used, weight
    order = np.argsort([c.mu_tilde for c in clusters], kind="stable")
    mus = np.array([clusters[i].mu_tilde for i in order])
    w_cluster = np.array(
        [np.nan if (w := verified_weight(clusters[i].eps_tilde, ctx)) is None else w for i in order]
    )
    j = _nearest(mus, x)
    ok = (np.abs(mus[j] - x) < 1.5 * ctx.delta) & ~np.isnan(w_cluster[j])
    w = w_cluster[j[ok]]
    est[ok] = (1.0 - w) * mus[j[ok]] + w * x[ok]
    used[ok] = order[j[ok]]
    weight[ok] = w
    return est, used, weight
