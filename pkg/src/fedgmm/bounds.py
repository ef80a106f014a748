"""Closed-form theory: lower bound, one-component MSE bound and the
asymptotic upper bound with its constants.

Notation used throughout (all masses in per-component units of m):

* ``l(eps)``      offset at which the window mass drops by ``eps``
* ``g(eps)``      worst-case median error under ``eps`` contamination
* ``eps_hat``     upper end of the server's contamination estimate
* ``M(eps)``      one-component client MSE bound g(eps_hat)^2 / (1 + g(eps_hat)^2)
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .gauss import (
    SQRT_2PI,
    WindowShape,
    deficit_inverse,
    normal_mass,
    std_normal_pdf,
    std_normal_sf,
    upper_half_quantile,
    window_mass,
)

SQRT_8PI = math.sqrt(8.0 * math.pi)
FAR_SAMPLE_CONSTANT = 3.25
_EPS_CR_LO = 1e-18
_BISECTION_STEPS = 200


class DomainError(ValueError):
    """A bound was evaluated outside the range where it is defined."""


class NoCriticalPoint(UserWarning):
    """The convexity indicator showed no sign change on the search interval."""


def h_mse(eps: float) -> float:
    """Bayesian lower bound eps^2 / (eps^2 + 2 pi) for one attacked component."""
    if eps < 0:
        raise DomainError(f"h requires eps >= 0, got {eps!r}")
    e2 = eps * eps
    return e2 / (e2 + 2.0 * math.pi)


def minimax_lower_bound(c_over_k: float) -> float:
    if c_over_k < 0:
        raise DomainError(f"c/k must be non-negative, got {c_over_k!r}")
    if c_over_k >= SQRT_2PI:
        raise DomainError(f"lower bound is only claimed for c/k < sqrt(2 pi), got {c_over_k!r}")
    return c_over_k / SQRT_8PI


def lower_bound_by_enumeration(c: float, k: int) -> float:
    """max over integer k' in [1, k] of (k'/k) h(c/k'), by exhaustive search."""
    kp = np.arange(1, k + 1, dtype=float)
    ratio = c / kp
    vals = (kp / k) * ratio**2 / (ratio**2 + 2.0 * math.pi)
    return float(vals.max())


# ---------------------------------------------------------------------------
# l, g, eps_hat and their derivatives
# ---------------------------------------------------------------------------


def offset(eps: float, shape: WindowShape) -> float:
    """l(eps) = f^{-1}(rho - eps)."""
    try:
        return deficit_inverse(eps, shape)
    except ValueError as exc:
        raise DomainError(str(exc)) from None


def skew_term(eps: float, ctx: BoundContext | WindowShape) -> float:
    """Phi(l(eps) + delta) - Phi(delta): extra median drift from an asymmetric window."""
    shape = _shape(ctx)
    d = shape.delta
    return normal_mass(d, offset(eps, shape) + d)


def _median_arg(eps: float, shape: WindowShape) -> float:
    # Phi(g) - 1/2
    return 0.5 * (eps + skew_term(eps, shape))


def median_error_bound(eps: float, ctx: BoundContext | WindowShape) -> float:
    """g(eps) = Phi^{-1}((1 + eps + skew)/2)."""
    shape = _shape(ctx)
    u = _median_arg(eps, shape)
    if u >= 0.5:
        raise DomainError(f"median bound undefined at eps={eps!r}: quantile argument reaches 1")
    return upper_half_quantile(u)


def eps_hat(eps: float, ctx: BoundContext | WindowShape) -> float:
    shape = _shape(ctx)
    return eps + offset(eps, shape) * std_normal_pdf(shape.delta)


def offset_derivative(eps: float, shape: WindowShape, l_val: float | None = None) -> float:
    """l'(eps) = sqrt(2 pi) exp((l^2 + delta^2)/2) / (2 sinh(l delta))."""
    d = shape.delta
    l_val = offset(eps, shape) if l_val is None else l_val
    if l_val == 0.0:
        raise DomainError("l'(eps) is singular at eps = 0")
    return SQRT_2PI * math.exp(0.5 * (l_val * l_val + d * d)) / (2.0 * math.sinh(l_val * d))


def median_error_derivative(eps: float, shape: WindowShape) -> float:
    """g'(eps) = exp(l delta) / (4 phi(g) sinh(l delta))."""
    d = shape.delta
    l_val = offset(eps, shape)
    if l_val == 0.0:
        raise DomainError("g'(eps) is singular at eps = 0")
    g = median_error_bound(eps, shape)
    # exp(ld)/(2 sinh(ld)) = 1/(1 - exp(-2ld))
    return 1.0 / (2.0 * std_normal_pdf(g) * -math.expm1(-2.0 * l_val * d))


def median_error_second_derivative(eps: float, shape: WindowShape) -> float:
    """g'' = g' [g g' + delta l' (1 - coth(delta l))]."""
    d = shape.delta
    l_val = offset(eps, shape)
    g = median_error_bound(eps, shape)
    gp = median_error_derivative(eps, shape)
    lp = offset_derivative(eps, shape, l_val)
    return gp * (g * gp + d * lp * _one_minus_coth(l_val * d))


def _one_minus_coth(a: float) -> float:
    # 1 - coth(a) = -2 / (exp(2a) - 1)
    return -2.0 / math.expm1(2.0 * a)


def eps_hat_derivatives(eps: float, shape: WindowShape) -> tuple[float, float]:
    """(eps_hat', eps_hat'') using l'' = delta l'^2 (l/delta - coth(l delta))."""
    d = shape.delta
    l_val = offset(eps, shape)
    lp = offset_derivative(eps, shape, l_val)
    lpp = d * lp * lp * (l_val / d - 1.0 / math.tanh(l_val * d))
    pd = std_normal_pdf(d)
    return 1.0 + pd * lp, pd * lpp


# ---------------------------------------------------------------------------
# One-component bound and its convexity
# ---------------------------------------------------------------------------


def _raw_component_bound(eps: float, shape: WindowShape) -> float:
    eh = eps_hat(eps, shape)
    if eh >= shape.rho:
        return 1.0
    try:
        g = median_error_bound(eh, shape)
    except DomainError:
        return 1.0
    g2 = g * g
    return g2 / (1.0 + g2)


def one_component_mse_bound(eps: float, ctx: BoundContext | WindowShape) -> float:
    """M(eps) = g(eps_hat)^2 / (1 + g(eps_hat)^2).

    Masses past the kill budget rho - f(3 delta) destroy the component and
    count as MSE 1; so does an eps_hat outside the domain of g.
    """
    if eps < 0:
        raise DomainError(f"contamination must be non-negative, got {eps!r}")
    shape = _shape(ctx)
    if eps > kill_budget(shape):
        return 1.0
    return _raw_component_bound(eps, shape)


def component_bound_doubled(eps_tilde: float, ctx: BoundContext | WindowShape) -> float:
    """2 g(eps)^2 / (1 + g(eps)^2): the looser form carrying a factor of two."""
    g = median_error_bound(eps_tilde, _shape(ctx))
    return 2.0 * g * g / (1.0 + g * g)


def convexity_indicator(eps: float, ctx: BoundContext | WindowShape) -> float:
    """Quantity with the same sign as d^2 M / d eps^2.

    With ``G = g(eps_hat)`` and derivatives of g, l taken at ``eps_hat`` unless
    marked otherwise::

        (1 - G^2)^2 + (1 + G^2) (G / g') [ eps_hat'' / eps_hat'^2
                                           - delta l' exp(-l delta) / sinh(l delta) ]

    where ``eps_hat''/eps_hat'^2 = phi(delta) delta l'(eps)^2 (l(eps)/delta -
    coth(l(eps) delta)) / eps_hat'^2``.  Defined for 0 < eps with eps_hat < rho.
    """
    shape = _shape(ctx)
    if not eps > 0:
        raise DomainError("convexity indicator is singular at eps = 0")
    d = shape.delta
    eh = eps_hat(eps, shape)
    if eh >= shape.rho:
        raise DomainError(f"eps_hat({eps!r}) leaves the domain of g")
    lh = offset(eh, shape)
    G = median_error_bound(eh, shape)
    Gp = median_error_derivative(eh, shape)
    lph = offset_derivative(eh, shape, lh)
    ehp, ehpp = eps_hat_derivatives(eps, shape)
    # exp(-a)/sinh(a) = -(1 - coth(a))
    tail = -d * lph * _one_minus_coth(lh * d)
    bracket = ehpp / (ehp * ehp) - tail
    return (1.0 - G * G) ** 2 + (1.0 + G * G) * (G / Gp) * bracket


def critical_eps(ctx: BoundContext | WindowShape) -> float:
    """Positive zero of the convexity indicator (the concave-to-convex switch of M).

    Bisection in log(eps) over [1e-18, rho/2].  Returns 0.0 with a
    ``NoCriticalPoint`` warning when there is no sign change.
    """
    shape = _shape(ctx)
    lo, hi = math.log(_EPS_CR_LO), math.log(0.5 * shape.rho)
    s_lo = math.copysign(1.0, convexity_indicator(math.exp(lo), shape))
    s_hi = math.copysign(1.0, convexity_indicator(math.exp(hi), shape))
    if s_lo == s_hi:
        warnings.warn(
            f"no sign change of the convexity indicator for delta={shape.delta}",
            NoCriticalPoint,
            stacklevel=2,
        )
        return 0.0
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if math.copysign(1.0, convexity_indicator(math.exp(mid), shape)) == s_lo:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return math.exp(0.5 * (lo + hi))


def far_sample_terms(ctx: BoundContext | WindowShape) -> tuple[float, float]:
    """(P(|x_v - mu| >= 1.5 delta), MSE bound 3.25 delta^2 given that event)."""
    d = _shape(ctx).delta
    return 2.0 * std_normal_sf(1.5 * d), FAR_SAMPLE_CONSTANT * d * d


def kill_budget(ctx: BoundContext | WindowShape) -> float:
    """rho - f(3 delta): mass that suffices to destroy a component's estimate."""
    shape = _shape(ctx)
    return shape.rho - window_mass(3.0 * shape.delta, shape)


# ---------------------------------------------------------------------------
# Context and the upper bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundContext:
    """All delta-dependent constants, computed once from the window shape."""

    shape: WindowShape
    eps_cr: float = field(init=False)
    kill_budget: float = field(init=False)
    small_c_constant: float = field(init=False)
    cbar: float = field(init=False)
    c2: float = field(init=False)
    c0: float = field(init=False)
    c1: float = field(init=False)
    c3: float = field(init=False, default=FAR_SAMPLE_CONSTANT)

    def __post_init__(self) -> None:
        shape = self.shape
        kb = kill_budget(shape)
        eps_cr = critical_eps(shape)
        pd = std_normal_pdf(shape.delta)
        if eps_cr > 0:
            C = eps_cr / offset(eps_cr, shape) ** 3
            a = eps_cr ** (2 / 3) + pd / C ** (1 / 3)
            cbar = 0.5 * a * eps_cr ** (2 / 9) + pd / (2.0 * C ** (1 / 3)) * a ** (1 / 3)
            c2 = cbar**2 / std_normal_pdf(cbar * eps_cr ** (1 / 9)) ** 2
            c1 = one_component_mse_bound(eps_cr, shape)
        else:
            C = cbar = c2 = math.nan
            c1 = 0.0
        for name, val in (
            ("eps_cr", eps_cr),
            ("kill_budget", kb),
            ("small_c_constant", C),
            ("cbar", cbar),
            ("c2", c2),
            ("c0", 1.0 / kb),
            ("c1", c1),
        ):
            object.__setattr__(self, name, val)

    @classmethod
    def for_delta(cls, delta: float) -> BoundContext:
        return cls(WindowShape(delta))

    @property
    def delta(self) -> float:
        return self.shape.delta

    def as_dict(self) -> dict:
        return {
            "delta": self.delta,
            "rho": self.shape.rho,
            "eps_cr": self.eps_cr,
            "kill_budget": self.kill_budget,
            "C": self.small_c_constant,
            "Cbar": self.cbar,
            "C0": self.c0,
            "C1": self.c1,
            "C2": self.c2,
            "C3": self.c3,
        }


def bound_constants(shape: WindowShape) -> BoundContext:
    return BoundContext(shape)


def _shape(ctx: BoundContext | WindowShape) -> WindowShape:
    return ctx.shape if isinstance(ctx, BoundContext) else ctx


class UpperBound(NamedTuple):
    theorem: float
    tight: float


def asymptotic_upper_bound(c_over_k: float, ctx: BoundContext) -> UpperBound:
    """Large-m upper bound on the average client MSE.

    ``theorem`` follows the two-branch statement literally.  ``tight`` uses
    M(c/k) itself instead of the C2 (c/k)^(2/9) loosening on the small branch
    and carries the far-sample term on both branches.
    """
    if c_over_k < 0:
        raise DomainError(f"c/k must be non-negative, got {c_over_k!r}")
    tail_prob, cond_mse = far_sample_terms(ctx)
    far = tail_prob * cond_mse
    if c_over_k > ctx.eps_cr:
        base = ctx.c0 * c_over_k + ctx.c1
        return UpperBound(base, base + far)
    loose = ctx.c2 * c_over_k ** (2 / 9)
    tight = min(loose, one_component_mse_bound(c_over_k, ctx))
    return UpperBound(loose + far, tight + far)
