"""Standard-normal special functions and the window-mass function.

Everything downstream works in standard-deviation units (sigma = 1).  The
window mass ``f(x) = Phi(x + delta) - Phi(x - delta)`` is the probability
that a genuine sample from a unit-variance component lands within ``delta``
of a point sitting ``x`` away from the component mean; ``rho = f(0)``.

Tail-sensitive quantities (``rho - f(x)`` for small ``x``, ``Phi(b) - Phi(a)``
for short intervals) are computed with Gauss-Legendre quadrature instead of
differences of cdf values, because the bounds module evaluates them at
corruption levels down to ~1e-18.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfinv, ndtr, ndtri

SQRT_2PI = math.sqrt(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(40)
# nodes mapped from [-1, 1] to [0, 1]
_GL_T = 0.5 * (_GL_NODES + 1.0)
_GL_W = 0.5 * _GL_WEIGHTS


def _check_finite(x: float, name: str = "x") -> float:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"{name} must be finite, got {x!r}")
    return x


def std_normal_pdf(x: float) -> float:
    x = _check_finite(x)
    return math.exp(-0.5 * x * x) / SQRT_2PI


def std_normal_cdf(x: float) -> float:
    """Phi(x), accurate in relative terms far into the lower tail."""
    x = _check_finite(x)
    return float(ndtr(x))


def std_normal_sf(x: float) -> float:
    """Upper tail 1 - Phi(x) without cancellation."""
    x = _check_finite(x)
    return float(ndtr(-x))


def std_normal_quantile(p: float) -> float:
    """Inverse of Phi, polished with Newton steps against ``std_normal_cdf``.

    Upper-half probabilities are mapped to the lower tail through ``1 - p``,
    which is exact in binary floating point for ``p >= 0.5``.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile requires p in (0, 1), got {p!r}")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        return -_lower_quantile(1.0 - p)
    return _lower_quantile(p)


def _lower_quantile(q: float) -> float:
    x = float(ndtri(q))
    for _ in range(4):
        dens = math.exp(-0.5 * x * x) / SQRT_2PI
        if dens == 0.0:
            break
        step = (float(ndtr(x)) - q) / dens
        x -= step
        if abs(step) <= 1e-16 * max(1.0, abs(x)):
            break
    return x


def upper_half_quantile(u: float) -> float:
    """Return x >= 0 with Phi(x) - 1/2 = u, for u in [0, 1/2).

    Equivalent to ``std_normal_quantile(0.5 + u)`` but keeps full relative
    precision when ``u`` is tiny (the sum ``0.5 + u`` would round it away).
    """
    u = float(u)
    if not 0.0 <= u < 0.5:
        raise ValueError(f"upper_half_quantile requires u in [0, 0.5), got {u!r}")
    if u == 0.0:
        return 0.0
    if u > 0.25:
        return -_lower_quantile(0.5 - u)
    x = _SQRT2 * float(erfinv(2.0 * u))
    # one Newton step on 0.5*erf(x/sqrt2) - u
    dens = math.exp(-0.5 * x * x) / SQRT_2PI
    x -= (0.5 * math.erf(x / _SQRT2) - u) / dens
    return x


def normal_mass(a: float, b: float) -> float:
    """Phi(b) - Phi(a) for a <= b, without catastrophic cancellation."""
    if b < a:
        raise ValueError(f"normal_mass needs a <= b, got ({a}, {b})")
    width = b - a
    if width == 0.0:
        return 0.0
    if width <= 1.0:
        t = a + width * _GL_T
        return float(width * np.dot(_GL_W, np.exp(-0.5 * t * t))) / SQRT_2PI
    if a >= 0.0:
        return float(ndtr(-a) - ndtr(-b))
    return float(ndtr(b) - ndtr(a))


@dataclass(frozen=True)
class WindowShape:
    """Half-window ``delta`` and the cached peak window mass ``rho = f(0)``."""

    delta: float
    rho: float = field(init=False)

    def __post_init__(self) -> None:
        d = float(self.delta)
        if not math.isfinite(d) or d <= 1.5:
            raise ValueError(f"window half-width must satisfy delta > 1.5, got {self.delta!r}")
        object.__setattr__(self, "delta", d)
        object.__setattr__(self, "rho", 2.0 * float(ndtr(d)) - 1.0)


def window_mass(x: float, shape: WindowShape) -> float:
    """f(x) = Phi(x + delta) - Phi(x - delta); even, maximal at 0."""
    x = abs(_check_finite(x))
    d = shape.delta
    return normal_mass(x - d, x + d)


def window_deficit(x: float, shape: WindowShape) -> float:
    """rho - f(x), computed directly.

    For small ``x`` this is the integral over [0, x] of
    ``phi(t - delta) - phi(t + delta) = phi(t - delta) * (1 - exp(-2 t delta))``,
    which has no cancellation even where ``rho - f(x)`` is ~1e-18.
    """
    x = abs(_check_finite(x))
    d = shape.delta
    if x == 0.0:
        return 0.0
    if x <= 1.0:
        t = x * _GL_T
        integrand = np.exp(-0.5 * (t - d) ** 2) * -np.expm1(-2.0 * d * t)
        return float(x * np.dot(_GL_W, integrand)) / SQRT_2PI
    return normal_mass(-d, x - d) - normal_mass(d, x + d)


def _solve_increasing(func, target: float, guess: float = 1.0) -> float:
    """Root of func(x) = target on [0, inf) for an increasing func with func(0) = 0.

    The bracket is grown geometrically around ``guess`` so that roots many
    orders of magnitude below 1 are still found in a few dozen steps.
    """
    lo, hi = 0.25 * guess, 4.0 * guess
    while func(lo) > target:
        lo *= 0.0625
        if lo == 0.0:
            break
    while func(hi) < target:
        hi *= 2.0
        if hi > 1e6:
            raise ArithmeticError("failed to bracket window inverse")
    return brentq(lambda x: func(x) - target, lo, hi, xtol=1e-300, rtol=8.9e-16, maxiter=500)


def _small_offset_guess(eps: float, shape: WindowShape) -> float:
    # rho - f(x) ~ phi(delta) delta x^2 near x = 0
    d = shape.delta
    return min(1.0, math.sqrt(eps * SQRT_2PI * math.exp(0.5 * d * d) / d))


def deficit_inverse(eps: float, shape: WindowShape) -> float:
    """Offset l(eps) >= 0 at which the window mass has dropped by ``eps``.

    Same as ``window_mass_inverse(rho - eps)`` but without forming
    ``rho - eps``, which would discard most of a tiny ``eps``.
    """
    eps = float(eps)
    if not 0.0 <= eps < shape.rho:
        raise ValueError(f"window deficit must lie in [0, rho={shape.rho:.12g}), got {eps!r}")
    if eps == 0.0:
        return 0.0
    if eps <= 0.5 * shape.rho:
        return _solve_increasing(lambda x: window_deficit(x, shape), eps, _small_offset_guess(eps, shape))
    y = shape.rho - eps
    return _solve_decreasing_mass(y, shape)


def _solve_decreasing_mass(y: float, shape: WindowShape) -> float:
    hi = 1.0
    while window_mass(hi, shape) > y:
        hi *= 2.0
        if hi > 1e6:
            raise ArithmeticError("failed to bracket window inverse")
    return brentq(
        lambda x: window_mass(x, shape) - y, 0.0, hi, xtol=1e-300, rtol=8.9e-16, maxiter=500
    )


def window_mass_inverse(y: float, shape: WindowShape) -> float:
    """The unique x >= 0 with f(x) = y, for y in (0, rho]."""
    y = float(y)
    if not 0.0 < y <= shape.rho:
        raise ValueError(f"window mass must lie in (0, rho={shape.rho:.12g}], got {y!r}")
    if y == shape.rho:
        return 0.0
    if y >= 0.5 * shape.rho:
        return _solve_increasing(
            lambda x: window_deficit(x, shape), shape.rho - y, _small_offset_guess(shape.rho - y, shape)
        )
    return _solve_decreasing_mass(y, shape)


def plateau_density(x, eps: float, mu_prime: float = 0.0):
    """Unnormalised plateau density f_eps(x - mu_prime); integrates to 1 + eps.

    A standard normal split at its mode, with a flat top of height
    1/sqrt(2 pi) and width sqrt(2 pi) * eps inserted between the halves.
    """
    if eps < 0:
        raise ValueError("plateau width must be non-negative")
    z = np.asarray(x, dtype=float) - mu_prime
    width = SQRT_2PI * eps
    shifted = np.where(z > width, z - width, np.minimum(z, 0.0))
    out = np.exp(-0.5 * shifted * shifted) / SQRT_2PI
    return out if out.ndim else float(out)


def sample_plateau_density(eps: float, mu_prime: float, rng: np.random.Generator, size=None):
    """Draw from f_eps(. - mu_prime) / (1 + eps).

    Three-part mixture: left half-normal below ``mu_prime``, uniform plateau of
    width ``sqrt(2 pi) * eps``, right half-normal beyond the plateau.
    """
    if not eps > 0:
        raise ValueError(f"plateau sampler requires eps > 0, got {eps!r}")
    n = 1 if size is None else int(np.prod(size))
    width = SQRT_2PI * eps
    side = 0.5 / (1.0 + eps)
    u = rng.random(n)
    z = np.abs(rng.standard_normal(n))
    flat = rng.random(n) * width
    out = np.where(u < side, -z, np.where(u < 1.0 - side, flat, width + z)) + mu_prime
    if size is None:
        return float(out[0])
    return out.reshape(size)
