"""f-divergence catalog: pointwise evaluators, penalty terms, exact divergences
on finite distributions and the control-variate Monte-Carlo estimator.

All logarithms are natural. Evaluators accept scalars or numpy arrays and
return the same kind.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

LOG2 = math.log(2.0)

__all__ = [
    "Divergence",
    "DivergenceSpec",
    "DivergenceError",
    "DomainError",
    "RangeError",
    "NonDifferentiableError",
    "UnsupportedDivergenceError",
    "parse_divergence",
    "f_value",
    "f_prime",
    "f_double_prime",
    "f_prime_inv",
    "f_prime_sup",
    "penalty_term",
    "exact_divergence",
    "mc_estimate",
    "mc_terms",
]


class DivergenceError(ValueError):
    """Base class for divergence evaluation errors."""


class DomainError(DivergenceError):
    """Argument outside the domain of f or f'."""


class RangeError(DivergenceError):
    """Argument outside the range of f', so (f')^-1 is undefined."""

    def __init__(self, message: str, bound: float):
        super().__init__(message)
        self.bound = bound


class NonDifferentiableError(DivergenceError):
    """f has a kink at the requested point."""


class UnsupportedDivergenceError(NotImplementedError):
    """The operation is not defined for this divergence."""


class Divergence(str, enum.Enum):
    REVERSE_KL = "rkl"
    FORWARD_KL = "fkl"
    JENSEN_SHANNON = "jsd"
    ALPHA = "alpha"
    TOTAL_VARIATION = "tv"
    CHI_SQUARED = "chi2"


_ADMISSIBLE = {
    Divergence.REVERSE_KL,
    Divergence.FORWARD_KL,
    Divergence.JENSEN_SHANNON,
    Divergence.ALPHA,
}


@dataclass(frozen=True)
class DivergenceSpec:
    """One row of the divergence table.

    ``alpha`` is only meaningful for :attr:`Divergence.ALPHA` and must lie in
    the open interval (0, 1).
    """

    name: Divergence
    alpha: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "name", Divergence(self.name))
        if self.name is Divergence.ALPHA:
            if self.alpha is None or not (0.0 < float(self.alpha) < 1.0):
                raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")
            object.__setattr__(self, "alpha", float(self.alpha))
        elif self.alpha is not None:
            raise ValueError(f"alpha given for non-alpha divergence {self.name.value}")

    @property
    def solver_admissible(self) -> bool:
        """True iff 0 is outside the domain of f'."""
        return self.name in _ADMISSIBLE

    @property
    def strictly_convex(self) -> bool:
        return self.name is not Divergence.TOTAL_VARIATION

    @property
    def label(self) -> str:
        if self.name is Divergence.ALPHA:
            return f"alpha:{self.alpha:g}"
        return self.name.value

    def __str__(self) -> str:
        return self.label

    # convenience wrappers
    def f(self, u):
        return f_value(self, u)

    def fp(self, u):
        return f_prime(self, u)

    def fpp(self, u):
        return f_double_prime(self, u)

    def fp_inv(self, v):
        return f_prime_inv(self, v)


def parse_divergence(text) -> DivergenceSpec:
    """Parse ``rkl``, ``fkl``, ``jsd``, ``alpha:<value>``, ``tv`` or ``chi2``."""
    if isinstance(text, DivergenceSpec):
        return text
    s = str(text).strip().lower()
    if s.startswith("alpha"):
        _, sep, value = s.partition(":")
        if not sep or not value:
            raise ValueError("alpha divergence needs a value, e.g. 'alpha:0.5'")
        try:
            a = float(value)
        except ValueError:
            raise ValueError(f"bad alpha value {value!r}") from None
        return DivergenceSpec(Divergence.ALPHA, a)
    try:
        return DivergenceSpec(Divergence(s))
    except ValueError:
        names = ", ".join(d.value for d in Divergence)
        raise ValueError(f"unknown divergence {text!r}; expected one of {names}") from None


def _wrap(x):
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _unwrap(arr, scalar):
    return float(arr) if scalar else arr


def f_value(spec: DivergenceSpec, u):
    """Generator function f(u).

    u = 0 is accepted where f extends continuously (rkl, jsd, tv, chi2).
    """
    u, scalar = _wrap(u)
    if np.any(u < 0) or np.any(np.isnan(u)):
        raise DomainError(f"{spec.label}: f requires u >= 0")
    zero = u == 0
    if np.any(zero) and spec.name in (Divergence.FORWARD_KL, Divergence.ALPHA):
        raise DomainError(f"{spec.label}: f is not defined at u = 0")
    name = spec.name
    with np.errstate(divide="ignore", invalid="ignore"):
        if name is Divergence.REVERSE_KL:
            out = np.where(zero, 0.0, u * np.log(np.where(zero, 1.0, u)))
        elif name is Divergence.FORWARD_KL:
            out = -np.log(u)
        elif name is Divergence.JENSEN_SHANNON:
            safe = np.where(zero, 1.0, u)
            out = np.where(zero, LOG2, safe * np.log(safe) - (safe + 1.0) * np.log((safe + 1.0) / 2.0))
        elif name is Divergence.ALPHA:
            a = spec.alpha
            out = (u ** (1.0 - a) - (1.0 - a) * u - a) / (a * (a - 1.0))
        elif name is Divergence.TOTAL_VARIATION:
            out = 0.5 * np.abs(u - 1.0)
        else:
            out = (u - 1.0) ** 2
    out = np.where(u == 1.0, 0.0, out)
    return _unwrap(out, scalar)


def f_prime(spec: DivergenceSpec, u):
    """First derivative f'(u), u > 0."""
    u, scalar = _wrap(u)
    if np.any(~(u > 0)):
        raise DomainError(f"{spec.label}: f' requires u > 0")
    name = spec.name
    if name is Divergence.REVERSE_KL:
        out = np.log(u) + 1.0
    elif name is Divergence.FORWARD_KL:
        out = -1.0 / u
    elif name is Divergence.JENSEN_SHANNON:
        # log(2u/(1+u)) written to stay accurate as u -> infinity
        out = LOG2 - np.log1p(1.0 / u)
    elif name is Divergence.ALPHA:
        a = spec.alpha
        out = -np.expm1(-a * np.log(u)) / a
    elif name is Divergence.TOTAL_VARIATION:
        if np.any(u == 1.0):
            raise NonDifferentiableError("tv: f is not differentiable at u = 1")
        out = np.where(u > 1.0, 0.5, -0.5)
    else:
        out = 2.0 * (u - 1.0)
    return _unwrap(out, scalar)


def f_double_prime(spec: DivergenceSpec, u):
    """Second derivative f''(u) for the solver-admissible rows."""
    u, scalar = _wrap(u)
    if not spec.solver_admissible:
        raise UnsupportedDivergenceError(f"f'' not provided for {spec.label}")
    if np.any(~(u > 0)):
        raise DomainError(f"{spec.label}: f'' requires u > 0")
    name = spec.name
    if name is Divergence.REVERSE_KL:
        out = 1.0 / u
    elif name is Divergence.FORWARD_KL:
        out = 1.0 / (u * u)
    elif name is Divergence.JENSEN_SHANNON:
        out = 1.0 / (u * (1.0 + u))
    else:
        out = u ** (-spec.alpha - 1.0)
    return _unwrap(out, scalar)


def f_prime_sup(spec: DivergenceSpec) -> float:
    """Supremum of the range of f' (never attained)."""
    name = spec.name
    if name is Divergence.REVERSE_KL:
        return math.inf
    if name is Divergence.FORWARD_KL:
        return 0.0
    if name is Divergence.JENSEN_SHANNON:
        return LOG2
    if name is Divergence.ALPHA:
        return 1.0 / spec.alpha
    raise UnsupportedDivergenceError(f"(f')^-1 not defined for {spec.label}")


def f_prime_inv(spec: DivergenceSpec, v):
    """Inverse of f' on its range; returns u > 0."""
    v, scalar = _wrap(v)
    sup = f_prime_sup(spec)
    if np.any(np.isnan(v)) or np.any(v >= sup):
        raise RangeError(f"{spec.label}: (f')^-1 requires v < {sup:.17g}", bound=sup)
    name = spec.name
    if name is Divergence.REVERSE_KL:
        out = np.exp(v - 1.0)
    elif name is Divergence.FORWARD_KL:
        out = -1.0 / v
    elif name is Divergence.JENSEN_SHANNON:
        out = 1.0 / np.expm1(LOG2 - v)
    else:
        a = spec.alpha
        out = np.exp(-np.log1p(-a * v) / a)
    return _unwrap(out, scalar)


def _perspective_slope(spec: DivergenceSpec) -> float:
    """lim_{u->inf} f(u)/u, the cost of mass where q = 0."""
    name = spec.name
    if name in (Divergence.REVERSE_KL, Divergence.CHI_SQUARED):
        return math.inf
    if name is Divergence.FORWARD_KL:
        return 0.0
    if name is Divergence.JENSEN_SHANNON:
        return LOG2
    if name is Divergence.ALPHA:
        return 1.0 / spec.alpha
    return 0.5


def _f_at_zero(spec: DivergenceSpec) -> float:
    name = spec.name
    if name is Divergence.FORWARD_KL:
        return math.inf
    if name is Divergence.ALPHA:
        return 1.0 / (1.0 - spec.alpha)
    return f_value(spec, 0.0)


def penalty_term(spec: DivergenceSpec, t):
    """Per-sample penalty magnitude for t = pi_ref/pi.

    rkl: log t;  jsd: t log t - (t+1) log((t+1)/2);  fkl: t log t.
    """
    t, scalar = _wrap(t)
    if np.any(~(t > 0)):
        raise DomainError("penalty requires t > 0")
    name = spec.name
    if name is Divergence.REVERSE_KL:
        out = np.log(t)
    elif name is Divergence.JENSEN_SHANNON:
        out = t * np.log(t) - (t + 1.0) * np.log((t + 1.0) / 2.0)
    elif name is Divergence.FORWARD_KL:
        out = t * np.log(t)
    else:
        raise UnsupportedDivergenceError(f"no reward penalty defined for {spec.label}")
    return _unwrap(out, scalar)


def exact_divergence(spec: DivergenceSpec, p, q) -> float:
    """D_f(p, q) = sum_y q(y) f(p(y)/q(y)) on a finite outcome set.

    Entries with q = 0 < p contribute p * lim f(u)/u (infinite for rkl and
    chi2); entries with p = 0 < q contribute q * f(0).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise DomainError("distributions must be non-negative")
    both = (p > 0) & (q > 0)
    total = 0.0
    if np.any(both):
        total += float(np.sum(q[both] * f_value(spec, p[both] / q[both])))
    only_p = (p > 0) & (q == 0)
    if np.any(only_p):
        slope = _perspective_slope(spec)
        total += math.inf if math.isinf(slope) else slope * float(np.sum(p[only_p]))
    only_q = (p == 0) & (q > 0)
    if np.any(only_q):
        f0 = _f_at_zero(spec)
        total += math.inf if math.isinf(f0) else f0 * float(np.sum(q[only_q]))
    # strict convexity puts the minimum at p = q; clip sub-ulp negatives
    return max(total, 0.0)


def _control_slope(spec: DivergenceSpec) -> float:
    if spec.name is Divergence.TOTAL_VARIATION:
        return 0.0  # a subgradient at the kink keeps the estimator unbiased
    return f_prime(spec, 1.0)


def mc_terms(spec: DivergenceSpec, ratio_samples) -> np.ndarray:
    """Per-sample values f(r) - f'(1) (r - 1)."""
    r = np.asarray(ratio_samples, dtype=float)
    return f_value(spec, r) - _control_slope(spec) * (r - 1.0)


def mc_estimate(spec: DivergenceSpec, ratio_samples) -> tuple[float, float]:
    """Unbiased control-variate estimate of D_f(p, q) from ratios r = p/q, x ~ q.

    Returns ``(estimate, standard_error)``. The standard error is ``inf`` for
    a single sample.
    """
    r = np.asarray(ratio_samples, dtype=float).ravel()
    if r.size == 0:
        raise ValueError("mc_estimate needs at least one sample")
    terms = mc_terms(spec, r)
    mean = float(np.mean(terms))
    if r.size == 1:
        return mean, math.inf
    se = float(np.std(terms, ddof=1) / math.sqrt(r.size))
    return mean, se
