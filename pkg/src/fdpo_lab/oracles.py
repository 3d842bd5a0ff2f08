"""Independent brute-force oracles used by the verification suite.

Nothing here imports the solver path: the generator functions are restated
locally so that a bug in the catalog cannot cancel against itself.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

__all__ = ["simplex_maximize", "OracleFunctions"]

_LOG2 = np.log(2.0)


class OracleFunctions:
    """f and f' for one admissible divergence, written from the table directly."""

    def __init__(self, name: str, alpha: float | None = None):
        self.name = name
        self.alpha = alpha

    def f(self, u):
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.name == "rkl":
                return np.where(u > 0, u * np.log(np.where(u > 0, u, 1.0)), 0.0)
            if self.name == "fkl":
                return np.where(u > 0, -np.log(np.where(u > 0, u, 1.0)), np.inf)
            if self.name == "jsd":
                s = np.where(u > 0, u, 1.0)
                v = s * np.log(s) - (s + 1) * np.log((s + 1) / 2)
                return np.where(u > 0, v, _LOG2)
            a = self.alpha
            return (u ** (1 - a) - (1 - a) * u - a) / (a * (a - 1))

    def fprime(self, u):
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.name == "rkl":
                return np.log(u) + 1
            if self.name == "fkl":
                return -1 / u
            if self.name == "jsd":
                return np.log(2 * u / (1 + u))
            a = self.alpha
            return (1 - u ** (-a)) / a


def _objective(fn: OracleFunctions, pi, r, ref, beta, mask):
    ratio = np.where(mask, pi / np.where(mask, ref, 1.0), 1.0)
    fv = np.where(mask, fn.f(ratio), 0.0)
    return np.sum(np.where(mask, pi * r, 0.0), axis=1) - beta * np.sum(np.where(mask, ref * fv, 0.0), axis=1)


def simplex_maximize(fn: OracleFunctions, rewards, refs, betas, mask=None, *,
                     iterations: int = 100_000, step: float = 1e-2, grow: float = 1.1,
                     min_step: float = 1e-14) -> np.ndarray:
    """Maximize ``E_pi[r] - beta D_f(pi, ref)`` row-wise over the simplex.

    Entropic projected gradient: ``log pi += s * grad`` followed by the KL
    projection back onto the simplex (renormalization). Rows are solved in
    lockstep with per-row steps that start at ``step``, are halved when the
    objective fails to improve and grow by ``grow`` after an accepted move.
    Stops after ``iterations`` or once every step fell below ``min_step``.

    ``mask`` marks the real coordinates of zero-padded rows.
    """
    r = np.asarray(rewards, dtype=float)
    ref = np.asarray(refs, dtype=float)
    if mask is None:
        mask = np.ones(r.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    beta = np.broadcast_to(np.asarray(betas, dtype=float), (len(r),))
    safe_ref = np.where(mask, ref, 1.0)
    logpi = np.where(mask, np.log(safe_ref), -np.inf)
    pi = np.exp(logpi)
    obj = _objective(fn, pi, r, ref, beta, mask)
    steps = np.full(len(r), float(step))
    for _ in range(iterations):
        if np.all(steps < min_step):
            break
        with np.errstate(over="ignore", invalid="ignore"):
            grad = np.where(mask, r - beta[:, None] * fn.fprime(pi / safe_ref), 0.0)
            cand = np.where(mask, logpi + steps[:, None] * grad, -np.inf)
            cand = cand - logsumexp(cand, axis=1, keepdims=True)
            cpi = np.exp(cand)
            cobj = _objective(fn, cpi, r, ref, beta, mask)
        better = cobj > obj
        logpi = np.where(better[:, None], cand, logpi)
        pi = np.where(better[:, None], cpi, pi)
        obj = np.where(better, cobj, obj)
        steps = np.where(better, steps * grow, steps * 0.5)
    return pi
