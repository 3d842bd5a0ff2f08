"""Exact calibration error of stochastic tabular policies, the KL/JS bounds on
ECE differences, and diversity metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .divergence import DivergenceSpec, exact_divergence, parse_divergence
from .fdpo import mean_divergence
from .policy import TabularPolicy, TaskSpace, row_entropy
from .preference import RewardTable
from .records import SweepRecord

__all__ = [
    "CalibrationReport",
    "ece_exact",
    "ece_bound_rhs",
    "distinct_n",
    "frontier_record",
    "sample_tokens",
]

_RKL = parse_divergence("rkl")
_JSD = parse_divergence("jsd")


@dataclass
class CalibrationReport:
    ece: float
    per_context_terms: np.ndarray = field(repr=False)
    bound_rhs_kl: float = 0.0
    bound_rhs_js: float = 0.0


def _table(obj) -> np.ndarray:
    if isinstance(obj, TabularPolicy):
        return obj.prob_table()
    return np.asarray(obj, dtype=float)


def _check(space: TaskSpace, *tables):
    for t in tables:
        if t.shape != space.shape:
            raise ValueError(f"table shape {t.shape} does not match space {space.shape}")


def ece_exact(policy, truth, space: TaskSpace, against=None) -> CalibrationReport:
    """ECE = E_x[ sum_y pi(y|x) |truth(y|x) - pi(y|x)| ], no binning.

    When ``against`` (a second policy) is given the report also carries the
    KL and JS right-hand sides bounding ``ece(policy) - ece(against)``.
    """
    p = _table(policy)
    t = _table(truth)
    _check(space, p, t)
    if np.any(t < 0) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("truth rows must be probability distributions")
    terms = np.sum(p * np.abs(t - p), axis=1)
    ece = float(space.context_weights @ terms)
    report = CalibrationReport(ece, terms)
    if against is not None:
        report.bound_rhs_kl = ece_bound_rhs(policy, against, space, "kl")
        report.bound_rhs_js = ece_bound_rhs(policy, against, space, "js")
    return report


def ece_bound_rhs(policy1, policy2, space: TaskSpace, which: str) -> float:
    """E_x[2 sqrt(2 KL(p1, p2))] (``kl``) or E_x[4 sqrt(2 D_JS(p1, p2))] (``js``)."""
    p1, p2 = _table(policy1), _table(policy2)
    _check(space, p1, p2)
    if which == "kl":
        spec, scale = _RKL, 2.0
    elif which == "js":
        spec, scale = _JSD, 4.0
    else:
        raise ValueError(f"which must be 'kl' or 'js', got {which!r}")
    per = np.array([scale * math.sqrt(2.0 * exact_divergence(spec, a, b)) for a, b in zip(p1, p2)])
    return float(space.context_weights @ per)


def distinct_n(samples: Sequence[Sequence], n: int) -> float:
    """Distinct n-grams divided by total n-grams over all sample sequences."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(samples) == 0:
        raise ValueError("no samples")
    grams = []
    for seq in samples:
        seq = tuple(seq)
        grams.extend(seq[i:i + n] for i in range(len(seq) - n + 1))
    if not grams:
        raise ValueError(f"every sample is shorter than n={n}")
    return len(set(grams)) / len(grams)


def sample_tokens(policy: TabularPolicy, n_samples: int, rng: np.random.Generator) -> list:
    """Draw (x ~ context weights, y ~ pi(.|x)) as one-token sequences.

    The token is the grid cell ``x * num_outcomes + y``.
    """
    sp = policy.space
    ctx = rng.choice(sp.num_contexts, size=n_samples, p=sp.context_weights)
    cdf = np.cumsum(policy.prob_table(), axis=1)
    u = rng.random(n_samples) * cdf[ctx, -1]
    ys = np.minimum((cdf[ctx] <= u[:, None]).sum(axis=1), sp.num_outcomes - 1)
    return [(int(c) * sp.num_outcomes + int(y),) for c, y in zip(ctx, ys)]


def frontier_record(policy: TabularPolicy, reference: TabularPolicy, truth_reward: RewardTable,
                    spec: DivergenceSpec, space: TaskSpace, *, truth=None, run_id: str = "",
                    method: str = "fdpo", beta: float = math.nan, seed: int = 0,
                    n_samples: int = 10_000) -> SweepRecord:
    """Exact reward, divergence, entropy and ECE plus sampled distinct-1.

    ``truth`` is the ground-truth conditional for ECE; it defaults to the
    reference policy, which is calibrated by construction.
    """
    spec = parse_divergence(spec)
    p = policy.prob_table()
    ref = reference.prob_table()
    _check(space, p, ref, truth_reward.rewards)
    truth_table = ref if truth is None else _table(truth)
    w = space.context_weights
    rng = np.random.default_rng(seed)
    return SweepRecord(
        run_id=run_id,
        method=method,
        divergence=spec.label,
        beta=float(beta),
        achieved_divergence=mean_divergence(spec, p, ref, w),
        mean_reward=float(w @ np.sum(p * truth_reward.rewards, axis=1)),
        entropy=float(w @ row_entropy(p)),
        ece=ece_exact(p, truth_table, space).ece,
        distinct1=distinct_n(sample_tokens(policy, n_samples, rng), 1),
        seed=int(seed),
    )
