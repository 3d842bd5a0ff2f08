"""Exact constrained-optimal policy of max E_pi[r] - beta * D_f(pi, pi_ref).

Per context the stationarity condition gives
``pi(y) = pi_ref(y) * (f')^-1((r(y) - lam) / beta)``; the dual variable ``lam``
is fixed by normalization and found by bisection on the strictly decreasing
map ``S(lam) = sum_y pi(y)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .divergence import (
    DivergenceSpec,
    UnsupportedDivergenceError,
    exact_divergence,
    f_prime,
    f_prime_inv,
    f_prime_sup,
    parse_divergence,
)
from .policy import TabularPolicy
from .preference import RewardTable

__all__ = [
    "KktSolution",
    "BracketError",
    "normalization_sum",
    "feasible_lambda_bracket",
    "solve_row",
    "solve_optimal_policy",
    "reconstruct_reward",
    "bt_from_policy_pair",
    "kkt_objective",
]

MAX_DOUBLINGS = 200
S_TOL = 1e-12
LAM_RTOL = 1e-13


class BracketError(ArithmeticError):
    pass


def _require_admissible(spec) -> DivergenceSpec:
    spec = parse_divergence(spec)
    if not spec.solver_admissible:
        raise UnsupportedDivergenceError(
            f"{spec.label}: the closed-form optimum needs f' invertible with 0 outside dom f'; "
            "tv and chi2 violate this"
        )
    return spec


@dataclass
class KktSolution:
    optimal_policy: np.ndarray  # (contexts, outcomes) probability table
    lambda_per_context: np.ndarray
    beta: float
    divergence: DivergenceSpec
    residual: float  # max |sum_y pi(y|x) - 1|

    def as_policy(self, reference: TabularPolicy) -> TabularPolicy:
        """Softmax policy with the same distribution (log-probabilities as logits)."""
        logits = np.log(self.optimal_policy)
        logits -= logits.mean(axis=1, keepdims=True)
        return TabularPolicy(reference.space, logits)

    def stationarity_residual(self, reward: RewardTable, reference: TabularPolicy) -> float:
        """max |beta f'(pi/pi_ref) + lam - r| over the grid."""
        ratio = self.optimal_policy / reference.prob_table()
        lhs = self.beta * f_prime(self.divergence, ratio) + self.lambda_per_context[:, None]
        return float(np.max(np.abs(lhs - reward.rewards)))


def normalization_sum(lam: float, reward_row, ref_row, beta: float, spec: DivergenceSpec) -> float:
    """S(lam) = sum_y pi_ref(y) (f')^-1((r(y) - lam)/beta)."""
    r = np.asarray(reward_row, dtype=float)
    return float(np.dot(ref_row, f_prime_inv(spec, (r - lam) / beta)))


def _lower_limit(reward_row: np.ndarray, beta: float, spec: DivergenceSpec) -> float:
    # S is finite only for lam > max r - beta * sup range(f')
    return float(np.max(reward_row)) - beta * f_prime_sup(spec)


def feasible_lambda_bracket(reward_row, beta: float, spec: DivergenceSpec,
                            ref_row=None) -> tuple[float, float]:
    """Bracket ``[lo, hi]`` with S finite, S(lo) >= 1 >= S(hi).

    At ``lam = max r - beta f'(1)`` every ratio is <= 1, so S <= 1; at
    ``lam = min r - beta f'(1)`` every ratio is >= 1. When the latter is not
    feasible, ``lo`` approaches the lower limit by repeated halving of the gap.
    """
    spec = _require_admissible(spec)
    r = np.asarray(reward_row, dtype=float)
    if ref_row is None:
        ref_row = np.full(r.shape, 1.0 / r.size)
    ref_row = np.asarray(ref_row, dtype=float)
    fp1 = f_prime(spec, 1.0)
    hi = float(np.max(r)) - beta * fp1
    lo = float(np.min(r)) - beta * fp1
    limit = _lower_limit(r, beta, spec)
    if lo > limit:
        return lo, hi
    gap = hi - limit
    for _ in range(MAX_DOUBLINGS):
        gap *= 0.5
        lo = limit + gap
        if lo <= limit:
            break
        if normalization_sum(lo, r, ref_row, beta, spec) >= 1.0:
            return lo, hi
    raise BracketError(f"{spec.label}: no feasible lower bracket after {MAX_DOUBLINGS} halvings")


def solve_row(reward_row, ref_row, beta: float, spec: DivergenceSpec) -> tuple[np.ndarray, float]:
    """Optimal distribution and dual variable for a single context."""
    spec = _require_admissible(spec)
    r = np.asarray(reward_row, dtype=float)
    ref = np.asarray(ref_row, dtype=float)
    if np.all(r == r[0]):
        return ref.copy(), float(r[0] - beta * f_prime(spec, 1.0))

    lo, hi = feasible_lambda_bracket(r, beta, spec, ref)
    best_lam, best_err = hi, abs(normalization_sum(hi, r, ref, beta, spec) - 1.0)
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        s = normalization_sum(mid, r, ref, beta, spec)
        err = abs(s - 1.0)
        if err < best_err:
            best_lam, best_err = mid, err
        if s > 1.0:
            lo = mid
        elif s < 1.0:
            hi = mid
        else:
            break
        if best_err <= S_TOL and hi - lo <= LAM_RTOL * (1.0 + abs(mid)):
            break
    pi = ref * f_prime_inv(spec, (r - best_lam) / beta)
    return pi, best_lam


def solve_optimal_policy(reward: RewardTable, reference: TabularPolicy, beta: float,
                         spec: DivergenceSpec) -> KktSolution:
    spec = _require_admissible(spec)
    if not beta > 0:
        raise ValueError("beta must be positive")
    if reward.space.shape != reference.space.shape:
        raise ValueError("reward and reference live on different spaces")
    ref = reference.prob_table()
    if np.any(ref <= 0):
        raise ValueError("reference must be strictly positive")
    n = reward.space.num_contexts
    table = np.empty_like(ref)
    lams = np.empty(n)
    for c in range(n):
        table[c], lams[c] = solve_row(reward.rewards[c], ref[c], beta, spec)
    residual = float(np.max(np.abs(table.sum(axis=1) - 1.0)))
    return KktSolution(table, lams, float(beta), spec, residual)


def reconstruct_reward(policy, reference: TabularPolicy, beta: float,
                       spec: DivergenceSpec) -> RewardTable:
    """beta * f'(pi/pi_ref), shifted to mean zero in every context."""
    spec = _require_admissible(spec)
    table = policy.prob_table() if isinstance(policy, TabularPolicy) else np.asarray(policy, dtype=float)
    ref = reference.prob_table()
    if table.shape != ref.shape:
        raise ValueError("policy and reference shapes differ")
    r = beta * f_prime(spec, table / ref)
    r -= r.mean(axis=1, keepdims=True)
    return RewardTable(reference.space, r)


def bt_from_policy_pair(policy, reference: TabularPolicy, beta: float, spec: DivergenceSpec,
                        context: int, yw: int, yl: int) -> float:
    """sigmoid(beta f'(u_w) - beta f'(u_l)) with u = pi/pi_ref."""
    spec = _require_admissible(spec)
    sp = reference.space
    c, w, l = sp.check_context(context), sp.check_outcome(yw), sp.check_outcome(yl)
    if w == l:
        raise ValueError("a comparison needs two distinct outcomes")
    table = policy.prob_table() if isinstance(policy, TabularPolicy) else np.asarray(policy, dtype=float)
    ref = reference.probs(c)
    u = table[c, [w, l]] / ref[[w, l]]
    fp = f_prime(spec, u)
    return float(expit(beta * fp[0] - beta * fp[1]))


def kkt_objective(table: np.ndarray, reward: RewardTable, reference: TabularPolicy, beta: float,
                  spec: DivergenceSpec) -> np.ndarray:
    """Per-context value of E_pi[r] - beta D_f(pi, pi_ref)."""
    ref = reference.prob_table()
    vals = np.empty(len(table))
    for c in range(len(table)):
        vals[c] = table[c] @ reward.rewards[c] - beta * exact_divergence(spec, table[c], ref[c])
    return vals

