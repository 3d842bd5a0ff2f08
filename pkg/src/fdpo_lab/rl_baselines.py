"""PPO baselines on a single-step contextual bandit.

Two placements of the divergence: a per-sample penalty folded into the reward
(``penalty_in_reward``) or an exact regularizer optimized by a separate SGD
step after each PPO update (``penalty_in_loss``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .divergence import (
    Divergence,
    DivergenceSpec,
    UnsupportedDivergenceError,
    f_prime,
    f_value,
    mc_estimate,
    parse_divergence,
    penalty_term,
)
from .fdpo import TrainTrace, mean_divergence
from .policy import TabularPolicy, make_policy, row_entropy
from .preference import RewardTable
from .records import SweepRecord

__all__ = [
    "Variant",
    "PpoConfig",
    "PpoTrace",
    "penalized_reward",
    "ppo_objective",
    "ppo_grad",
    "regularizer",
    "regularizer_grad",
    "train_ppo",
    "frontier_rollout",
]

_PENALTY_NAMES = (Divergence.REVERSE_KL, Divergence.JENSEN_SHANNON, Divergence.FORWARD_KL)


class Variant(str, enum.Enum):
    PENALTY_IN_REWARD = "penalty_in_reward"
    PENALTY_IN_LOSS = "penalty_in_loss"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        aliases = {"reward": cls.PENALTY_IN_REWARD, "loss": cls.PENALTY_IN_LOSS}
        text = str(value).strip().lower()
        if text in aliases:
            return aliases[text]
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown PPO variant {value!r}") from None


@dataclass
class PpoConfig:
    variant: Variant = Variant.PENALTY_IN_REWARD
    beta: float = 0.1
    divergence: DivergenceSpec = field(default_factory=lambda: parse_divergence("rkl"))
    clip_epsilon: float = 0.2
    learning_rate: float = 0.5
    rollouts_per_iter: int = 256
    iterations: int = 1000
    seed: int = 0
    epochs: int = 4
    baseline_momentum: float = 0.9
    # "reference_first": D_f(pi_ref, pi); "policy_first": D_f(pi, pi_ref)
    regularizer_order: str = "reference_first"

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        self.divergence = parse_divergence(self.divergence)
        if not self.beta > 0 or not self.learning_rate > 0:
            raise ValueError("beta and learning_rate must be positive")
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if self.rollouts_per_iter < 1 or self.epochs < 1:
            raise ValueError("rollouts_per_iter and epochs must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0 <= self.baseline_momentum < 1:
            raise ValueError("baseline_momentum must lie in [0, 1)")
        if self.regularizer_order not in ("reference_first", "policy_first"):
            raise ValueError("regularizer_order must be 'reference_first' or 'policy_first'")
        if self.variant is Variant.PENALTY_IN_REWARD and self.divergence.name not in _PENALTY_NAMES:
            raise ValueError(f"no reward penalty defined for {self.divergence.label}")
        if self.variant is Variant.PENALTY_IN_LOSS and not self.divergence.solver_admissible:
            raise ValueError(f"{self.divergence.label} is not differentiable enough for the loss regularizer")


@dataclass
class PpoTrace(TrainTrace):
    # running max of |penalty| and of t = pi_ref/pi over visited samples
    penalty_max: list = field(default_factory=list)
    ratio_max: list = field(default_factory=list)


def _penalty(spec, t, beta):
    p = penalty_term(spec, t)
    if spec.name is Divergence.REVERSE_KL:
        return beta * p
    return -beta * p


def penalized_reward(reward: RewardTable, policy: TabularPolicy, reference: TabularPolicy,
                     context: int, outcome: int, beta: float, spec: DivergenceSpec) -> float:
    """r(y|x) with the per-sample penalty at t = pi_ref(y|x) / pi(y|x).

    RKL adds ``beta * log t``; JS and FKL subtract ``beta * penalty``.
    """
    spec = parse_divergence(spec)
    if spec.name not in _PENALTY_NAMES:
        raise UnsupportedDivergenceError(f"no reward penalty defined for {spec.label}")
    sp = reward.space
    c, y = sp.check_context(context), sp.check_outcome(outcome)
    t = reference.prob_table()[c, y] / policy.prob_table()[c, y]
    return float(reward.rewards[c, y] + _penalty(spec, t, beta))


def _batch_arrays(batch):
    b = np.asarray(batch, dtype=float).reshape(-1, 3)
    return b[:, 0].astype(np.int64), b[:, 1].astype(np.int64), b[:, 2]


def _surrogate(table, old, ctx, ys, adv, eps):
    rho = table[ctx, ys] / old[ctx, ys]
    unclipped = rho * adv
    clipped = np.clip(rho, 1.0 - eps, 1.0 + eps) * adv
    return np.minimum(unclipped, clipped), rho, unclipped <= clipped


def ppo_objective(policy: TabularPolicy, old_policy: TabularPolicy, batch, clip_epsilon: float) -> float:
    """Mean of min(rho A, clip(rho, 1-eps, 1+eps) A); to be maximized.

    ``batch`` rows are (context, outcome, advantage).
    """
    if policy.space.shape != old_policy.space.shape:
        raise ValueError("policy and old_policy live on different spaces")
    ctx, ys, adv = _batch_arrays(batch)
    if len(ctx) == 0:
        raise ValueError("empty batch")
    s, _, _ = _surrogate(policy.prob_table(), old_policy.prob_table(), ctx, ys, adv, clip_epsilon)
    return float(np.mean(s))


def _surrogate_grad(table, old, ctx, ys, adv, eps):
    s, rho, active = _surrogate(table, old, ctx, ys, adv, eps)
    # the clipped branch is flat in theta; ties count as unclipped
    coef = np.where(active, rho * adv, 0.0) / len(ctx)
    g = np.zeros_like(table)
    np.add.at(g, (ctx, ys), coef)
    row = np.zeros(len(table))
    np.add.at(row, ctx, coef)
    g -= row[:, None] * table
    return g, float(np.mean(s))


def ppo_grad(policy: TabularPolicy, old_policy: TabularPolicy, batch, clip_epsilon: float) -> np.ndarray:
    """Gradient of :func:`ppo_objective` with respect to the logit table."""
    ctx, ys, adv = _batch_arrays(batch)
    if len(ctx) == 0:
        raise ValueError("empty batch")
    g, _ = _surrogate_grad(policy.prob_table(), old_policy.prob_table(), ctx, ys, adv, clip_epsilon)
    return g


def _reg_rows(table, ref, spec, order):
    if order == "reference_first":
        t = ref / table
        return np.sum(table * f_value(spec, t), axis=1)
    return np.sum(ref * f_value(spec, table / ref), axis=1)


def _reg_grad(table, ref, spec, order, weights):
    if order == "reference_first":
        t = ref / table
        d = f_value(spec, t) - t * f_prime(spec, t)
    else:
        d = f_prime(spec, table / ref)
    # chain rule through the row softmax
    g = table * (d - np.sum(table * d, axis=1, keepdims=True))
    return weights[:, None] * g


def regularizer(policy: TabularPolicy, reference: TabularPolicy, spec: DivergenceSpec,
                order: str = "reference_first") -> float:
    """Context-weighted D_f(pi_ref, pi) (or D_f(pi, pi_ref) for ``policy_first``)."""
    spec = parse_divergence(spec)
    rows = _reg_rows(policy.prob_table(), reference.prob_table(), spec, order)
    return float(policy.space.context_weights @ rows)


def regularizer_grad(policy: TabularPolicy, reference: TabularPolicy, spec: DivergenceSpec,
                     order: str = "reference_first") -> np.ndarray:
    """Exact logit gradient of :func:`regularizer`."""
    spec = parse_divergence(spec)
    return _reg_grad(policy.prob_table(), reference.prob_table(), spec, order,
                     policy.space.context_weights)


def _softmax(logits):
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _sample(table, weights, n, rng):
    ctx = rng.choice(len(table), size=n, p=weights)
    cdf = np.cumsum(table[ctx], axis=1)
    u = rng.random(n) * cdf[:, -1]
    ys = np.minimum((cdf <= u[:, None]).sum(axis=1), table.shape[1] - 1)
    return ctx, ys


def train_ppo(reward: RewardTable, reference: TabularPolicy, config: PpoConfig,
              trace_every: int = 1) -> tuple[TabularPolicy, PpoTrace]:
    """PPO-clip on the bandit, starting from the reference policy.

    Each iteration draws ``rollouts_per_iter`` (context, outcome) pairs from
    the current policy, scores them, subtracts a per-context running-mean
    baseline and takes ``epochs`` full-batch ascent steps on the clipped
    surrogate. With ``penalty_in_loss`` one exact descent step on
    ``beta * D_f`` follows, halving the step until the regularizer decreases.
    """
    if reward.space.shape != reference.space.shape:
        raise ValueError("reward and reference live on different spaces")
    spec, beta, eps = config.divergence, config.beta, config.clip_epsilon
    in_reward = config.variant is Variant.PENALTY_IN_REWARD
    rng = np.random.default_rng(config.seed)
    weights = reference.space.context_weights
    ref = reference.prob_table()
    r = reward.rewards
    logits = make_policy(reference.space, reference).logits.copy()
    baseline = np.zeros(len(r))
    seen = np.zeros(len(r), dtype=bool)
    trace = PpoTrace()
    pen_max = 0.0
    t_max = 1.0
    mom = config.baseline_momentum
    for it in range(1, config.iterations + 1):
        old = _softmax(logits)
        ctx, ys = _sample(old, weights, config.rollouts_per_iter, rng)
        t = ref[ctx, ys] / old[ctx, ys]
        t_max = max(t_max, float(t.max()))
        score = r[ctx, ys]
        if in_reward:
            pen = _penalty(spec, t, beta)
            pen_max = max(pen_max, float(np.abs(pen).max()))
            score = score + pen
        sums = np.bincount(ctx, weights=score, minlength=len(r))
        counts = np.bincount(ctx, minlength=len(r))
        hit = counts > 0
        means = np.divide(sums, counts, out=np.zeros_like(sums), where=hit)
        fresh = hit & ~seen
        baseline[fresh] = means[fresh]
        seen |= hit
        adv = score - baseline[ctx]
        baseline[hit] = mom * baseline[hit] + (1.0 - mom) * means[hit]

        gnorm = 0.0
        obj = 0.0
        for _ in range(config.epochs):
            g, obj = _surrogate_grad(_softmax(logits), old, ctx, ys, adv, eps)
            logits += config.learning_rate * g
            gnorm = float(np.linalg.norm(g))
        value = -obj
        if not in_reward:
            table = _softmax(logits)
            cur = beta * float(weights @ _reg_rows(table, ref, spec, config.regularizer_order))
            rg = beta * _reg_grad(table, ref, spec, config.regularizer_order, weights)
            step = config.learning_rate
            for _ in range(60):
                cand = logits - step * rg
                new = beta * float(weights @ _reg_rows(_softmax(cand), ref, spec, config.regularizer_order))
                if new <= cur:
                    logits = cand
                    cur = new
                    break
                step *= 0.5
            value += cur
        logits -= logits.mean(axis=1, keepdims=True)
        if it % trace_every == 0 or it == config.iterations:
            table = _softmax(logits)
            trace.append(it, value, mean_divergence(spec, table, ref, weights),
                         float(weights @ row_entropy(table)), gnorm)
            trace.penalty_max.append(pen_max)
            trace.ratio_max.append(t_max)
    return TabularPolicy(reference.space, logits), trace


def frontier_rollout(policy: TabularPolicy, reward: RewardTable, reference: TabularPolicy,
                     spec: DivergenceSpec, n_samples: int, rng: np.random.Generator, *,
                     run_id: str = "", method: str = "", beta: float = math.nan,
                     seed: int = 0) -> SweepRecord:
    """Exact reward, D_f(pi, pi_ref) and entropy, plus a sampled divergence check.

    The Monte-Carlo estimate draws x by context weight and y ~ pi_ref(.|x),
    so the ratios are pi/pi_ref as the estimator expects.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    spec = parse_divergence(spec)
    p = policy.prob_table()
    ref = reference.prob_table()
    w = policy.space.context_weights
    ctx, ys = _sample(ref, w, n_samples, rng)
    est, se = mc_estimate(spec, p[ctx, ys] / ref[ctx, ys])
    return SweepRecord(
        run_id=run_id,
        method=method,
        divergence=spec.label,
        beta=float(beta),
        achieved_divergence=mean_divergence(spec, p, ref, w),
        mean_reward=float(w @ np.sum(p * reward.rewards, axis=1)),
        entropy=float(w @ row_entropy(p)),
        seed=int(seed),
        mc_divergence=est,
        mc_standard_error=se,
    )
