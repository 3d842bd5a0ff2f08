"""f-DPO: preference loss through the f' reward reparameterization, its exact
logit gradient and a plain SGD training loop."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy.special import expit, log_expit

from .divergence import DivergenceSpec, exact_divergence, f_double_prime, f_prime, parse_divergence
from .policy import TabularPolicy, make_policy, row_entropy
from .preference import PreferenceDataset, PreferenceTriple

__all__ = [
    "TrainConfig",
    "TrainTrace",
    "implicit_reward_margin",
    "batch_margins",
    "loss",
    "grad",
    "train",
    "mean_divergence",
]


@dataclass
class TrainConfig:
    beta: float = 0.1
    divergence: DivergenceSpec = field(default_factory=lambda: parse_divergence("rkl"))
    learning_rate: float = 0.05
    batch_size: int = 64
    iterations: int = 1000
    seed: int = 0
    gauge_recenter: bool = True

    def __post_init__(self):
        self.divergence = parse_divergence(self.divergence)
        if not self.beta > 0 or not self.learning_rate > 0:
            raise ValueError("beta and learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.divergence.solver_admissible:
            raise ValueError(f"{self.divergence.label} cannot be used as an f-DPO regularizer")


@dataclass
class TrainTrace:
    iteration: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    divergence: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)

    def __len__(self):
        return len(self.iteration)

    def append(self, it, loss, div, ent, gnorm):
        self.iteration.append(int(it))
        self.loss.append(float(loss))
        self.divergence.append(float(div))
        self.entropy.append(float(ent))
        self.grad_norm.append(float(gnorm))

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "loss", "divergence", "entropy", "grad_norm"])
            for row in zip(self.iteration, self.loss, self.divergence, self.entropy, self.grad_norm):
                w.writerow([row[0]] + [format(v, ".12g") for v in row[1:]])


def _as_array(batch) -> np.ndarray:
    if isinstance(batch, PreferenceDataset):
        return batch.triples
    if isinstance(batch, PreferenceTriple):
        batch = [batch]
    arr = np.asarray(list(batch) if not isinstance(batch, np.ndarray) else batch, dtype=np.int64)
    return arr.reshape(-1, 3)


def mean_divergence(spec: DivergenceSpec, table: np.ndarray, ref_table: np.ndarray, weights) -> float:
    """Context-weighted D_f(pi(.|x), pi_ref(.|x))."""
    vals = [exact_divergence(spec, p, q) for p, q in zip(table, ref_table)]
    return float(np.dot(weights, vals))


def _margins(table, ref, beta, spec, t):
    c, w, l = t[:, 0], t[:, 1], t[:, 2]
    uw = table[c, w] / ref[c, w]
    ul = table[c, l] / ref[c, l]
    return beta * (f_prime(spec, uw) - f_prime(spec, ul)), uw, ul


def batch_margins(policy: TabularPolicy, reference: TabularPolicy, beta: float,
                  spec: DivergenceSpec, batch) -> np.ndarray:
    t = _as_array(batch)
    h, _, _ = _margins(policy.prob_table(), reference.prob_table(), beta, spec, t)
    return h


def implicit_reward_margin(policy: TabularPolicy, reference: TabularPolicy, beta: float,
                           spec: DivergenceSpec, triple: PreferenceTriple) -> float:
    """beta * (f'(u_w) - f'(u_l)) with u = pi_theta / pi_ref."""
    if not spec.solver_admissible:
        raise ValueError(f"{spec.label} has 0 in dom f'; no reward reparameterization")
    return float(batch_margins(policy, reference, beta, spec, [tuple(triple)])[0])


def loss(policy: TabularPolicy, reference: TabularPolicy, beta: float, spec: DivergenceSpec,
         batch) -> float:
    """Mean of -log sigmoid(margin) over the batch."""
    t = _as_array(batch)
    if len(t) == 0:
        raise ValueError("empty batch")
    h = batch_margins(policy, reference, beta, spec, t)
    return float(-np.mean(log_expit(h)))


def _grad_table(table, ref, beta, spec, t):
    h, uw, ul = _margins(table, ref, beta, spec, t)
    # d/dh of -log sigmoid(h)
    coef = -expit(-h) * beta / len(t)
    # d f'(u_y)/d logit_k = f''(u_y) u_y (1[k=y] - pi_k)
    aw = coef * f_double_prime(spec, uw) * uw
    al = coef * f_double_prime(spec, ul) * ul
    g = np.zeros_like(table)
    c = t[:, 0]
    np.add.at(g, (c, t[:, 1]), aw)
    np.add.at(g, (c, t[:, 2]), -al)
    row_coef = np.zeros(len(table))
    np.add.at(row_coef, c, aw - al)
    g -= row_coef[:, None] * table
    return g, h


def grad(policy: TabularPolicy, reference: TabularPolicy, beta: float, spec: DivergenceSpec,
         batch) -> np.ndarray:
    """Exact gradient of :func:`loss` with respect to the logit table."""
    t = _as_array(batch)
    if len(t) == 0:
        raise ValueError("empty batch")
    g, _ = _grad_table(policy.prob_table(), reference.prob_table(), beta, spec, t)
    return g


def train(dataset: PreferenceDataset, reference: TabularPolicy, config: TrainConfig,
          trace_every: int = 1) -> tuple[TabularPolicy, TrainTrace]:
    """SGD on the f-DPO loss starting from the reference policy.

    Each step samples ``batch_size`` triples with replacement. The trace holds
    the batch loss, exact divergence to the reference, entropy and gradient
    norm at every ``trace_every``-th step (the default records every step).
    """
    if dataset.space.shape != reference.space.shape:
        raise ValueError("dataset and reference live on different spaces")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    spec, beta = config.divergence, config.beta
    rng = np.random.default_rng(config.seed)
    policy = make_policy(reference.space, reference)
    trace = TrainTrace()
    if config.iterations == 0:
        return policy, trace
    logits = policy.logits.copy()
    ref = reference.prob_table()
    weights = reference.space.context_weights
    triples = dataset.triples
    for it in range(1, config.iterations + 1):
        idx = rng.integers(0, len(triples), size=config.batch_size)
        batch = triples[idx]
        z = logits - logits.max(axis=1, keepdims=True)
        table = np.exp(z)
        table /= table.sum(axis=1, keepdims=True)
        g, h = _grad_table(table, ref, beta, spec, batch)
        logits -= config.learning_rate * g
        if config.gauge_recenter:
            logits -= logits.mean(axis=1, keepdims=True)
        if it % trace_every == 0 or it == config.iterations:
            batch_loss = float(-np.mean(log_expit(h)))
            new = TabularPolicy(reference.space, logits)
            pt = new.prob_table()
            trace.append(
                it, batch_loss, mean_divergence(spec, pt, ref, weights),
                float(weights @ row_entropy(pt)), float(np.linalg.norm(g)),
            )
    return TabularPolicy(reference.space, logits), trace


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["divergence"] = config.divergence.label
    return d

