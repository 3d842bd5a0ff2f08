"""Finite tabular softmax policies over a (context, outcome) grid."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy.special import log_softmax, softmax

__all__ = [
    "TaskSpace",
    "TabularPolicy",
    "make_policy",
    "row_entropy",
    "load_policy",
    "save_policy",
]


@dataclass(frozen=True, eq=False)
class TaskSpace:
    """Context/outcome grid plus the prompt distribution over contexts."""

    num_contexts: int
    num_outcomes: int
    context_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.num_contexts < 1 or self.num_outcomes < 2:
            raise ValueError("need at least one context and two outcomes")
        w = self.context_weights
        if w is None:
            w = np.full(self.num_contexts, 1.0 / self.num_contexts)
        w = np.array(w, dtype=float)
        if w.shape != (self.num_contexts,):
            raise ValueError(f"context_weights must have shape ({self.num_contexts},)")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("context_weights must be a probability vector")
        w.setflags(write=False)
        object.__setattr__(self, "context_weights", w)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_contexts, self.num_outcomes)

    def __eq__(self, other):
        return (
            isinstance(other, TaskSpace)
            and self.shape == other.shape
            and np.array_equal(self.context_weights, other.context_weights)
        )

    def __hash__(self):
        return hash((self.shape, self.context_weights.tobytes()))

    def check_context(self, context: int) -> int:
        if not 0 <= context < self.num_contexts:
            raise IndexError(f"context {context} out of range [0, {self.num_contexts})")
        return int(context)

    def check_outcome(self, outcome: int) -> int:
        if not 0 <= outcome < self.num_outcomes:
            raise IndexError(f"outcome {outcome} out of range [0, {self.num_outcomes})")
        return int(outcome)


def row_entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) of each row of a probability table."""
    p = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=-1)


class TabularPolicy:
    """Softmax policy: ``pi(y|x) = softmax(logits[x])[y]``.

    Instances are treated as values; :meth:`with_logits` returns a new policy.
    """

    def __init__(self, space: TaskSpace, logits):
        logits = np.array(logits, dtype=float)
        if logits.shape != space.shape:
            raise ValueError(f"logits shape {logits.shape} does not match space {space.shape}")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        self.space = space
        self.logits = logits

    def __repr__(self):
        return f"TabularPolicy(contexts={self.space.num_contexts}, outcomes={self.space.num_outcomes})"

    def with_logits(self, logits) -> "TabularPolicy":
        return TabularPolicy(self.space, logits)

    def copy(self) -> "TabularPolicy":
        return TabularPolicy(self.space, self.logits.copy())

    def prob_table(self) -> np.ndarray:
        return softmax(self.logits, axis=1)

    def log_prob_table(self) -> np.ndarray:
        return log_softmax(self.logits, axis=1)

    def probs(self, context: int) -> np.ndarray:
        c = self.space.check_context(context)
        return softmax(self.logits[c])

    def log_prob(self, context: int, outcome: int) -> float:
        c = self.space.check_context(context)
        y = self.space.check_outcome(outcome)
        return float(log_softmax(self.logits[c])[y])

    def sample(self, context: int, rng: np.random.Generator) -> int:
        p = self.probs(context)
        return _inverse_cdf(np.cumsum(p), rng.random())

    def sample_many(self, context: int, n: int, rng: np.random.Generator) -> np.ndarray:
        cdf = np.cumsum(self.probs(context))
        idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
        return np.minimum(idx, self.space.num_outcomes - 1)

    def entropy(self) -> float:
        """Context-weighted predictive entropy in nats."""
        return float(self.space.context_weights @ row_entropy(self.prob_table()))

    def recentered(self) -> "TabularPolicy":
        """Same distribution, each logit row shifted to mean zero."""
        return self.with_logits(self.logits - self.logits.mean(axis=1, keepdims=True))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.space.shape, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.logits).tobytes())
        return h.hexdigest()[:16]

    # text table format

    def to_text(self) -> str:
        n, m = self.space.shape
        lines = [f"contexts={n} outcomes={m}"]
        for row in self.logits:
            lines.append(" ".join(format(float(v), ".17g") for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, space: TaskSpace | None = None) -> "TabularPolicy":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not lines:
            raise ValueError("empty policy table")
        header = dict(tok.split("=", 1) for tok in lines[0].split())
        try:
            n, m = int(header["contexts"]), int(header["outcomes"])
        except (KeyError, ValueError):
            raise ValueError(f"bad policy header: {lines[0]!r}") from None
        rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
        if len(rows) != n or any(len(r) != m for r in rows):
            raise ValueError(f"policy table does not match header contexts={n} outcomes={m}")
        if space is None:
            space = TaskSpace(n, m)
        return cls(space, np.array(rows))


def _inverse_cdf(cdf: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(idx, len(cdf) - 1)


InitSpec = Union[str, TabularPolicy, np.ndarray]


def make_policy(space: TaskSpace, init: InitSpec = "uniform") -> TabularPolicy:
    """Build a policy from ``"uniform"``, a reference policy to copy, or explicit logits."""
    if isinstance(init, str):
        if init != "uniform":
            raise ValueError(f"unknown init {init!r}")
        return TabularPolicy(space, np.zeros(space.shape))
    if isinstance(init, TabularPolicy):
        if init.space.shape != space.shape:
            raise ValueError("reference policy lives on a different space")
        return TabularPolicy(space, init.logits.copy())
    return TabularPolicy(space, init)


def save_policy(policy: TabularPolicy, path: Union[str, Path]) -> None:
    Path(path).write_text(policy.to_text())


def load_policy(path: Union[str, Path], space: TaskSpace | None = None) -> TabularPolicy:
    return TabularPolicy.from_text(Path(path).read_text(), space)
