"""Bradley-Terry preferences and synthetic preference datasets."""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np
from scipy.special import expit

from .policy import TabularPolicy, TaskSpace

__all__ = [
    "RewardTable",
    "PreferenceTriple",
    "PreferenceDataset",
    "GenerationError",
    "bt_prob",
    "sample_pair_label",
    "generate_dataset",
    "gumbel_winrate",
    "load_dataset",
]

MAX_REJECTIONS = 1000


class GenerationError(RuntimeError):
    pass


class RewardTable:
    """Ground-truth reward r(y|x) on a task grid."""

    def __init__(self, space: TaskSpace, rewards):
        rewards = np.array(rewards, dtype=float)
        if rewards.shape != space.shape:
            raise ValueError(f"reward shape {rewards.shape} does not match space {space.shape}")
        if not np.all(np.isfinite(rewards)):
            raise ValueError("rewards must be finite")
        self.space = space
        self.rewards = rewards

    def __repr__(self):
        return f"RewardTable(contexts={self.space.num_contexts}, outcomes={self.space.num_outcomes})"

    def shifted(self, per_context) -> "RewardTable":
        shift = np.asarray(per_context, dtype=float).reshape(-1, 1)
        return RewardTable(self.space, self.rewards + shift)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.space.shape, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.rewards).tobytes())
        return h.hexdigest()[:16]


class PreferenceTriple(NamedTuple):
    context: int
    winner: int
    loser: int


@dataclass
class PreferenceDataset:
    space: TaskSpace
    triples: np.ndarray  # (n, 3) int array: context, winner, loser
    seed: int | None = None
    reward_digest: str = ""
    policy_digest: str = ""

    def __post_init__(self):
        t = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        n, m = self.space.shape
        if np.any(t[:, 0] < 0) or np.any(t[:, 0] >= n):
            raise ValueError("context index out of range")
        if np.any(t[:, 1:] < 0) or np.any(t[:, 1:] >= m):
            raise ValueError("outcome index out of range")
        if np.any(t[:, 1] == t[:, 2]):
            raise ValueError("winner and loser must differ")
        self.triples = t

    def __len__(self):
        return len(self.triples)

    def __iter__(self):
        for c, w, l in self.triples:
            yield PreferenceTriple(int(c), int(w), int(l))

    def __getitem__(self, i) -> PreferenceTriple:
        c, w, l = self.triples[i]
        return PreferenceTriple(int(c), int(w), int(l))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# seed={self.seed} reward_digest={self.reward_digest} policy_digest={self.policy_digest}\n")
        buf.write("context,winner,loser\n")
        for c, w, l in self.triples:
            buf.write(f"{c},{w},{l}\n")
        return buf.getvalue()

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, space: TaskSpace) -> "PreferenceDataset":
        prov = {}
        rows = []
        header_seen = False
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    prov[k] = v
                continue
            if not header_seen:
                if line.replace(" ", "") != "context,winner,loser":
                    raise ValueError(f"bad dataset header: {line!r}")
                header_seen = True
                continue
            rows.append([int(v) for v in line.split(",")])
        seed = prov.get("seed")
        return cls(
            space,
            np.array(rows, dtype=np.int64).reshape(-1, 3),
            seed=None if seed in (None, "None") else int(seed),
            reward_digest=prov.get("reward_digest", ""),
            policy_digest=prov.get("policy_digest", ""),
        )


def load_dataset(path: Union[str, Path], space: TaskSpace) -> PreferenceDataset:
    return PreferenceDataset.from_csv(Path(path).read_text(), space)


def _check_pair(reward: RewardTable, context: int, yi: int, yj: int) -> tuple[int, int, int]:
    sp = reward.space
    c, i, j = sp.check_context(context), sp.check_outcome(yi), sp.check_outcome(yj)
    if i == j:
        raise ValueError("a comparison needs two distinct outcomes")
    return c, i, j


def bt_prob(reward: RewardTable, context: int, yi: int, yj: int) -> float:
    """P(yi preferred over yj | x) = sigmoid(r(yi|x) - r(yj|x))."""
    c, i, j = _check_pair(reward, context, yi, yj)
    d = reward.rewards[c, i] - reward.rewards[c, j]
    # complementing the upper half is exact, so bt(i, j) == 1 - bt(j, i) bit for bit
    p = float(expit(abs(d)))
    return p if d >= 0 else 1.0 - p


def sample_pair_label(reward: RewardTable, context: int, yi: int, yj: int,
                      rng: np.random.Generator) -> PreferenceTriple:
    p = bt_prob(reward, context, yi, yj)
    if rng.random() < p:
        return PreferenceTriple(context, yi, yj)
    return PreferenceTriple(context, yj, yi)


def generate_dataset(reward: RewardTable, candidate_policy: TabularPolicy, n_pairs: int,
                     rng: Union[np.random.Generator, int]) -> PreferenceDataset:
    """Draw ``n_pairs`` BT-labelled comparisons.

    Context ~ context weights; two distinct candidates from ``candidate_policy``
    (rejection sampling); winner via :func:`sample_pair_label`.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if candidate_policy.space.shape != reward.space.shape:
        raise ValueError("candidate policy and reward live on different spaces")
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    space = reward.space
    ctx_cdf = np.cumsum(space.context_weights)
    cdfs = np.cumsum(candidate_policy.prob_table(), axis=1)
    m = space.num_outcomes
    out = np.empty((n_pairs, 3), dtype=np.int64)
    for k in range(n_pairs):
        c = min(int(np.searchsorted(ctx_cdf, rng.random() * ctx_cdf[-1], side="right")), space.num_contexts - 1)
        cdf = cdfs[c]
        a = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), m - 1)
        for _ in range(MAX_REJECTIONS):
            b = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), m - 1)
            if b != a:
                break
        else:
            raise GenerationError(
                f"context {c}: no distinct candidate after {MAX_REJECTIONS} draws"
            )
        out[k] = sample_pair_label(reward, c, a, b, rng)
    return PreferenceDataset(
        space, out, seed=seed,
        reward_digest=reward.digest(), policy_digest=candidate_policy.digest(),
    )


def gumbel_winrate(reward: RewardTable, context: int, yi: int, yj: int, n: int,
                   rng: np.random.Generator) -> float:
    """Fraction of ``n`` trials with r(yi)+eps_i > r(yj)+eps_j, eps ~ Gumbel(0, 1)."""
    c, i, j = _check_pair(reward, context, yi, yj)
    if n < 1:
        raise ValueError("n must be >= 1")
    eps = rng.gumbel(0.0, 1.0, size=(n, 2))
    wins = reward.rewards[c, i] + eps[:, 0] > reward.rewards[c, j] + eps[:, 1]
    return float(np.mean(wins))
