"""Result rows shared by the frontier tools and the sweep harness."""

from __future__ import annotations

import math
from dataclasses import dataclass

CSV_COLUMNS = (
    "run_id", "method", "divergence", "beta", "achieved_divergence",
    "mean_reward", "entropy", "ece", "distinct1", "seed",
)

METHODS = ("fdpo", "ppo_reward", "ppo_loss", "kkt_optimal")


@dataclass
class SweepRecord:
    run_id: str
    method: str
    divergence: str
    beta: float
    achieved_divergence: float
    mean_reward: float
    entropy: float
    ece: float = math.nan
    distinct1: float = math.nan
    seed: int = 0
    # Monte-Carlo cross-check of achieved_divergence; not written to CSV
    mc_divergence: float = math.nan
    mc_standard_error: float = math.nan

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_COLUMNS}
