"""Experiment configuration, sweeps, CSV emission and the verification suite."""

from __future__ import annotations

import csv
import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .acceptance import SCOPES, CheckResult, run_checks
from .divergence import DivergenceSpec, parse_divergence
from .fdpo import TrainConfig, train
from .kkt import solve_optimal_policy
from .metrics import frontier_record
from .policy import TabularPolicy, TaskSpace
from .preference import PreferenceDataset, RewardTable, generate_dataset
from .records import CSV_COLUMNS, METHODS, SweepRecord
from .rl_baselines import PpoConfig, Variant, train_ppo
from .tasks import make_reference, make_reward, parse_generator

__all__ = [
    "ConfigError",
    "RunError",
    "ExperimentConfig",
    "SweepRecord",
    "load_config",
    "parse_config",
    "build_task",
    "run_sweep",
    "emit_csv",
    "read_csv",
    "verify_suite",
    "VerifyReport",
]


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class RunError(RuntimeError):
    def __init__(self, run_id: str, cause: BaseException):
        super().__init__(f"run {run_id} failed: {cause}")
        self.run_id = run_id


@dataclass
class ExperimentConfig:
    contexts: int = 2
    outcomes: int = 4
    reward: str = "uniform(0,1)"
    reference: str = "uniform"
    context_weights: tuple | None = None
    methods: tuple = ("fdpo",)
    divergences: tuple = (parse_divergence("rkl"),)
    betas: tuple = (0.1,)
    seed: int = 0
    output: str = "sweep.csv"
    # single-run settings used by train-dpo / train-ppo
    beta: float = 0.1
    divergence: DivergenceSpec = field(default_factory=lambda: parse_divergence("rkl"))
    fdpo_pairs: int = 20_000
    # effective rate is learning_rate / beta^2 when scale_lr_by_beta is set
    fdpo_learning_rate: float = 0.01
    fdpo_scale_lr_by_beta: bool = True
    fdpo_batch_size: int = 64
    fdpo_iterations: int = 5000
    ppo_learning_rate: float = 0.5
    ppo_iterations: int = 500
    ppo_rollouts: int = 256
    ppo_clip_epsilon: float = 0.2
    ppo_epochs: int = 4
    ppo_regularizer_order: str = "reference_first"
    samples: int = 10_000

    @property
    def space(self) -> TaskSpace:
        return TaskSpace(self.contexts, self.outcomes, self.context_weights)

    def fdpo_config(self, beta: float, spec: DivergenceSpec, seed: int) -> TrainConfig:
        lr = self.fdpo_learning_rate / beta ** 2 if self.fdpo_scale_lr_by_beta else self.fdpo_learning_rate
        return TrainConfig(beta=beta, divergence=spec, learning_rate=lr, batch_size=self.fdpo_batch_size,
                           iterations=self.fdpo_iterations, seed=seed)

    def ppo_config(self, variant, beta: float, spec: DivergenceSpec, seed: int) -> PpoConfig:
        return PpoConfig(variant=variant, beta=beta, divergence=spec, clip_epsilon=self.ppo_clip_epsilon,
                         learning_rate=self.ppo_learning_rate, rollouts_per_iter=self.ppo_rollouts,
                         iterations=self.ppo_iterations, seed=seed, epochs=self.ppo_epochs,
                         regularizer_order=self.ppo_regularizer_order)

    def echo(self) -> str:
        lines = []
        for section, keys in _SCHEMA.items():
            for key, (attr, _) in keys.items():
                lines.append(f"{section}.{key} = {_render(getattr(self, attr))}")
        return "\n".join(lines)


def _render(v) -> str:
    if isinstance(v, DivergenceSpec):
        return v.label
    if isinstance(v, (tuple, list)):
        return ", ".join(_render(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _unquote(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def _split_list(text: str) -> list[str]:
    # commas inside parentheses belong to generator arguments
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    return [_unquote(p) for p in parts if p.strip()]


def _pos_int(v):
    n = int(v)
    if n < 1:
        raise ValueError("must be a positive integer")
    return n


def _nonneg_int(v):
    n = int(v)
    if n < 0:
        raise ValueError("must be >= 0")
    return n


def _pos_float(v):
    x = float(v)
    if not x > 0 or not math.isfinite(x):
        raise ValueError("must be a positive number")
    return x


def _bool(v):
    t = v.lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError("must be true or false")


def _generator(v):
    parse_generator(v)
    return v


def _methods(v):
    out = tuple(_split_list(v))
    bad = [m for m in out if m not in METHODS or m == "kkt_optimal"]
    if bad or not out:
        raise ValueError(f"unknown method(s) {bad}; expected fdpo, ppo_reward, ppo_loss")
    return out


def _divergences(v):
    out = tuple(parse_divergence(d) for d in _split_list(v))
    if not out:
        raise ValueError("list must not be empty")
    return out


def _betas(v):
    out = tuple(_pos_float(b) for b in _split_list(v))
    if not out:
        raise ValueError("list must not be empty")
    return out


def _weights(v):
    return tuple(float(x) for x in _split_list(v))


def _order(v):
    if v not in ("reference_first", "policy_first"):
        raise ValueError("must be reference_first or policy_first")
    return v


_SCHEMA = {
    "task": {
        "contexts": ("contexts", _pos_int),
        "outcomes": ("outcomes", _pos_int),
        "reward": ("reward", _generator),
        "reference": ("reference", _generator),
        "context_weights": ("context_weights", _weights),
    },
    "sweep": {
        "methods": ("methods", _methods),
        "divergences": ("divergences", _divergences),
        "betas": ("betas", _betas),
        "seed": ("seed", _nonneg_int),
        "output": ("output", str),
    },
    "train": {
        "beta": ("beta", _pos_float),
        "divergence": ("divergence", parse_divergence),
    },
    "fdpo": {
        "pairs": ("fdpo_pairs", _pos_int),
        "learning_rate": ("fdpo_learning_rate", _pos_float),
        "scale_lr_by_beta": ("fdpo_scale_lr_by_beta", _bool),
        "batch_size": ("fdpo_batch_size", _pos_int),
        "iterations": ("fdpo_iterations", _nonneg_int),
    },
    "ppo": {
        "learning_rate": ("ppo_learning_rate", _pos_float),
        "iterations": ("ppo_iterations", _nonneg_int),
        "rollouts_per_iter": ("ppo_rollouts", _pos_int),
        "clip_epsilon": ("ppo_clip_epsilon", _pos_float),
        "epochs": ("ppo_epochs", _pos_int),
        "regularizer_order": ("ppo_regularizer_order", _order),
    },
    "metrics": {
        "samples": ("samples", _pos_int),
    },
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat ``section.key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(key or f"line {lineno}", "expected 'section.key = value'")
        section, dot, name = key.partition(".")
        if not dot or section not in _SCHEMA or name not in _SCHEMA[section]:
            raise ConfigError(key, "unknown key")
        attr, conv = _SCHEMA[section][name]
        try:
            values[attr] = conv(_unquote(value))
        except (ValueError, TypeError) as exc:
            raise ConfigError(key, str(exc)) from None
    cfg = ExperimentConfig(**values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    try:
        space = cfg.space
    except ValueError as exc:
        raise ConfigError("task", str(exc)) from None
    rng = np.random.default_rng(0)
    for key, fn in (("task.reward", make_reward), ("task.reference", make_reference)):
        try:
            fn(space, getattr(cfg, key.split(".")[1]), rng)
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None
    if not 0 < cfg.ppo_clip_epsilon < 1:
        raise ConfigError("ppo.clip_epsilon", "must lie in (0, 1)")
    for spec in cfg.divergences:
        for method in cfg.methods:
            try:
                _check_method(method, spec)
            except ValueError as exc:
                raise ConfigError("sweep.divergences", str(exc)) from None


def _check_method(method: str, spec: DivergenceSpec) -> None:
    if method == "fdpo" and not spec.solver_admissible:
        raise ValueError(f"{spec.label} cannot regularize f-DPO")
    if method == "ppo_reward":
        PpoConfig(variant="reward", divergence=spec)
    if method == "ppo_loss":
        PpoConfig(variant="loss", divergence=spec)
    if not spec.solver_admissible:
        raise ValueError(f"{spec.label} has no KKT-optimal reference point")


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate a config file; I/O problems raise ``OSError``."""
    return parse_config(Path(path).read_text())


# -- sweeps ------------------------------------------------------------------

def _seed_sequence(master: int, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=key)


def run_seed(master: int, run_id: str) -> int:
    """Per-run seed hashed from the run id, so adding runs leaves others unchanged."""
    h = int.from_bytes(hashlib.sha256(run_id.encode()).digest()[:4], "big")
    return int(_seed_sequence(master, 1, h).generate_state(1)[0])


def build_task(cfg: ExperimentConfig) -> tuple[RewardTable, TabularPolicy]:
    rng = np.random.default_rng(_seed_sequence(cfg.seed, 0))
    space = cfg.space
    reward = make_reward(space, cfg.reward, rng)
    reference = make_reference(space, cfg.reference, rng)
    return reward, reference


def _dataset(cfg: ExperimentConfig, reward, reference) -> PreferenceDataset:
    seed = int(_seed_sequence(cfg.seed, 2).generate_state(1)[0])
    return generate_dataset(reward, reference, cfg.fdpo_pairs, seed)


def run_id_for(method: str, spec: DivergenceSpec, beta: float) -> str:
    return f"{method}-{spec.label}-b{beta:g}"


def _plan(cfg: ExperimentConfig) -> list[tuple[str, str, DivergenceSpec, float]]:
    plan = []
    for spec in cfg.divergences:
        for beta in cfg.betas:
            for method in (*cfg.methods, "kkt_optimal"):
                plan.append((run_id_for(method, spec, beta), method, spec, beta))
    ids = [p[0] for p in plan]
    if len(set(ids)) != len(ids):
        raise ConfigError("sweep", "duplicate runs (repeated beta or divergence)")
    return plan


def _execute(cfg: ExperimentConfig, item, data=None) -> SweepRecord:
    run_id, method, spec, beta = item
    seed = run_seed(cfg.seed, run_id)
    try:
        reward, reference = build_task(cfg)
        if method == "kkt_optimal":
            policy = solve_optimal_policy(reward, reference, beta, spec).as_policy(reference)
        elif method == "fdpo":
            if data is None:
                data = _dataset(cfg, reward, reference)
            policy, _ = train(data, reference, cfg.fdpo_config(beta, spec, seed), trace_every=10 ** 12)
        else:
            variant = Variant.PENALTY_IN_REWARD if method == "ppo_reward" else Variant.PENALTY_IN_LOSS
            policy, _ = train_ppo(reward, reference, cfg.ppo_config(variant, beta, spec, seed),
                                  trace_every=10 ** 12)
        rec = frontier_record(policy, reference, reward, spec, cfg.space, run_id=run_id, method=method,
                              beta=beta, seed=seed, n_samples=cfg.samples)
    except Exception as exc:
        raise RunError(run_id, exc) from exc
    numeric = [rec.beta, rec.achieved_divergence, rec.mean_reward, rec.entropy, rec.ece, rec.distinct1]
    if not all(math.isfinite(v) for v in numeric):
        raise RunError(run_id, FloatingPointError("non-finite metric (training diverged)"))
    return rec


def _execute_packed(args):
    return _execute(*args)


def run_sweep(cfg: ExperimentConfig, jobs: int = 1) -> list[SweepRecord]:
    """All (method x divergence x beta) runs plus one kkt_optimal row per pair.

    Results are assembled by run index, so the output does not depend on
    ``jobs`` or scheduling.
    """
    plan = _plan(cfg)
    data = None
    if "fdpo" in cfg.methods:
        reward, reference = build_task(cfg)
        data = _dataset(cfg, reward, reference)
    args = [(cfg, item, data if item[1] == "fdpo" else None) for item in plan]
    if jobs <= 1:
        return [_execute(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_execute_packed, args))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def emit_csv(records: Iterable[SweepRecord], path: Union[str, Path]) -> None:
    """Write the sweep CSV (12 significant digits, rows sorted by run_id)."""
    rows = sorted(records, key=lambda r: r.run_id)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for rec in rows:
                w.writerow([_fmt(getattr(rec, k)) for k in CSV_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_csv(path: Union[str, Path]) -> list[SweepRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(SweepRecord(
                run_id=row["run_id"], method=row["method"], divergence=row["divergence"],
                beta=float(row["beta"]), achieved_divergence=float(row["achieved_divergence"]),
                mean_reward=float(row["mean_reward"]), entropy=float(row["entropy"]),
                ece=float(row["ece"]), distinct1=float(row["distinct1"]), seed=int(row["seed"]),
            ))
    return out


# -- verification --------------------------------------------------------------

@dataclass
class VerifyReport:
    scope: str
    results: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        return [r.line() for r in self.results]


def verify_suite(scope: str = "all") -> VerifyReport:
    """Run the acceptance checks in ``scope`` (all, kkt, gradient, estimator, bounds, ordering)."""
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}")
    return VerifyReport(scope, run_checks(scope))


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("FDPO_LAB_JOBS", "1")))
    except ValueError:
        return 1
