"""Reward generators and reference-policy builders for synthetic tasks."""

from __future__ import annotations

import re

import numpy as np

from .policy import TabularPolicy, TaskSpace, make_policy
from .preference import RewardTable

__all__ = ["parse_generator", "make_reward", "make_reference", "GENERATORS"]

GENERATORS = ("uniform", "bimodal", "linear")
_CALL = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def parse_generator(text: str) -> tuple[str, tuple[float, ...]]:
    """``"uniform(-1, 1)"`` -> ``("uniform", (-1.0, 1.0))``."""
    m = _CALL.match(str(text).lower())
    if not m:
        raise ValueError(f"cannot parse generator {text!r}")
    name, args = m.group(1), m.group(2)
    params = tuple(float(a) for a in args.split(",")) if args and args.strip() else ()
    return name, params


def make_reward(space: TaskSpace, spec: str, rng: np.random.Generator) -> RewardTable:
    """Build a reward table.

    ``uniform(lo,hi)``: i.i.d. uniform entries (default 0, 1).
    ``bimodal(gap)``: reward ``gap`` on outcomes ``x mod m`` and
    ``(x + m//2) mod m`` of context x, 0 elsewhere (default gap 1).
    ``linear(scale)``: ``scale * y / (m - 1)`` (default scale 1).
    """
    name, p = parse_generator(spec)
    n, m = space.shape
    if name == "uniform":
        lo, hi = p if p else (0.0, 1.0)
        if len(p) not in (0, 2) or not hi > lo:
            raise ValueError("uniform needs (lo, hi) with hi > lo")
        r = rng.uniform(lo, hi, size=(n, m))
    elif name == "bimodal":
        if len(p) > 1:
            raise ValueError("bimodal takes one parameter (gap)")
        gap = p[0] if p else 1.0
        r = np.zeros((n, m))
        for x in range(n):
            r[x, x % m] = gap
            r[x, (x + m // 2) % m] = gap
    elif name == "linear":
        if len(p) > 1:
            raise ValueError("linear takes one parameter (scale)")
        scale = p[0] if p else 1.0
        r = np.tile(scale * np.arange(m) / (m - 1), (n, 1))
    else:
        raise ValueError(f"unknown reward generator {name!r}; expected one of {', '.join(GENERATORS)}")
    return RewardTable(space, r)


def make_reference(space: TaskSpace, spec: str, rng: np.random.Generator) -> TabularPolicy:
    """``uniform`` or ``random(scale)``: logits drawn from N(0, scale^2)."""
    name, p = parse_generator(spec)
    if name == "uniform" and not p:
        return make_policy(space, "uniform")
    if name == "random":
        scale = p[0] if p else 1.0
        if len(p) > 1 or not scale > 0:
            raise ValueError("random takes one positive parameter (scale)")
        return make_policy(space, rng.normal(0.0, scale, size=space.shape))
    raise ValueError(f"unknown reference {spec!r}; expected uniform or random(scale)")
