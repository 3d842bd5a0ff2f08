"""The acceptance checks, one function per criterion.

Every check uses fixed internal seeds and returns :class:`CheckResult` rows
with the measured value, the threshold and a verdict. The trend checks on the
4x6 bimodal task share trained policies through a small cache.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .divergence import exact_divergence, f_value, mc_estimate, mc_terms, parse_divergence, penalty_term
from .fdpo import TrainConfig, grad, loss, train
from .kkt import reconstruct_reward, solve_optimal_policy
from .metrics import distinct_n, ece_bound_rhs, ece_exact, sample_tokens
from .oracles import OracleFunctions, simplex_maximize
from .policy import TabularPolicy, TaskSpace, make_policy
from .preference import RewardTable, generate_dataset
from .rl_baselines import PpoConfig, train_ppo
from .tasks import make_reward

__all__ = ["CheckResult", "CHECKS", "SCOPES", "run_checks", "frontier_matches"]

ORACLE_SPECS = ("rkl", "fkl", "jsd", "alpha:0.3", "alpha:0.5", "alpha:0.7")
TREND_SPECS = ("rkl", "jsd", "fkl")


@dataclass
class CheckResult:
    name: str
    measured: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"{verdict} {self.name}: measured={self.measured:.6g} threshold={self.threshold:.6g}{extra}"


def _tv(a, b) -> np.ndarray:
    return 0.5 * np.abs(np.asarray(a) - np.asarray(b)).sum(axis=-1)


def _random_instance(rng, max_contexts=4, max_outcomes=8):
    n = int(rng.integers(1, max_contexts + 1))
    m = int(rng.integers(2, max_outcomes + 1))
    space = TaskSpace(n, m)
    reward = RewardTable(space, rng.uniform(-2.0, 2.0, size=(n, m)))
    ref = make_policy(space, rng.normal(size=(n, m)))
    beta = float(rng.choice([0.1, 0.3, 1.0]))
    return space, reward, ref, beta


@functools.lru_cache(maxsize=None)
def _oracle_instances(label: str, count: int = 100, seed: int = 1):
    """Solver and oracle tables for ``count`` random instances of one divergence."""
    spec = parse_divergence(label)
    rng = np.random.default_rng([seed, ORACLE_SPECS.index(label)])
    insts = [_random_instance(rng) for _ in range(count)]
    sols = [solve_optimal_policy(r, ref, b, spec) for _, r, ref, b in insts]
    width = 8
    rows_r, rows_q, rows_b, mask = [], [], [], []
    for _, r, ref, b in insts:
        q = ref.prob_table()
        for x in range(r.space.num_contexts):
            m = r.space.num_outcomes
            pad = width - m
            rows_r.append(np.pad(r.rewards[x], (0, pad)))
            rows_q.append(np.pad(q[x], (0, pad)))
            rows_b.append(b)
            mask.append(np.arange(width) < m)
    fn = OracleFunctions(spec.name.value, spec.alpha)
    oracle = simplex_maximize(fn, np.array(rows_r), np.array(rows_q), np.array(rows_b), np.array(mask))
    return insts, sols, oracle, np.array(mask)


def check_kkt_oracle() -> list[CheckResult]:
    out = []
    for label in ORACLE_SPECS:
        insts, sols, oracle, mask = _oracle_instances(label)
        solver_rows = np.zeros_like(oracle)
        k = 0
        for sol in sols:
            for row in sol.optimal_policy:
                solver_rows[k, :len(row)] = row
                k += 1
        tv = float(np.max(_tv(solver_rows, oracle)))
        stat = max(s.stationarity_residual(r, ref) for s, (_, r, ref, _) in zip(sols, insts))
        out.append(CheckResult(f"c1 kkt-oracle TV [{label}]", tv, 1e-4, tv <= 1e-4))
        out.append(CheckResult(f"c1 stationarity [{label}]", stat, 1e-8, stat <= 1e-8))
    return out


def check_reward_roundtrip() -> list[CheckResult]:
    worst = 0.0
    for label in ORACLE_SPECS:
        spec = parse_divergence(label)
        insts, sols, _, _ = _oracle_instances(label)
        for sol, (_, r, ref, b) in zip(sols, insts):
            rec = reconstruct_reward(sol.optimal_policy, ref, b, spec).rewards
            d = rec - r.rewards
            worst = max(worst, float(np.max(np.abs(d - d.mean(axis=1, keepdims=True)))))
    return [CheckResult("c2 reward round-trip (600 instances)", worst, 1e-7, worst <= 1e-7)]


def _fd_grad(policy, ref, beta, spec, batch, h=1e-5):
    g = np.zeros_like(policy.logits)
    for idx in np.ndindex(*g.shape):
        up = policy.logits.copy()
        dn = policy.logits.copy()
        up[idx] += h
        dn[idx] -= h
        g[idx] = (loss(policy.with_logits(up), ref, beta, spec, batch)
                  - loss(policy.with_logits(dn), ref, beta, spec, batch)) / (2 * h)
    return g


def check_gradient(cases: int = 50) -> list[CheckResult]:
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(cases):
        spec = parse_divergence(ORACLE_SPECS[rng.integers(len(ORACLE_SPECS))])
        n, m = int(rng.integers(1, 4)), int(rng.integers(2, 7))
        space = TaskSpace(n, m)
        pol = make_policy(space, rng.normal(size=(n, m)))
        ref = make_policy(space, rng.normal(size=(n, m)))
        beta = float(rng.choice([0.1, 0.3, 1.0]))
        w, l = rng.choice(m, size=2, replace=False)
        batch = [(int(rng.integers(n)), int(w), int(l))]
        g = grad(pol, ref, beta, spec, batch)
        fd = _fd_grad(pol, ref, beta, spec, batch)
        worst = max(worst, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-300)))
    return [CheckResult(f"c3 gradient vs finite differences ({cases} cases)", worst, 1e-5, worst <= 1e-5)]


# -- the 4x6 bimodal task ---------------------------------------------------

TREND_SPACE = TaskSpace(4, 6)
TREND_REWARD = "bimodal(1.0)"
TREND_PAIRS = 50_000
TREND_ITERS = 20_000
TREND_LR = 0.05


@functools.lru_cache(maxsize=1)
def trend_task():
    reward = make_reward(TREND_SPACE, TREND_REWARD, np.random.default_rng(0))
    ref = make_policy(TREND_SPACE, "uniform")
    data = generate_dataset(reward, ref, TREND_PAIRS, 11)
    return reward, ref, data


@functools.lru_cache(maxsize=None)
def trend_policy(label: str, beta: float) -> TabularPolicy:
    reward, ref, data = trend_task()
    cfg = TrainConfig(beta=beta, divergence=label, learning_rate=TREND_LR,
                      iterations=TREND_ITERS, seed=12)
    pol, _ = train(data, ref, cfg, trace_every=TREND_ITERS)
    return pol


def check_recovery() -> list[CheckResult]:
    reward, ref, _ = trend_task()
    out = []
    for label in TREND_SPECS:
        opt = solve_optimal_policy(reward, ref, 0.1, label).optimal_policy
        tv = float(np.max(_tv(trend_policy(label, 0.1).prob_table(), opt)))
        start = float(np.max(_tv(ref.prob_table(), opt)))
        out.append(CheckResult(f"c4 f-DPO recovery TV [{label}]", tv, 0.05, tv <= 0.05,
                               f"reference starts at TV {start:.3f}"))
    return out


def check_diversity() -> list[CheckResult]:
    ent = {k: trend_policy(k, 0.1).entropy() for k in TREND_SPECS}
    d1 = {}
    for k in ("rkl", "fkl"):
        toks = sample_tokens(trend_policy(k, 0.1), 10_000, np.random.default_rng(21))
        d1[k] = distinct_n(toks, 1)
    ok = ent["rkl"] < ent["jsd"] < ent["fkl"]
    detail = ", ".join(f"H[{k}]={v:.4f}" for k, v in ent.items())
    return [
        CheckResult("c5 entropy rkl < jsd < fkl", min(ent["jsd"] - ent["rkl"], ent["fkl"] - ent["jsd"]),
                    0.0, ok, detail),
        CheckResult("c5 distinct-1 rkl <= fkl", d1["rkl"] - d1["fkl"], 0.0, d1["rkl"] <= d1["fkl"],
                    f"rkl={d1['rkl']:.4f}, fkl={d1['fkl']:.4f}"),
    ]


def check_ece_trend() -> list[CheckResult]:
    reward, ref, _ = trend_task()
    truth = ref.prob_table()
    out = []
    for label in TREND_SPECS:
        lo = ece_exact(trend_policy(label, 0.1), truth, TREND_SPACE).ece
        hi = ece_exact(trend_policy(label, 0.9), truth, TREND_SPACE).ece
        start = ece_exact(ref, truth, TREND_SPACE).ece
        out.append(CheckResult(f"c10 ECE(beta=0.9) <= ECE(beta=0.1) [{label}]", hi - lo, 0.0, hi <= lo,
                               f"{hi:.4f} vs {lo:.4f}"))
        ok = lo >= start and hi >= start
        out.append(CheckResult(f"c10 final ECE >= step-0 ECE [{label}]", min(lo, hi) - start, 0.0, ok,
                               f"step 0: {start:.4f}"))
    return out


# -- frontier on the 2x4 bandit ----------------------------------------------

FRONTIER_SPACE = TaskSpace(2, 4)
FRONTIER_BETAS = (0.03, 0.1, 0.3, 1.0)
FRONTIER_SLACK = 0.10


def frontier_matches(points, others, slack: float = FRONTIER_SLACK):
    """Match each (divergence, reward) in ``points`` against the curve ``others``.

    The comparison reward is the piecewise-linear interpolation of ``others``
    at the same divergence. Just outside the covered range, within a relative
    ``slack``, the nearest endpoint is used. Points further out are unmatched.
    Returns ``(divergence, reward, comparison)`` triples for matched points.
    """
    curve = sorted((d, r) for d, r in others if math.isfinite(d) and math.isfinite(r))
    if not curve:
        return []
    ds = np.array([c[0] for c in curve])
    rs = np.array([c[1] for c in curve])
    out = []
    for d, r in points:
        if not math.isfinite(d):
            continue
        if ds[0] <= d <= ds[-1]:
            out.append((d, r, float(np.interp(d, ds, rs))))
        elif ds[0] / (1 + slack) <= d < ds[0]:
            out.append((d, r, float(rs[0])))
        elif ds[-1] < d <= ds[-1] * (1 + slack):
            out.append((d, r, float(rs[-1])))
    return out


@functools.lru_cache(maxsize=1)
def frontier_points():
    rng = np.random.default_rng(31)
    reward = make_reward(FRONTIER_SPACE, "uniform(0,1)", rng)
    ref = make_policy(FRONTIER_SPACE, "uniform")
    data = generate_dataset(reward, ref, 20_000, 32)
    w = FRONTIER_SPACE.context_weights
    pts = {}
    for label in TREND_SPECS:
        spec = parse_divergence(label)
        for beta in FRONTIER_BETAS:
            pols = {}
            if label in ("rkl", "jsd"):
                # learning rate scaled by 1/beta^2 so every beta gets a comparable budget
                cfg = TrainConfig(beta=beta, divergence=spec, learning_rate=0.01 / beta ** 2,
                                  iterations=10_000, seed=33)
                pols["fdpo"] = train(data, ref, cfg, trace_every=10_000)[0]
            for variant in ("penalty_in_reward", "penalty_in_loss"):
                cfg = PpoConfig(variant=variant, beta=beta, divergence=spec, iterations=1000, seed=34)
                pols[variant] = train_ppo(reward, ref, cfg, trace_every=1000)[0]
            for method, pol in pols.items():
                p = pol.prob_table()
                d = float(w @ [exact_divergence(spec, a, b) for a, b in zip(p, ref.prob_table())])
                r = float(w @ np.sum(p * reward.rewards, axis=1))
                pts.setdefault((method, label), []).append((d, r))
    return pts


def _dominance(name, winner, loser, pts):
    m = frontier_matches(pts[winner], pts[loser])
    if not m:
        return CheckResult(name, math.nan, 0.0, False, "no matched divergence")
    gaps = [r - c for _, r, c in m]
    worst = min(gaps)
    return CheckResult(name, worst, 0.0, worst >= -1e-12, f"{len(m)} matched point(s)")


def check_frontier() -> list[CheckResult]:
    pts = frontier_points()
    out = []
    for label in ("rkl", "jsd"):
        for v in ("penalty_in_reward", "penalty_in_loss"):
            out.append(_dominance(f"c6 fdpo >= {v} [{label}]", ("fdpo", label), (v, label), pts))
    for label in ("jsd", "fkl"):
        out.append(_dominance(f"c6 penalty_in_loss >= penalty_in_reward [{label}]",
                              ("penalty_in_loss", label), ("penalty_in_reward", label), pts))
    return out


# -- estimator, bounds, penalties --------------------------------------------

def check_estimator() -> list[CheckResult]:
    rng = np.random.default_rng(41)
    labels = ("rkl", "fkl", "jsd", "alpha", "tv", "chi2")
    within = 0
    lower_var = 0
    worst_z = 0.0
    for i in range(20):
        name = labels[i % len(labels)]
        spec = parse_divergence(f"alpha:{rng.uniform(0.1, 0.9):.3f}" if name == "alpha" else name)
        m = int(rng.integers(2, 9))
        q = rng.dirichlet(np.ones(m))
        p = np.exp(np.log(q) + rng.normal(0.0, 0.5, size=m))
        p /= p.sum()
        xs = rng.choice(m, size=100_000, p=q)
        ratio = p[xs] / q[xs]
        est, se = mc_estimate(spec, ratio)
        exact = exact_divergence(spec, p, q)
        z = abs(est - exact) / se if se > 0 else (0.0 if est == exact else math.inf)
        worst_z = max(worst_z, z)
        within += z <= 3.0
        naive_var = np.var(f_value(spec, ratio), ddof=1)
        lower_var += np.var(mc_terms(spec, ratio), ddof=1) <= naive_var * (1 + 1e-12)
    return [
        CheckResult("c7 |mc - exact| <= 3 SE (triples within)", within, 20, within == 20,
                    f"worst z = {worst_z:.3f}"),
        CheckResult("c7 variance <= naive (triples)", lower_var, 18, lower_var >= 18),
    ]


def check_bounds(trials: int = 1000) -> list[CheckResult]:
    rng = np.random.default_rng(51)
    viol_kl = viol_js = 0
    for _ in range(trials):
        n, m = int(rng.integers(1, 4)), int(rng.integers(2, 9))
        space = TaskSpace(n, m)
        scale = rng.uniform(0.1, 3.0)
        p1 = make_policy(space, rng.normal(0.0, scale, size=(n, m)))
        p2 = make_policy(space, rng.normal(0.0, scale, size=(n, m)))
        truth = rng.dirichlet(np.ones(m), size=n)
        diff = ece_exact(p1, truth, space).ece - ece_exact(p2, truth, space).ece
        viol_kl += diff > ece_bound_rhs(p1, p2, space, "kl")
        viol_js += diff > ece_bound_rhs(p1, p2, space, "js")
    return [
        CheckResult(f"c8 KL bound violations ({trials} triples)", viol_kl, 0, viol_kl == 0),
        CheckResult(f"c8 JS bound violations ({trials} triples)", viol_js, 0, viol_js == 0),
    ]


def check_penalty_growth() -> list[CheckResult]:
    out = []
    for t in (10.0, 100.0, 1000.0):
        vals = {k: float(penalty_term(parse_divergence(k), t)) for k in ("fkl", "jsd", "rkl")}
        ok = vals["fkl"] > vals["jsd"] > vals["rkl"]
        out.append(CheckResult(f"c9 penalty FKL > JS > RKL at t={t:g}", vals["jsd"] - vals["rkl"], 0.0, ok,
                               ", ".join(f"{k}={v:.4f}" for k, v in vals.items())))
    return out


CHECKS: dict[str, Callable[[], list[CheckResult]]] = {
    "c1": check_kkt_oracle,
    "c2": check_reward_roundtrip,
    "c3": check_gradient,
    "c4": check_recovery,
    "c5": check_diversity,
    "c6": check_frontier,
    "c7": check_estimator,
    "c8": check_bounds,
    "c9": check_penalty_growth,
    "c10": check_ece_trend,
}

SCOPES = {
    "kkt": ("c1", "c2"),
    "gradient": ("c3",),
    "estimator": ("c7",),
    "bounds": ("c8",),
    "ordering": ("c9", "c4", "c5", "c6", "c10"),
}
SCOPES["all"] = tuple(CHECKS)


def run_checks(scope: str = "all") -> list[CheckResult]:
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}; expected one of {', '.join(SCOPES)}")
    results = []
    for key in SCOPES[scope]:
        results.extend(CHECKS[key]())
    return results
