import math

import numpy as np
import pytest

from fdpo_lab.divergence import UnsupportedDivergenceError, exact_divergence, parse_divergence
from fdpo_lab.kkt import solve_optimal_policy
from fdpo_lab.policy import TaskSpace, make_policy
from fdpo_lab.preference import RewardTable
from fdpo_lab.rl_baselines import (
    PpoConfig,
    Variant,
    frontier_rollout,
    penalized_reward,
    ppo_grad,
    ppo_objective,
    regularizer,
    regularizer_grad,
    train_ppo,
)


def tv(a, b):
    return 0.5 * np.abs(a - b).sum(axis=1).max()


def test_penalized_reward_examples():
    sp = TaskSpace(1, 2)
    ref = make_policy(sp)
    r = RewardTable(sp, [[0.4, -0.3]])
    for label in ["rkl", "jsd", "fkl"]:
        assert penalized_reward(r, ref, ref, 0, 1, 1.0, parse_divergence(label)) == -0.3
    # t = pi_ref / pi = e for outcome 1
    pol = make_policy(sp, [[0.0, math.log(0.5 / math.e) - math.log(1 - 0.5 / math.e)]])
    assert pol.probs(0)[1] == pytest.approx(0.5 / math.e)
    assert penalized_reward(r, pol, ref, 0, 1, 1.0, "rkl") == pytest.approx(-0.3 + 1.0)
    pol = make_policy(sp, [[0.0, math.log(0.005) - math.log(0.995)]])
    assert penalized_reward(r, pol, ref, 0, 1, 1.0, "fkl") == pytest.approx(-0.3 - 460.517, abs=1e-3)
    with pytest.raises(UnsupportedDivergenceError):
        penalized_reward(r, ref, ref, 0, 0, 1.0, "alpha:0.5")


def test_ppo_objective_examples():
    sp = TaskSpace(1, 2)
    old = make_policy(sp)
    batch = [(0, 0, 1.5), (0, 1, -0.5)]
    assert ppo_objective(old, old, batch, 0.2) == pytest.approx(0.5)
    # rho = 2 on outcome 0
    pol = make_policy(sp, [[50.0, 0.0]])
    assert pol.probs(0)[0] == pytest.approx(1.0)
    assert ppo_objective(pol, old, [(0, 0, 1.0)], 0.2) == pytest.approx(1.2)
    zero = [(0, 0, 0.0), (0, 1, 0.0)]
    assert ppo_objective(pol, old, zero, 0.2) == 0.0
    assert np.all(ppo_grad(pol, old, zero, 0.2) == 0.0)
    with pytest.raises(ValueError):
        ppo_objective(old, old, [], 0.2)


def test_ppo_grad_matches_finite_differences():
    rng = np.random.default_rng(0)
    sp = TaskSpace(2, 4)
    old = make_policy(sp, rng.normal(size=(2, 4)))
    pol = make_policy(sp, old.logits + rng.normal(0, 0.05, size=(2, 4)))
    batch = [(int(rng.integers(2)), int(rng.integers(4)), float(rng.normal())) for _ in range(16)]
    g = ppo_grad(pol, old, batch, 0.2)
    h = 1e-6
    for idx in np.ndindex(2, 4):
        up, dn = pol.logits.copy(), pol.logits.copy()
        up[idx] += h
        dn[idx] -= h
        fd = (ppo_objective(pol.with_logits(up), old, batch, 0.2)
              - ppo_objective(pol.with_logits(dn), old, batch, 0.2)) / (2 * h)
        assert g[idx] == pytest.approx(fd, abs=1e-7)


@pytest.mark.parametrize("label", ["rkl", "fkl", "jsd", "alpha:0.5"])
@pytest.mark.parametrize("order", ["reference_first", "policy_first"])
def test_regularizer_gradient_exact(label, order):
    rng = np.random.default_rng(1)
    sp = TaskSpace(3, 5, [0.2, 0.5, 0.3])
    ref = make_policy(sp, rng.normal(size=(3, 5)))
    pol = make_policy(sp, rng.normal(size=(3, 5)))
    g = regularizer_grad(pol, ref, label, order)
    h = 1e-5
    fd = np.zeros_like(g)
    for idx in np.ndindex(3, 5):
        up, dn = pol.logits.copy(), pol.logits.copy()
        up[idx] += h
        dn[idx] -= h
        fd[idx] = (regularizer(pol.with_logits(up), ref, label, order)
                   - regularizer(pol.with_logits(dn), ref, label, order)) / (2 * h)
    assert np.max(np.abs(g - fd)) <= 1e-6 * np.max(np.abs(fd))


def test_regularizer_argument_order():
    rng = np.random.default_rng(2)
    sp = TaskSpace(1, 4)
    ref = make_policy(sp, rng.normal(size=(1, 4)))
    pol = make_policy(sp, rng.normal(size=(1, 4)))
    spec = parse_divergence("rkl")
    p, q = pol.prob_table()[0], ref.prob_table()[0]
    assert regularizer(pol, ref, spec) == pytest.approx(exact_divergence(spec, q, p))
    assert regularizer(pol, ref, spec, "policy_first") == pytest.approx(exact_divergence(spec, p, q))


def test_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(clip_epsilon=0.0)
    with pytest.raises(ValueError):
        PpoConfig(beta=-1)
    with pytest.raises(ValueError):
        PpoConfig(variant="reward", divergence="alpha:0.5")
    with pytest.raises(ValueError):
        PpoConfig(variant="loss", divergence="tv")
    with pytest.raises(ValueError):
        PpoConfig(regularizer_order="sideways")
    with pytest.raises(ValueError):
        Variant.parse("value")
    assert PpoConfig(variant="loss", divergence="alpha:0.5").variant is Variant.PENALTY_IN_LOSS


def test_large_beta_loss_variant_stays_at_reference():
    sp = TaskSpace(2, 4)
    rng = np.random.default_rng(3)
    r = RewardTable(sp, rng.uniform(0, 1, size=(2, 4)))
    ref = make_policy(sp, rng.normal(size=(2, 4)))
    pol, _ = train_ppo(r, ref, PpoConfig(variant="loss", beta=1e3, iterations=300, seed=1))
    assert tv(pol.prob_table(), ref.prob_table()) <= 0.05


@pytest.mark.parametrize("variant", ["reward", "loss"])
def test_constant_reward_stays_at_reference(variant):
    sp = TaskSpace(2, 4)
    ref = make_policy(sp, np.random.default_rng(4).normal(size=(2, 4)))
    r = RewardTable(sp, np.full((2, 4), 0.3))
    pol, _ = train_ppo(r, ref, PpoConfig(variant=variant, beta=0.1, iterations=300, seed=2))
    assert tv(pol.prob_table(), ref.prob_table()) <= 0.05


def test_rkl_reward_variant_reaches_kkt_reward():
    sp = TaskSpace(1, 2)
    r = RewardTable(sp, [[1.0, 0.0]])
    ref = make_policy(sp)
    pol, trace = train_ppo(r, ref, PpoConfig(variant="reward", beta=0.1, iterations=500, seed=3))
    opt = solve_optimal_policy(r, ref, 0.1, "rkl").optimal_policy
    assert abs(pol.prob_table()[0] @ r.rewards[0] - opt[0] @ r.rewards[0]) <= 0.05
    assert len(trace) == 500
    assert len(trace.penalty_max) == 500


def test_train_deterministic():
    sp = TaskSpace(2, 3)
    r = RewardTable(sp, [[1.0, 0.0, 0.5], [0.2, 0.9, 0.0]])
    ref = make_policy(sp)
    cfg = PpoConfig(variant="loss", divergence="jsd", iterations=50, seed=9)
    a, _ = train_ppo(r, ref, cfg)
    b, _ = train_ppo(r, ref, cfg)
    assert np.array_equal(a.logits, b.logits)
    z, tz = train_ppo(r, ref, PpoConfig(iterations=0))
    assert np.array_equal(z.logits, ref.logits) and len(tz) == 0


def test_penalty_magnitude_ordering():
    sp = TaskSpace(2, 6)
    r = RewardTable(sp, np.random.default_rng(5).uniform(0, 1, size=(2, 6)))
    ref = make_policy(sp)
    out = {}
    for label in ["rkl", "jsd", "fkl"]:
        _, tr = train_ppo(r, ref, PpoConfig(variant="reward", divergence=label, beta=0.1,
                                            iterations=200, seed=6))
        out[label] = tr
    checked = 0
    for k in range(200):
        if min(out[lab].ratio_max[k] for lab in out) >= 10:
            pm = {lab: out[lab].penalty_max[k] for lab in out}
            assert pm["fkl"] >= pm["jsd"] >= pm["rkl"]
            checked += 1
    assert checked > 0


def test_frontier_rollout():
    sp = TaskSpace(2, 4)
    rng = np.random.default_rng(7)
    r = RewardTable(sp, rng.uniform(0, 1, size=(2, 4)))
    ref = make_policy(sp, rng.normal(size=(2, 4)))
    rec = frontier_rollout(ref, r, ref, "rkl", 100, np.random.default_rng(0), run_id="x")
    assert rec.achieved_divergence == 0.0
    assert rec.mean_reward == pytest.approx(float(sp.context_weights @ np.sum(ref.prob_table() * r.rewards, axis=1)))
    for label in ["rkl", "jsd", "fkl"]:
        opt = solve_optimal_policy(r, ref, 0.2, label).as_policy(ref)
        rec = frontier_rollout(opt, r, ref, label, 100_000, np.random.default_rng(1))
        assert abs(rec.mc_divergence - rec.achieved_divergence) <= 3 * rec.mc_standard_error
    with pytest.raises(ValueError):
        frontier_rollout(ref, r, ref, "rkl", 0, np.random.default_rng(0))


def test_kkt_optimum_upper_bounds_trained_policies():
    sp = TaskSpace(2, 4)
    rng = np.random.default_rng(8)
    r = RewardTable(sp, rng.uniform(0, 1, size=(2, 4)))
    ref = make_policy(sp)
    spec = parse_divergence("rkl")
    pol, _ = train_ppo(r, ref, PpoConfig(variant="loss", beta=0.3, iterations=300, seed=4))
    rec = frontier_rollout(pol, r, ref, spec, 10, np.random.default_rng(0))
    # the optimum at the matching budget: bisect beta until the optimum's divergence equals the policy's
    lo, hi = 1e-3, 1e3
    for _ in range(100):
        mid = math.sqrt(lo * hi)
        opt = solve_optimal_policy(r, ref, mid, spec).as_policy(ref)
        d = frontier_rollout(opt, r, ref, spec, 10, np.random.default_rng(0))
        lo, hi = (lo, mid) if d.achieved_divergence < rec.achieved_divergence else (mid, hi)
    assert d.mean_reward >= rec.mean_reward - 1e-9
