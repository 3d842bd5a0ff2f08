import math

import numpy as np
import pytest

from fdpo_lab.divergence import parse_divergence
from fdpo_lab.harness import (
    ConfigError,
    ExperimentConfig,
    RunError,
    build_task,
    emit_csv,
    load_config,
    parse_config,
    read_csv,
    run_id_for,
    run_seed,
    run_sweep,
    verify_suite,
)
from fdpo_lab.kkt import solve_optimal_policy
from fdpo_lab.records import CSV_COLUMNS, SweepRecord
from fdpo_lab.tasks import make_reference, make_reward, parse_generator
from fdpo_lab.policy import TaskSpace

SMALL = """
# tiny sweep
task.contexts = 2
task.outcomes = 3
sweep.methods = fdpo
sweep.divergences = rkl
sweep.betas = 0.5
fdpo.pairs = 500
fdpo.iterations = 50
metrics.samples = 200
"""


def test_minimal_config_fills_defaults():
    cfg = parse_config("")
    assert cfg == ExperimentConfig()
    echo = cfg.echo()
    assert "task.contexts = 2" in echo
    assert "train.divergence = rkl" in echo
    cfg = parse_config(SMALL)
    assert cfg.outcomes == 3 and cfg.fdpo_iterations == 50
    assert cfg.divergences == (parse_divergence("rkl"),)


def test_config_values_and_lists():
    cfg = parse_config('sweep.divergences = rkl, "jsd", alpha:0.5\nsweep.betas = 0.1, 0.3\n'
                       "sweep.methods = fdpo, ppo_loss\ntask.reward = uniform(-1, 1)\n"
                       "train.divergence = 'fkl'  # trailing comment\n")
    assert [s.label for s in cfg.divergences] == ["rkl", "jsd", "alpha:0.5"]
    assert cfg.betas == (0.1, 0.3)
    assert cfg.methods == ("fdpo", "ppo_loss")
    assert cfg.reward == "uniform(-1, 1)"
    assert cfg.divergence.label == "fkl"


@pytest.mark.parametrize("text, key", [
    ('train.divergence = "alpha:1.5"', "train.divergence"),
    ("train.betaa = 1", "train.betaa"),
    ("betaa = 1", "betaa"),
    ("task.contexts = 0", "task.contexts"),
    ("task.reward = gaussian(1)", "task.reward"),
    ("ppo.clip_epsilon = 1.5", "ppo.clip_epsilon"),
    ("sweep.methods = fdpo, dqn", "sweep.methods"),
    ("sweep.methods = fdpo\nsweep.divergences = tv", "sweep.divergences"),
    ("fdpo.scale_lr_by_beta = maybe", "fdpo.scale_lr_by_beta"),
    ("task.contexts", "task.contexts"),
])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.key == key
    assert key in str(info.value)


def test_alpha_message():
    with pytest.raises(ConfigError, match=r"\(0, 1\)"):
        parse_config('train.divergence = "alpha:1.5"')


def test_load_config_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_config(tmp_path / "nope.cfg")
    path = tmp_path / "a.cfg"
    path.write_text(SMALL)
    assert load_config(path) == parse_config(SMALL)


def test_generators():
    assert parse_generator("uniform(-1, 1)") == ("uniform", (-1.0, 1.0))
    sp = TaskSpace(2, 4)
    rng = np.random.default_rng(0)
    r = make_reward(sp, "uniform(-1, 1)", rng).rewards
    assert r.shape == (2, 4) and r.min() >= -1 and r.max() <= 1
    b = make_reward(sp, "bimodal(2)", rng).rewards
    assert np.array_equal(b, [[2, 0, 2, 0], [0, 2, 0, 2]])
    lin = make_reward(sp, "linear(3)", rng).rewards
    assert np.allclose(lin, [[0, 1, 2, 3]] * 2)
    assert np.allclose(make_reference(sp, "uniform", rng).prob_table(), 0.25)
    with pytest.raises(ValueError):
        make_reward(sp, "uniform(1, 0)", rng)
    with pytest.raises(ValueError):
        make_reference(sp, "greedy", rng)


def test_seeds():
    assert run_seed(0, "a") == run_seed(0, "a")
    assert run_seed(0, "a") != run_seed(0, "b")
    assert run_seed(0, "a") != run_seed(1, "a")
    assert run_id_for("fdpo", parse_divergence("alpha:0.5"), 0.1) == "fdpo-alpha:0.5-b0.1"


def test_single_run_gives_two_records():
    recs = run_sweep(parse_config(SMALL))
    assert sorted(r.method for r in recs) == ["fdpo", "kkt_optimal"]
    assert all(r.divergence == "rkl" and r.beta == 0.5 for r in recs)


def test_adding_runs_keeps_existing_records(tmp_path):
    a = {r.run_id: r for r in run_sweep(parse_config(SMALL))}
    b = {r.run_id: r for r in run_sweep(parse_config(SMALL + "sweep.betas = 0.5, 1.0\n"))}
    assert set(a) < set(b)
    for k in a:
        assert a[k] == b[k]


def test_sweep_bytes_identical_and_job_independent(tmp_path):
    cfg = parse_config(SMALL + "sweep.methods = fdpo, ppo_reward, ppo_loss\nppo.iterations = 20\n")
    paths = []
    for k, jobs in enumerate([1, 1, 2]):
        p = tmp_path / f"s{k}.csv"
        emit_csv(run_sweep(cfg, jobs=jobs), p)
        paths.append(p.read_bytes())
    assert paths[0] == paths[1] == paths[2]


def test_beta_sweep_divergence_decreasing():
    cfg = parse_config("task.contexts = 2\ntask.outcomes = 4\nsweep.betas = 0.1, 0.3, 1.0\n"
                       "fdpo.pairs = 5000\nfdpo.iterations = 3000\nmetrics.samples = 100\n")
    recs = run_sweep(cfg)
    by = {(r.method, r.beta): r.achieved_divergence for r in recs}
    for method in ("fdpo", "kkt_optimal"):
        assert by[(method, 0.1)] > by[(method, 0.3)] > by[(method, 1.0)]
    reward, reference = build_task(cfg)
    for beta in (0.1, 0.3, 1.0):
        opt = solve_optimal_policy(reward, reference, beta, "rkl").as_policy(reference)
        pol_rec = next(r for r in recs if r.method == "kkt_optimal" and r.beta == beta)
        assert pol_rec.mean_reward == pytest.approx(
            float(reference.space.context_weights @ np.sum(opt.prob_table() * reward.rewards, axis=1)))


def test_divergent_run_reports_run_error():
    # an absurd learning rate drives the fkl policy off its domain
    cfg = parse_config(SMALL + "sweep.divergences = fkl\nfdpo.learning_rate = 1e6\nfdpo.iterations = 200\n")
    with pytest.raises(RunError) as info:
        run_sweep(cfg)
    assert info.value.run_id == "fdpo-fkl-b0.5"


def record(run_id, **kw):
    base = dict(run_id=run_id, method="fdpo", divergence="rkl", beta=0.1, achieved_divergence=0.1,
                mean_reward=0.5, entropy=1.0, ece=0.1, distinct1=0.01, seed=1)
    base.update(kw)
    return SweepRecord(**base)


def test_emit_csv_examples(tmp_path):
    p = tmp_path / "empty.csv"
    emit_csv([], p)
    assert p.read_text() == ",".join(CSV_COLUMNS) + "\n"
    recs = [record("b", mean_reward=1 / 3), record("a", beta=0.3, achieved_divergence=math.pi)]
    p1, p2 = tmp_path / "1.csv", tmp_path / "2.csv"
    emit_csv(recs, p1)
    emit_csv(recs[::-1], p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = read_csv(p1)
    assert [r.run_id for r in back] == ["a", "b"]
    assert back[0].achieved_divergence == pytest.approx(math.pi, rel=1e-11)
    assert back[1].mean_reward == float(format(1 / 3, ".12g"))
    assert "0.333333333333" in p1.read_text()
    with pytest.raises(OSError, match="nodir"):
        emit_csv(recs, tmp_path / "nodir" / "x.csv")


def test_verify_suite_scopes():
    rep = verify_suite("estimator")
    assert rep.passed
    assert rep.results and all(r.name.startswith("c7 ") for r in rep.results)
    assert all(line.startswith("PASS c7") for line in rep.lines())
    with pytest.raises(ValueError):
        verify_suite("nothing")
