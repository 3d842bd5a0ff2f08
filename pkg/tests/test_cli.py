import numpy as np
import pytest

from fdpo_lab.cli import main
from fdpo_lab.harness import read_csv
from fdpo_lab.policy import TaskSpace, load_policy, make_policy, save_policy

CFG = """
task.contexts = 2
task.outcomes = 3
sweep.methods = fdpo, ppo_loss
sweep.divergences = rkl, jsd
sweep.betas = 0.3
train.divergence = jsd
train.beta = 0.5
fdpo.pairs = 400
fdpo.iterations = 40
ppo.iterations = 20
metrics.samples = 100
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(CFG)
    return p


def test_estimate(capsys):
    assert main(["estimate", "--divergence", "rkl", "--p", "0.75,0.25", "--q", "0.5,0.5"]) == 0
    assert "exact rkl = 0.130812" in capsys.readouterr().out
    assert main(["estimate", "--divergence", "fkl", "--p", "0.3,0.7", "--q", "0.6,0.4",
                 "--samples", "1000", "--seed", "4"]) == 0
    assert "estimate =" in capsys.readouterr().out
    assert main(["estimate", "--divergence", "rkl", "--p", "0.7,0.7", "--q", "0.5,0.5"]) == 2


def test_usage_errors(capsys, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
    assert main(["sweep", "--config", str(tmp_path / "missing.cfg")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("betaa = 1\n")
    assert main(["sweep", "--config", str(bad)]) == 2
    assert "betaa" in capsys.readouterr().err
    bad.write_text('train.divergence = "alpha:1.5"\n')
    assert main(["train-ppo", "--config", str(bad), "--out-policy", str(tmp_path / "p")]) == 2
    assert "train.divergence" in capsys.readouterr().err


def test_sweep_deterministic_across_jobs(cfg, tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sweep", "--config", str(cfg), "--out", str(a), "--quiet"]) == 0
    assert capsys.readouterr().out == ""
    assert main(["--jobs", "2", "sweep", "--config", str(cfg), "--out", str(b)]) == 0
    out = capsys.readouterr().out
    assert "sweep.methods = fdpo, ppo_loss" in out
    assert a.read_bytes() == b.read_bytes()
    recs = read_csv(a)
    assert len(recs) == 6
    c = tmp_path / "c.csv"
    assert main(["sweep", "--config", str(cfg), "--out", str(c), "--seed", "5", "--quiet"]) == 0
    assert c.read_bytes() != a.read_bytes()


def test_jobs_from_environment(cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("FDPO_LAB_JOBS", "2")
    p = tmp_path / "env.csv"
    assert main(["sweep", "--config", str(cfg), "--out", str(p), "--quiet"]) == 0
    q = tmp_path / "one.csv"
    assert main(["sweep", "--config", str(cfg), "--out", str(q), "--quiet", "--jobs", "1"]) == 0
    assert p.read_bytes() == q.read_bytes()


def test_dataset_and_training(cfg, tmp_path):
    data, pol, trace = tmp_path / "d.csv", tmp_path / "pol.txt", tmp_path / "trace.csv"
    assert main(["make-dataset", "--config", str(cfg), "--out", str(data), "--pairs", "300", "--quiet"]) == 0
    assert len(data.read_text().splitlines()) == 302
    assert main(["train-dpo", "--config", str(cfg), "--dataset", str(data), "--out-policy", str(pol),
                 "--trace", str(trace), "--quiet"]) == 0
    assert load_policy(pol, TaskSpace(2, 3)).logits.shape == (2, 3)
    assert len(trace.read_text().splitlines()) == 41
    for variant in ("reward", "loss"):
        assert main(["train-ppo", "--config", str(cfg), "--variant", variant, "--clip-epsilon", "0.1",
                     "--out-policy", str(pol), "--quiet"]) == 0
    assert main(["train-ppo", "--config", str(cfg), "--clip-epsilon", "2", "--out-policy", str(pol)]) == 2


def test_ece_command(tmp_path, capsys):
    sp = TaskSpace(2, 3)
    rng = np.random.default_rng(0)
    paths = []
    for name in ("p1", "p2", "truth"):
        p = tmp_path / f"{name}.txt"
        save_policy(make_policy(sp, rng.normal(size=(2, 3))), p)
        paths.append(str(p))
    assert main(["ece", "--policy1", paths[0], "--policy2", paths[1], "--truth", paths[2]]) == 0
    out = capsys.readouterr().out
    assert "PASS ece1 - ece2 <= kl bound" in out
    assert "PASS ece1 - ece2 <= js bound" in out


def test_verify_commands(capsys):
    assert main(["verify", "--scope", "bounds"]) == 0
    assert capsys.readouterr().out.startswith("PASS c8")
    assert main(["verify-kkt", "--divergence", "jsd", "--instances", "3", "--quiet"]) == 0
    assert main(["verify-kkt", "--divergence", "tv"]) == 2
