import json
import subprocess
import sys

import numpy as np
import pytest

from robustpref.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, main
from robustpref.policy import PolicyTable
from robustpref.riskcore import RewardModel


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def exact_data(tmp_path):
    out = tmp_path / "data"
    assert run("prefgen", "tabular", "--space-size", 5, "--reward-law", "linear", "--mode", "exact", "--eps-p", 0.2, "--eps-n", 0.1, "--out", out) == EXIT_OK
    return out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_prefgen_writes_dataset_and_manifest(exact_data):
    assert (exact_data / "pairs.csv").read_text().startswith("a1,a2,clean_label,noisy_label")
    m = manifest(exact_data)
    assert sorted(m["entries"]["prefgen"]["artifacts"]) == ["pairs.csv", "space.json"]


def test_prefgen_digits_writes_train_and_test(tmp_path):
    out = tmp_path / "digits"
    assert run("prefgen", "digits", "--n-pairs", 200, "--n-test-pairs", 50, "--eps-p", 0.3, "--eps-n", 0.3, "--out", out) == EXIT_OK
    assert (out / "train" / "pairs.csv").exists() and (out / "test" / "pairs.csv").exists()


def test_train_reward_and_diagnose(exact_data, tmp_path, capsys):
    model_path = tmp_path / "run" / "model.json"
    assert run("train-reward", "--data", exact_data, "--loss", "sigmoid", "--lr", 1.0, "--epochs", 300, "--mode", "exact", "--out", model_path) == EXIT_OK
    model = RewardModel.load(model_path)
    assert model.provenance["loss"] == "sigmoid"
    assert (tmp_path / "run" / "model_trace.csv").read_text().startswith("epoch,noisy_risk,clean_risk,grad_norm")
    capsys.readouterr()
    assert run("diagnose", "--reward", model_path, "--data", exact_data, "--out", tmp_path / "run") == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["rank_preservation_rate"] == 1.0
    assert set(manifest(tmp_path / "run")["entries"]) == {"train-reward", "diagnose"}


def test_mode_mismatch_is_config_error(exact_data, tmp_path):
    assert run("train-reward", "--data", exact_data, "--mode", "empirical", "--out", tmp_path) == EXIT_CONFIG


def test_unhinged_without_clip_fails_training(exact_data, tmp_path):
    assert run("train-reward", "--data", exact_data, "--loss", "unhinged", "--out", tmp_path) == EXIT_FAILED
    assert run("train-reward", "--data", exact_data, "--loss", "unhinged", "--clip", 20, "--epochs", 50, "--out", tmp_path) == EXIT_OK


def test_policy_pipelines_and_eval(exact_data, tmp_path, capsys):
    off = tmp_path / "off.json"
    assert run("train-policy", "--data", exact_data, "--pipeline", "offline", "--loss", "sigmoid", "--lr", 50, "--epochs", 200, "--out", off) == EXIT_OK
    rl = tmp_path / "rl.json"
    assert run("train-policy", "--data", exact_data, "--pipeline", "rlhf", "--loss", "sigmoid", "--lr", 1, "--epochs", 300, "--out", rl) == EXIT_OK
    assert (tmp_path / "rl_reward.json").exists()
    for path in (off, rl):
        pi = PolicyTable.load(path)
        assert abs(pi.probs.sum() - 1) < 1e-12
        capsys.readouterr()
        assert run("eval-policy", "--policy", path, "--space", exact_data / "space.json") == EXIT_OK
        result = json.loads(capsys.readouterr().out)
        assert result["improvement_margin"] > 0
        assert result["improvement_margin"] == pytest.approx(result["covariance_margin"], abs=1e-12)


def test_offline_rejects_asymmetric_loss_without_baseline_flag(exact_data, tmp_path):
    ref = tmp_path / "ref.json"
    ref.write_text(json.dumps([0.2] * 5))
    assert run("train-policy", "--data", exact_data, "--loss", "logistic", "--reference", ref, "--epochs", 5, "--out", tmp_path) == EXIT_OK
    ref.write_text(json.dumps([0.5, 0.5]))
    assert run("train-policy", "--data", exact_data, "--reference", ref, "--out", tmp_path) == EXIT_CONFIG


def test_eval_policy_needs_one_space_source(tmp_path, exact_data):
    pi = tmp_path / "pi.json"
    PolicyTable(np.full(5, 0.2), np.full(5, 0.2), 0.1).save(pi)
    assert run("eval-policy", "--policy", pi) == EXIT_CONFIG
    assert run("eval-policy", "--policy", pi, "--data", exact_data, "--space", exact_data / "space.json") == EXIT_CONFIG


@pytest.mark.parametrize(
    "argv",
    [
        ["prefgen", "gaussian", "--n", 100, "--eps-n", 0.9, "--prior", 0.3, "--out", "{tmp}"],
        ["prefgen", "tabular", "--eps-p", 1.5, "--out", "{tmp}"],
        ["train-reward", "--data", "{tmp}/missing", "--out", "{tmp}"],
        ["train-reward", "--data", "{tmp}", "--loss", "rdpo:eps=0.7", "--out", "{tmp}"],
        ["sweep", "--losses", "sigmoid"],
        ["verify", "--only", "nonsense"],
    ],
)
def test_config_errors_exit_two(tmp_path, argv):
    assert run(*[str(a).replace("{tmp}", str(tmp_path)) for a in argv]) == EXIT_CONFIG


def test_sweep_exit_codes(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": {"generator": "tabular", "space_size": 4, "mode": "exact"}, "train": {"epochs": 50}}))
    ok = tmp_path / "ok"
    assert run("sweep", "--config", cfg, "--losses", "sigmoid", "--seeds", 0, "--noise", 0.0, 0.2, "--out", ok) == EXIT_OK
    assert "results.csv" in manifest(ok)["entries"]["sweep"]["artifacts"]
    bad = tmp_path / "bad"
    assert run("sweep", "--config", cfg, "--losses", "unhinged", "sigmoid", "--seeds", 0, "--noise", 0.1, "--out", bad) == EXIT_FAILED
    assert len((bad / "results.csv").read_text().splitlines()) == 3
    cfg.write_text("[1, 2]")
    assert run("sweep", "--config", cfg, "--out", bad) == EXIT_CONFIG


def test_fig2_and_verify_commands(tmp_path):
    assert run("fig2", "--n", 2000, "--out", tmp_path) == EXIT_OK
    assert (tmp_path / "fig2.csv").exists()
    assert run("verify", "--only", "flip", "improvement", "--out", tmp_path) == EXIT_OK
    body = json.loads((tmp_path / "verify.json").read_text())
    assert [r["passed"] for r in body] == [True, True]


def test_argument_errors_and_console_script(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("prefgen", "--mode", "bogus", "--out", tmp_path)
    assert exc.value.code == 2
    proc = subprocess.run([sys.executable, "-m", "robustpref.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
