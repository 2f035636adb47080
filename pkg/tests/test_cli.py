import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from guided_bfn import cli
from guided_bfn.cli import cmd_compare, cmd_run, cmd_verify, main

SMALL = """
sampler = "{sampler}"
n_chains = {n_chains}
base_seed = 3

[schedule]
n_steps = {n_steps}

[guidance]
lambda_coords = 40.0
lambda_types = 40.0
ensemble_size = 4
"""


def write_config(tmp_path, name="small", sampler="cbyg", n_chains=2, n_steps=12, extra=""):
    p = tmp_path / f"{name}.toml"
    p.write_text(SMALL.format(sampler=sampler, n_chains=n_chains, n_steps=n_steps) + extra, encoding="utf-8")
    return p


def run_files(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


class TestRun:
    def test_artifacts(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "run"
        assert cmd_run(str(cfg), str(out)) == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == ["chain_0000.jsonl", "chain_0000.mol", "chain_0001.jsonl", "chain_0001.mol", "header.json", "stats.csv"]
        header = json.loads((out / "header.json").read_text())
        for key in ("version", "sampler", "seed", "n_steps", "lambda_x", "lambda_v", "tau", "M", "uncertainty_scaling", "sigma1", "beta1", "rho_0"):
            assert key in header
        assert header["chain_seeds"] == [3, 4] and header["M"] == 4
        lines = (out / "chain_0000.jsonl").read_text().splitlines()
        assert len(lines) == 12 and json.loads(lines[0])["step"] == 1
        assert (out / "stats.csv").read_text().splitlines()[0] == "step,t,mean_score,var_score,mean_mu"

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        assert cmd_run(str(cfg), str(tmp_path / "a")) == 0
        assert cmd_run(str(cfg), str(tmp_path / "b")) == 0
        assert run_files(tmp_path / "a") == run_files(tmp_path / "b")

    def test_parallel_matches_serial(self, tmp_path):
        cfg = write_config(tmp_path, n_chains=3)
        assert cmd_run(str(cfg), str(tmp_path / "a")) == 0
        assert cmd_run(str(cfg), str(tmp_path / "b"), jobs=2) == 0
        assert run_files(tmp_path / "a") == run_files(tmp_path / "b")

    def test_seed_override(self, tmp_path):
        cfg = write_config(tmp_path, n_chains=1)
        assert cmd_run(str(cfg), str(tmp_path / "a"), seed_override=11) == 0
        assert json.loads((tmp_path / "a" / "header.json").read_text())["chain_seeds"] == [11]

    def test_negative_lambda(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[guidance]\nlambda_coords = -1.0\n")
        assert cmd_run(str(cfg), str(tmp_path / "x")) == 2
        assert "lambda_coords" in capsys.readouterr().err
        assert not (tmp_path / "x").exists()

    @pytest.mark.parametrize(
        "text, key",
        [
            ("lambda = 3\n", "lambda"),
            ("[guidance]\nlamda_coords = 1.0\n", "guidance.lamda_coords"),
            ("sampler = \"ddim\"\n", "sampler"),
            ("[schedule]\nn_steps = 0\n", "schedule.n_steps"),
            ("[world]\nn_atoms = \"six\"\n", "world.n_atoms"),
            ("n_chains = [\n", "config"),
        ],
    )
    def test_invalid_configs(self, tmp_path, capsys, text, key):
        cfg = tmp_path / "bad.toml"
        cfg.write_text(text)
        assert cmd_run(str(cfg), str(tmp_path / "x")) == 2
        assert key in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert cmd_run(str(tmp_path / "nope.toml"), str(tmp_path / "x")) == 2

    def test_env_root(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path, name="envcase", n_chains=1, n_steps=5)
        monkeypatch.setenv("GUIDED_BFN_OUT", str(tmp_path / "root"))
        assert cmd_run(str(cfg)) == 0
        assert (tmp_path / "root" / "envcase" / "header.json").exists()

    def test_config_output_dir(self, tmp_path):
        target = tmp_path / "from_config"
        cfg = tmp_path / "c.toml"
        cfg.write_text(f'n_chains = 1\noutput_dir = "{target.as_posix()}"\n[schedule]\nn_steps = 4\n')
        assert cmd_run(str(cfg)) == 0 and (target / "stats.csv").exists()

    def test_runtime_failure(self, tmp_path, monkeypatch, capsys):
        from guided_bfn import experiment

        real = experiment.cbyg_sample

        def broken(*args, **kwargs):
            bad = args[0]

            def model(theta_x, theta_v, pocket, t):
                if t > 0.5:
                    raise FloatingPointError("overflow in output model")
                return bad(theta_x, theta_v, pocket, t)

            return real(model, *args[1:], n_atoms=bad.n_atoms, **kwargs)

        monkeypatch.setattr(experiment, "cbyg_sample", broken)
        out = tmp_path / "run"
        assert cmd_run(str(write_config(tmp_path)), str(out)) == 3
        assert (out / "FAILED").exists() and not (out / "stats.csv").exists()
        err = capsys.readouterr().err
        assert "chain 0" in err and "step 8" in err

    def test_shipped_names(self, tmp_path):
        from guided_bfn.config import SHIPPED_CONFIGS, load_config

        for name in SHIPPED_CONFIGS:
            cfg = load_config(name)
            assert cfg.guidance.lambda_coords == 40.0 and cfg.n_steps == 100


@pytest.fixture(scope="module")
def arms(tmp_path_factory):
    root = tmp_path_factory.mktemp("arms")
    dirs = {}
    for sampler in ("cbyg", "bfn-unguided", "targetopt-x0"):
        cfg = write_config(root, name=sampler, sampler=sampler, n_chains=3, n_steps=10)
        dirs[sampler] = root / f"run-{sampler}"
        assert cmd_run(str(cfg), str(dirs[sampler])) == 0
    return root, dirs


class TestCompare:
    def test_self_comparison(self, arms, tmp_path):
        _, dirs = arms
        d = str(dirs["cbyg"])
        assert cmd_compare([d, d], str(tmp_path)) == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert [a["label"] for a in summary["arms"]] == ["cbyg#1", "cbyg#2"]
        (pair,) = summary["pairings"]
        assert pair["mean_delta"] == 0.0 and pair["win_rate"] == 0.0

    def test_three_arms(self, arms, tmp_path):
        _, dirs = arms
        assert cmd_compare([str(dirs[s]) for s in ("cbyg", "bfn-unguided", "targetopt-x0")], str(tmp_path)) == 0
        header = (tmp_path / "comparison.csv").read_text().splitlines()[0].split(",")
        assert header[:2] == ["step", "t"]
        for stat in ("mean_score", "var_score", "mean_mu"):
            assert sum(c.startswith(stat + "[") for c in header) == 3
        rows = (tmp_path / "comparison.csv").read_text().splitlines()[1:]
        assert len(rows) == 10
        summary = json.loads((tmp_path / "summary.json").read_text())
        pairs = {(p["guided"], p["unguided"]) for p in summary["pairings"]}
        assert pairs == {("cbyg", "bfn-unguided"), ("targetopt-x0", "bfn-unguided")}
        for p in summary["pairings"]:
            assert 0.0 <= p["win_rate"] <= 1.0 and p["n_pairs"] == 3
        for a in summary["arms"]:
            assert a["final_quarter_score_variance"] is not None or a["sampler"] == "bfn-unguided"

    def test_step_mismatch(self, arms, tmp_path, capsys):
        root, dirs = arms
        other = write_config(tmp_path, name="other", n_chains=3, n_steps=11)
        assert cmd_run(str(other), str(tmp_path / "other")) == 0
        assert cmd_compare([str(dirs["cbyg"]), str(tmp_path / "other")], str(tmp_path / "cmp")) == 2
        assert "n_steps" in capsys.readouterr().err

    def test_world_mismatch(self, arms, tmp_path):
        _, dirs = arms
        other = write_config(tmp_path, name="w", n_chains=3, n_steps=10, extra="\n[world]\nseed = 9\n")
        assert cmd_run(str(other), str(tmp_path / "w")) == 0
        assert cmd_compare([str(dirs["cbyg"]), str(tmp_path / "w")], str(tmp_path / "cmp")) == 2

    def test_seed_mismatch(self, arms, tmp_path):
        _, dirs = arms
        other = write_config(tmp_path, name="s", sampler="bfn-unguided", n_chains=2, n_steps=10)
        assert cmd_run(str(other), str(tmp_path / "s")) == 0
        assert cmd_compare([str(dirs["cbyg"]), str(tmp_path / "s")], str(tmp_path / "cmp")) == 2

    def test_missing_and_failed_runs(self, arms, tmp_path):
        _, dirs = arms
        assert cmd_compare([str(dirs["cbyg"])], str(tmp_path)) == 2
        assert cmd_compare([str(dirs["cbyg"]), str(tmp_path / "none")], str(tmp_path)) == 2


class TestVerify:
    def test_passes(self, capsys):
        assert cmd_verify() == 0
        assert "all checks passed" in capsys.readouterr().out

    def test_injected_fault(self, capsys):
        assert cmd_verify("zeta_v_sign") == 1
        assert "FAILED: linear-tilt exactness" in capsys.readouterr().out
        assert cmd_verify() == 0

    def test_unknown_fault(self):
        assert cmd_verify("nope") == 2


def test_main_dispatch(tmp_path):
    cfg = write_config(tmp_path, n_chains=1, n_steps=3)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
    assert main(["run", "--config", str(cfg), "--jobs", "0"]) == 2


def test_console_script(tmp_path):
    env = dict(os.environ, GUIDED_BFN_OUT=str(tmp_path))
    proc = subprocess.run([sys.executable, "-m", "guided_bfn.cli", "verify"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    assert "all checks passed" in proc.stdout
