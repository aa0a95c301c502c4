import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from hybridloco.cli import main
from hybridloco.env import EPISODE_CSV_HEADER
from hybridloco.trainer import METRICS_CSV_HEADER


def run_cli(*args):
    return main(list(args))


def fast_cfg(tmp_path, rough=0.0, **terrain):
    """User config trimming the horizon so rollouts stay quick; episode
    roughness off by default so flat-ground examples stay flat."""
    cfg = {
        "env": {"timeout_steps": 100},
        "terrain": terrain,
        "randomization": {"roughness_amplitude": rough},
    }
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


class TestTerrainCmd:
    def test_summary_values(self, tmp_path, capsys):
        out = tmp_path / "t.txt"
        code = run_cli("terrain", "--difficulty", "0.70", "--out", str(out), "--seed", "1")
        assert code == 0
        text = capsys.readouterr().out
        assert "step height: 0.126 m" in text
        assert "rings: 8" in text
        assert "max elevation: 1.008 m" in text

    def test_easiest_config(self, tmp_path, capsys):
        out = tmp_path / "t.txt"
        code = run_cli("terrain", "--difficulty", "0.01", "--roughness", "0.0", "--out", str(out))
        assert code == 0
        text = capsys.readouterr().out
        assert "step height: 0.01 m" in text
        assert "max elevation: 0.08 m" in text  # 8 rings x 0.01

    def test_deterministic_file(self, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        run_cli("terrain", "--difficulty", "0.4", "--out", str(a), "--seed", "7", "--roughness", "0.004")
        run_cli("terrain", "--difficulty", "0.4", "--out", str(b), "--seed", "7", "--roughness", "0.004")
        assert a.read_bytes() == b.read_bytes()

    def test_bad_difficulty_exit_code(self, tmp_path):
        code = run_cli("terrain", "--difficulty", "0.9", "--out", str(tmp_path / "t.txt"))
        assert code == 2


class TestRolloutCmd:
    def test_zero_action_summary(self, tmp_path, capsys):
        cfg = fast_cfg(tmp_path, fixed_difficulty=0.2)
        out = tmp_path / "ro"
        code = run_cli("rollout", "--config", cfg, "--controller", "scripted",
                       "--episodes", "2", "--seed", "5", "--out", str(out))
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        agg = summary["aggregate"]
        assert agg["success_rate"] == 0.0  # timeout
        assert agg["energy_J"]["mean"] == 0.0
        for row in summary["per_episode"]:
            assert row["outcome"] == "timeout"
            # arithmetic identity: mean power = energy / duration
            if row["duration_s"] > 0:
                assert row["mean_power_W"] == row["energy_J"] / row["duration_s"]

    def test_csv_header_golden(self, tmp_path):
        cfg = fast_cfg(tmp_path, fixed_difficulty=0.2)
        out = tmp_path / "ro"
        run_cli("rollout", "--config", cfg, "--controller", "scripted",
                "--episodes", "1", "--seed", "0", "--out", str(out))
        csv_path = next((out / "episodes").glob("ep000_*.csv"))
        header = csv_path.read_text().splitlines()[0]
        assert header == EPISODE_CSV_HEADER
        assert header == (
            "t,x,y,z,pitch,roll,yaw,vx,vy,vz,pwm1,pwm2,w1_ref,w2_ref,s1,s2,"
            "P_prop,P_wheel,E_cum,r_total,outcome"
        )

    def test_byte_identical_repeat(self, tmp_path):
        cfg = fast_cfg(tmp_path, fixed_difficulty=0.3)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            run_cli("rollout", "--config", cfg, "--controller", "scripted", "--wheels", "20,20",
                    "--episodes", "2", "--seed", "9", "--out", str(out))
            outs.append(out)
        for ep in ("ep000_env00.csv", "ep001_env00.csv"):
            assert (outs[0] / "episodes" / ep).read_bytes() == (outs[1] / "episodes" / ep).read_bytes()

    def test_energy_ledger_matches_log(self, tmp_path):
        cfg = fast_cfg(tmp_path, fixed_difficulty=0.2)
        out = tmp_path / "ro"
        run_cli("rollout", "--config", cfg, "--controller", "scripted", "--wheels", "30,30",
                "--episodes", "1", "--seed", "3", "--out", str(out))
        csv_path = next((out / "episodes").glob("ep000_*.csv"))
        lines = csv_path.read_text().splitlines()[1:]
        dt = 0.02
        running = 0.0
        for line in lines:
            cols = line.split(",")
            p_prop, p_wheel, e_cum = float(cols[16]), float(cols[17]), float(cols[18])
            running += (p_prop + p_wheel) * dt
            assert running == e_cum  # exact: same accumulation order

    def test_missing_checkpoint_exit_code(self, tmp_path):
        cfg = fast_cfg(tmp_path)
        code = run_cli("rollout", "--config", cfg, "--controller", "policy",
                       "--checkpoint", str(tmp_path / "nope.zip"), "--out", str(tmp_path / "ro"))
        assert code == 3

    def test_decoupled_stand_fails_single_step(self, tmp_path):
        cfg = fast_cfg(tmp_path)
        out = tmp_path / "ro"
        code = run_cli("rollout", "--config", cfg, "--controller", "decoupled",
                       "--preset", "decouple_stand", "--episodes", "1", "--seed", "2",
                       "--single-step", "0.08", "--start-x", "-1.0", "--goal-x", "2.0",
                       "--out", str(out))
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["aggregate"]["success_rate"] == 0.0

    def test_manifest_reproduces_run(self, tmp_path):
        cfg = fast_cfg(tmp_path, fixed_difficulty=0.25)
        out = tmp_path / "ro"
        run_cli("rollout", "--config", cfg, "--controller", "scripted",
                "--episodes", "1", "--seed", "4", "--out", str(out))
        manifest = yaml.safe_load((out / "manifest.yaml").read_text())
        assert manifest["run"]["seed"] == 4
        assert manifest["config"]["terrain"]["fixed_difficulty"] == 0.25
        assert manifest["config"]["env"]["timeout_steps"] == 100


class TestTrainCmd:
    def test_zero_steps_writes_checkpoint(self, tmp_path):
        out = tmp_path / "tr"
        code = run_cli("train", "--out", str(out), "--seed", "0", "--total-steps", "0",
                       "--env-count", "2")
        assert code == 0
        assert (out / "checkpoint_latest.zip").exists()
        assert (out / "metrics.csv").read_text().splitlines()[0] == METRICS_CSV_HEADER

    def test_metrics_deterministic(self, tmp_path):
        cfg = fast_cfg(tmp_path, fixed_difficulty=0.2)
        for name in ("a", "b"):
            run_cli("train", "--config", cfg, "--out", str(tmp_path / name), "--seed", "1",
                    "--total-steps", "1024", "--env-count", "4")
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_resume_appends(self, tmp_path):
        cfg = fast_cfg(tmp_path, fixed_difficulty=0.2)
        out = tmp_path / "tr"
        run_cli("train", "--config", cfg, "--out", str(out), "--seed", "1",
                "--total-steps", "512", "--env-count", "4")
        n1 = len((out / "metrics.csv").read_text().splitlines())
        run_cli("train", "--config", cfg, "--out", str(out), "--seed", "1",
                "--total-steps", "1024", "--env-count", "4", "--resume")
        n2 = len((out / "metrics.csv").read_text().splitlines())
        assert n2 > n1


class TestAblateCmd:
    def test_eval_only_table(self, tmp_path):
        cfg = fast_cfg(tmp_path, fixed_difficulty=0.2)
        # one tiny checkpoint reused for all three modes
        run_cli("train", "--config", cfg, "--out", str(tmp_path / "tr"), "--seed", "0",
                "--total-steps", "0", "--env-count", "2")
        ckpt = str(tmp_path / "tr" / "checkpoint_latest.zip")
        out = tmp_path / "ab"
        code = run_cli("ablate", "--config", cfg, "--out", str(out), "--seed", "1",
                       "--checkpoints", f"{ckpt},{ckpt},{ckpt}", "--episodes", "1",
                       "--single-step", "0.08")
        assert code == 0
        lines = (out / "ablation.csv").read_text().splitlines()
        assert lines[0] == "mode,success_rate,mean_energy_J"
        assert [l.split(",")[0] for l in lines[1:]] == ["hybrid", "wheels_only", "props_only"]

    def test_missing_checkpoint_exit(self, tmp_path):
        cfg = fast_cfg(tmp_path)
        code = run_cli("ablate", "--config", cfg, "--out", str(tmp_path / "ab"),
                       "--checkpoints", "x.zip,y.zip,z.zip")
        assert code == 3


class TestCalibrateCmd:
    def test_fit_from_bench_csvs(self, tmp_path):
        pwm = np.linspace(1000, 2000, 25)
        thrust_csv = tmp_path / "thrust.csv"
        with open(thrust_csv, "w") as f:
            f.write("pwm_us,thrust_N\n")
            for p in pwm:
                f.write(f"{p},{2.1e-6 * (p - 1000.0) ** 2}\n")
        out = tmp_path / "cal.yaml"
        code = run_cli("calibrate", "--thrust", str(thrust_csv), "--out", str(out))
        assert code == 0
        cal = yaml.safe_load(out.read_text())
        assert cal["provenance"] == "bench fit"
        assert cal["fitted"]["thrust"]["rmse"] < 1e-9
        assert cal["fitted"]["thrust"]["n_samples"] == 25
        # power sections default-filled from the shipped calibration
        assert len(cal["fitted"]["prop_power"]["coeffs"]) == 5

    def test_missing_column_exit(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        code = run_cli("calibrate", "--thrust", str(bad), "--out", str(tmp_path / "c.yaml"))
        assert code == 2


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "hybridloco.cli", "--help"], capture_output=True, text=True
        )
        assert proc.returncode == 0
        assert "terrain" in proc.stdout and "ablate" in proc.stdout
