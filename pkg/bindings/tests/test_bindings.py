import gc
import os
import subprocess
import sys

import numpy as np
import pytest
import yaml

import hll_bindings as hb
from hybridloco.config import ConfigError


@pytest.fixture()
def cfg_file(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump({
        "env": {"timeout_steps": 1000},
        "terrain": {"fixed_difficulty": 0.3},
    }))
    return path


class TestMakeEnv:
    def test_dimensions(self, cfg_file):
        h = hb.make_env(cfg_file, env_count=3, seed=1)
        assert h.action_dim == 6
        assert h.env_count == 3
        assert h.obs_dim == 62
        h.close()

    def test_missing_config_raises_native_error(self, tmp_path):
        with pytest.raises(ConfigError):
            hb.make_env(tmp_path / "missing.yaml")

    def test_single_env_batch_shapes(self, cfg_file):
        h = hb.make_env(cfg_file, env_count=1, seed=0)
        obs = hb.reset(h)
        assert obs.shape == (1, h.obs_dim)
        assert obs.dtype == np.float32
        out, rew, term, info = hb.step_batch(h, np.zeros((1, 6), dtype=np.float32))
        assert out.shape == (1, h.obs_dim) and out.flags.c_contiguous
        assert rew.shape == (1,) and rew.dtype == np.float32
        assert term.shape == (1,) and term.dtype == bool
        assert len(info) == 1
        h.close()

    def test_observation_slices(self, cfg_file):
        h = hb.make_env(cfg_file, env_count=1)
        slices = h.observation_slices()
        assert slices["height_scan"][1] - slices["height_scan"][0] == 36
        assert slices["goal_cmd"][1] - slices["goal_cmd"][0] == 3
        assert slices["prev_action"] == (56, 62)
        h.close()

    def test_closed_handle_rejected(self, cfg_file):
        h = hb.make_env(cfg_file, env_count=1)
        hb.reset(h)
        hb.close(h)
        with pytest.raises(RuntimeError):
            hb.step_batch(h, np.zeros((1, 6)))
        with pytest.raises(RuntimeError):
            hb.reset(h)


class TestStepBatch:
    def test_shape_mismatch_rejected_before_native(self, cfg_file):
        h = hb.make_env(cfg_file, env_count=2, seed=0)
        hb.reset(h)
        before = [e.episode.step_count for e in h._venv.envs]
        with pytest.raises(ValueError):
            hb.step_batch(h, np.zeros((3, 6)))
        with pytest.raises(ValueError):
            hb.step_batch(h, np.zeros((2, 5)))
        with pytest.raises(ValueError):
            hb.step_batch(h, np.zeros((2, 6), dtype=np.int32))
        after = [e.episode.step_count for e in h._venv.envs]
        assert before == after  # nothing stepped
        h.close()

    def test_out_of_range_actions_match_clamped(self, cfg_file):
        ha = hb.make_env(cfg_file, env_count=1, seed=4)
        hc = hb.make_env(cfg_file, env_count=1, seed=4)
        hb.reset(ha)
        hb.reset(hc)
        wild = np.array([[3.0, -7.0, 2.0, -2.0, 9.0, -9.0]])
        tame = np.clip(wild, -1.0, 1.0)
        oa, ra, *_ = hb.step_batch(ha, wild)
        oc, rc, *_ = hb.step_batch(hc, tame)
        assert (oa == oc).all()
        assert (ra == rc).all()
        ha.close()
        hc.close()

    def test_terminal_info_carries_outcome_and_energy(self, cfg_file, tmp_path):
        cfg = tmp_path / "short.yaml"
        cfg.write_text(yaml.safe_dump({
            "env": {"timeout_steps": 5},
            "terrain": {"fixed_difficulty": 0.2},
        }))
        h = hb.make_env(cfg, env_count=1, seed=0)
        hb.reset(h)
        info = None
        for _ in range(5):
            _, _, term, infos = hb.step_batch(h, np.zeros((1, 6), dtype=np.float32))
        assert term[0]
        assert infos[0]["outcome"] == "timeout"
        assert infos[0]["energy_j"] >= 0.0
        # auto-reset: next call flags the reset frame
        _, rew, term, infos = hb.step_batch(h, np.ones((1, 6), dtype=np.float32))
        assert infos[0]["reset_frame"]
        assert rew[0] == 0.0
        h.close()

    def test_matches_native_vector_env(self, cfg_file):
        from hybridloco.env import VectorEnv
        from hybridloco.config import load_config

        h = hb.make_env(cfg_file, env_count=2, seed=9)
        native = VectorEnv(load_config(cfg_file), 2, seed=9)
        ob = hb.reset(h)
        on = native.reset()
        assert (ob == on.astype(np.float32)).all()
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.uniform(-1, 1, (2, 6))
            ob, rb, tb, _ = hb.step_batch(h, a)
            res = native.step_results(a)
            assert (ob == np.stack([r.obs for r in res]).astype(np.float32)).all()
            assert (rb == np.array([r.reward.weighted_total for r in res], dtype=np.float32)).all()
        h.close()
        native.close()


class TestParityWithCli:
    def test_thousand_step_rollout_matches_native_csv(self, tmp_path):
        """Same config, seed, and action stream through the CLI and the
        bindings must produce byte-identical episode CSVs."""
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(yaml.safe_dump({
            "env": {"timeout_steps": 1000},
            "terrain": {"fixed_difficulty": 0.3},
        }))
        cli_out = tmp_path / "cli"
        proc = subprocess.run(
            [sys.executable, "-m", "hybridloco.cli", "rollout", "--config", str(cfg),
             "--seed", "21", "--out", str(cli_out), "--controller", "scripted",
             "--wheels", "15,12", "--episodes", "1"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr

        bind_out = tmp_path / "bind"
        h = hb.make_env(cfg, env_count=1, seed=21, log_dir=bind_out)
        hb.reset(h)
        action = np.array([[15.0 / 500.0, 12.0 / 500.0, 0.0, 0.0, 0.0, 0.0]])
        for _ in range(1000):
            _, _, term, _ = hb.step_batch(h, action)
            if term[0]:
                break
        h.close()

        native_csv = (cli_out / "episodes" / "ep000_env00.csv").read_bytes()
        bind_csv = (bind_out / "ep000_env00.csv").read_bytes()
        assert bind_csv == native_csv


class TestMemorySteadyState:
    def _run_steps(self, handle, action, n):
        for _ in range(n):
            hb.step_batch(handle, action)

    @pytest.mark.slow
    def test_no_growth_over_1e5_steps(self, tmp_path):
        psutil = pytest.importorskip("psutil")
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(yaml.safe_dump({
            "env": {"timeout_steps": 400},
            "terrain": {"fixed_difficulty": 0.2},
        }))
        h = hb.make_env(cfg, env_count=1, seed=0)
        hb.reset(h)
        action = np.zeros((1, 6), dtype=np.float32)
        self._run_steps(h, action, 5_000)  # warmup past allocator ramp
        gc.collect()
        rss0 = psutil.Process(os.getpid()).memory_info().rss
        self._run_steps(h, action, 100_000)
        gc.collect()
        rss1 = psutil.Process(os.getpid()).memory_info().rss
        h.close()
        assert rss1 - rss0 < 64 * 1024 * 1024

    def test_no_growth_quick(self, tmp_path):
        import tracemalloc

        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(yaml.safe_dump({
            "env": {"timeout_steps": 400},
            "terrain": {"fixed_difficulty": 0.2},
        }))
        h = hb.make_env(cfg, env_count=1, seed=0)
        hb.reset(h)
        action = np.zeros((1, 6), dtype=np.float32)
        self._run_steps(h, action, 2_000)
        gc.collect()
        tracemalloc.start()
        snap0 = tracemalloc.take_snapshot()
        self._run_steps(h, action, 10_000)
        gc.collect()
        snap1 = tracemalloc.take_snapshot()
        tracemalloc.stop()
        h.close()
        growth = sum(s.size_diff for s in snap1.compare_to(snap0, "filename") if s.size_diff > 0)
        assert growth < 8 * 1024 * 1024
