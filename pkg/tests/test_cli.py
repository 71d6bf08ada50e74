"""End-to-end CLI tests: exit codes per command, config validation,
preset resolution, seeded reproducibility."""

import json
import subprocess
import sys

import pytest

from sssrlab.cli import main

# small GFL study box; every fit here stays cheap
TINY_SSSR = {
    "axes": [["scr", 3.0, 8.0], ["x_over_r", 2.0, 9.0]],
    "origin": [5.0, 5.0],
    "epsilon_r": 0.02,
}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(tmp_path, command, cfg, capsys, extra=(), name="cfg.json", out="out"):
    cfg_path = cfg if isinstance(cfg, str) else write_cfg(tmp_path, cfg, name)
    rc = main([command, "--config", cfg_path,
               "--out", str(tmp_path / out), *extra])
    cap = capsys.readouterr()
    return rc, cap.out, cap.err


def report_lines(path):
    out = {}
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            continue
        key, _, val = line.partition(" ")
        out[key] = val
    return out


# ---------------------------------------------------------------------------
# equilibrium / eigen


def test_equilibrium_defaults(tmp_path, capsys):
    rc, out, _ = run(tmp_path, "equilibrium", {"mode": "gfl"}, capsys)
    assert rc == 0
    rep = report_lines(tmp_path / "out" / "equilibrium.txt")
    assert rep["converged"] == "1"
    assert abs(float(rep["v_q"])) < 1e-9  # PLL locks the q-axis voltage
    assert "equilibrium:" in out


def test_equilibrium_malformed_key_exit2(tmp_path, capsys):
    cfg = {"mode": "gfl", "params": {"scrX": 5.0}}
    rc, _, err = run(tmp_path, "equilibrium", cfg, capsys)
    assert rc == 2
    assert "scrX" in err


def test_equilibrium_infeasible_setpoint_exit1(tmp_path, capsys):
    cfg = {"mode": "gfl", "setpoint": {"p_ref": 50.0}}
    rc, _, err = run(tmp_path, "equilibrium", cfg, capsys)
    assert rc == 1
    assert "residual" in err


def test_eigen_report(tmp_path, capsys):
    rc, out, _ = run(tmp_path, "eigen", {"mode": "gfl"}, capsys)
    assert rc == 0
    text = (tmp_path / "out" / "eigen.txt").read_text()
    assert "classification stable" in text
    rows = text.split("eigenvalues\n", 1)[1].strip().splitlines()
    assert len(rows) == 12
    assert "eigen:" in out


def test_bad_json_exit2(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{nope")
    rc, _, err = run(tmp_path, "equilibrium", str(path), capsys)
    assert rc == 2
    assert "JSON" in err


def test_missing_config_exit2(tmp_path, capsys):
    rc, _, err = run(tmp_path, "equilibrium", "no-such-config", capsys)
    assert rc == 2
    assert "preset" in err


def test_preset_name_resolves(tmp_path, capsys):
    # fig8-gfl carries a full sssr study; equilibrium only reads the
    # mode/params sections, which makes it a cheap resolution check
    rc, out, _ = run(tmp_path, "equilibrium", "fig8-gfl", capsys)
    assert rc == 0
    assert "equilibrium:" in out


# ---------------------------------------------------------------------------
# sssr / ismd


def test_sssr_tiny_box(tmp_path, capsys):
    cfg = {"mode": "gfl", "sssr": TINY_SSSR}
    rc, out, _ = run(tmp_path, "sssr", cfg, capsys)
    assert rc == 0
    assert (tmp_path / "out" / "region.txt").exists()
    assert "volume=" in out


def test_sssr_unstable_origin_exit1(tmp_path, capsys):
    cfg = {"mode": "gfl", "sssr": {
        "axes": [["scr", 1.5, 8.0], ["x_over_r", 4.0, 12.0]],
        "origin": [1.9, 8.0],  # strongly unstable operating point
    }}
    rc, _, err = run(tmp_path, "sssr", cfg, capsys)
    assert rc == 1
    assert "stable origin" in err


def test_sssr_dimension_guard_exit2(tmp_path, capsys):
    axes = [[name, 1.0, 2.0] for name in
            ["scr", "x_over_r", "kp_pll", "ki_pll", "kp_i1", "ki_i1", "l_f"]]
    cfg = {"mode": "gfl", "sssr": {"axes": axes, "origin": [1.5] * 7}}
    rc, _, err = run(tmp_path, "sssr", cfg, capsys)
    assert rc == 2
    assert "dimension" in err


def test_ismd_seeded_rerun_byte_identical(tmp_path, capsys):
    cfg = {"mode": "gfl", "sssr": TINY_SSSR,
           "ismd": {"n_samples": 40, "seed": 3}}
    rc1, _, _ = run(tmp_path, "ismd", cfg, capsys, out="a")
    rc2, _, _ = run(tmp_path, "ismd", cfg, capsys, out="b")
    assert rc1 == 0 and rc2 == 0
    for name in ("ismd.csv", "region.txt"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_global_seed_flag_overrides_config(tmp_path, capsys):
    base = {"mode": "gfl", "sssr": TINY_SSSR}
    cfg_a = dict(base, ismd={"n_samples": 30, "seed": 99})
    cfg_b = dict(base, ismd={"n_samples": 30, "seed": 3})
    rc1, _, _ = run(tmp_path, "ismd", cfg_a, capsys, extra=("--seed", "3"),
                    name="a.json", out="a")
    rc2, _, _ = run(tmp_path, "ismd", cfg_b, capsys, name="b.json", out="b")
    assert rc1 == 0 and rc2 == 0
    assert (tmp_path / "a" / "ismd.csv").read_bytes() == \
        (tmp_path / "b" / "ismd.csv").read_bytes()


# ---------------------------------------------------------------------------
# gmm / csi / pipeline

PIPE_CFG = {
    "mode": "gfl",
    "sssr": TINY_SSSR,
    "ismd": {"n_samples": 120, "seed": 7},
    "gmm": {"k": 2, "seed": 5, "n_init": 2},
    "weights": [0.4, 0.3, 0.3],
    "csi": {"grid_resolution": 12},
}


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    cfg_path = tmp / "cfg.json"
    cfg_path.write_text(json.dumps(PIPE_CFG))
    rc = main(["pipeline", "--config", str(cfg_path), "--out", str(tmp / "out")])
    assert rc == 0
    return tmp


def test_pipeline_summary(pipeline_dir):
    rep = report_lines(pipeline_dir / "out" / "summary.txt")
    assert rep["mode"] == "gfl"
    assert int(rep["k"]) == 2
    assert float(rep["volume"]) > 0
    for name in ("region.txt", "ismd.csv", "gmm.txt", "csi_map.csv"):
        assert (pipeline_dir / "out" / name).exists()


def test_pipeline_rerun_byte_identical(pipeline_dir, tmp_path, capsys):
    rc, _, _ = run(tmp_path, "pipeline", PIPE_CFG, capsys)
    assert rc == 0
    for name in ("region.txt", "ismd.csv", "gmm.txt", "csi_map.csv",
                 "summary.txt"):
        assert (tmp_path / "out" / name).read_bytes() == \
            (pipeline_dir / "out" / name).read_bytes()


def test_gmm_inline(tmp_path, capsys):
    cfg = {"mode": "gfl", "sssr": TINY_SSSR,
           "ismd": {"n_samples": 80, "seed": 7},
           "gmm": {"k": 2, "seed": 5, "n_init": 1}}
    rc, out, _ = run(tmp_path, "gmm", cfg, capsys)
    assert rc == 0
    assert (tmp_path / "out" / "gmm.txt").exists()
    assert "r_squared=" in out


def test_csi_from_saved_artifacts(pipeline_dir, tmp_path, capsys):
    cfg = {
        "region_file": str(pipeline_dir / "out" / "region.txt"),
        "gmm_file": str(pipeline_dir / "out" / "gmm.txt"),
        "weights": [0.4, 0.3, 0.3],
        "csi": {"grid_resolution": 10},
    }
    rc, out, _ = run(tmp_path, "csi", cfg, capsys)
    assert rc == 0
    assert (tmp_path / "out" / "csi_map.csv").exists()
    assert "argmax_j=" in out


def test_csi_weights_must_sum_to_one_exit2(pipeline_dir, tmp_path, capsys):
    cfg = {
        "region_file": str(pipeline_dir / "out" / "region.txt"),
        "gmm_file": str(pipeline_dir / "out" / "gmm.txt"),
        "weights": [0.5, 0.3, 0.3],
    }
    rc, _, err = run(tmp_path, "csi", cfg, capsys)
    assert rc == 2
    assert "sum" in err


# ---------------------------------------------------------------------------
# simulate


def test_simulate_stable_verdict(tmp_path, capsys):
    cfg = {
        "params": {"scr": 5.0, "x_over_r": 5.0},
        "scenario": {"duration": 0.05, "dt": 1e-4, "sigma0": 1, "events": []},
        "policy": {"type": "none"},
    }
    rc, out, _ = run(tmp_path, "simulate", cfg, capsys)
    assert rc == 0
    assert "verdict=stable" in out
    assert (tmp_path / "out" / "trace.csv").exists()


def test_simulate_unstable_verdict_still_exit0(tmp_path, capsys):
    # a diverging run is a valid experimental outcome, not a failure
    cfg = {
        "params": {"scr": 1.9, "x_over_r": 8.0},
        "scenario": {"duration": 1.3, "dt": 2e-5, "sigma0": 1,
                     "events": [[0.001, "step_p_ref", 0.5]]},
        "policy": {"type": "none"},
        "record_every": 50,
    }
    rc, out, _ = run(tmp_path, "simulate", cfg, capsys)
    assert rc == 0
    assert "verdict=unstable" in out


def test_simulate_missing_duration_exit2(tmp_path, capsys):
    cfg = {"scenario": {"dt": 1e-4}, "policy": {"type": "none"}}
    rc, _, err = run(tmp_path, "simulate", cfg, capsys)
    assert rc == 2
    assert "scenario" in err


def test_simulate_unknown_policy_exit2(tmp_path, capsys):
    cfg = {"scenario": {"duration": 0.01, "dt": 1e-4},
           "policy": {"type": "psychic"}}
    rc, _, err = run(tmp_path, "simulate", cfg, capsys)
    assert rc == 2
    assert "policy" in err


# ---------------------------------------------------------------------------
# process-level entry


def test_module_entry_point(tmp_path):
    cfg_path = write_cfg(tmp_path, {"mode": "gfm"})
    proc = subprocess.run(
        [sys.executable, "-m", "sssrlab.cli", "equilibrium",
         "--config", cfg_path, "--out", str(tmp_path / "out")],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "equilibrium:" in proc.stdout
