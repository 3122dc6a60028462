import json
from pathlib import Path

import numpy as np
import pytest

from rigfusion.cli import cli_main
from rigfusion.config import load_scenario, scenario_from_dict
from rigfusion.errors import ConfigError


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """One short CLI run shared by the read-only checks below."""
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "scenario.json"
    cfg.write_text(json.dumps({
        "scene": "courtyard",
        "duration": 3.0,
        "seed": 5,
        "init": {"policy": "truth"},
    }))
    out = base / "out"
    code = cli_main(["run", str(cfg), "--out", str(out)])
    assert code == 0
    return out


class TestRun:
    def test_outputs_exist(self, run_dir):
        for name in ("steps.csv", "est_center.txt", "gt_center.txt",
                     "accuracy.txt", "accuracy.kv", "convergence.txt",
                     "convergence.csv", "meta.json", "true_extrinsics.txt"):
            assert (run_dir / name).exists(), name

    def test_sensor_subset_flag(self, tmp_path):
        cfg = tmp_path / "s.json"
        cfg.write_text(json.dumps({"scene": "courtyard", "duration": 2.0,
                                   "init": {"policy": "truth"}}))
        out = tmp_path / "out"
        code = cli_main(["run", str(cfg), "--out", str(out),
                         "--sensors", "front,back-left,back-right"])
        assert code == 0
        meta = json.loads((out / "meta.json").read_text())
        assert meta["enabled"] == [0, 3, 4]

    def test_unknown_flag_exits_one(self, capsys):
        assert cli_main(["run", "nope.json", "--bogus"]) == 1

    def test_missing_scenario_exits_one(self, capsys):
        code = cli_main(["run", "/does/not/exist.json", "--out", "/tmp/x"])
        assert code == 1
        err = capsys.readouterr().err
        assert json.loads(err.strip())["error"] == "config"

    def test_bad_scene_exits_one(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"scene": "atlantis"}))
        assert cli_main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 1


class TestEval:
    def test_identical_files_zero_error(self, run_dir, tmp_path, capsys):
        out = tmp_path / "acc.kv"
        code = cli_main(["eval", "--est", str(run_dir / "gt_center.txt"),
                         "--gt", str(run_dir / "gt_center.txt"),
                         "--out", str(out)])
        assert code == 0
        kv = dict(line.split("=") for line in out.read_text().splitlines())
        assert float(kv["max_abs_error_m"]) == pytest.approx(0.0, abs=1e-12)

    def test_missing_file_exits_two(self, capsys):
        code = cli_main(["eval", "--est", "/nope.txt", "--gt", "/nope.txt"])
        assert code == 2
        assert json.loads(capsys.readouterr().err.strip())["error"] == "io"


class TestReport:
    def test_report_runs(self, run_dir, capsys):
        assert cli_main(["report", "--runlog", str(run_dir)]) == 0
        out = capsys.readouterr().out
        assert "settling band" in out
        assert "max abs err" in out

    def test_report_bad_dir(self, tmp_path, capsys):
        assert cli_main(["report", "--runlog", str(tmp_path)]) == 1


class TestScenarioConfig:
    def test_inline_world_and_trajectory(self):
        sc = scenario_from_dict({
            "trajectory": {"start": [0, 0, 0],
                           "segments": [["straight", 20.0, 1.0]]},
            "world": {"kind": "corridor", "half_width": 5.0},
            "rig": {"max_range": 20.0},
            "scene": "courtyard",
            "duration": 5.0,
        })
        assert sc.duration == 5.0
        assert all(s.max_range == 20.0 for s in sc.rig.sensors)

    def test_primitive_world(self):
        sc = scenario_from_dict({
            "scene": "courtyard",
            "world": {
                "planes": [{"origin": [5, 0, 0], "normal": [-1, 0, 0],
                            "u": [0, 1, 0], "half_u": 3.0, "half_v": 3.0}],
                "edges": [{"p0": [2, 1, 0], "p1": [2, 1, 2]}],
            },
            "duration": 1.0,
        })
        assert len(sc.world.planes) == 1
        assert len(sc.world.edges) == 1

    def test_gate_defaults_follow_init_policy(self):
        on = scenario_from_dict({"scene": "courtyard", "duration": 1.0,
                                 "init": {"policy": "truth"}})
        off = scenario_from_dict({"scene": "courtyard", "duration": 1.0,
                                  "init": {"policy": "zero"}})
        assert on.filter_cfg.gate_enabled
        assert not off.filter_cfg.gate_enabled

    def test_failures_parsed(self):
        sc = scenario_from_dict({"scene": "courtyard", "duration": 1.0,
                                 "failures": [[2, 1.0, 3.0]]})
        assert sc.failures == [(2, 1.0, 3.0)]

    def test_bad_segment_raises(self):
        with pytest.raises(ConfigError):
            scenario_from_dict({"trajectory": {"segments": [["warp", 9]]},
                                "world": {"kind": "room"}, "duration": 1.0})