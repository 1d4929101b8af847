import csv
import json
import math

import numpy as np
import pytest
import yaml

from vortexline import cli
from vortexline.config import RunConfig, load_config
from vortexline.errors import ConfigError
from vortexline.output import fmt


def _write_cfg(tmp_path, data):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


SINGLE_MODE = {"wavefunction": {"omega": [1.0, 1.0, 1.0], "modes": [{"re": 0.0, "im": 1.0, "n1": 1, "n2": 0, "n3": 2}]},
               "field": {"resolution": 5}}


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"wavefunction": {"omgea": [1, 1, 1]}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"box": {"lo": [1, 0, 0], "hi": [0, 1, 1]}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"wavefunction": {"modes": [{"re": 1, "im": 0, "n1": -1, "n2": 0, "n3": 0}]}})


def test_config_round_trip(tmp_path):
    cfg = RunConfig.from_dict({"t": 2.5, "nodal": {"ds": 0.05}})
    path = tmp_path / "dump.yaml"
    path.write_text(cfg.dump())
    again = load_config(path)
    assert again.to_dict() == cfg.to_dict()
    assert again.digest() == cfg.digest()


def test_fmt_round_trip(rng):
    for v in rng.normal(size=100) * 10.0 ** rng.integers(-20, 20, size=100):
        assert float(fmt(v)) == v
    assert fmt(True) == "1" and fmt(np.int64(3)) == "3"


def test_field_single_mode_has_zero_velocity(tmp_path):
    out = tmp_path / "f"
    assert cli.run(["field", "--config", str(_write_cfg(tmp_path, SINGLE_MODE)), "--out", str(out)]) == 0
    rows = _rows(out / "field.csv")
    assert rows[0] == ["x", "y", "z", "rho", "phase", "vx", "vy", "vz"]
    assert len(rows) == 1 + 5**3
    for r in rows[1:]:
        vel = [float(v) for v in r[5:]]
        assert all(v == 0.0 or math.isnan(v) for v in vel)
        assert float(r[3]) >= 0.0


def test_field_resolution_doubling(tmp_path):
    data = {"field": {"resolution": 4}}
    cli.run(["field", "--config", str(_write_cfg(tmp_path, data)), "--out", str(tmp_path / "a")])
    data["field"]["resolution"] = 8
    cli.run(["field", "--config", str(_write_cfg(tmp_path, data)), "--out", str(tmp_path / "b")])
    assert len(_rows(tmp_path / "b" / "field.csv")) - 1 == 8 * (len(_rows(tmp_path / "a" / "field.csv")) - 1)


def test_field_density_nonnegative_at_t0(tmp_path):
    out = tmp_path / "f"
    assert cli.run(["field", "--t", "0", "--out", str(out)]) == 0
    assert all(float(r[3]) >= 0 for r in _rows(out / "field.csv")[1:])


def test_nodal_deterministic_and_manifest(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.run(["nodal", "--out", str(a)]) == 0
    assert cli.run(["nodal", "--out", str(b)]) == 0
    assert (a / "nodal_lines.csv").read_bytes() == (b / "nodal_lines.csv").read_bytes()
    man = json.loads((a / "manifest.json").read_text())
    assert man["status"] == "success" and man["command"] == "nodal"
    assert len(man["config_sha256"]) == 64 and man["end"] >= man["start"]
    assert not list(a.glob("*.tmp"))


def test_xline_output(tmp_path):
    out = tmp_path / "x"
    assert cli.run(["xline", "--out", str(out)]) == 0
    rows = _rows(out / "xline_line1.csv")
    assert rows[0] == ["s", "x", "y", "z", "u", "v", "w", "lam1", "lam2", "lam3", "dX", "residual"]
    man = json.loads((out / "manifest.json").read_text())
    assert all(ln["gap_fraction"] < 0.05 for ln in man["stats"]["lines"])


def test_bad_config_exit_code(tmp_path, capsys):
    path = _write_cfg(tmp_path, {"nonsense": 1})
    assert cli.run(["nodal", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    assert "nonsense" in capsys.readouterr().err


def test_seed_flag_and_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("VORTEXLINE_THREADS", "3")
    cfg = RunConfig.from_dict({})
    assert cli.thread_count(None, cfg) == 3
    assert cli.thread_count(2, cfg) == 2
    monkeypatch.setenv("VORTEXLINE_THREADS", "many")
    with pytest.raises(ConfigError):
        cli.thread_count(None, cfg)
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["trajectory", "--seed", "1,2"])
    out = tmp_path / "t"
    data = {"trajectory": {"t_end": 0.5, "deviation": "none"}}
    monkeypatch.delenv("VORTEXLINE_THREADS")
    assert cli.run(["trajectory", "--config", str(_write_cfg(tmp_path, data)), "--seed", "0.5,0.2,-0.1",
                    "--out", str(out)]) == 0
    rows = _rows(out / "trajectory.csv")
    assert [float(v) for v in rows[1][1:4]] == [0.5, 0.2, -0.1]
    assert len(rows) == 1 + 11


def test_npxpc_columns(tmp_path):
    out = tmp_path / "n"
    assert cli.run(["npxpc", "--out", str(out)]) == 0
    rows = _rows(out / "npxpc_line1.csv")
    assert rows[0] == ["s", "A", "f3", "Vu", "Vv", "vfast_ratio", "hopf_flag", "node_type"]
    events = json.loads((out / "npxpc_hopf.json").read_text())
    assert all(e["kind"] == "space" for e in events)


def test_partial_exit_code(tmp_path):
    # a box far from every nodal line: no line found is a partial result
    data = {"box": {"lo": [3.0, 3.0, 3.0], "hi": [3.5, 3.5, 3.5]}, "nodal": {"resolution": 4}}
    out = tmp_path / "p"
    assert cli.run(["nodal", "--config", str(_write_cfg(tmp_path, data)), "--out", str(out)]) == 2
    assert json.loads((out / "manifest.json").read_text())["status"] == "partial"


def test_worker_pool_output_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.run(["xline", "--out", str(a), "--threads", "1"]) == 0
    assert cli.run(["xline", "--out", str(b), "--threads", "2"]) == 0
    for f in sorted(a.glob("xline_line*.csv")):
        assert f.read_bytes() == (b / f.name).read_bytes()
