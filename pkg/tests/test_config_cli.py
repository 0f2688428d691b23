import json

import numpy as np
import pytest
import yaml

from fixtures import pipeline_fixture
from pivotfusion.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, main
from pivotfusion.config import ConfigError, load_bundled, parse_config, quantity
from pivotfusion.grid import build_grid
from pivotfusion.maps import RasterError, abs_error, export_map, layer_raster, load_map, map_filename
from pivotfusion.pipeline import write_csv

TINY = {
    "scenario": "synthetic_1",
    "seed": 3,
    "grid": {"radius": 50, "depth": 0.3, "n_r": 3, "n_theta": 8, "n_z": 6},
    "soils": [{"name": "loam", "theta_s": 0.43, "theta_r": 0.078, "K_s": "2.889e-6 m/s", "alpha": 3.6, "n": 1.56}],
    "sensor": {"measurements_per_epoch": 4, "sensing_layers": 2},
    "noise": {"p0_corr_length": [200.0, 1.0], "p0_nugget": 0.05},
    "ekf": {"check_psd": True, "max_dt": 1800},
    "schedule": {"days": 1},
    "output": {"layers": "all", "snapshot_times": ["12 h", "1 day"]},
    "evaluation": {"split_ratio": 0.75},
}


def write_cfg(path, **changes):
    d = json.loads(json.dumps(TINY))
    d.update(changes)
    path.write_text(yaml.safe_dump(d))
    return path


def test_bundled_configs_load():
    for name in ("synthetic_1", "synthetic_2", "real_quadrant"):
        cfg = load_bundled(name)
        assert len(cfg.config_hash) == 16
    assert load_bundled("real_quadrant").model.grid.build().size == 5100
    assert load_bundled("synthetic_1").config_hash == load_bundled("synthetic_1").config_hash


def test_units():
    assert quantity("7 mm/day", "velocity") == pytest.approx(8.102e-8, rel=1e-3)
    assert quantity({"value": 4, "unit": "h"}, "time") == 14400.0
    assert quantity(3, "length", "m") == 3.0
    with pytest.raises(ValueError):
        quantity("3 kg", "length")


def test_irrigation_rate_is_daily_mean():
    cfg = load_bundled("synthetic_1")
    irr = cfg.model.irrigation
    assert irr.depth_per_day == pytest.approx(7e-3)
    assert irr.rate == pytest.approx(7e-3 / 14400)


def test_all_violations_reported():
    raw = dict(TINY, bogus=1, seed=-1, grid={"n_r": 1, "radius": "3 kg"}, schedule={"bottom": "leaky", "days": 0})
    with pytest.raises(ConfigError) as exc:
        parse_config(raw)
    v = exc.value.violations
    for key in ("bogus", "seed", "grid.n_r", "grid.radius", "schedule.bottom", "schedule.days"):
        assert any(s.startswith(key) for s in v), key


def test_seed_required_for_synthetic():
    raw = dict(TINY)
    del raw["seed"]
    with pytest.raises(ConfigError, match="seed"):
        parse_config(raw)
    parse_config(dict(raw, scenario="custom"))


def test_map_export_roundtrip(tmp_path):
    g = build_grid(10.0, 0.3, 3, 5, 4)
    v = np.linspace(0.1, 0.4, g.size)
    r = layer_raster(g, v, 3, 3600.0, "actual", {"config_hash": "abc", "seed": 1})
    p = export_map(r, tmp_path / map_filename(r), bounds=(0.078, 0.43))
    back = load_map(p)
    assert np.array_equal(back.values, r.values) and np.array_equal(back.theta, r.theta)
    p2 = export_map(back, tmp_path / "again.csv", bounds=(0.078, 0.43))
    assert p2.read_bytes() == p.read_bytes()
    assert p.read_text().startswith("# config_hash=abc\n# seed=1\n")
    with pytest.raises(RasterError):
        export_map(layer_raster(g, v + 1, 0, 0.0, "actual"), tmp_path / "x.csv", bounds=(0.078, 0.43))
    e = abs_error(r, layer_raster(g, v * 0.9, 3, 3600.0, "estimated"))
    assert np.all(e.values >= 0)


def test_cli_twin_evaluate_fuse(tmp_path):
    cfg = write_cfg(tmp_path / "tiny.yaml")
    out = tmp_path / "run"
    assert main(["twin", "--config", str(cfg), "--out-dir", str(out)]) == EXIT_OK
    run = json.loads((out / "run.json").read_text())
    assert run["updates"] > 0 and (out / "actual_L05_t000086400.csv").exists()
    assert main(["evaluate", "--config", str(cfg), "--out-dir", str(out)]) == EXIT_OK
    rep = json.loads((out / "evaluation.json").read_text())
    assert rep["trace"]["all_updates_decrease"] and rep["nis"]["count"] == run["updates"]
    assert "crossvalidation" in rep
    # same seed, same bytes
    out2 = tmp_path / "run2"
    assert main(["twin", "--config", str(cfg), "--out-dir", str(out2)]) == EXIT_OK
    assert (out / "measurements.jsonl").read_bytes() == (out2 / "measurements.jsonl").read_bytes()
    fcfg = write_cfg(tmp_path / "fuse.yaml", data={"batches": str(out / "measurements.jsonl")}, evaluation={})
    assert main(["fuse", "--config", str(fcfg), "--out-dir", str(tmp_path / "fused")]) == EXIT_OK
    assert json.loads((tmp_path / "fused" / "run.json").read_text())["updates"] == len((out / "measurements.jsonl").read_text().splitlines())


def test_cli_simulate(tmp_path):
    cfg = write_cfg(tmp_path / "tiny.yaml", output={"layers": "surface_bottom"}, schedule={"days": 0.25})
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_OK
    assert sorted(p.name for p in tmp_path.glob("actual_*.csv")) == ["actual_L00_t000021600.csv", "actual_L05_t000021600.csv"]


def test_cli_exit_codes(tmp_path):
    assert main(["twin", "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("grid: [unclosed\n")
    assert main(["twin", "--config", str(bad), "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["evaluate", "--config", str(write_cfg(tmp_path / "c.yaml")), "--out-dir", str(tmp_path / "empty")]) == EXIT_DATA
    assert main(["twin", "--scenario", "1", "--alpha", "2", "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    csv = tmp_path / "m.csv"
    csv.write_text("timestamp,x_m,y_m,vwc\n2019-06-20T00:00:00Z,1,2,oops\n")
    cfg = write_cfg(tmp_path / "p.yaml", scenario="real_quadrant", data={"measurements": str(csv)})
    assert main(["preprocess", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_DATA


def test_cli_numerical_exit(tmp_path, monkeypatch):
    from pivotfusion import richards

    def fail(self, h, forcing, dt, with_transition=False):
        raise richards.StiffnessError("Newton failed")

    monkeypatch.setattr(richards.FieldModel, "step", fail)
    cfg = write_cfg(tmp_path / "s.yaml", schedule={"days": 0.1})
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_NUMERICAL


def test_cli_preprocess(tmp_path):
    readings, _, planted = pipeline_fixture(n=2000, n_out=50, n_outliers=30, n_dups=40, seed=2)
    csv = tmp_path / "m.csv"
    write_csv(readings, csv)
    cfg = write_cfg(tmp_path / "p.yaml", scenario="real_quadrant", grid={"radius": 290, "depth": 0.6, "n_r": 30, "n_theta": 17, "n_z": 10}, data={"measurements": str(csv), "quadrants": [1, 2, 3, 4]})
    assert main(["preprocess", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == EXIT_OK
    rep = json.loads((tmp_path / "o" / "run.json").read_text())
    assert rep["counts"]["in_track"] == planted["in_track"]
    assert (tmp_path / "o" / "batches_q4.jsonl").exists()
