import numpy as np
import pytest

from pivotfusion.grid import build_grid
from pivotfusion.pivot import (
    CropSeries,
    IrrigationPlan,
    PivotConfig,
    PivotSchedule,
    SensorConfig,
    SensorConfigError,
    epoch_times,
    measured_nodes,
    pivot_position,
    sample_measurements,
    truth_twin,
)
from pivotfusion.richards import FieldModel, StateField
from pivotfusion.scenarios import scenario
from pivotfusion.soil import LOAM, water_content

GRID = build_grid(50.0, 0.30, 6, 40, 16)


def test_full_revolution():
    p = PivotConfig()
    assert p.angular_speed == pytest.approx(4.4e-4)
    T = 2 * np.pi / p.angular_speed
    assert T == pytest.approx(14280, abs=1)
    assert np.cos(pivot_position(T, p).angle) == pytest.approx(1.0)
    assert pivot_position(T / 4, p, GRID).sector == 10


def test_irrigation_window_and_rate():
    irr = IrrigationPlan()
    assert irr.rate == pytest.approx(7e-3 / 14400)
    assert irr.active(86400 + 100) and not irr.active(5 * 3600)
    with pytest.raises(ValueError):
        IrrigationPlan(window=(3600.0, 0.0))


def test_footprint_follows_arm():
    sched = PivotSchedule(GRID, PivotConfig(), IrrigationPlan(), CropSeries())
    u = sched.irrigation_flux(1000.0).reshape(GRID.n_r, GRID.n_theta)
    sector = pivot_position(1000.0, PivotConfig(), GRID).sector
    assert np.all(u[:, sector] > 0) and np.count_nonzero(u) == GRID.n_r
    assert not np.any(sched.irrigation_flux(5 * 3600.0))


def test_crossing_times_are_compartment_edges():
    sched = PivotSchedule(GRID, PivotConfig(), IrrigationPlan(), CropSeries())
    ts = sched.crossing_times(0.0, 86400.0)
    w = PivotConfig().angular_speed
    assert all(0 <= t < 4 * 3600 for t in ts)
    frac = np.array(ts) * w / GRID.dtheta
    assert np.allclose(frac, np.round(frac), atol=1e-9)
    assert len(ts) == int(4 * 3600 * w / GRID.dtheta) + 1


def test_measurement_count_and_lead_sector():
    cfg = SensorConfig()
    nodes = measured_nodes(GRID, 7, cfg)
    assert len(nodes) == 11
    for i in nodes:
        assert GRID.unravel(int(i)).e_theta == 8
    # surface layer first
    assert all(GRID.unravel(int(i)).k == GRID.n_z - 1 for i in nodes[:6])
    assert measured_nodes(GRID, 39, cfg).size == 11
    assert GRID.unravel(int(measured_nodes(GRID, 39, cfg)[0])).e_theta == 0


def test_too_few_nodes_rejected():
    with pytest.raises(SensorConfigError):
        measured_nodes(GRID, 0, SensorConfig(sensing_layers=1))


def test_noise_free_values_are_exact():
    m = FieldModel(GRID, LOAM)
    h = np.full(GRID.size, -0.8)
    cfg = SensorConfig(noise_std={"moisture_content": 0.0, "pressure_head": 0.0})
    ms = sample_measurements(StateField(h, 10.0), pivot_position(10.0, PivotConfig(), GRID), GRID, cfg, m.params, 0)
    assert all(v.value == water_content(-0.8, LOAM) for v in ms)


def test_noise_statistics_and_determinism():
    m = FieldModel(GRID, LOAM)
    h = np.full(GRID.size, -0.8)
    st = pivot_position(10.0, PivotConfig(), GRID)
    cfg = SensorConfig()
    rng = np.random.default_rng(7)
    vals = np.array([[v.value for v in sample_measurements(StateField(h), st, GRID, cfg, m.params, rng)] for _ in range(1000)])
    resid = vals.ravel() - water_content(-0.8, LOAM)
    assert resid.size >= 1e4
    assert np.std(resid) == pytest.approx(1e-4, rel=0.05)
    assert abs(np.mean(resid)) < 5e-6
    a = sample_measurements(StateField(h), st, GRID, cfg, m.params, 3)
    b = sample_measurements(StateField(h), st, GRID, cfg, m.params, 3)
    assert a == b


def test_crop_series_bounds():
    for which in ("1", "2"):
        kc = scenario(which).crop.K_c
        assert min(kc) >= 0.75 and max(kc) <= 0.96
    pet = np.array(CropSeries().PET) * 86400 * 1e3
    assert np.allclose(pet, [1.2, 1.70, 0.6, 0.5, 2.10])
    assert CropSeries().day(9).K_c == 0.96


def test_twin_reproducible_and_epochs():
    g = build_grid(50.0, 0.3, 3, 8, 4)
    m = FieldModel(g, LOAM)
    sched = PivotSchedule(g, PivotConfig(), IrrigationPlan(), CropSeries())
    cfg = SensorConfig(measurements_per_epoch=3, sensing_layers=1)
    x0 = np.full(g.size, -0.8)
    a = truth_twin(m, sched, x0, 6 * 3600.0, cfg, 1e-5, seed=11)
    b = truth_twin(m, sched, x0, 6 * 3600.0, cfg, 1e-5, seed=11)
    c = truth_twin(m, sched, x0, 6 * 3600.0, cfg, 1e-5, seed=12)
    assert [bt.t for bt in a.batches] == epoch_times(sched, cfg, 6 * 3600.0)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a.batches, b.batches))
    assert not np.array_equal(a.batches[0].values, c.batches[0].values)
    # each epoch reads the compartment ahead of the one the arm just entered
    for bt in a.batches:
        sec = pivot_position(bt.t + 1.0, PivotConfig(), g).sector
        assert {g.unravel(int(i)).e_theta for i in bt.nodes} == {(sec + 1) % 8}
