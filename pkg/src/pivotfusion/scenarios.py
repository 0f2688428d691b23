"""Scenario definitions for the synthetic twins and the real-quadrant template."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ekf import MOISTURE, PRESSURE, EkfBelief, FusionResult, NoiseSpec, OutputSpec, initial_belief, run_fusion
from .grid import CylGrid, build_grid
from .pivot import CropSeries, IrrigationPlan, PivotConfig, PivotSchedule, SensorConfig, TwinResult, truth_twin
from .richards import FieldModel, SoilLayer
from .soil import CLAY_LOAM, LOAM, SANDY_CLAY_LOAM, SECONDS_PER_DAY


@dataclass
class GridSpec:
    radius: float = 50.0
    depth: float = 0.30
    n_r: int = 6
    n_theta: int = 40
    n_z: int = 16
    sector: tuple[float, float] | None = None
    axis: bool = False
    z_ratio: float = 1.0

    def build(self) -> CylGrid:
        return build_grid(self.radius, self.depth, self.n_r, self.n_theta, self.n_z, self.sector, self.axis, self.z_ratio)


@dataclass
class ScenarioConfig:
    name: str
    grid: GridSpec = field(default_factory=GridSpec)
    soils: object = LOAM  # SoilParams or list[SoilLayer] (surface first)
    x0: float = -0.8
    estimate_scale: float = 1.2
    p0_rel_std: float = 0.2
    p0_corr_length: tuple[float, float] | None = None  # (horizontal, vertical) m; None is diagonal
    p0_nugget: float = 0.0
    process_std: float = 1e-5
    days: float = 5.0
    irrigation: IrrigationPlan = field(default_factory=IrrigationPlan)
    crop: CropSeries = field(default_factory=CropSeries)
    pivot: PivotConfig = field(default_factory=PivotConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    bottom: str = "free_drainage"
    max_dt: float = 3600.0
    joseph: bool = False
    check_psd: bool = False
    seed: int = 0

    @property
    def horizon(self) -> float:
        return self.days * SECONDS_PER_DAY

    @property
    def measurement_std(self) -> float:
        return self.sensor.std

    def noise(self) -> NoiseSpec:
        return NoiseSpec.from_std(self.process_std, self.measurement_std)


def scenario(which, **overrides) -> ScenarioConfig:
    """Bundled configurations: 1 (uniform loam, moisture readings), 2 (loam over
    sandy clay loam, pressure-head readings) and ``"real_quadrant"``."""
    corr = dict(p0_corr_length=(200.0, 1.0), p0_nugget=0.05)
    if which in (1, "1", "synthetic_1"):
        cfg = ScenarioConfig(name="synthetic_1", **corr)
    elif which in (2, "2", "synthetic_2"):
        cfg = ScenarioConfig(
            name="synthetic_2",
            soils=[SoilLayer(LOAM, 0.16), SoilLayer(SANDY_CLAY_LOAM, 0.30)],
            sensor=SensorConfig(kind=PRESSURE),
            **corr,
        )
    elif which == "real_quadrant":
        cfg = ScenarioConfig(
            name="real_quadrant",
            grid=GridSpec(radius=290.0, depth=0.6, n_r=30, n_theta=17, n_z=10, sector=(1.5 * np.pi, 2 * np.pi), z_ratio=1.3),
            soils=CLAY_LOAM,
            pivot=PivotConfig(angle0=1.5 * np.pi, radius=290.0),
        )
    else:
        raise ValueError(f"unknown scenario {which!r}")
    return replace(cfg, **overrides)


@dataclass
class ScenarioRun:
    config: ScenarioConfig
    model: FieldModel
    schedule: PivotSchedule
    twin: TwinResult
    output: OutputSpec
    fusion: FusionResult | None = None


def build(cfg: ScenarioConfig):
    grid = cfg.grid.build()
    model = FieldModel(grid, cfg.soils)
    sched = PivotSchedule(grid, cfg.pivot, cfg.irrigation, cfg.crop, bottom=cfg.bottom)
    output = OutputSpec(cfg.sensor.kind, model.params if cfg.sensor.kind == MOISTURE else None)
    return model, sched, output


def prior(cfg: ScenarioConfig, grid: CylGrid) -> EkfBelief:
    x = np.full(grid.size, cfg.estimate_scale * cfg.x0)
    return initial_belief(x, cfg.p0_rel_std, grid=grid, corr_length=cfg.p0_corr_length, nugget=cfg.p0_nugget)


def run_twin(cfg: ScenarioConfig, fuse: bool = True, step_hook=None, batches=None, snapshot_times=()) -> ScenarioRun:
    """Truth simulation plus (optionally) the filter on its measurement stream.

    ``batches`` replaces the twin's stream in the filter (e.g. a training split).
    """
    model, sched, output = build(cfg)
    x0 = np.full(model.size, cfg.x0)
    twin = truth_twin(model, sched, x0, cfg.horizon, cfg.sensor, cfg.process_std, cfg.seed, cfg.max_dt, extra_times=snapshot_times)
    run = ScenarioRun(cfg, model, sched, twin, output)
    if fuse:
        run.fusion = run_fusion(
            prior(cfg, model.grid),
            twin.batches if batches is None else batches,
            sched,
            model,
            cfg.noise(),
            output,
            horizon=cfg.horizon,
            max_dt=cfg.max_dt,
            psd=cfg.check_psd,
            joseph=cfg.joseph,
            extra_times=twin.times,
            step_hook=step_hook,
        )
    return run
