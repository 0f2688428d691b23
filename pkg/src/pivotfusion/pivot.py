"""Synthetic truth twin: rotating pivot, irrigation footprint and sensor sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import CylGrid, OutOfTrackError
from .pipeline import MeasurementBatch
from .richards import BoundarySpec, FieldModel, ForcingInputs, StateField, time_grid
from .soil import SECONDS_PER_DAY, CropWeather, FeddesParams, water_content

log = logging.getLogger(__name__)


class SensorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PivotConfig:
    """Linear speed is taken at ``radius`` (the outer tower)."""

    angle0: float = 0.0
    linear_speed: float = 0.022  # m/s
    radius: float = 50.0  # m

    def __post_init__(self):
        if self.linear_speed < 0 or self.radius <= 0:
            raise ValueError("linear_speed must be >= 0 and radius > 0")

    @property
    def angular_speed(self) -> float:
        return self.linear_speed / self.radius


@dataclass(frozen=True)
class PivotState:
    angle: float
    angular_speed: float
    irrigating: bool = False
    sector: int | None = None


@dataclass(frozen=True)
class IrrigationPlan:
    depth_per_day: float = 7e-3  # m of water per day
    window: tuple[float, float] = (0.0, 4 * 3600.0)  # seconds after midnight
    footprint: str = "arm"  # "arm": surface nodes of the sector under the arm; "field": every surface node

    def __post_init__(self):
        a, b = self.window
        if not 0 <= a < b <= SECONDS_PER_DAY:
            raise ValueError("irrigation window must satisfy 0 <= start < end <= 86400")
        if self.depth_per_day < 0:
            raise ValueError("irrigation depth must be nonnegative")
        if self.footprint not in ("arm", "field"):
            raise ValueError(f"unknown footprint {self.footprint!r}")

    @property
    def rate(self) -> float:
        """Surface flux during the window, m/s."""
        return self.depth_per_day / (self.window[1] - self.window[0])

    def active(self, t: float) -> bool:
        tod = t % SECONDS_PER_DAY
        return self.window[0] <= tod < self.window[1]


@dataclass(frozen=True)
class CropSeries:
    """Per-day crop coefficient and reference ET (m/s); the last entry repeats."""

    K_c: tuple[float, ...] = (0.75, 0.80, 0.85, 0.90, 0.96)
    PET: tuple[float, ...] = tuple(v * 1e-3 / SECONDS_PER_DAY for v in (1.2, 1.70, 0.6, 0.5, 2.10))
    LAI: float = 2.5
    feddes: FeddesParams = field(default_factory=FeddesParams)

    def __post_init__(self):
        if not self.K_c or not self.PET:
            raise ValueError("K_c and PET series must be nonempty")

    def day(self, d: int) -> CropWeather:
        kc = self.K_c[min(d, len(self.K_c) - 1)]
        pet = self.PET[min(d, len(self.PET) - 1)]
        return CropWeather(K_c=kc, PET=pet, LAI=self.LAI)


def pivot_position(t: float, pivot: PivotConfig, grid: CylGrid | None = None, irrigation: IrrigationPlan | None = None) -> PivotState:
    if t < 0:
        raise ValueError("t must be nonnegative")
    w = pivot.angular_speed
    angle = (pivot.angle0 + w * t) % (2 * np.pi)
    irrigating = irrigation.active(t) if irrigation is not None else False
    sector = None
    if grid is not None:
        try:
            sector = grid.sector_of_angle(angle)
        except OutOfTrackError:
            sector = None
    return PivotState(angle, w, irrigating, sector)


class PivotSchedule:
    """Forcing for a field under a rotating pivot with daily crop weather.

    Forcing is piecewise constant, evaluated at each step's midpoint; step
    boundaries are placed at midnights, irrigation window edges and the
    instants the arm crosses an azimuthal compartment boundary.
    """

    def __init__(
        self,
        grid: CylGrid,
        pivot: PivotConfig,
        irrigation: IrrigationPlan,
        crop: CropSeries,
        bottom: str = "free_drainage",
        optimum_uptake: bool = True,
    ):
        self.grid = grid
        self.pivot = pivot
        self.irrigation = irrigation
        self.crop = crop
        self.bottom = bottom
        self.optimum_uptake = optimum_uptake
        surf = grid.surface_nodes()
        # surface position -> azimuthal index (-1 for the axis node)
        n_ring_surf = grid.n_r * grid.n_theta
        self._surf_sector = np.where(np.arange(len(surf)) < n_ring_surf, np.arange(len(surf)) % grid.n_theta, -1)

    def irrigation_flux(self, t: float) -> np.ndarray:
        u = np.zeros(len(self._surf_sector))
        if not self.irrigation.active(t):
            return u
        rate = self.irrigation.rate
        if self.irrigation.footprint == "field":
            u[:] = rate
            return u
        st = pivot_position(t, self.pivot, self.grid)
        if st.sector is None:
            return u
        u[self._surf_sector == st.sector] = rate
        u[self._surf_sector == -1] = rate  # the arm always passes over the axis
        return u

    def forcing(self, t0: float, t1: float) -> ForcingInputs:
        tm = 0.5 * (t0 + t1)
        cw = self.crop.day(int(tm // SECONDS_PER_DAY))
        return ForcingInputs(
            cw=cw,
            feddes=self.crop.feddes,
            boundary=BoundarySpec(u_irr=self.irrigation_flux(tm), bottom=self.bottom),
            optimum_uptake=self.optimum_uptake,
        )

    def crossing_times(self, t0: float, t1: float) -> list[float]:
        """Instants in [t0, t1) at which the arm enters a new compartment while irrigating."""
        w = self.pivot.angular_speed
        if w <= 0:
            return []
        g = self.grid
        out = []
        d0, d1 = int(t0 // SECONDS_PER_DAY), int(np.ceil(t1 / SECONDS_PER_DAY))
        for d in range(d0, d1 + 1):
            a = max(t0, d * SECONDS_PER_DAY + self.irrigation.window[0])
            b = min(t1, d * SECONDS_PER_DAY + self.irrigation.window[1])
            if a >= b:
                continue
            # boundary j sits at theta_start + j*dtheta (mod 2 pi)
            phi_a = self.pivot.angle0 + w * a - g.theta_start
            phi_b = self.pivot.angle0 + w * b - g.theta_start
            for j in range(int(np.ceil(phi_a / g.dtheta - 1e-12)), int(np.floor(phi_b / g.dtheta)) + 1):
                t = (g.theta_start + j * g.dtheta - self.pivot.angle0) / w
                if a <= t < b:
                    out.append(float(t))
        return sorted(out)

    def breakpoints(self, t0: float, t1: float) -> list[float]:
        pts = set()
        d0, d1 = int(t0 // SECONDS_PER_DAY), int(np.ceil(t1 / SECONDS_PER_DAY))
        for d in range(d0, d1 + 1):
            base = d * SECONDS_PER_DAY
            pts.update([base, base + self.irrigation.window[0], base + self.irrigation.window[1]])
        if self.irrigation.footprint == "arm":
            pts.update(self.crossing_times(t0, t1))
        return sorted(p for p in pts if t0 < p < t1)


@dataclass(frozen=True)
class SensorConfig:
    measurements_per_epoch: int = 11
    lead: int = 1  # compartments ahead of the arm, anticlockwise
    noise_std: dict = field(default_factory=lambda: {"moisture_content": 1e-4, "pressure_head": 1e-3})
    epoch_interval: float | None = None  # default: time to traverse one compartment
    sensing_layers: int = 2  # layers from the surface that the sensor footprint reaches
    kind: str = "moisture_content"

    def __post_init__(self):
        if self.measurements_per_epoch < 1 or self.sensing_layers < 1:
            raise ValueError("measurement and layer counts must be >= 1")
        if any(v < 0 for v in self.noise_std.values()):
            raise ValueError("noise std must be nonnegative")
        if self.kind not in self.noise_std:
            raise ValueError(f"no noise std for output kind {self.kind!r}")
        if self.epoch_interval is not None and self.epoch_interval <= 0:
            raise ValueError("epoch interval must be positive")

    @property
    def std(self) -> float:
        return float(self.noise_std[self.kind])


@dataclass(frozen=True)
class SyntheticMeasurement:
    t: float
    node: int
    value: float
    kind: str


def measured_nodes(grid: CylGrid, sector: int, cfg: SensorConfig) -> np.ndarray:
    """Nodes read in compartment ``(sector + lead) mod n_theta``.

    Candidates are taken layer by layer from the surface down (at most
    ``cfg.sensing_layers`` layers), inner radius first, and the first
    ``measurements_per_epoch`` are used.
    """
    j = (sector + cfg.lead) % grid.n_theta
    cand = [
        grid.node_index(e_r, j, grid.n_z - 1 - layer)
        for layer in range(min(cfg.sensing_layers, grid.n_z))
        for e_r in range(grid.n_r)
    ]
    if len(cand) < cfg.measurements_per_epoch:
        raise SensorConfigError(
            f"compartment offers {len(cand)} sensing nodes, {cfg.measurements_per_epoch} requested"
        )
    return np.array(cand[: cfg.measurements_per_epoch], dtype=int)


def sample_measurements(truth: StateField, pivot: PivotState, grid: CylGrid, cfg: SensorConfig, params, rng) -> list[SyntheticMeasurement]:
    """Noisy readings of the lead compartment; ``rng`` is a Generator or a seed."""
    if truth.h.shape[0] != grid.size:
        raise ValueError("truth does not match the grid")
    if pivot.sector is None:
        raise SensorConfigError("pivot is outside the gridded sector")
    rng = np.random.default_rng(rng)
    nodes = measured_nodes(grid, pivot.sector, cfg)
    h = truth.h[nodes]
    if cfg.kind == "moisture_content":
        take = lambda v: np.asarray(v)[nodes] if np.ndim(v) else v  # noqa: E731
        from .soil import SoilParams

        p = SoilParams(take(params.theta_s), take(params.theta_r), take(params.K_s), take(params.alpha), take(params.n))
        exact = water_content(h, p)
    else:
        exact = h.copy()
    values = exact + rng.normal(0.0, cfg.std, size=len(nodes)) if cfg.std > 0 else exact
    return [SyntheticMeasurement(truth.t, int(i), float(v), cfg.kind) for i, v in zip(nodes, values)]


def to_batch(ms: list[SyntheticMeasurement], quadrant: int = 0) -> MeasurementBatch:
    return MeasurementBatch(
        t=ms[0].t,
        nodes=np.array([m.node for m in ms], dtype=int),
        values=np.array([m.value for m in ms]),
        quadrant=quadrant,
        kind=ms[0].kind,
    )


@dataclass
class TwinResult:
    times: list
    truth: dict  # t -> h
    batches: list
    model: FieldModel
    schedule: PivotSchedule


def epoch_times(schedule: PivotSchedule, sensor: SensorConfig, horizon: float) -> list[float]:
    if sensor.epoch_interval is None:
        return [t for t in schedule.crossing_times(0.0, horizon) if t > 0]
    out = []
    irr = schedule.irrigation
    for d in range(int(np.ceil(horizon / SECONDS_PER_DAY))):
        t = d * SECONDS_PER_DAY + irr.window[0]
        while t < d * SECONDS_PER_DAY + irr.window[1] and t <= horizon:
            if t > 0:
                out.append(float(t))
            t += sensor.epoch_interval
    return out


def truth_twin(
    model: FieldModel,
    schedule: PivotSchedule,
    x0: np.ndarray,
    horizon: float,
    sensor: SensorConfig,
    process_std: float,
    seed: int,
    max_dt: float = 3600.0,
    extra_times=(),
) -> TwinResult:
    """Simulate the truth with additive process noise after every step and
    sample the sensor at each epoch.

    The noise streams for the process and the sensor are independent children
    of ``seed``.
    """
    proc_seq, meas_seq = np.random.SeedSequence(seed).spawn(2)
    proc_rng, meas_rng = np.random.default_rng(proc_seq), np.random.default_rng(meas_seq)
    epochs = epoch_times(schedule, sensor, horizon)
    steps = time_grid(0.0, horizon, list(epochs) + list(extra_times), schedule.breakpoints(0.0, horizon), max_dt)
    h = np.array(x0, dtype=float)
    truth = {0.0: h.copy()}
    batches = []
    want = set(epochs)
    for ta, tb in zip(steps[:-1], steps[1:]):
        h = model.step(h, schedule.forcing(ta, tb), tb - ta)
        if process_std > 0:
            h = h + proc_rng.normal(0.0, process_std, size=h.shape)
        truth[tb] = h.copy()
        if tb in want:
            # sector the arm has just entered
            st = pivot_position(tb + 1e-6 / max(schedule.pivot.angular_speed, 1e-12) * schedule.grid.dtheta, schedule.pivot, schedule.grid)
            ms = sample_measurements(StateField(h, tb), st, schedule.grid, sensor, model.params, meas_rng)
            batches.append(to_batch(ms))
    return TwinResult(steps, truth, batches, model, schedule)
