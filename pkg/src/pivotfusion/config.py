"""YAML run configuration with unit conversion and exhaustive validation."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .ekf import MOISTURE, PRESSURE
from .pipeline import FieldGeometry
from .pivot import CropSeries, IrrigationPlan, PivotConfig, SensorConfig
from .richards import SoilLayer
from .scenarios import GridSpec, ScenarioConfig
from .soil import SECONDS_PER_DAY, FeddesParams, ParameterError, SoilParams

SCENARIOS = ("synthetic_1", "synthetic_2", "real_quadrant", "custom")
BUNDLED = {"1": "synthetic_1", "2": "synthetic_2", "synthetic_1": "synthetic_1", "synthetic_2": "synthetic_2", "real_quadrant": "real_quadrant"}


class ConfigError(ValueError):
    """Every violation found while validating a configuration."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


# ---- units ------------------------------------------------------------------------

_LENGTH = {"m": 1.0, "cm": 1e-2, "mm": 1e-3}
_TIME = {"s": 1.0, "min": 60.0, "h": 3600.0, "hour": 3600.0, "day": SECONDS_PER_DAY, "d": SECONDS_PER_DAY}
_QTY = re.compile(r"^\s*([-+0-9.eE]+)\s*([A-Za-z/]+)?\s*$")


def unit_factor(unit: str, dimension: str) -> float:
    """SI factor for ``unit``; ``dimension`` is "length", "velocity" or "time"."""
    unit = unit.strip()
    if dimension == "length":
        if unit in _LENGTH:
            return _LENGTH[unit]
    elif dimension == "time":
        if unit in _TIME:
            return _TIME[unit]
    elif dimension == "velocity":
        if "/" in unit:
            num, den = unit.split("/", 1)
            if num in _LENGTH and den in _TIME:
                return _LENGTH[num] / _TIME[den]
    raise ValueError(f"unit {unit!r} is not a {dimension}")


def quantity(value, dimension: str, default_unit: str | None = None) -> float:
    """Parse ``7``, ``"7 mm/day"`` or ``{value: 7, unit: mm/day}`` into SI."""
    unit = default_unit
    if isinstance(value, dict):
        unit = value.get("unit", unit)
        value = value["value"]
    elif isinstance(value, str):
        m = _QTY.match(value)
        if not m:
            raise ValueError(f"cannot parse quantity {value!r}")
        value, unit = m.group(1), m.group(2) or unit
    v = float(value)
    if unit is None:
        return v
    return v * unit_factor(unit, dimension)


def quantities(value, dimension: str, default_unit: str | None = None) -> list[float]:
    if isinstance(value, dict) and "values" in value:
        unit = value.get("unit", default_unit)
        return [quantity({"value": v, "unit": unit} if unit else v, dimension) for v in value["values"]]
    return [quantity(v, dimension, default_unit) for v in value]


# ---- run configuration ---------------------------------------------------------------


@dataclass
class DataSpec:
    measurements: Path | None = None
    batches: Path | None = None
    center: tuple[float, float] | None = None
    quadrants: tuple[int, ...] = (4,)
    epoch_length: float = 32 * 60.0


@dataclass
class OutputCadence:
    snapshot_times: tuple[float, ...] = ()
    layers: tuple[int, ...] | str = "surface_bottom"

    def layer_ids(self, n_z: int) -> list[int]:
        if self.layers == "all":
            return list(range(n_z))
        if self.layers == "surface_bottom":
            return [n_z - 1, 0]
        return [int(k) for k in self.layers]


@dataclass
class EvaluationSpec:
    alpha: float = 0.05
    split_ratio: float | None = None
    mae_threshold: float = 0.06


@dataclass
class RunConfig:
    scenario: str
    seed: int | None
    model: ScenarioConfig
    data: DataSpec = field(default_factory=DataSpec)
    output: OutputCadence = field(default_factory=OutputCadence)
    evaluation: EvaluationSpec = field(default_factory=EvaluationSpec)
    raw: dict = field(default_factory=dict, repr=False)
    source: Path | None = None

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)

    def geometry(self) -> FieldGeometry:
        c = self.data.center
        return FieldGeometry(self.model.grid.radius, None if c is None else c[0], None if c is None else c[1])

    def snapshot_times(self) -> list[float]:
        if self.output.snapshot_times:
            return [float(t) for t in self.output.snapshot_times]
        # daily by default, always including the end of the run
        T = self.model.horizon
        days = [SECONDS_PER_DAY * d for d in range(1, int(np.ceil(self.model.days)) + 1) if SECONDS_PER_DAY * d < T]
        return days + [T]


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


_TOP_KEYS = {"scenario", "seed", "grid", "soils", "initial", "pivot", "sensor", "noise", "ekf", "schedule", "output", "data", "evaluation"}


def _section(raw, key, errs, allowed):
    sec = raw.get(key) or {}
    if not isinstance(sec, dict):
        errs.append(f"{key}: expected a mapping")
        return {}
    for k in sorted(set(sec) - set(allowed)):
        errs.append(f"{key}.{k}: unknown key")
    return sec


def _try(errs, where, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (ValueError, TypeError, KeyError, ParameterError) as exc:
        errs.append(f"{where}: {exc}")
        return None


def parse_config(raw: dict, base_dir: Path | None = None, source: Path | None = None) -> RunConfig:
    """Validate a decoded mapping; raises :class:`ConfigError` listing every problem."""
    errs: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])
    for k in sorted(set(raw) - _TOP_KEYS):
        errs.append(f"{k}: unknown key")
    scen = raw.get("scenario", "custom")
    if scen not in SCENARIOS:
        errs.append(f"scenario: must be one of {SCENARIOS}")
    seed = raw.get("seed")
    if seed is None and str(scen).startswith("synthetic"):
        errs.append("seed: required for synthetic scenarios")
    elif seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
        errs.append("seed: must be a nonnegative integer")

    g = _section(raw, "grid", errs, {"radius", "depth", "n_r", "n_theta", "n_z", "sector", "axis", "z_ratio"})
    grid = GridSpec()
    for key in ("radius", "depth"):
        if key in g:
            v = _try(errs, f"grid.{key}", quantity, g[key], "length", "m")
            if v is not None:
                setattr(grid, key, v)
    for key in ("n_r", "n_theta", "n_z"):
        if key in g:
            if not isinstance(g[key], int) or g[key] < 2:
                errs.append(f"grid.{key}: must be an integer >= 2")
            else:
                setattr(grid, key, g[key])
    if g.get("sector") is not None:
        s = g["sector"]
        if not (isinstance(s, (list, tuple)) and len(s) == 2):
            errs.append("grid.sector: expected [theta1, theta2] in radians")
        else:
            grid.sector = (float(s[0]), float(s[1]))
            if not grid.sector[0] < grid.sector[1] <= grid.sector[0] + 2 * np.pi:
                errs.append("grid.sector: need theta1 < theta2 <= theta1 + 2 pi")
    grid.axis = bool(g.get("axis", False))
    if grid.axis and grid.sector is not None:
        errs.append("grid.axis: sector grids carry no axis column")
    grid.z_ratio = float(g.get("z_ratio", 1.0))
    if grid.z_ratio <= 0:
        errs.append("grid.z_ratio: must be positive")

    soils = []
    raw_soils = raw.get("soils")
    if not raw_soils:
        errs.append("soils: at least one layer is required")
    else:
        prev = 0.0
        for i, layer in enumerate(raw_soils):
            where = f"soils[{i}]"
            if not isinstance(layer, dict):
                errs.append(f"{where}: expected a mapping")
                continue
            for k in sorted(set(layer) - {"name", "bottom_depth", "theta_s", "theta_r", "K_s", "alpha", "n"}):
                errs.append(f"{where}.{k}: unknown key")
            missing = [k for k in ("theta_s", "theta_r", "K_s", "alpha", "n") if k not in layer]
            if missing:
                errs.append(f"{where}: missing {missing}")
                continue
            ks = _try(errs, f"{where}.K_s", quantity, layer["K_s"], "velocity", "m/s")
            alpha = _try(errs, f"{where}.alpha", float, layer["alpha"])
            if ks is None or alpha is None:
                continue
            p = _try(errs, where, SoilParams, float(layer["theta_s"]), float(layer["theta_r"]), ks, alpha, float(layer["n"]))
            bottom = _try(errs, f"{where}.bottom_depth", quantity, layer.get("bottom_depth", grid.depth), "length", "m")
            if p is None or bottom is None:
                continue
            if bottom <= prev:
                errs.append(f"{where}.bottom_depth: layers must deepen monotonically")
            prev = bottom
            soils.append(SoilLayer(p, bottom))

    ini = _section(raw, "initial", errs, {"x0", "estimate_scale"})
    pv = _section(raw, "pivot", errs, {"angle0", "linear_speed", "radius"})
    se = _section(raw, "sensor", errs, {"measurements_per_epoch", "lead", "kind", "noise_std", "epoch_interval", "sensing_layers"})
    nz = _section(raw, "noise", errs, {"process_std", "p0_rel_std", "p0_corr_length", "p0_nugget"})
    ek = _section(raw, "ekf", errs, {"joseph", "check_psd", "max_dt"})
    sc = _section(raw, "schedule", errs, {"days", "irrigation", "pet", "kc", "lai", "feddes", "bottom"})
    out = _section(raw, "output", errs, {"snapshot_times", "layers"})
    da = _section(raw, "data", errs, {"measurements", "batches", "center", "quadrants", "epoch_length"})
    ev = _section(raw, "evaluation", errs, {"alpha", "split_ratio", "mae_threshold"})

    x0 = _try(errs, "initial.x0", quantity, ini.get("x0", -0.8), "length", "m")
    pivot = _try(
        errs,
        "pivot",
        lambda: PivotConfig(
            angle0=float(pv.get("angle0", 0.0)),
            linear_speed=quantity(pv.get("linear_speed", 0.022), "velocity", "m/s"),
            radius=quantity(pv.get("radius", grid.radius), "length", "m"),
        ),
    )
    kind = se.get("kind", MOISTURE)
    if kind not in (MOISTURE, PRESSURE):
        errs.append(f"sensor.kind: must be {MOISTURE} or {PRESSURE}")
        kind = MOISTURE
    noise_std = dict(SensorConfig().noise_std)
    if "noise_std" in se:
        if isinstance(se["noise_std"], dict) and "value" not in se["noise_std"]:
            noise_std.update({k: float(v) for k, v in se["noise_std"].items()})
        else:
            noise_std[kind] = _try(errs, "sensor.noise_std", quantity, se["noise_std"], "length") or 0.0
    sensor = _try(
        errs,
        "sensor",
        lambda: SensorConfig(
            measurements_per_epoch=int(se.get("measurements_per_epoch", 11)),
            lead=int(se.get("lead", 1)),
            noise_std=noise_std,
            epoch_interval=None if se.get("epoch_interval") is None else quantity(se["epoch_interval"], "time", "s"),
            sensing_layers=int(se.get("sensing_layers", 2)),
            kind=kind,
        ),
    )

    irr_raw = sc.get("irrigation") or {}
    irrigation = None
    if not isinstance(irr_raw, dict):
        errs.append("schedule.irrigation: expected a mapping")
    else:
        for k in sorted(set(irr_raw) - {"rate", "window", "footprint"}):
            errs.append(f"schedule.irrigation.{k}: unknown key")
        rate = _try(errs, "schedule.irrigation.rate", quantity, irr_raw.get("rate", "7 mm/day"), "velocity", "m/s")
        window = irr_raw.get("window", [0, 4 * 3600])
        if rate is not None:
            irrigation = _try(
                errs,
                "schedule.irrigation",
                lambda: IrrigationPlan(
                    depth_per_day=rate * SECONDS_PER_DAY,
                    window=(quantity(window[0], "time", "s"), quantity(window[1], "time", "s")),
                    footprint=irr_raw.get("footprint", "arm"),
                ),
            )
    pet = _try(errs, "schedule.pet", quantities, sc.get("pet", {"values": [1.2, 1.70, 0.6, 0.5, 2.10], "unit": "mm/day"}), "velocity", "m/s")
    kc = sc.get("kc", [0.75, 0.80, 0.85, 0.90, 0.96])
    if pet is not None and any(v < 0 for v in pet):
        errs.append("schedule.pet: values must be nonnegative")
    if not isinstance(kc, list) or not kc or any(not isinstance(v, (int, float)) or v < 0 for v in kc):
        errs.append("schedule.kc: expected a nonempty list of nonnegative numbers")
        kc = [1.0]
    fd = sc.get("feddes") or {}
    feddes = _try(errs, "schedule.feddes", lambda: FeddesParams(**{k: float(v) for k, v in fd.items()}))
    crop = None
    if pet is not None and feddes is not None:
        crop = _try(errs, "schedule", lambda: CropSeries(K_c=tuple(float(v) for v in kc), PET=tuple(pet), LAI=float(sc.get("lai", 2.5)), feddes=feddes))
    bottom = sc.get("bottom", "free_drainage")
    if bottom not in ("free_drainage", "no_flux"):
        errs.append("schedule.bottom: must be free_drainage or no_flux")
    days = sc.get("days", 5)
    if not isinstance(days, (int, float)) or days <= 0:
        errs.append("schedule.days: must be positive")
        days = 1

    corr = nz.get("p0_corr_length")
    if corr is not None:
        if np.isscalar(corr):
            corr = (float(corr), float(corr))
        elif len(corr) == 2:
            corr = (float(corr[0]), float(corr[1]))
        else:
            errs.append("noise.p0_corr_length: scalar or [horizontal, vertical]")
            corr = None
        if corr is not None and min(corr) <= 0:
            errs.append("noise.p0_corr_length: must be positive")
    process_std = _try(errs, "noise.process_std", quantity, nz.get("process_std", 1e-5), "length", "m")
    if process_std is not None and process_std < 0:
        errs.append("noise.process_std: must be nonnegative")
    max_dt = _try(errs, "ekf.max_dt", quantity, ek.get("max_dt", 3600), "time", "s")
    if max_dt is not None and max_dt <= 0:
        errs.append("ekf.max_dt: must be positive")

    data = DataSpec()
    base = base_dir or Path(".")
    for key in ("measurements", "batches"):
        if da.get(key):
            p = Path(da[key])
            p = p if p.is_absolute() else base / p
            if not p.exists():
                errs.append(f"data.{key}: file {p} does not exist")
            setattr(data, key, p)
    if da.get("center") is not None:
        c = da["center"]
        if not (isinstance(c, (list, tuple)) and len(c) == 2):
            errs.append("data.center: expected [lat, lon]")
        else:
            data.center = (float(c[0]), float(c[1]))
    q = da.get("quadrants", [4])
    if not isinstance(q, list) or any(v not in (1, 2, 3, 4) for v in q):
        errs.append("data.quadrants: list of quadrant ids 1..4")
    else:
        data.quadrants = tuple(q)
    data.epoch_length = _try(errs, "data.epoch_length", quantity, da.get("epoch_length", 1920), "time", "s") or 1920.0

    layers = out.get("layers", "surface_bottom")
    if not (layers in ("all", "surface_bottom") or (isinstance(layers, list) and all(isinstance(k, int) and 0 <= k < grid.n_z for k in layers))):
        errs.append("output.layers: 'all', 'surface_bottom' or a list of layer ids")
    snaps = out.get("snapshot_times", [])
    snap_s = _try(errs, "output.snapshot_times", quantities, snaps, "time", "s") or []
    alpha = float(ev.get("alpha", 0.05))
    if not 0 < alpha < 1:
        errs.append("evaluation.alpha: must be in (0, 1)")
    split = ev.get("split_ratio")
    if split is not None and not 0 < float(split) <= 1:
        errs.append("evaluation.split_ratio: must be in (0, 1]")

    if errs:
        raise ConfigError(errs)

    model = ScenarioConfig(
        name=scen,
        grid=grid,
        soils=soils if len(soils) > 1 else soils[0].params,
        x0=x0,
        estimate_scale=float(ini.get("estimate_scale", 1.2)),
        p0_rel_std=float(nz.get("p0_rel_std", 0.2)),
        p0_corr_length=corr,
        p0_nugget=float(nz.get("p0_nugget", 0.0)),
        process_std=process_std,
        days=float(days),
        irrigation=irrigation,
        crop=crop,
        pivot=pivot,
        sensor=sensor,
        bottom=bottom,
        max_dt=max_dt,
        joseph=bool(ek.get("joseph", False)),
        check_psd=bool(ek.get("check_psd", False)),
        seed=int(seed or 0),
    )
    return RunConfig(
        scenario=scen,
        seed=seed,
        model=model,
        data=data,
        output=OutputCadence(tuple(snap_s), layers if layers in ("all", "surface_bottom") else tuple(layers)),
        evaluation=EvaluationSpec(alpha, None if split is None else float(split), float(ev.get("mae_threshold", 0.06))),
        raw=raw,
        source=source,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: invalid YAML ({exc})"]) from exc
    return parse_config(raw, base_dir=path.parent, source=path)


def bundled_config_path(name: str) -> Path:
    key = BUNDLED.get(str(name))
    if key is None:
        raise ConfigError([f"no bundled configuration {name!r}"])
    return Path(str(resources.files("pivotfusion") / "configs" / f"{key}.yaml"))


def load_bundled(name: str) -> RunConfig:
    return load_config(bundled_config_path(name))
