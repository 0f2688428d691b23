"""Node-valued moisture maps: one (r, theta) raster per depth layer and instant."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import CylGrid

KINDS = ("actual", "estimated", "predicted", "abs_error")


class RasterError(ValueError):
    pass


@dataclass
class MapRaster:
    layer: int
    t: float
    kind: str
    r: np.ndarray  # (n_r,)
    theta: np.ndarray  # (n_theta,)
    values: np.ndarray  # (n_r, n_theta)
    depth: float = float("nan")  # node depth below the surface, m
    meta: dict = field(default_factory=dict)

    def validate(self, bounds: tuple[float, float] | None = None, tol: float = 1e-12) -> None:
        if self.kind not in KINDS:
            raise RasterError(f"unknown raster kind {self.kind!r}")
        if self.values.shape != (len(self.r), len(self.theta)):
            raise RasterError("values do not match the (r, theta) layout")
        if not np.all(np.isfinite(self.values)):
            raise RasterError("raster has non-finite entries")
        if self.kind == "abs_error":
            if np.any(self.values < 0):
                raise RasterError("absolute errors must be nonnegative")
        elif bounds is not None:
            lo, hi = bounds
            if np.any(self.values < lo - tol) or np.any(self.values > hi + tol):
                raise RasterError(f"moisture outside [{lo}, {hi}]")


def layer_raster(grid: CylGrid, field_values, layer: int, t: float, kind: str, meta=None) -> MapRaster:
    """Ring nodes of one layer arranged as (n_r, n_theta); an axis node is left out."""
    v = np.asarray(field_values)
    idx = grid.layer_nodes(layer)[: grid.n_r * grid.n_theta]
    return MapRaster(
        layer=layer,
        t=float(t),
        kind=kind,
        r=grid.r_nodes.copy(),
        theta=grid.theta_nodes.copy(),
        values=v[idx].reshape(grid.n_r, grid.n_theta).copy(),
        depth=float(grid.depth - grid.z_nodes[layer]),
        meta=dict(meta or {}),
    )


def abs_error(actual: MapRaster, estimated: MapRaster) -> MapRaster:
    if actual.values.shape != estimated.values.shape or actual.layer != estimated.layer:
        raise RasterError("rasters are not paired")
    return MapRaster(actual.layer, actual.t, "abs_error", actual.r, actual.theta, np.abs(actual.values - estimated.values), actual.depth, dict(actual.meta))


def map_filename(raster: MapRaster) -> str:
    return f"{raster.kind}_L{raster.layer:02d}_t{int(round(raster.t)):09d}.csv"


def export_map(raster: MapRaster, path, bounds=None) -> Path:
    """CSV (``r_m,theta_rad,value``, ``#`` comment lines carry the metadata)
    plus a JSON sidecar with the same stem."""
    raster.validate(bounds)
    path = Path(path)
    meta = {
        "layer": int(raster.layer),
        "depth_m": float(raster.depth),
        "t_s": float(raster.t),
        "kind": raster.kind,
        "n_r": int(len(raster.r)),
        "n_theta": int(len(raster.theta)),
        "units": "m" if raster.meta.get("quantity") == "pressure_head" else "m3/m3",
        **{k: raster.meta[k] for k in sorted(raster.meta)},
    }
    with open(path, "w", newline="") as fh:
        for k in ("config_hash", "seed", "kind", "layer", "t_s"):
            if k in meta:
                fh.write(f"# {k}={meta[k]}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r_m", "theta_rad", "value"])
        for i, r in enumerate(raster.r):
            for j, th in enumerate(raster.theta):
                w.writerow([repr(float(r)), repr(float(th)), repr(float(raster.values[i, j]))])
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return path


def load_map(path) -> MapRaster:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    rows = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    data = np.array([[float(x) for x in ln.split(",")] for ln in rows[1:]])
    n_r, n_t = meta["n_r"], meta["n_theta"]
    r = data[::n_t, 0]
    th = data[:n_t, 1]
    extra = {k: v for k, v in meta.items() if k not in ("layer", "depth_m", "t_s", "kind", "n_r", "n_theta", "units")}
    return MapRaster(meta["layer"], meta["t_s"], meta["kind"], r, th, data[:, 2].reshape(n_r, n_t), meta["depth_m"], extra)
