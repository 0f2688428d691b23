"""Preprocessing of geolocated sensor readings into node-assigned measurement batches.

Stages, in order: drop readings beyond the track, sort by time, split by
quadrant, cut fixed epoch windows (flagging windows where the pivot did not
advance), reject values outside the soil's physical range, and snap readings
to the nearest surface node of the quadrant grid.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .grid import CylGrid, build_grid
from .soil import SoilParams

log = logging.getLogger(__name__)

EARTH_RADIUS = 6371008.8  # m, mean radius
GEO_HEADER = ["timestamp", "lat", "lon", "vwc"]
LOCAL_HEADER = ["timestamp", "x_m", "y_m", "vwc"]
HALF_PI = 0.5 * np.pi


class DataError(ValueError):
    """Malformed measurement data; ``rows`` lists offending 1-based data rows."""

    def __init__(self, msg, rows=()):
        super().__init__(msg)
        self.rows = list(rows)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class FieldGeometry:
    radius: float
    center_lat: float | None = None
    center_lon: float | None = None

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError("track radius must be positive")


@dataclass
class Readings:
    """Column-oriented raw readings; ``x``/``y`` are metres east/north of the pivot."""

    row: np.ndarray
    t: np.ndarray  # POSIX seconds, UTC
    x: np.ndarray
    y: np.ndarray
    vwc: np.ndarray

    def __len__(self):
        return len(self.row)

    def take(self, idx) -> "Readings":
        return Readings(self.row[idx], self.t[idx], self.x[idx], self.y[idx], self.vwc[idx])

    @property
    def angle(self) -> np.ndarray:
        return np.mod(np.arctan2(self.y, self.x), 2 * np.pi)

    @classmethod
    def empty(cls) -> "Readings":
        z = np.zeros(0)
        return cls(np.zeros(0, dtype=int), z, z, z, z)


@dataclass
class MeasurementBatch:
    t: float
    nodes: np.ndarray
    values: np.ndarray
    quadrant: int = 0
    stationary: bool = False
    kind: str = "moisture_content"
    readings: Readings | None = field(default=None, repr=False)


def parse_timestamp(text: str) -> float:
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_timestamp(t: float) -> str:
    return datetime.fromtimestamp(t, tz=timezone.utc).isoformat().replace("+00:00", "Z")


def project(lat, lon, lat0: float, lon0: float):
    """Equirectangular projection to metres east/north of (lat0, lon0)."""
    lat, lon = np.asarray(lat, dtype=float), np.asarray(lon, dtype=float)
    x = EARTH_RADIUS * np.cos(np.radians(lat0)) * np.radians(lon - lon0)
    y = EARTH_RADIUS * np.radians(lat - lat0)
    return x, y


def read_csv(path, geometry: FieldGeometry | None = None) -> Readings:
    """Load a measurement CSV (geographic or local header).

    Timestamps are parsed here but readings keep file order; rows that fail
    to parse are collected and reported together.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError("empty measurement file")
    header = [h.strip() for h in rows[0]]
    if header not in (GEO_HEADER, LOCAL_HEADER):
        raise DataError(f"unrecognised header {header}; expected {GEO_HEADER} or {LOCAL_HEADER}")
    geo = header == GEO_HEADER
    if geo and (geometry is None or geometry.center_lat is None or geometry.center_lon is None):
        raise GeometryError("geographic readings need the pivot centre coordinates")
    t, a, b, v, bad = [], [], [], [], []
    for i, rec in enumerate(rows[1:], start=1):
        try:
            if len(rec) != 4:
                raise ValueError("wrong field count")
            ti = parse_timestamp(rec[0])
            ai, bi, vi = float(rec[1]), float(rec[2]), float(rec[3])
            if not (np.isfinite(ai) and np.isfinite(bi) and np.isfinite(vi)):
                raise ValueError("non-finite value")
        except ValueError:
            bad.append(i)
            continue
        t.append(ti)
        a.append(ai)
        b.append(bi)
        v.append(vi)
    if bad:
        raise DataError(f"{len(bad)} malformed rows (first: {bad[:5]})", bad)
    if geo:
        x, y = project(a, b, geometry.center_lat, geometry.center_lon)
    else:
        x, y = np.array(a, dtype=float), np.array(b, dtype=float)
    return Readings(np.arange(1, len(t) + 1), np.array(t, dtype=float), np.asarray(x), np.asarray(y), np.array(v, dtype=float))


def write_csv(readings: Readings, path) -> None:
    """Local-coordinate CSV; floats written with ``repr`` so reloads are exact."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOCAL_HEADER)
        for i in range(len(readings)):
            w.writerow([format_timestamp(readings.t[i]), repr(float(readings.x[i])), repr(float(readings.y[i])), repr(float(readings.vwc[i]))])


# ---- stages -------------------------------------------------------------------


def filter_in_track(readings: Readings, geometry: FieldGeometry | None) -> Readings:
    if geometry is None:
        raise GeometryError("field geometry is required")
    keep = np.hypot(readings.x, readings.y) <= geometry.radius
    log.info("in-track filter kept %d of %d readings", int(keep.sum()), len(readings))
    return readings.take(np.flatnonzero(keep))


def sort_datetime(readings: Readings) -> Readings:
    return readings.take(np.argsort(readings.t, kind="stable"))


def quadrant_of(angle) -> np.ndarray:
    """Quadrant 1..4 of a polar angle; boundary angles go to the lower index
    (0 and 2 pi belong to quadrant 1)."""
    a = np.mod(np.asarray(angle, dtype=float), 2 * np.pi)
    q = np.ceil(a / HALF_PI).astype(int)
    return np.clip(np.where(q == 0, 1, q), 1, 4)


def assign_quadrant(readings: Readings) -> dict:
    q = quadrant_of(readings.angle)
    return {k: readings.take(np.flatnonzero(q == k)) for k in (1, 2, 3, 4)}


def _circular_mean(a):
    return float(np.mod(np.arctan2(np.sin(a).mean(), np.cos(a).mean()), 2 * np.pi))


def detect_sweeps(readings: Readings, epoch_length: float = 32 * 60.0, quadrant: int = 0, min_advance: float = 0.0) -> list[MeasurementBatch]:
    """Cut sorted readings into fixed windows aligned to multiples of ``epoch_length``.

    Each window yields a batch stamped at its end. A window whose mean angle
    does not move anticlockwise past the previous occupied window, and every
    empty window between the first and last reading, is flagged stationary.
    Node indices are filled in by :func:`map_to_nodes`.
    """
    if epoch_length <= 0:
        raise ValueError("epoch length must be positive")
    if len(readings) == 0:
        return []
    if np.any(np.diff(readings.t) < 0):
        raise DataError("readings must be sorted by time")
    win = np.floor(readings.t / epoch_length).astype(np.int64)
    batches = []
    prev_angle = None
    angles = readings.angle
    for w in range(int(win[0]), int(win[-1]) + 1):
        lo, hi = np.searchsorted(win, [w, w + 1])
        t_end = float((w + 1) * epoch_length)
        if lo == hi:
            batches.append(MeasurementBatch(t_end, np.zeros(0, dtype=int), np.zeros(0), quadrant, True, readings=Readings.empty()))
            continue
        sub = readings.take(np.arange(lo, hi))
        mean = _circular_mean(angles[lo:hi])
        stationary = False
        if prev_angle is not None:
            adv = (mean - prev_angle + np.pi) % (2 * np.pi) - np.pi
            stationary = adv <= min_advance
        prev_angle = mean
        batches.append(MeasurementBatch(t_end, np.zeros(0, dtype=int), sub.vwc.copy(), quadrant, stationary, readings=sub))
    return batches


def reject_outliers(batch: MeasurementBatch, soil: SoilParams) -> MeasurementBatch:
    """Keep readings within [theta_r, theta_s] of the surface soil."""
    r = batch.readings
    v = r.vwc if r is not None else batch.values
    keep = (v >= soil.theta_r) & (v <= soil.theta_s)
    n_bad = int((~keep).sum())
    if n_bad:
        log.info("epoch %s: rejected %d out-of-range readings", batch.t, n_bad)
    idx = np.flatnonzero(keep)
    if r is not None:
        return replace(batch, readings=r.take(idx), values=r.vwc[idx].copy())
    return replace(batch, values=batch.values[idx], nodes=batch.nodes[idx] if len(batch.nodes) else batch.nodes)


def map_to_nodes(batch: MeasurementBatch, grid: CylGrid) -> MeasurementBatch:
    """Snap readings to the nearest surface node; repeats on one node are averaged."""
    r = batch.readings
    if r is None or len(r) == 0:
        return replace(batch, nodes=np.zeros(0, dtype=int), values=np.zeros(0))
    nodes = grid.nearest_nodes(r.x, r.y)
    uniq, inv = np.unique(nodes, return_inverse=True)
    sums = np.bincount(inv, weights=r.vwc, minlength=len(uniq))
    counts = np.bincount(inv, minlength=len(uniq))
    return replace(batch, nodes=uniq.astype(int), values=sums / counts)


# ---- composition ----------------------------------------------------------------


def quadrant_grid(q: int, radius: float, depth: float, n_r: int, n_theta: int, n_z: int, z_ratio: float = 1.0) -> CylGrid:
    """Sector grid covering quadrant ``q`` (1..4)."""
    if q not in (1, 2, 3, 4):
        raise ValueError("quadrant must be 1..4")
    return build_grid(radius, depth, n_r, n_theta, n_z, sector=((q - 1) * HALF_PI, q * HALF_PI), z_ratio=z_ratio)


@dataclass
class PipelineReport:
    counts: dict  # stage -> surviving readings
    batches: dict  # quadrant -> list[MeasurementBatch]


def preprocess(readings: Readings, geometry: FieldGeometry, grids: dict, soil: SoilParams, epoch_length: float = 32 * 60.0) -> PipelineReport:
    """Run the six stages; ``grids`` maps quadrant id to its sector grid
    (quadrants without a grid are dropped after partitioning)."""
    counts = {"input": len(readings)}
    r = filter_in_track(readings, geometry)
    counts["in_track"] = len(r)
    r = sort_datetime(r)
    counts["sorted"] = len(r)
    parts = assign_quadrant(r)
    counts["quadrants"] = {q: len(p) for q, p in parts.items()}
    out, kept, mapped = {}, 0, 0
    for q, g in sorted(grids.items()):
        bs = detect_sweeps(parts[q], epoch_length, quadrant=q)
        bs = [reject_outliers(b, soil) for b in bs]
        kept += sum(len(b.readings) for b in bs)
        bs = [map_to_nodes(b, g) for b in bs]
        mapped += sum(len(b.nodes) for b in bs)
        out[q] = bs
    counts["in_range"] = kept
    counts["node_values"] = mapped
    return PipelineReport(counts, out)


def batch_record(b: MeasurementBatch) -> dict:
    return {
        "t": float(b.t),
        "time": format_timestamp(b.t),
        "quadrant": int(b.quadrant),
        "stationary": bool(b.stationary),
        "kind": b.kind,
        "nodes": [int(i) for i in b.nodes],
        "values": [float(v) for v in b.values],
    }


def write_batches(batches, path) -> None:
    """One JSON object per line, keys sorted, so reruns are byte-identical."""
    with open(path, "w") as fh:
        for b in batches:
            fh.write(json.dumps(batch_record(b), sort_keys=True) + "\n")


def read_batches(path) -> list[MeasurementBatch]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        out.append(
            MeasurementBatch(
                t=float(d["t"]),
                nodes=np.array(d["nodes"], dtype=int),
                values=np.array(d["values"], dtype=float),
                quadrant=int(d["quadrant"]),
                stationary=bool(d["stationary"]),
                kind=d.get("kind", "moisture_content"),
            )
        )
    return out
