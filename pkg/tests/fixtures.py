"""Synthetic pivot-sensor readings with planted defects."""

import numpy as np

from pivotfusion.pipeline import FieldGeometry, Readings
from pivotfusion.soil import CLAY_LOAM

RADIUS = 290.0
T0 = 1_560_988_800.0  # 2019-06-20T00:00:00Z


def pipeline_fixture(n=10_000, n_out=300, n_outliers=150, n_dups=200, seed=0):
    """Readings along a rotating arm, shuffled in time.

    Returns the readings, the field geometry and the planted counts.
    """
    rng = np.random.default_rng(seed)
    n_base = n - n_dups
    t = T0 + np.sort(rng.uniform(0, 2 * 86400.0, n_base))
    w = 0.022 / RADIUS * 20  # fast sweep so all quadrants are visited
    ang = w * (t - T0) + rng.normal(0, 0.01, n_base)
    r = RADIUS * np.sqrt(rng.uniform(0.0, 1.0, n_base))
    out_idx = rng.choice(n_base, n_out, replace=False)
    r[out_idx] = rng.uniform(RADIUS * 1.001, RADIUS * 1.1, n_out)
    lo, hi = CLAY_LOAM.theta_r, CLAY_LOAM.theta_s
    vwc = rng.uniform(lo + 0.01, hi - 0.01, n_base)
    rest = np.setdiff1d(np.arange(n_base), out_idx)
    bad_idx = rng.choice(rest, n_outliers, replace=False)
    vwc[bad_idx[: n_outliers // 2]] = rng.uniform(hi + 0.01, 0.9, n_outliers // 2)
    vwc[bad_idx[n_outliers // 2 :]] = rng.uniform(0.0, lo - 0.01, n_outliers - n_outliers // 2)
    clean = np.setdiff1d(rest, bad_idx)
    dup_idx = rng.choice(clean, n_dups, replace=False)
    idx = np.concatenate([np.arange(n_base), dup_idx])
    perm = rng.permutation(len(idx))  # file order is scrambled
    idx = idx[perm]
    x, y = r[idx] * np.cos(ang[idx]), r[idx] * np.sin(ang[idx])
    readings = Readings(np.arange(1, n + 1), t[idx], x, y, vwc[idx])
    planted = {"input": n, "in_track": n - n_out, "in_range": n - n_out - n_outliers}
    return readings, FieldGeometry(RADIUS), planted


def brute_node_values(readings, grids, soil, epoch_length):
    """Count distinct (quadrant, window, node) triples among valid readings,
    snapping by exhaustive search over each quadrant's surface nodes."""
    keep = np.hypot(readings.x, readings.y) <= RADIUS
    keep &= (readings.vwc >= soil.theta_r) & (readings.vwc <= soil.theta_s)
    ang = np.mod(np.arctan2(readings.y, readings.x), 2 * np.pi)
    seen = set()
    for i in np.flatnonzero(keep):
        q = 1 if ang[i] == 0 else int(np.ceil(ang[i] / (np.pi / 2)))
        g = grids[q]
        surf = g.surface_nodes()
        r, th, *_ = g.coordinates()
        d = (readings.x[i] - r[surf] * np.cos(th[surf])) ** 2 + (readings.y[i] - r[surf] * np.sin(th[surf])) ** 2
        seen.add((q, int(readings.t[i] // epoch_length), int(surf[np.argmin(d)])))
    return len(seen)
