"""Filter performance checks: NIS consistency, covariance trace, cross-validation."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq
from scipy.special import gammainc

log = logging.getLogger(__name__)


class ConditioningError(np.linalg.LinAlgError):
    pass


@dataclass
class InnovationRecord:
    t: float
    e: np.ndarray  # innovation y - H(x_prior)
    E: np.ndarray  # innovation covariance H P H^T + R
    nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def m(self) -> int:
        return len(self.e)


@dataclass
class ErrorMap:
    layer: int
    t: float
    nodes: np.ndarray
    errors: np.ndarray  # |y - y_hat| >= 0


def chi2_quantile(p: float, dof: int) -> float:
    """Inverse CDF of the chi-square distribution via the regularized lower
    incomplete gamma function."""
    if not 0 < p < 1:
        raise ValueError("p must be in (0, 1)")
    k = dof / 2.0
    f = lambda x: gammainc(k, x / 2.0) - p  # noqa: E731
    hi = max(2.0 * dof, 10.0)
    while f(hi) < 0:
        hi *= 2
    return brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-15, maxiter=500)


def nis(record: InnovationRecord, alpha: float = 0.05, rcond_min: float = 1e-12):
    """Normalized innovation squared e^T E^-1 e, its chi-square threshold and pass flag."""
    E = np.atleast_2d(record.E)
    e = np.atleast_1d(record.e)
    if e.size == 0:
        raise ValueError("empty innovation")
    if not np.all(np.isfinite(E)):
        raise ConditioningError("innovation covariance has non-finite entries")
    with np.errstate(all="ignore"):
        rc = np.linalg.cond(E, 1)
    if not np.isfinite(rc) or 1.0 / rc < rcond_min:
        raise ConditioningError(f"innovation covariance badly conditioned (cond={rc:.3g})")
    lu, piv = sla.lu_factor(E)
    omega2 = float(e @ sla.lu_solve((lu, piv), e))
    threshold = chi2_quantile(1 - alpha, e.size)
    return omega2, threshold, omega2 < threshold


@dataclass
class TraceSeries:
    t: np.ndarray
    trace: np.ndarray
    phase: list  # "init" | "predict" | "update"

    def update_drops(self) -> np.ndarray:
        """trace before minus trace after each update."""
        idx = [i for i, ph in enumerate(self.phase) if ph == "update" and i > 0]
        return np.array([self.trace[i - 1] - self.trace[i] for i in idx])


def trace_series(snapshots) -> TraceSeries:
    """``snapshots`` yields objects with ``t``, ``phase`` and either ``trace`` or ``P``."""
    ts, tr, ph = [], [], []
    for s in snapshots:
        ts.append(s.t)
        tr.append(s.trace if getattr(s, "trace", None) is not None else float(np.trace(s.P)))
        ph.append(s.phase)
    return TraceSeries(np.array(ts), np.array(tr), ph)


def split_train_validation(batch, ratio: float = 0.8, seed: int = 0):
    """Random disjoint split of a batch's readings; returns (train, validation).

    ``batch`` needs ``nodes`` and ``values`` arrays and a ``replace`` method
    (dataclasses.replace-compatible).
    """
    from dataclasses import replace

    n = len(batch.nodes)
    if n == 0:
        raise ValueError("cannot split an empty batch")
    if not 0 <= ratio <= 1:
        raise ValueError("ratio must be within [0, 1]")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(round(ratio * n))
    tr, va = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return (
        replace(batch, nodes=batch.nodes[tr], values=batch.values[tr]),
        replace(batch, nodes=batch.nodes[va], values=batch.values[va]),
    )


@dataclass
class DayStats:
    day: int
    mae: float
    max_error: float
    frac_below: float
    count: int


@dataclass
class CrossValidation:
    days: dict
    maps: list
    threshold: float

    def day(self, d: int) -> DayStats:
        return self.days[d]


def crossvalidate(estimates, validation, observe, layer_of, threshold: float = 0.06, day_length: float = 86400.0):
    """Compare withheld readings with filter estimates at the same nodes and times.

    ``estimates`` maps time -> state vector, ``validation`` is an iterable of
    batches (``t``, ``nodes``, ``values``), ``observe(x, nodes)`` converts a
    state to predicted readings and ``layer_of(nodes)`` gives the depth layer.
    """
    per_day = defaultdict(list)
    maps = []
    for b in validation:
        if len(b.nodes) == 0:
            continue
        x = estimates.get(b.t)
        if x is None:
            log.warning("no estimate at t=%s; validation batch skipped", b.t)
            continue
        err = np.abs(np.asarray(b.values) - observe(x, b.nodes))
        per_day[int(b.t // day_length)].append(err)
        layers = layer_of(b.nodes)
        for k in np.unique(layers):
            sel = layers == k
            maps.append(ErrorMap(int(k), b.t, b.nodes[sel], err[sel]))
    days = {}
    for d, errs in sorted(per_day.items()):
        e = np.concatenate(errs)
        days[d] = DayStats(d, float(e.mean()), float(e.max()), float(np.mean(e < threshold)), int(e.size))
    return CrossValidation(days, maps, threshold)
