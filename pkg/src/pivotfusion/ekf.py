"""Discrete-time extended Kalman filter over the field model.

The state is the vector of nodal pressure heads. Prediction propagates it
with the implicit one-step map and the covariance with that map's Jacobian;
updates use either moisture-content readings (observation Jacobian is the
capillary capacity of the measured node) or direct pressure heads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla

from .evaluation import ConditioningError, InnovationRecord
from .richards import StateField, time_grid
from .soil import SoilParams, capillary_capacity, water_content

log = logging.getLogger(__name__)

MOISTURE = "moisture_content"
PRESSURE = "pressure_head"
PSD_TOL = 1e-10


class CovarianceError(FloatingPointError):
    pass


class StreamError(ValueError):
    pass


@dataclass
class EkfBelief:
    x: np.ndarray
    P: np.ndarray
    t: float = 0.0

    @property
    def trace(self) -> float:
        return float(np.trace(self.P))


@dataclass
class NoiseSpec:
    """Diagonal covariances: ``q`` process (m^2) and ``r`` measurement variances."""

    q: float | np.ndarray
    r: float | np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.q) < 0) or np.any(np.asarray(self.r) < 0):
            raise ValueError("noise variances must be nonnegative")

    @classmethod
    def from_std(cls, process_std: float, measurement_std: float) -> "NoiseSpec":
        return cls(q=process_std**2, r=measurement_std**2)


@dataclass
class OutputSpec:
    kind: str
    params: SoilParams | None = None  # per-node arrays, needed for moisture readings

    def __post_init__(self):
        if self.kind not in (MOISTURE, PRESSURE):
            raise ValueError(f"unknown output kind {self.kind!r}")
        if self.kind == MOISTURE and self.params is None:
            raise ValueError("moisture outputs need soil parameters")

    def _node_params(self, nodes):
        p = self.params
        take = lambda v: np.asarray(v)[nodes] if np.ndim(v) else v  # noqa: E731
        return SoilParams(take(p.theta_s), take(p.theta_r), take(p.K_s), take(p.alpha), take(p.n))

    def observe(self, x, nodes):
        nodes = np.asarray(nodes, dtype=int)
        if self.kind == PRESSURE:
            return np.asarray(x)[nodes].copy()
        return water_content(np.asarray(x)[nodes], self._node_params(nodes))

    def slope(self, x, nodes):
        """Nonzero entries of the observation Jacobian (one per row)."""
        nodes = np.asarray(nodes, dtype=int)
        if self.kind == PRESSURE:
            return np.ones(len(nodes))
        return capillary_capacity(np.asarray(x)[nodes], self._node_params(nodes))


def initial_belief(x0, rel_std: float = 0.2, t: float = 0.0, grid=None, corr_length=None, nugget: float = 0.0, block: int = 512) -> EkfBelief:
    """Prior with standard deviation ``rel_std * |x0|`` per node.

    Without ``corr_length`` the covariance is diagonal. Otherwise node errors
    are correlated with ``exp(-d)``, ``d`` being the Euclidean separation scaled
    by ``corr_length = (horizontal, vertical)`` in metres; ``nugget`` mixes in
    an uncorrelated share.
    """
    x0 = np.asarray(x0, dtype=float)
    sd = rel_std * np.abs(x0)
    if corr_length is None:
        return EkfBelief(x0.copy(), np.diag(sd**2), t)
    if grid is None:
        raise ValueError("a correlated prior needs the grid")
    if not 0 <= nugget <= 1:
        raise ValueError("nugget must be within [0, 1]")
    lh, lz = (corr_length, corr_length) if np.isscalar(corr_length) else corr_length
    r, th, z, *_ = grid.coordinates()
    pts = np.column_stack([r * np.cos(th) / lh, r * np.sin(th) / lh, z / lz])
    n = len(x0)
    P = np.empty((n, n))
    for i in range(0, n, block):
        d = np.sqrt(np.maximum(((pts[i : i + block, None, :] - pts[None, :, :]) ** 2).sum(-1), 0.0))
        P[i : i + block] = (1 - nugget) * np.exp(-d)
    P[np.diag_indices(n)] = 1.0
    P *= sd[:, None]
    P *= sd[None, :]
    return EkfBelief(x0.copy(), P, t)


def symmetrize(P: np.ndarray, block: int = 512) -> float:
    """Average P with its transpose in place; returns the largest asymmetry seen."""
    n = P.shape[0]
    worst = 0.0
    for i in range(0, n, block):
        for j in range(i, n, block):
            a = P[i : i + block, j : j + block]
            b = P[j : j + block, i : i + block].T
            worst = max(worst, float(np.max(np.abs(a - b))))
            avg = 0.5 * (a + b)
            P[i : i + block, j : j + block] = avg
            P[j : j + block, i : i + block] = avg.T
    return worst


def check_psd(P: np.ndarray, tol: float = PSD_TOL) -> None:
    """Raise unless the smallest eigenvalue of P exceeds ``-tol``."""
    try:
        sla.cholesky(P + tol * np.eye(P.shape[0]), lower=True, check_finite=False, overwrite_a=True)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError(f"covariance has an eigenvalue below -{tol}") from exc


def _add_diag(P, q):
    P[np.diag_indices_from(P)] += q


def predict(belief: EkfBelief, forcing, dt: float, model, noise: NoiseSpec, psd: bool = False, asym_tol: float = 1e-8):
    """Propagate the belief ``dt`` seconds through ``model.propagate``.

    The belief's covariance buffer is reused.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x1, transition = model.propagate(belief.x, forcing, dt)
    P = transition.propagate(belief.P)
    scale = max(float(np.max(np.abs(np.diagonal(P)))), 1e-300)
    asym = symmetrize(P)
    if asym > asym_tol * scale:
        raise CovarianceError(f"propagated covariance asymmetric by {asym:.3g}")
    _add_diag(P, noise.q)
    if psd:
        check_psd(P)
    return EkfBelief(x1, P, belief.t + dt)


def update(belief: EkfBelief, values, nodes, output: OutputSpec, noise: NoiseSpec, joseph: bool = False, psd: bool = False, block: int = 512):
    """Measurement update; returns the posterior and the innovation record.

    The belief's covariance buffer is reused.
    """
    nodes = np.asarray(nodes, dtype=int)
    y = np.asarray(values, dtype=float)
    if y.shape != nodes.shape:
        raise ValueError("values and nodes must have equal length")
    x, P = belief.x, belief.P
    c = output.slope(x, nodes)
    y_hat = output.observe(x, nodes)
    PHt = P[:, nodes] * c[None, :]
    HPHt = c[:, None] * PHt[nodes, :]
    r = np.broadcast_to(np.asarray(noise.r, dtype=float), y.shape)
    E = HPHt + np.diag(r)
    E = 0.5 * (E + E.T)
    try:
        cf = sla.cho_factor(E, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("innovation covariance is not positive definite") from exc
    e = y - y_hat
    K = sla.cho_solve(cf, PHt.T).T
    x_new = x + K @ e
    n = P.shape[0]
    if joseph:
        # (I-KH)P(I-KH)^T + K R K^T, expanded into rank-m terms
        KHPHt = K @ HPHt
        for i in range(0, n, block):
            sl = slice(i, i + block)
            P[sl] += -K[sl] @ PHt.T - PHt[sl] @ K.T + KHPHt[sl] @ K.T + (K[sl] * r) @ K.T
    else:
        for i in range(0, n, block):
            sl = slice(i, i + block)
            P[sl] -= K[sl] @ PHt.T
    symmetrize(P)
    if psd:
        check_psd(P)
    rec = InnovationRecord(belief.t, e, E, nodes)
    return EkfBelief(x_new, P, belief.t), rec


# ---------------------------------------------------------------------------
# linear surrogate sharing the model interface
# ---------------------------------------------------------------------------


@dataclass
class LinearTransition:
    A: np.ndarray

    def propagate(self, P):
        P[...] = self.A @ P @ self.A.T
        return P

    def dense(self):
        return self.A


@dataclass
class LinearModel:
    """x_{k+1} = A x_k, independent of forcing and dt."""

    A: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))

    def propagate(self, x, forcing, dt):
        return self.A @ np.asarray(x, dtype=float), LinearTransition(self.A)

    def step(self, x, forcing, dt):
        return self.A @ np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# sequential fusion
# ---------------------------------------------------------------------------


@dataclass
class Snapshot:
    t: float
    phase: str
    trace: float
    x: np.ndarray | None = None


@dataclass
class FusionResult:
    snapshots: list = field(default_factory=list)
    innovations: list = field(default_factory=list)
    posterior: dict = field(default_factory=dict)  # t -> x after each update
    states: dict = field(default_factory=dict)  # t -> x at every step end
    belief: EkfBelief | None = None

    def state_at(self, t):
        return self.states[t]


def run_fusion(
    belief0: EkfBelief,
    batches: Iterable,
    schedule,
    model,
    noise: NoiseSpec,
    output: OutputSpec,
    horizon: float | None = None,
    max_dt: float = 3600.0,
    psd: bool = False,
    joseph: bool = False,
    keep_states: bool = True,
    extra_times: Sequence[float] = (),
    step_hook=None,
) -> FusionResult:
    """Alternate prediction to each measurement epoch with an update.

    ``batches`` is a time-sorted iterable with ``t``, ``nodes``, ``values`` and
    an optional ``stationary`` flag (flagged batches are predicted through but
    not assimilated). Without batches the filter reduces to pure simulation on
    the same step grid as :meth:`FieldModel.simulate`.
    """
    batches = list(batches)
    times = [b.t for b in batches]
    if any(b > a for a, b in zip(times[1:], times[:-1])):
        raise StreamError("measurement timestamps are out of order")
    by_time = {}
    for b in batches:
        by_time.setdefault(b.t, []).append(b)
    t0 = belief0.t
    t_end = t0 + horizon if horizon is not None else (max(times) if times else t0)
    marks = [t for t in times if t0 < t <= t_end] + [t for t in extra_times if t0 < t <= t_end]
    steps = time_grid(t0, t_end, marks, schedule.breakpoints(t0, t_end), max_dt)
    res = FusionResult()
    belief = EkfBelief(np.array(belief0.x, dtype=float), np.array(belief0.P, dtype=float), t0)
    res.snapshots.append(Snapshot(t0, "init", belief.trace, belief.x.copy() if keep_states else None))
    if keep_states:
        res.states[t0] = belief.x.copy()
    for ta, tb in zip(steps[:-1], steps[1:]):
        belief = predict(belief, schedule.forcing(ta, tb), tb - ta, model, noise, psd=psd)
        belief.t = tb
        res.snapshots.append(Snapshot(tb, "predict", belief.trace))
        for b in by_time.get(tb, []):
            if getattr(b, "stationary", False) or len(b.nodes) == 0:
                continue
            belief, rec = update(belief, b.values, b.nodes, output, noise, joseph=joseph, psd=psd)
            res.innovations.append(rec)
            res.snapshots.append(Snapshot(tb, "update", belief.trace))
            res.posterior[tb] = belief.x.copy()
        if keep_states:
            res.states[tb] = belief.x.copy()
        if step_hook is not None:
            step_hook(belief)
    res.belief = belief
    return res


def as_state(belief: EkfBelief) -> StateField:
    return StateField(belief.x.copy(), belief.t)
