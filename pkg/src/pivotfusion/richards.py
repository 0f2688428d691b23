"""Method-of-lines cylindrical Richards solver (the field model).

The spatial operator is written as a sum of face fluxes on the total head
``H = h + z``; every interior face carries ``T * K_face * (H_b - H_a)`` with the
arithmetic-mean face conductivity. Dividing the net inflow of a node by its
control volume ``w`` reproduces the node-centred stencil exactly, including the
shared axis column. Time stepping is backward Euler in mixed form
(``theta(h1) - theta(h0) = dt * q(h1)``), which conserves water to round-off.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import CylGrid
from .soil import (
    C_FLOOR,
    CropWeather,
    FeddesParams,
    SoilParams,
    capillary_capacity,
    hydraulic_conductivity,
    sink_rate,
    water_content,
)

log = logging.getLogger(__name__)

FD_DELTA = 1e-6


class NumericalBlowup(FloatingPointError):
    def __init__(self, msg, node=None):
        super().__init__(msg)
        self.node = node


class StiffnessError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SoilLayer:
    params: SoilParams
    bottom_depth: float  # depth below the surface of the layer's lower edge, m


def node_soil_params(grid: CylGrid, soils) -> SoilParams:
    """Per-node parameter arrays.

    ``soils`` is a single :class:`SoilParams` or a sequence of :class:`SoilLayer`
    ordered from the surface down; a node belongs to the layer containing its
    centre, and the last layer extends to the bottom of the grid.
    """
    _, _, z, *_ = grid.coordinates()
    if isinstance(soils, SoilParams):
        layers = [SoilLayer(soils, grid.depth)]
    else:
        layers = list(soils)
        if not layers:
            raise ValueError("empty soil layer table")
    depth = grid.depth - z
    which = np.full(depth.shape, len(layers) - 1)
    for li in range(len(layers) - 2, -1, -1):
        which[depth <= layers[li].bottom_depth] = li
    pick = lambda name: np.array([getattr(layers[i].params, name) for i in which])  # noqa: E731
    return SoilParams(
        theta_s=pick("theta_s"), theta_r=pick("theta_r"), K_s=pick("K_s"), alpha=pick("alpha"), n=pick("n")
    )


@dataclass
class BoundarySpec:
    """Irrigation flux per surface node (m/s, ordered as ``grid.surface_nodes()``)
    and the bottom condition: unit total-head gradient or a closed base."""

    u_irr: np.ndarray | float = 0.0
    bottom: str = "free_drainage"  # or "no_flux"

    def __post_init__(self):
        if np.any(np.asarray(self.u_irr) < 0):
            raise ValueError("irrigation flux must be nonnegative")
        if self.bottom not in ("free_drainage", "no_flux"):
            raise ValueError(f"unknown bottom condition {self.bottom!r}")


@dataclass
class ForcingInputs:
    cw: CropWeather | None = None
    feddes: FeddesParams = field(default_factory=FeddesParams)
    boundary: BoundarySpec = field(default_factory=BoundarySpec)
    optimum_uptake: bool = True


@dataclass
class StateField:
    h: np.ndarray
    t: float = 0.0


class Schedule(Protocol):
    def forcing(self, t0: float, t1: float) -> ForcingInputs: ...

    def breakpoints(self, t0: float, t1: float) -> list[float]: ...


@dataclass
class ConstantSchedule:
    value: ForcingInputs = field(default_factory=ForcingInputs)

    def forcing(self, t0, t1):
        return self.value

    def breakpoints(self, t0, t1):
        return []


# ---------------------------------------------------------------------------
# covariance transitions
# ---------------------------------------------------------------------------


class ColumnSplitSolver:
    """Solve ``J X = R`` for many right-hand sides.

    J is split into its vertical-column blocks (contiguous runs of ``n_z``
    nodes, inverted exactly in batch) and the lateral remainder, then iterated
    as block Jacobi. Lateral couplings are weak at field scale, so a few sweeps
    reach round-off; a sparse LU takes over if the sweeps stall.
    """

    def __init__(self, J: sp.csr_matrix, n_z: int, rtol: float = 1e-13, max_sweeps: int = 60):
        n = J.shape[0]
        self.J, self.n_z, self.rtol, self.max_sweeps = J, n_z, rtol, max_sweeps
        nb = n // n_z
        coo = J.tocoo()
        same = (coo.row // n_z) == (coo.col // n_z)
        blocks = np.zeros((nb, n_z, n_z))
        blocks[coo.row[same] // n_z, coo.row[same] % n_z, coo.col[same] % n_z] = coo.data[same]
        self.binv = np.linalg.inv(blocks)
        self.E = sp.csr_matrix((coo.data[~same], (coo.row[~same], coo.col[~same])), shape=J.shape)
        self.E.eliminate_zeros()
        self._lu = None

    def _block_solve(self, R, out=None):
        nb, nz = self.binv.shape[0], self.n_z
        res = np.matmul(self.binv, R.reshape(nb, nz, -1), out=None if out is None else out.reshape(nb, nz, -1))
        return res.reshape(R.shape)

    def solve(self, R: np.ndarray) -> np.ndarray:
        R = np.ascontiguousarray(R)
        X = self._block_solve(R)
        if self.E.nnz == 0:
            return X
        Xn = np.empty_like(X)
        for _ in range(self.max_sweeps):
            tmp = self.E @ X
            np.subtract(R, tmp, out=tmp)
            self._block_solve(tmp, out=Xn)
            np.subtract(Xn, X, out=tmp)
            np.abs(tmp, out=tmp)
            delta = tmp.max()
            X, Xn = Xn, X
            if delta <= self.rtol * max(np.abs(X).max(), 1e-300):
                return X
        log.debug("block-Jacobi sweeps stalled, using sparse LU")
        if self._lu is None:
            self._lu = spla.splu(self.J.tocsc())
        return self._lu.solve(R)


@dataclass
class FieldTransition:
    """Linearized one-step map, stored as backward-Euler factors.

    For each sub-step the derivative of the new state with respect to the old
    one is ``J^{-1} diag(c0)`` with J the residual Jacobian at the new state.
    """

    factors: list = field(default_factory=list)  # [(J csr, c0)]
    n_z: int = 1

    def propagate(self, P: np.ndarray, block: int = 512) -> np.ndarray:
        """Return ``A P A^T`` for symmetric P; the buffer of P is reused."""
        if not self.factors:
            return P
        n = P.shape[0]
        Y = np.empty_like(P)
        for J, c0 in self.factors:
            solver = ColumnSplitSolver(J, self.n_z)
            for c in range(0, n, block):
                Y[:, c : c + block] = solver.solve(c0[:, None] * P[:, c : c + block])
            # J^{-1} diag(c0) Y^T, written back into P
            for r in range(0, n, block):
                P[:, r : r + block] = solver.solve(Y[r : r + block, :].T * c0[:, None])
        return P

    def apply(self, v: np.ndarray) -> np.ndarray:
        """A @ v for a vector or matrix of columns."""
        x = np.array(v, dtype=float)
        for J, c0 in self.factors:
            x = spla.spsolve(J.tocsc(), c0[:, None] * x if x.ndim == 2 else c0 * x)
            if sp.issparse(x):
                x = x.toarray()
        return x

    def dense(self) -> np.ndarray:
        n = self.factors[0][0].shape[0]
        return np.asarray(self.apply(np.eye(n)))


# ---------------------------------------------------------------------------
# the field model
# ---------------------------------------------------------------------------


class FieldModel:
    """Discretized cylindrical Richards equation on a fixed grid and soil map."""

    def __init__(
        self,
        grid: CylGrid,
        soils,
        newton_tol: float = 1e-10,
        step_tol: float = 1e-6,
        max_newton: int = 25,
        dt_min: float = 1e-3,
    ):
        self.grid = grid
        self.params = node_soil_params(grid, soils)
        self.newton_tol = newton_tol
        self.step_tol = step_tol
        self.max_newton = max_newton
        self.dt_min = dt_min
        self._build_geometry()

    # ---- geometry -----------------------------------------------------------
    def _build_geometry(self):
        g = self.grid
        r, th, z, e_r, e_t, k = g.coordinates()
        self.z = z
        self.depth = g.depth - z
        dri, dzk, dth = g.dr_i, g.dz_k, g.dtheta
        n = g.size
        ring = e_r >= 0
        area = np.empty(n)
        area[ring] = r[ring] * dri[e_r[ring]] * dth
        r0 = g.r_nodes[0]
        area[~ring] = np.pi * r0**2 / 4.0
        self.area = area
        self.w = area * dzk[k]

        fa, fb, ft = [], [], []
        idx = lambda a, b, c: (a * g.n_theta + b) * g.n_z + c  # noqa: E731
        ER, ET, K = np.meshgrid(np.arange(g.n_r), np.arange(g.n_theta), np.arange(g.n_z), indexing="ij")
        # radial faces
        if g.n_r > 1:
            a_r = ER[:-1]
            rh = 0.5 * (g.r_nodes[a_r] + g.r_nodes[a_r + 1])
            T = dth * dzk[K[:-1]] * rh / g.dr_east[a_r]
            fa.append(idx(ER[:-1], ET[:-1], K[:-1]).ravel())
            fb.append(idx(ER[:-1] + 1, ET[:-1], K[:-1]).ravel())
            ft.append(T.ravel())
        # azimuthal faces
        jmax = g.n_theta if g.full_circle else g.n_theta - 1
        sl = (slice(None), slice(0, jmax), slice(None))
        Ea, Ta, Ka = ER[sl], ET[sl], K[sl]
        T = dri[Ea] * dzk[Ka] / (g.r_nodes[Ea] * dth)
        fa.append(idx(Ea, Ta, Ka).ravel())
        fb.append(idx(Ea, (Ta + 1) % g.n_theta, Ka).ravel())
        ft.append(T.ravel())
        # vertical faces (ring)
        sl = (slice(None), slice(None), slice(0, g.n_z - 1))
        Ev, Tv, Kv = ER[sl], ET[sl], K[sl]
        T = g.r_nodes[Ev] * dri[Ev] * dth / g.dz_north[Kv]
        fa.append(idx(Ev, Tv, Kv).ravel())
        fb.append(idx(Ev, Tv, Kv + 1).ravel())
        ft.append(T.ravel())
        if g.axis:
            ks = np.arange(g.n_z)
            # axis <-> first ring, one face per azimuth
            for j in range(g.n_theta):
                fa.append(g.n_ring + ks)
                fb.append(idx(0, j, ks))
                ft.append(0.5 * dth * dzk[ks])
            fa.append(g.n_ring + ks[:-1])
            fb.append(g.n_ring + ks[1:])
            ft.append(area[g.n_ring] / g.dz_north[ks[:-1]])
        self.fa = np.concatenate(fa).astype(np.intp)
        self.fb = np.concatenate(fb).astype(np.intp)
        self.ft = np.concatenate(ft)
        self.surface = g.surface_nodes()
        self.bottom = g.layer_nodes(0)
        n_f = len(self.fa)
        rows = np.concatenate([self.fa, self.fb, self.fa, self.fb, np.arange(n)])
        cols = np.concatenate([self.fa, self.fb, self.fb, self.fa, np.arange(n)])
        pattern = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        pattern.sum_duplicates()
        self.pattern = pattern
        self._n_faces = n_f
        self._colors = None

    @property
    def size(self) -> int:
        return self.grid.size

    # ---- closures -------------------------------------------------------------
    def theta(self, h):
        return water_content(h, self.params)

    def conductivity(self, h):
        return hydraulic_conductivity(h, self.params)

    def capacity(self, h):
        return capillary_capacity(h, self.params, floor=C_FLOOR)

    def total_water(self, h) -> float:
        """Water volume sum(theta * w) in m^3."""
        return float(np.sum(self.theta(h) * self.w))

    # ---- right-hand side -------------------------------------------------------
    def _top_flux(self, forcing: ForcingInputs):
        u = np.broadcast_to(np.asarray(forcing.boundary.u_irr, dtype=float), self.surface.shape)
        return u

    def sink(self, h, forcing: ForcingInputs):
        if forcing.cw is None:
            return np.zeros_like(h)
        return sink_rate(h, self.depth, forcing.feddes, forcing.cw, forcing.optimum_uptake)

    def net_inflow(self, h, forcing: ForcingInputs, K=None):
        """Volumetric inflow (m^3/s) per node from faces and boundaries."""
        if K is None:
            K = self.conductivity(h)
        H = h + self.z
        f = self.ft * 0.5 * (K[self.fa] + K[self.fb]) * (H[self.fb] - H[self.fa])
        n = h.shape[0]
        F = np.bincount(self.fa, weights=f, minlength=n) - np.bincount(self.fb, weights=f, minlength=n)
        F[self.surface] += self._top_flux(forcing) * self.area[self.surface]
        if forcing.boundary.bottom == "free_drainage":
            F[self.bottom] -= K[self.bottom] * self.area[self.bottom]
        return F

    def q(self, h, forcing: ForcingInputs):
        """Rate of change of water content (1/s)."""
        return self.net_inflow(h, forcing) / self.w - self.sink(h, forcing)

    def rhs(self, h, forcing: ForcingInputs):
        """dh/dt (m/s)."""
        h = np.asarray(h, dtype=float)
        out = self.q(h, forcing) / self.capacity(h)
        bad = ~np.isfinite(out)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NumericalBlowup(f"non-finite right-hand side at node {i}", node=i)
        return out

    # ---- Jacobians of q -----------------------------------------------------------
    def jacobian(self, h, forcing: ForcingInputs) -> sp.csr_matrix:
        """dq/dh, assembled face by face; closure slopes by one-sided differences."""
        n = h.shape[0]
        K = self.conductivity(h)
        dK = (self.conductivity(h + FD_DELTA) - K) / FD_DELTA
        H = h + self.z
        a, b, T = self.fa, self.fb, self.ft
        dH = H[b] - H[a]
        Kf = 0.5 * (K[a] + K[b])
        da = T * (0.5 * dK[a] * dH - Kf)
        db = T * (0.5 * dK[b] * dH + Kf)
        diag = np.bincount(a, weights=da, minlength=n) - np.bincount(b, weights=db, minlength=n)
        if forcing.boundary.bottom == "free_drainage":
            diag[self.bottom] -= dK[self.bottom] * self.area[self.bottom]
        rows = np.concatenate([a, b, np.arange(n)])
        cols = np.concatenate([b, a, np.arange(n)])
        vals = np.concatenate([db, -da, diag])
        J = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        J = sp.diags(1.0 / self.w) @ J
        if forcing.cw is not None and not forcing.optimum_uptake:
            ds = (self.sink(h + FD_DELTA, forcing) - self.sink(h, forcing)) / FD_DELTA
            J = J - sp.diags(ds)
        return J.tocsr()

    def colors(self) -> np.ndarray:
        """Greedy column grouping: columns sharing a color touch disjoint rows."""
        if self._colors is None:
            S = self.pattern
            conflict = (S.T @ S).tolil()
            n = S.shape[0]
            colors = -np.ones(n, dtype=int)
            for j in range(n):
                used = {colors[i] for i in conflict.rows[j] if colors[i] >= 0}
                c = 0
                while c in used:
                    c += 1
                colors[j] = c
            self._colors = colors
        return self._colors

    def jacobian_fd(self, h, forcing: ForcingInputs, scheme: str = "forward", delta: float = FD_DELTA):
        """dq/dh by grouped finite differences over the stencil sparsity."""
        colors = self.colors()
        S = self.pattern.tocoo()
        rows, cols = S.row, S.col
        vals = np.zeros(len(rows))
        base = self.q(h, forcing) if scheme == "forward" else None
        for c in range(colors.max() + 1):
            mask = colors == c
            e = mask.astype(float) * delta
            if scheme == "forward":
                d = (self.q(h + e, forcing) - base) / delta
            elif scheme == "central":
                d = (self.q(h + e, forcing) - self.q(h - e, forcing)) / (2 * delta)
            else:
                raise ValueError(scheme)
            sel = mask[cols]
            vals[sel] = d[rows[sel]]
        return sp.csr_matrix((vals, (rows, cols)), shape=S.shape)

    # ---- time stepping ------------------------------------------------------------
    def _newton(self, h0, forcing, dt):
        th0 = self.theta(h0)
        h = h0.copy()

        def resid(x):
            return self.theta(x) - th0 - dt * self.q(x, forcing)

        G = resid(h)
        gnorm = np.max(np.abs(G))
        dh_norm = np.inf
        for _ in range(self.max_newton):
            if not np.isfinite(gnorm):
                return None
            if gnorm / dt < self.newton_tol and (dh_norm < self.step_tol or gnorm < 1e-15):
                return h
            J = (sp.diags(self.capacity(h)) - dt * self.jacobian(h, forcing)).tocsc()
            try:
                dh = spla.spsolve(J, -G)
            except RuntimeError:
                return None
            if not np.all(np.isfinite(dh)):
                return None
            lam = 1.0
            while True:
                h_try = h + lam * dh
                G_try = resid(h_try)
                g_try = np.max(np.abs(G_try))
                if g_try < gnorm or lam < 1 / 64:
                    break
                lam *= 0.5
            h, G, gnorm = h_try, G_try, g_try
            dh_norm = lam * np.max(np.abs(dh))
        if np.isfinite(gnorm) and gnorm / dt < self.newton_tol:
            return h
        return None

    def _advance(self, h, forcing, dt, factors):
        h1 = self._newton(h, forcing, dt)
        if h1 is None:
            if dt / 2 < self.dt_min:
                raise StiffnessError(
                    f"Newton failed with dt={dt:.3g} s below dt_min={self.dt_min} s; "
                    f"h range [{h.min():.4g}, {h.max():.4g}] m"
                )
            log.debug("Newton failed at dt=%.3g s, halving", dt)
            h = self._advance(h, forcing, dt / 2, factors)
            return self._advance(h, forcing, dt / 2, factors)
        if factors is not None:
            J = (sp.diags(self.capacity(h1)) - dt * self.jacobian(h1, forcing)).tocsr()
            factors.append((J, self.capacity(h)))
        return h1

    def step(self, h, forcing: ForcingInputs, dt: float, with_transition: bool = False):
        """Advance by ``dt`` seconds (implicit Euler, Newton, halving fallback)."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        h = np.asarray(h, dtype=float)
        factors = [] if with_transition else None
        h1 = self._advance(h, forcing, dt, factors)
        if with_transition:
            return h1, FieldTransition(factors, self.grid.n_z)
        return h1

    def propagate(self, x, forcing: ForcingInputs, dt: float):
        """Filter-facing one-step map: next state and its linearization."""
        return self.step(x, forcing, dt, with_transition=True)

    def one_step_jacobian_fd(self, h, forcing, dt, scheme="forward", delta=FD_DELTA):
        """Dense d(step)/dh by perturbing one column at a time (small grids only)."""
        n = h.shape[0]
        A = np.empty((n, n))
        base = self.step(h, forcing, dt) if scheme == "forward" else None
        for j in range(n):
            e = np.zeros(n)
            e[j] = delta
            if scheme == "forward":
                A[:, j] = (self.step(h + e, forcing, dt) - base) / delta
            else:
                A[:, j] = (self.step(h + e, forcing, dt) - self.step(h - e, forcing, dt)) / (2 * delta)
        return A

    # ---- driving -------------------------------------------------------------------
    def simulate(
        self,
        state0: StateField,
        schedule: Schedule,
        horizon: float,
        output_times: Sequence[float] | None = None,
        max_dt: float = 3600.0,
        callback: Callable | None = None,
    ) -> list[StateField]:
        """Integrate to ``state0.t + horizon``; returns the states at ``output_times``
        (default: the final time only)."""
        t0 = state0.t
        t1 = t0 + horizon
        outs = sorted(set(output_times)) if output_times is not None else [t1]
        grid = time_grid(t0, t1, outs, schedule.breakpoints(t0, t1), max_dt)
        h = np.array(state0.h, dtype=float)
        traj = [StateField(h.copy(), t0)] if outs and np.isclose(outs[0], t0) else []
        want = set(outs)
        for ta, tb in zip(grid[:-1], grid[1:]):
            h = self.step(h, schedule.forcing(ta, tb), tb - ta)
            if callback is not None:
                h = callback(tb, h)
            if tb in want:
                traj.append(StateField(h.copy(), tb))
        return traj


def time_grid(t0, t1, marks, breakpoints, max_dt):
    """Sorted step boundaries covering [t0, t1] with no step longer than max_dt."""
    pts = {float(t0), float(t1)}
    pts.update(float(t) for t in marks if t0 <= t <= t1)
    pts.update(float(t) for t in breakpoints if t0 < t < t1)
    pts = sorted(pts)
    out = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        if b - a <= 1e-9:
            continue
        m = int(np.ceil((b - a) / max_dt - 1e-12))
        out.extend(a + (b - a) * np.arange(1, m) / m)
        out.append(b)
    return out


def hydrostatic_state(model: FieldModel, c: float) -> np.ndarray:
    """h = c - z profile (zero total-head gradient everywhere)."""
    return c - model.z
