"""Cylindrical (r, theta, z) discretization of a pivot field or a sector of it.

Nodes sit at compartment centres. The flat index runs z fastest, then theta,
then r: ``i = (e_r * n_theta + e_theta) * n_z + k``. ``k = 0`` is the bottom
layer (z increases upward, surface at ``z = depth``). An optional axis column
(one node per layer, shared by every azimuth) is appended after the ring nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    pass


class OutOfTrackError(ValueError):
    """A planar position lies outside the pivot's circular track."""


@dataclass(frozen=True)
class NodeIndex:
    e_r: int
    e_theta: int
    k: int


@dataclass(frozen=True, eq=False)
class CylGrid:
    radius: float
    depth: float
    n_r: int
    n_theta: int
    n_z: int
    sector: tuple[float, float] | None = None  # None means the full circle
    axis: bool = False
    z_ratio: float = 1.0
    r_nodes: np.ndarray = field(init=False, repr=False)
    theta_nodes: np.ndarray = field(init=False, repr=False)
    z_nodes: np.ndarray = field(init=False, repr=False)
    dz_cells: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        errs = []
        if self.radius <= 0 or self.depth <= 0:
            errs.append("radius and depth must be positive")
        if min(self.n_r, self.n_theta, self.n_z) < 2:
            errs.append("need at least 2 nodes per direction")
        if self.z_ratio <= 0:
            errs.append("z_ratio must be positive")
        if self.sector is not None:
            t1, t2 = self.sector
            if not (t2 > t1 and t2 - t1 <= 2 * np.pi):
                errs.append("sector must satisfy theta1 < theta2 <= theta1 + 2 pi")
            if self.axis:
                errs.append("sector grids never carry an axis column")
        if errs:
            raise GridError("; ".join(errs))

        dr = self.radius / self.n_r
        r = (np.arange(self.n_r) + 0.5) * dr
        t0, span = (0.0, 2 * np.pi) if self.sector is None else (self.sector[0], self.sector[1] - self.sector[0])
        dth = span / self.n_theta
        th = t0 + (np.arange(self.n_theta) + 0.5) * dth
        # layer thicknesses from the surface downward, geometric grading
        thick = self.z_ratio ** np.arange(self.n_z)
        thick = thick / thick.sum() * self.depth
        tops = self.depth - np.concatenate([[0.0], np.cumsum(thick)[:-1]])
        centres = tops - thick / 2
        order = np.argsort(centres)  # bottom first
        object.__setattr__(self, "r_nodes", r)
        object.__setattr__(self, "theta_nodes", th)
        object.__setattr__(self, "z_nodes", centres[order])
        object.__setattr__(self, "dz_cells", thick[order])

    # ---- sizes -------------------------------------------------------------
    @property
    def full_circle(self) -> bool:
        return self.sector is None

    @property
    def n_ring(self) -> int:
        return self.n_r * self.n_theta * self.n_z

    @property
    def size(self) -> int:
        return self.n_ring + (self.n_z if self.axis else 0)

    @property
    def theta_span(self) -> float:
        return 2 * np.pi if self.sector is None else self.sector[1] - self.sector[0]

    @property
    def theta_start(self) -> float:
        return 0.0 if self.sector is None else self.sector[0]

    @property
    def dtheta(self) -> float:
        return self.theta_span / self.n_theta

    # ---- spacings (ghost nodes mirrored across the domain boundary) ---------
    @property
    def dr_east(self):
        r = self.r_nodes
        return np.append(np.diff(r), 2 * (self.radius - r[-1]))

    @property
    def dr_west(self):
        r = self.r_nodes
        first = r[0] if self.axis else 2 * r[0]
        return np.concatenate([[first], np.diff(r)])

    @property
    def dr_i(self):
        return 0.5 * (self.dr_east + self.dr_west)

    @property
    def dz_north(self):
        z = self.z_nodes
        return np.append(np.diff(z), 2 * (self.depth - z[-1]))

    @property
    def dz_south(self):
        z = self.z_nodes
        return np.concatenate([[2 * z[0]], np.diff(z)])

    @property
    def dz_k(self):
        return 0.5 * (self.dz_north + self.dz_south)

    # ---- indexing ------------------------------------------------------------
    def node_index(self, e_r: int, e_theta: int, k: int) -> int:
        if not (0 <= e_r < self.n_r and 0 <= e_theta < self.n_theta and 0 <= k < self.n_z):
            raise IndexError(f"node ({e_r}, {e_theta}, {k}) outside grid")
        return (e_r * self.n_theta + e_theta) * self.n_z + k

    def axis_index(self, k: int) -> int:
        if not self.axis:
            raise IndexError("grid has no axis column")
        if not 0 <= k < self.n_z:
            raise IndexError(f"layer {k} outside grid")
        return self.n_ring + k

    def unravel(self, i: int) -> NodeIndex | tuple[None, None, int]:
        """Inverse of :meth:`node_index`; axis nodes come back as ``(None, None, k)``."""
        if not 0 <= i < self.size:
            raise IndexError(f"flat index {i} outside grid of size {self.size}")
        if i >= self.n_ring:
            return (None, None, i - self.n_ring)
        e_r, rem = divmod(i, self.n_theta * self.n_z)
        e_t, k = divmod(rem, self.n_z)
        return NodeIndex(e_r, e_t, k)

    def node_coordinates(self, i: int) -> tuple[float, float, float]:
        idx = self.unravel(i)
        if isinstance(idx, tuple):
            return 0.0, 0.0, float(self.z_nodes[idx[2]])
        return float(self.r_nodes[idx.e_r]), float(self.theta_nodes[idx.e_theta]), float(self.z_nodes[idx.k])

    def coordinates(self):
        """Per-node (r, theta, z, e_r, e_theta, k) arrays; axis nodes get e_r = e_theta = -1."""
        e_r, e_t, k = np.meshgrid(np.arange(self.n_r), np.arange(self.n_theta), np.arange(self.n_z), indexing="ij")
        e_r, e_t, k = e_r.ravel(), e_t.ravel(), k.ravel()
        r, th, z = self.r_nodes[e_r], self.theta_nodes[e_t], self.z_nodes[k]
        if self.axis:
            ks = np.arange(self.n_z)
            neg = -np.ones(self.n_z, dtype=int)
            r = np.concatenate([r, np.zeros(self.n_z)])
            th = np.concatenate([th, np.zeros(self.n_z)])
            z = np.concatenate([z, self.z_nodes])
            e_r, e_t, k = np.concatenate([e_r, neg]), np.concatenate([e_t, neg]), np.concatenate([k, ks])
        return r, th, z, e_r, e_t, k

    def layer_nodes(self, k: int) -> np.ndarray:
        """Flat indices of all nodes in layer ``k`` (ascending)."""
        ring = np.arange(self.n_r * self.n_theta) * self.n_z + k
        if self.axis:
            ring = np.append(ring, self.n_ring + k)
        return ring

    def surface_nodes(self) -> np.ndarray:
        return self.layer_nodes(self.n_z - 1)

    def sector_of_angle(self, angle: float) -> int:
        """Azimuthal compartment containing ``angle`` (rad)."""
        rel = (angle - self.theta_start) % (2 * np.pi)
        if rel >= self.theta_span:
            raise OutOfTrackError(f"angle {angle} outside sector grid")
        return min(int(rel // self.dtheta), self.n_theta - 1)

    def azimuthal_neighbour(self, e_theta: int, step: int) -> int | None:
        j = e_theta + step
        if self.full_circle:
            return j % self.n_theta
        return j if 0 <= j < self.n_theta else None

    def nearest_node(self, x: float, y: float) -> int:
        """Surface node closest to the planar point (x, y) relative to the pivot.

        Ties go to the lowest flat index.
        """
        if np.hypot(x, y) > self.radius * (1 + 1e-12):
            raise OutOfTrackError(f"point ({x}, {y}) lies beyond the track radius {self.radius}")
        return int(self.nearest_nodes(np.array([x]), np.array([y]))[0])

    def nearest_nodes(self, x, y) -> np.ndarray:
        nodes = self.surface_nodes()
        r, th, _, _, _, _ = self.coordinates()
        nx, ny = r[nodes] * np.cos(th[nodes]), r[nodes] * np.sin(th[nodes])
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        d2 = (x[:, None] - nx[None, :]) ** 2 + (y[:, None] - ny[None, :]) ** 2
        return nodes[np.argmin(d2, axis=1)]


def build_grid(
    radius: float,
    depth: float,
    n_r: int,
    n_theta: int,
    n_z: int,
    sector: tuple[float, float] | None = None,
    axis: bool = False,
    z_ratio: float = 1.0,
) -> CylGrid:
    """Construct a grid; ``z_ratio > 1`` thickens layers geometrically with depth."""
    return CylGrid(radius, depth, n_r, n_theta, n_z, sector=None if sector is None else tuple(sector), axis=axis, z_ratio=z_ratio)


def build_grid_from_config(cfg: dict) -> CylGrid:
    sector = cfg.get("sector")
    return build_grid(
        radius=float(cfg["radius"]),
        depth=float(cfg["depth"]),
        n_r=int(cfg["n_r"]),
        n_theta=int(cfg["n_theta"]),
        n_z=int(cfg["n_z"]),
        sector=None if sector is None else (float(sector[0]), float(sector[1])),
        axis=bool(cfg.get("axis", False)),
        z_ratio=float(cfg.get("z_ratio", 1.0)),
    )
