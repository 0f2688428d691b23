"""Independent reference implementations used by the tests."""

import numpy as np
from scipy.integrate import solve_ivp

from pivotfusion.soil import SoilParams, capillary_capacity, hydraulic_conductivity, sink_rate, water_content


def _node_param(params, i):
    pick = lambda v: float(np.asarray(v)[i]) if np.ndim(v) else float(v)  # noqa: E731
    return SoilParams(pick(params.theta_s), pick(params.theta_r), pick(params.K_s), pick(params.alpha), pick(params.n))


def naive_rhs(grid, params, h, u_irr=0.0, bottom="free_drainage", cw=None, feddes=None):
    """Node-by-node evaluation of the centred-difference stencil.

    Ghost nodes mirror across r = 0, r = R, the sector edges and the top and
    bottom faces; the outer/sector/top/bottom ghosts carry zero gradient and
    the axis node (when present) averages the two-sided radial stencil over
    all azimuths (n_theta must be even). Spacings are recomputed here from
    node coordinates rather than taken from the grid object.
    """
    n_r, n_t, n_z = grid.n_r, grid.n_theta, grid.n_z
    r = grid.r_nodes
    z = grid.z_nodes
    th = grid.theta_nodes
    K = np.array([float(hydraulic_conductivity(h[i], _node_param(params, i))) for i in range(grid.size)])
    C = np.array([float(capillary_capacity(h[i], _node_param(params, i))) for i in range(grid.size)])
    u = np.broadcast_to(np.asarray(u_irr, dtype=float), (grid.surface_nodes().size,))
    surf_pos = {int(s): p for p, s in enumerate(grid.surface_nodes())}
    full = grid.sector is None
    dth = th[1] - th[0]

    def r_ghost(a):
        if a < 0:
            return 0.0 if grid.axis else -r[0]
        if a >= n_r:
            return 2 * grid.radius - r[-1]
        return r[a]

    def z_ghost(k):
        if k < 0:
            return -z[0]
        if k >= n_z:
            return 2 * grid.depth - z[-1]
        return z[k]

    def vertical(i, k):
        dzN = z_ghost(k + 1) - z[k]
        dzS = z[k] - z_ghost(k - 1)
        dzk = 0.5 * (dzN + dzS)
        if k + 1 < n_z:
            j = i + 1
            north = 0.5 * (K[i] + K[j]) * ((h[j] - h[i]) / dzN + 1.0)
        else:
            north = u[surf_pos[i]]  # infiltration enters through the surface
        if k > 0:
            j = i - 1
            south = 0.5 * (K[i] + K[j]) * ((h[i] - h[j]) / dzS + 1.0)
        else:
            south = K[i] if bottom == "free_drainage" else 0.0
        return (north - south) / dzk

    out = np.zeros(grid.size)
    for a in range(n_r):
        for b in range(n_t):
            for k in range(n_z):
                i = grid.node_index(a, b, k)
                drE = r_ghost(a + 1) - r[a]
                drW = r[a] - r_ghost(a - 1)
                dri = 0.5 * (drE + drW)
                east = west = 0.0
                if a + 1 < n_r:
                    j = grid.node_index(a + 1, b, k)
                    east = 0.5 * (r[a] + r[a + 1]) * 0.5 * (K[i] + K[j]) * (h[j] - h[i]) / drE
                if a > 0:
                    j = grid.node_index(a - 1, b, k)
                    west = 0.5 * (r[a] + r[a - 1]) * 0.5 * (K[i] + K[j]) * (h[i] - h[j]) / drW
                elif grid.axis:
                    j = grid.axis_index(k)
                    west = 0.5 * (r[a] + 0.0) * 0.5 * (K[i] + K[j]) * (h[i] - h[j]) / drW
                radial = (east - west) / (r[a] * dri)
                top = bot = 0.0
                if full or b + 1 < n_t:
                    j = grid.node_index(a, (b + 1) % n_t, k)
                    top = 0.5 * (K[i] + K[j]) / r[a] * (h[j] - h[i]) / dth
                if full or b > 0:
                    j = grid.node_index(a, (b - 1) % n_t, k)
                    bot = 0.5 * (K[i] + K[j]) / r[a] * (h[i] - h[j]) / dth
                azim = (top - bot) / (r[a] * dth)
                out[i] = radial + azim + vertical(i, k)
    if grid.axis:
        assert n_t % 2 == 0
        for k in range(n_z):
            i = grid.axis_index(k)
            dri = r[0]  # ghost spacing is symmetric about the axis
            vals = []
            for b in range(n_t):
                # two-sided radial stencil along the diameter through sector b;
                # azimuthal differences cancel on averaging over b
                jp = grid.node_index(0, b, k)
                jm = grid.node_index(0, (b + n_t // 2) % n_t, k)
                Kp, Km = 0.5 * (K[i] + K[jp]), 0.5 * (K[i] + K[jm])
                vals.append(2 * (Kp * (h[jp] - h[i]) - Km * (h[i] - h[jm])) / dri**2)
            out[i] = np.mean(vals) + vertical(i, k)
    if cw is not None:
        depth = grid.depth - grid.coordinates()[2]
        out = out - sink_rate(h, depth, feddes, cw)
    return out / C


def column_reference(params, depth, n_z, h0, u_top, t_end, bottom="free_drainage", crop=None, breaks=(), rtol=1e-9, atol=1e-12):
    """1D vertical Richards column integrated with scipy's BDF.

    ``u_top(t)`` is the surface infiltration rate (m/s) and ``crop(t)``
    optionally returns ``(CropWeather, FeddesParams)`` for root uptake.
    Forcing may jump at ``breaks``, where the integration restarts.
    Returns theta at ``t_end`` for each layer (bottom first).
    """
    dz = depth / n_z
    z = (np.arange(n_z) + 0.5) * dz

    def rhs(t, h):
        K = hydraulic_conductivity(h, params)
        C = capillary_capacity(h, params)
        Kf = 0.5 * (K[1:] + K[:-1])
        flux_up = Kf * ((h[1:] - h[:-1]) / dz + 1.0)
        div = np.zeros(n_z)
        div[:-1] += flux_up
        div[1:] -= flux_up
        div[-1] += u_top(t)
        if bottom == "free_drainage":
            div[0] -= K[0]
        q = div / dz
        if crop is not None:
            cw, fed = crop(t)
            q = q - sink_rate(h, depth - z, fed, cw)
        return q / C

    edges = [0.0] + sorted(b for b in breaks if 0 < b < t_end) + [t_end]
    h = np.asarray(h0, dtype=float)
    for a, b in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (a + b)
        seg = lambda t, y, mid=mid: rhs(mid, y)  # noqa: E731  forcing frozen inside a segment
        sol = solve_ivp(seg, (a, b), h, method="BDF", rtol=rtol, atol=atol)
        h = sol.y[:, -1]
    return water_content(h, params), z
