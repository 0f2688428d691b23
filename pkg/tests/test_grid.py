import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pivotfusion.grid import GridError, NodeIndex, OutOfTrackError, build_grid, build_grid_from_config


def test_reference_field_size():
    g = build_grid(50.0, 0.30, 6, 40, 16)
    assert g.size == 3840
    assert g.r_nodes[0] == pytest.approx(50 / 12)
    assert g.z_nodes[-1] == pytest.approx(0.30 - 0.30 / 32)


def test_quadrant_size():
    g = build_grid(290.0, 0.6, 30, 17, 10, sector=(1.5 * np.pi, 2 * np.pi), z_ratio=1.3)
    assert g.size == 5100
    # finer near the surface, coarser below
    assert g.dz_cells[-1] < g.dz_cells[0]
    assert g.dz_cells.sum() == pytest.approx(0.6)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(2, 7), st.integers(2, 5), st.booleans())
def test_flat_index_bijective(n_r, n_t, n_z, axis):
    g = build_grid(10.0, 1.0, n_r, n_t, n_z, axis=axis)
    seen = set()
    for a in range(n_r):
        for b in range(n_t):
            for k in range(n_z):
                i = g.node_index(a, b, k)
                assert g.unravel(i) == NodeIndex(a, b, k)
                seen.add(i)
    if axis:
        for k in range(n_z):
            seen.add(g.axis_index(k))
            assert g.unravel(g.axis_index(k)) == (None, None, k)
    assert seen == set(range(g.size))


def test_node_index_bounds():
    g = build_grid(10.0, 1.0, 3, 4, 2)
    with pytest.raises(IndexError):
        g.node_index(3, 0, 0)
    with pytest.raises(IndexError):
        g.axis_index(0)


def test_spacings_uniform_ghosts():
    g = build_grid(12.0, 0.6, 4, 8, 3)
    dr = 3.0
    assert np.allclose(g.dr_east, dr) and np.allclose(g.dr_west, dr)
    assert np.allclose(g.dz_north, 0.2) and np.allclose(g.dz_south, 0.2)
    ga = build_grid(12.0, 0.6, 4, 8, 3, axis=True)
    assert ga.dr_west[0] == pytest.approx(1.5)


def test_sector_rules():
    with pytest.raises(GridError):
        build_grid(10.0, 1.0, 3, 4, 2, sector=(1.0, 0.5))
    with pytest.raises(GridError):
        build_grid(10.0, 1.0, 3, 4, 2, sector=(0.0, 1.0), axis=True)
    g = build_grid(10.0, 1.0, 3, 4, 2, sector=(0.0, np.pi / 2))
    assert g.azimuthal_neighbour(3, 1) is None
    assert build_grid(10.0, 1.0, 3, 4, 2).azimuthal_neighbour(3, 1) == 0


def test_nearest_node_matches_bruteforce():
    g = build_grid(50.0, 0.3, 6, 40, 4)
    rng = np.random.default_rng(3)
    rr = 50 * np.sqrt(rng.random(300))
    th = 2 * np.pi * rng.random(300)
    x, y = rr * np.cos(th), rr * np.sin(th)
    got = g.nearest_nodes(x, y)
    surf = g.surface_nodes()
    for i in range(300):
        best, bd = None, np.inf
        for j in surf:
            r, t, _ = g.node_coordinates(int(j))
            d = (x[i] - r * np.cos(t)) ** 2 + (y[i] - r * np.sin(t)) ** 2
            if d < bd:
                best, bd = j, d
        assert got[i] == best


def test_nearest_node_on_top_and_outside():
    g = build_grid(50.0, 0.3, 6, 40, 4)
    i = g.node_index(2, 7, 3)
    r, t, _ = g.node_coordinates(i)
    assert g.nearest_node(r * np.cos(t), r * np.sin(t)) == i
    with pytest.raises(OutOfTrackError):
        g.nearest_node(51.0, 0.0)


def test_from_config():
    g = build_grid_from_config({"radius": 10, "depth": 1, "n_r": 2, "n_theta": 3, "n_z": 4, "sector": [0, 1]})
    assert g.sector == (0.0, 1.0) and g.size == 24
