import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpcspline.mesh_io import TriMesh
from gpcspline.param import (
    HexSampleGrid,
    ParamError,
    bent_tube,
    bent_tube_lattice,
    cube_corner,
    cube_mesh,
    cube_surface_param,
    cylinder_param,
    edge_weights,
    harmonic_field,
    lattice_from_boundary,
    lattice_params,
    place_surface_nodes,
    relax_collar,
    trace_polyedge,
    tube_mesh,
    volumetric_relax,
)


# -- harmonic fields ---------------------------------------------------------------


def test_cylinder_lattice_uniform_is_ring_index():
    n_rings, n_around = 6, 10
    m = tube_mesh(n_rings, n_around)
    bottom = range(n_around)
    top = range(n_rings * n_around, (n_rings + 1) * n_around)
    f = harmonic_field(m, [(bottom, 0.0), (top, 1.0)], "uniform")
    ring = np.arange(len(m.vertices)) // n_around
    assert np.abs(f.values - ring / n_rings).max() <= 1e-12


def test_equal_dirichlet_values_give_constant():
    m = tube_mesh(4, 8)
    f = harmonic_field(m, [(range(8), 2.5), (range(32, 40), 2.5)])
    assert np.abs(f.values - 2.5).max() <= 1e-12


def test_two_triangle_strip_maximum_principle():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], [[0, 1, 2], [1, 3, 2]])
    f = harmonic_field(m, [([0], 0.0), ([3], 1.0)])
    assert 0 < f.values[1] < 1 and 0 < f.values[2] < 1


def test_harmonic_residual_small():
    m = tube_mesh(5, 12)
    f = harmonic_field(m, [(range(12), 0.0), (range(60, 72), 1.0)])
    assert f.residual <= 1e-8
    assert f.negative_weights == 0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.floats(-3, 3), st.floats(-3, 3))
def test_maximum_principle_mean_value(seed, a, b):
    m = tube_mesh(5, 10)
    rng = np.random.default_rng(seed)
    m = TriMesh(m.vertices + 0.02 * rng.normal(size=m.vertices.shape), m.triangles)
    f = harmonic_field(m, [(range(10), a), (range(50, 60), b)])
    lo, hi = min(a, b), max(a, b)
    assert np.all(f.values >= lo - 1e-9) and np.all(f.values <= hi + 1e-9)


def test_singular_system_reported():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 0, 0], [6, 0, 0], [5, 1, 0]], [[0, 1, 2], [3, 4, 5]])
    with pytest.raises(ParamError, match="not connected"):
        harmonic_field(m, [([0], 0.0), ([1], 1.0)])


def test_conflicting_dirichlet():
    m = tube_mesh(2, 6)
    with pytest.raises(ParamError, match="conflicting"):
        harmonic_field(m, [([0, 1], 0.0), ([1, 2], 1.0)])


def test_unknown_weighting():
    with pytest.raises(ParamError):
        edge_weights(tube_mesh(2, 6), "cotangent")


# -- cube surface ------------------------------------------------------------------


def test_cube_param_identity_and_corners():
    m, ann = cube_mesh(4)
    sp_ = cube_surface_param(m, ann)
    for i, v in enumerate(ann.corners[0]):
        assert tuple(sp_.uvw[v]) == cube_corner(i)
    assert np.abs(sp_.uvw - m.vertices).max() <= 1e-12


def test_poly_edge_vertices_have_two_pinned_coords():
    m, ann = cube_mesh(3, shape=lambda X: X * [2.0, 1.0, 0.5] + 0.1 * np.sin(3 * X))
    sp_ = cube_surface_param(m, ann)
    for path in ann.poly_edges[0]:
        for v in path:
            assert np.sum((sp_.uvw[v] == 0) | (sp_.uvw[v] == 1)) >= 2
    # every vertex sits on the cube surface
    assert np.all(np.any((sp_.uvw == 0) | (sp_.uvw == 1), axis=1))


def test_cube_param_rejects_bad_annotation():
    m, ann = cube_mesh(3)
    ann.rectangles[0][0] = ann.rectangles[0][0][:3]
    with pytest.raises(ParamError, match="annotation defect"):
        cube_surface_param(m, ann)


# -- cylinders ---------------------------------------------------------------------


def test_cylinder_param_matches_analytic():
    n_rings, n_around = 8, 16
    m = tube_mesh(n_rings, n_around)
    c = cylinder_param(m)
    z = m.vertices[:, 2]
    th = np.mod(np.arctan2(m.vertices[:, 1], m.vertices[:, 0]) / (2 * np.pi), 1.0)
    assert np.abs(c.u - z).max() <= 0.02
    dv = np.minimum(np.abs(np.mod(c.v - th, 1.0)), np.abs(np.mod(th - c.v, 1.0)))
    dv2 = np.minimum(np.abs(np.mod(c.v + th, 1.0)), np.abs(np.mod(-th - c.v, 1.0)))
    assert min(dv.max(), dv2.max()) <= 0.02


def test_cylinder_loops_and_seam():
    m = tube_mesh(6, 12)
    c = cylinder_param(m)
    assert np.all(c.u[sorted(c.loops[0])] == 0.0)
    assert np.all(c.u[sorted(c.loops[1])] == 1.0)
    assert c.seam[0] in c.loops[0] and c.seam[-1] in c.loops[1]
    assert np.all(np.diff(c.u[c.seam]) > 0)


def test_cylinder_needs_two_loops():
    m, _ = cube_mesh(2)
    with pytest.raises(ParamError, match="2 boundary loops"):
        cylinder_param(m)


def test_trace_axial_line():
    m = tube_mesh(8, 16)
    c = cylinder_param(m, "uniform")
    path = trace_polyedge(c, 0, 8 * 16)
    assert path == [16 * r for r in range(9)]


def test_trace_wraps_across_seam():
    n_around = 16
    m = tube_mesh(8, n_around)
    c = cylinder_param(m, "uniform")
    start, end = 1, 8 * n_around + n_around - 2
    path = trace_polyedge(c, start, end)
    ang = [v % n_around for v in path]
    assert path[0] == start and path[-1] == end
    assert 0 in ang or (n_around - 1) in ang
    assert all((min(a, b), max(a, b)) in m.edge_index for a, b in zip(path, path[1:]))
    assert len(path) <= 12


def test_trace_gradient_lands_near_start_angle():
    n_around = 16
    m = tube_mesh(8, n_around)
    c = cylinder_param(m)
    for s in (0, 5, 11):
        path = trace_polyedge(c, s)
        assert path[-1] in c.loops[1]
        d = abs(c.v[path[-1]] - c.v[s])
        assert min(d, 1 - d) <= 1.0 / n_around + 1e-12
        assert np.all(np.diff(c.u[path]) > 0)


# -- surface nodes ------------------------------------------------------------------


def test_nodes_on_identity_cube_are_exact():
    m, ann = cube_mesh(4)
    sp_ = cube_surface_param(m, ann)
    nodes = place_surface_nodes(sp_, (5, 5, 5))
    assert np.abs(nodes.positions - nodes.index / 4.0).max() <= 1e-12


def test_corner_nodes_hit_corner_vertices():
    m, ann = cube_mesh(3, shape=lambda X: bent_tube(X))
    sp_ = cube_surface_param(m, ann)
    nodes = place_surface_nodes(sp_, (4, 6, 5))
    hi = np.array([3, 5, 4])
    for i, v in enumerate(ann.corners[0]):
        k = np.flatnonzero(np.all(nodes.index == np.array(cube_corner(i)) * hi, axis=1))[0]
        assert np.array_equal(nodes.positions[k], m.vertices[v])


def test_node_weights_barycentric():
    m, ann = cube_mesh(3, shape=lambda X: X + 0.05 * np.cos(4 * X))
    nodes = place_surface_nodes(cube_surface_param(m, ann), (7, 7, 7))
    assert np.all(nodes.weights >= 0)
    assert np.abs(nodes.weights.sum(axis=1) - 1).max() <= 1e-12


def test_flipped_parametric_triangle():
    m, ann = cube_mesh(4)
    sp_ = cube_surface_param(m, ann)
    # drag one interior vertex of the w=0 face across its neighbours
    v = int(np.flatnonzero(np.all(np.isclose(m.vertices, [0.5, 0.5, 0.0]), axis=1))[0])
    sp_.uvw[v, :2] = [0.95, 0.95]
    with pytest.raises(ParamError, match="flipped"):
        place_surface_nodes(sp_, (5, 5, 5))


# -- volumetric relaxation -----------------------------------------------------------


def test_relax_unit_cube_converges_to_lattice():
    res = (6, 5, 7)
    P = lattice_params(res)
    fixed = np.zeros(res, bool)
    fixed[[0, -1]] = True
    fixed[:, [0, -1]] = True
    fixed[:, :, [0, -1]] = True
    noisy = P + 0.1 * np.random.default_rng(0).normal(size=P.shape) * ~fixed[..., None]
    out = volumetric_relax(HexSampleGrid(noisy, fixed), threshold=1e-12)
    assert out.converged
    assert np.abs(out.positions - P).max() <= 1e-8
    assert np.array_equal(out.positions[fixed], P[fixed])


def test_single_interior_node_is_mean_after_one_sweep():
    rng = np.random.default_rng(4)
    P = rng.normal(size=(3, 3, 3, 3))
    fixed = np.ones((3, 3, 3), bool)
    fixed[1, 1, 1] = False
    out = volumetric_relax(HexSampleGrid(P, fixed), max_iters=1)
    nb = [P[0, 1, 1], P[2, 1, 1], P[1, 0, 1], P[1, 2, 1], P[1, 1, 0], P[1, 1, 2]]
    assert np.allclose(out.positions[1, 1, 1], np.mean(nb, axis=0), atol=1e-14)
    assert out.sweeps == 1


@pytest.mark.parametrize("mode", ["gauss-seidel", "jacobi"])
def test_bent_tube_energy_monotone(mode):
    g = bent_tube_lattice(8)
    out = volumetric_relax(g, mode=mode, max_iters=300)
    E = np.array(out.energy_log)
    assert np.all(np.diff(E) <= 1e-12 * E[0])
    assert len(E) == out.sweeps + 1


def test_max_iters_reports_not_converged():
    g = bent_tube_lattice(8)
    out = volumetric_relax(g, threshold=1e-15, max_iters=3)
    assert not out.converged and out.sweeps == 3


def test_lattice_from_boundary_linear_fill_is_exact():
    res = (4, 4, 4)
    P = lattice_params(res)
    idx = np.argwhere(np.ones(res, bool))
    on = np.any((idx == 0) | (idx == 3), axis=1)
    g = lattice_from_boundary(idx[on], P.reshape(-1, 3)[on], res)
    assert np.abs(g.positions - P).max() <= 1e-12


def test_collar_keeps_linear_lattices():
    res = (5, 4, 4)
    P = lattice_params(res)
    fixed = np.zeros(res, bool)
    a = HexSampleGrid(P.copy(), fixed.copy())
    b = HexSampleGrid(P + [1, 0, 0], fixed.copy())
    a2, b2, _ = relax_collar(a, b, axis=0, k=2, threshold=1e-13)
    assert np.abs(a2.positions - a.positions).max() <= 1e-9
    assert np.abs(b2.positions - b.positions).max() <= 1e-9


def test_collar_faces_must_coincide():
    res = (4, 4, 4)
    P = lattice_params(res)
    a = HexSampleGrid(P.copy(), np.zeros(res, bool))
    b = HexSampleGrid(P + [2, 0, 0], np.zeros(res, bool))
    with pytest.raises(ParamError, match="coincide"):
        relax_collar(a, b)
