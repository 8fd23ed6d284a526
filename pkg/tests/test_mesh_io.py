import copy

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpcspline.mesh_io import (
    MeshError,
    PatchAnnotation,
    TriMesh,
    export_vtk,
    load_mesh,
    read_vtk_points,
    save_off,
    validate,
)
from gpcspline.param import cube_mesh

OCTA_OBJ = """# octahedron
v 1 0 0
v -1 0 0
v 0 1 0
v 0 -1 0
v 0 0 1
v 0 0 -1
f 1 3 5
f 3 2 5
f 2 4 5
f 4 1 5
f 3 1 6
f 2 3 6
f 4 2 6
f 1 4 6
"""


def torus(n=8, m=6):
    R, r = 2.0, 0.5
    V = []
    for i in range(n):
        for j in range(m):
            a, b = 2 * np.pi * i / n, 2 * np.pi * j / m
            V.append([(R + r * np.cos(b)) * np.cos(a), (R + r * np.cos(b)) * np.sin(a), r * np.sin(b)])
    T = []
    for i in range(n):
        for j in range(m):
            p, q = i * m + j, ((i + 1) % n) * m + j
            p2, q2 = i * m + (j + 1) % m, ((i + 1) % n) * m + (j + 1) % m
            T += [[p, q, q2], [p, q2, p2]]
    return TriMesh(np.array(V), np.array(T))


def test_single_triangle_off(tmp_path):
    p = tmp_path / "t.off"
    p.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    m = load_mesh(p)
    assert m.vertices.shape == (3, 3)
    assert len(m.boundary_edges) == 3


def test_octahedron_obj(tmp_path):
    p = tmp_path / "o.obj"
    p.write_text(OCTA_OBJ)
    m = load_mesh(p)
    assert m.euler_characteristic() == 2
    r = validate(m)
    assert r.closed and r.genus == 0 and r.ok


def test_quad_face_rejected_with_id(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 2 3 4\n")
    with pytest.raises(MeshError, match="face 1"):
        load_mesh(p)


def test_malformed_files(tmp_path):
    p = tmp_path / "bad.off"
    p.write_text("OFF\n3 1 0\n0 0 0\n1 0\n")
    with pytest.raises(MeshError):
        load_mesh(p)
    p = tmp_path / "bad.obj"
    p.write_text("v 0 zero 0\n")
    with pytest.raises(MeshError, match="line 1"):
        load_mesh(p)
    p = tmp_path / "dangling.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nf 1 2 3\n")
    with pytest.raises(MeshError, match="missing vertex"):
        load_mesh(p)


def test_torus_genus_one():
    m = torus()
    assert m.euler_characteristic() == 0
    r = validate(m)
    assert r.genus == 1 and r.ok


def test_non_manifold_edge_reported():
    m = TriMesh(np.eye(3).tolist() + [[0, 0, 0], [1, 1, 1]], [[0, 1, 2], [0, 1, 3], [0, 1, 4]])
    r = validate(m)
    assert not r.manifold
    eid = m.edge_index[(0, 1)]
    assert ("non-manifold-edge", eid) in r.defects


def test_open_mesh_reports_loops():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    r = validate(m)
    assert not r.closed and r.genus is None and r.boundary_loops == 1


def test_cube_annotation_valid():
    m, ann = cube_mesh(3)
    assert validate(m, ann).ok


def test_corner_touching_two_poly_edges():
    m, ann = cube_mesh(3)
    bad = copy.deepcopy(ann)
    c = bad.corners[0][0]
    # drop the poly-edge that ends at corner 0 last in the list
    k = max(i for i, p in enumerate(bad.poly_edges[0]) if c in (p[0], p[-1]))
    bad.poly_edges[0][k] = bad.poly_edges[0][k][:-1] if bad.poly_edges[0][k][-1] == c else bad.poly_edges[0][k][1:]
    r = validate(m, bad)
    assert ("corner-valence", c) in r.defects


def test_annotation_load(tmp_path):
    import json

    m, ann = cube_mesh(2)
    p = tmp_path / "a.json"
    p.write_text(json.dumps({"corners": ann.corners, "poly_edges": ann.poly_edges, "rectangles": ann.rectangles}))
    assert validate(m, PatchAnnotation.load(p)).ok


def test_validate_is_pure():
    m = torus()
    assert validate(m) == validate(m)


def test_off_round_trip(tmp_path):
    m = torus(5, 4)
    m.vertices = m.vertices + 1e-3 * np.random.default_rng(0).normal(size=m.vertices.shape)
    p = tmp_path / "r.off"
    save_off(m, p)
    m2 = load_mesh(p)
    assert np.abs(m2.vertices - m.vertices).max() <= 1e-12
    assert np.array_equal(m2.triangles, m.triangles)


# -- vtk -------------------------------------------------------------------------------


def unit_lattice(n=2):
    t = np.linspace(0, 1, n)
    return np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1)


def test_vtk_minimal(tmp_path):
    p = tmp_path / "l.vtk"
    export_vtk(unit_lattice(), p)
    pts, cells = read_vtk_points(p)
    assert pts.shape == (8, 3)
    assert cells.shape == (1, 8)


def test_vtk_density(tmp_path):
    p = tmp_path / "d.vtk"
    X = unit_lattice(3)
    export_vtk(X, p, density=X[..., 0])
    text = p.read_text()
    assert "POINT_DATA 27" in text
    assert "SCALARS density double 1" in text


def test_vtk_fourth_column_is_density(tmp_path):
    p = tmp_path / "d4.vtk"
    X = unit_lattice(2)
    export_vtk(np.concatenate([X, X[..., :1]], axis=-1), p)
    assert "SCALARS density" in p.read_text()


def test_vtk_nan_names_node(tmp_path):
    X = unit_lattice(3)
    X[1, 2, 0, 1] = np.nan
    with pytest.raises(MeshError, match=r"\(1, 2, 0\)"):
        export_vtk(X, tmp_path / "n.vtk")


@settings(max_examples=10, deadline=None)
@given(st.tuples(st.integers(2, 4), st.integers(2, 4), st.integers(2, 4)))
def test_vtk_counts(tmp_path_factory, shape):
    p = tmp_path_factory.mktemp("v") / "x.vtk"
    X = np.random.default_rng(0).random(shape + (3,))
    export_vtk(X, p)
    pts, cells = read_vtk_points(p)
    assert len(pts) == np.prod(shape)
    assert len(cells) == np.prod([s - 1 for s in shape])
    assert np.abs(pts - X.reshape(-1, 3, order="F")).max() <= 1e-12
