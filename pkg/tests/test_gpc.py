import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpcspline.gpc import (
    AbstractionGraph,
    GpcError,
    GpcGraph,
    build_gpc_spline,
    evaluate_global,
    glue,
    ill_point_census,
    load_graph,
    propagation_order,
    transition,
)

F = Fraction


def pair(rotation=0, ext_b=((1, 0, 0), (2, 1, 1))):
    g = GpcGraph()
    g.add_cuboid("A", (0, 0, 0), (1, 1, 1))
    g.add_cuboid("B", *ext_b)
    return glue(g, "A", "+u", "B", "-u", rotation)


def l_shape():
    g = GpcGraph()
    g.add_cuboid("A", (-2, 0, -2), (0, 2, 0))
    g.add_cuboid("B", (-2, 0, 0), (0, 2, 2))
    g.add_cuboid("C", (0, 0, 0), (2, 2, 2))
    glue(g, "A", "+w", "B", "-w")
    glue(g, "B", "+u", "C", "-u")
    return g


def ring(n_side=3):
    g = GpcGraph()
    cells = [(i, j) for i in range(n_side) for j in range(n_side) if not (0 < i < n_side - 1 and 0 < j < n_side - 1)]
    for c in cells:
        g.add_cuboid(c, (c[0], c[1], 0), (c[0] + 1, c[1] + 1, 1))
    for c in cells:
        for d, fa, fb in (((1, 0), "+u", "-u"), ((0, 1), "+v", "-v")):
            n = (c[0] + d[0], c[1] + d[1])
            if n in cells:
                glue(g, c, fa, n, fb)
    return g


# -- glue ------------------------------------------------------------------------------


def test_aligned_glue_is_translation():
    g = pair()
    h = (F(1, 3), F(1, 5), F(2, 7))
    assert transition(g, "A", "B", h) == (F(1, 3), F(1, 5), F(2, 7))
    g = pair(ext_b=((5, 2, 3), (6, 3, 4)))
    assert transition(g, "A", "B", h) == (4 + F(1, 3), 2 + F(1, 5), 3 + F(2, 7))


def test_quarter_turn_glue_accepted():
    g = GpcGraph()
    g.add_cuboid("A", (0, 0, 0), (1, 1, 2))
    g.add_cuboid("B", (1, 0, 0), (2, 2, 1))
    glue(g, "A", "+u", "B", "-u", 1)
    h = (F(1), F(1, 4), F(3, 2))
    hb = transition(g, "A", "B", h)
    assert hb[0] == 1
    assert 0 <= hb[1] <= 2 and 0 <= hb[2] <= 1
    assert transition(g, "B", "A", hb) == h


def test_glue_size_mismatch():
    g = GpcGraph()
    g.add_cuboid("A", (0, 0, 0), (1, 1, 2))
    g.add_cuboid("B", (1, 0, 0), (2, 1, 3))
    with pytest.raises(GpcError, match="sizes"):
        glue(g, "A", "+u", "B", "-u")


def test_glue_face_already_glued():
    g = pair()
    g.add_cuboid("C", (1, 0, 0), (2, 1, 1))
    with pytest.raises(GpcError, match="already glued"):
        glue(g, "A", "+u", "C", "-u")


def test_glue_unknown_cuboid():
    with pytest.raises(GpcError):
        glue(pair(), "A", "-u", "Z", "+u")


@settings(max_examples=30, deadline=None)
@given(st.tuples(*[st.integers(1, 4)] * 4), st.integers(0, 3))
def test_glue_rejects_any_extent_mismatch(ext, rot):
    a, b, c, d = ext
    g = GpcGraph()
    g.add_cuboid(0, (0, 0, 0), (1, a, b))
    g.add_cuboid(1, (1, 0, 0), (2, c, d))
    ok = ((a, b) if rot % 2 == 0 else (b, a)) == (c, d)
    if ok:
        glue(g, 0, "+u", 1, "-u", rot)
    else:
        with pytest.raises(GpcError):
            glue(g, 0, "+u", 1, "-u", rot)


# -- transition -------------------------------------------------------------------------


def test_transition_identity():
    h = (F(1, 7), F(2, 9), F(1, 2))
    assert transition(l_shape(), "B", "B", h) == h


@settings(max_examples=40, deadline=None)
@given(
    st.fractions(0, 1, max_denominator=50),
    st.fractions(0, 1, max_denominator=50),
    st.fractions(0, 1, max_denominator=50),
    st.integers(0, 3),
)
def test_transition_round_trip_exact(s, t, r, rot):
    g = GpcGraph()
    g.add_cuboid("A", (0, 0, 0), (1, 1, 1))
    g.add_cuboid("B", (0, 0, 1), (1, 1, 2))
    glue(g, "A", "+w", "B", "-w", rot)
    h = (s, t, r)
    assert transition(g, "B", "A", transition(g, "A", "B", h)) == h


def test_shared_face_point_same_in_both_charts():
    g = l_shape()
    h = (F(-1, 2), F(3, 4), F(0))
    assert transition(g, "A", "B", h) == h
    hc = transition(g, "B", "C", (F(0), F(1, 3), F(5, 4)))
    assert hc == (F(0), F(1, 3), F(5, 4))


def test_composed_transition_along_path():
    g = l_shape()
    h = (F(-1), F(1), F(-1))
    assert transition(g, "A", "C", h) == transition(g, "B", "C", transition(g, "A", "B", h))


def test_transition_disconnected():
    g = pair()
    g.add_cuboid("Z", (9, 9, 9), (10, 10, 10))
    with pytest.raises(GpcError, match="not connected"):
        transition(g, "A", "Z", (0, 0, 0))


# -- global evaluation ------------------------------------------------------------------


def test_global_eval_interior_equals_single_component():
    g = GpcGraph()
    g.add_cuboid(0, (0, 0, 0), (4, 4, 4))
    g.add_cuboid(1, (4, 0, 0), (8, 4, 4))
    glue(g, 0, "+u", 1, "-u")
    gs = build_gpc_spline(g, 4, seed=3)
    solo = GpcGraph().add_cuboid(0, (0, 0, 0), (4, 4, 4))
    ss = build_gpc_spline(solo, 4, seed=3)
    # copy payloads of records whose support stays away from the glue
    for key, p in gs.grids[0].points.items():
        if key in ss.grids[0].points:
            ss.grids[0].points[key].payload = p.payload
    h = (F(1, 2), F(2), F(2))
    assert np.allclose(evaluate_global(gs, 0, h), evaluate_global(ss, 0, h), atol=1e-12)


def test_global_eval_constant_payload():
    g = l_shape()
    gs = build_gpc_spline(g, 2, payload=lambda cid, a: (1.0, -2.0, 0.5))
    rng = np.random.default_rng(0)
    for cid in ("A", "B", "C"):
        lo, hi = g.cuboids[cid]
        for _ in range(10):
            h = tuple(lo[a] + (hi[a] - lo[a]) * F(int(rng.integers(0, 41)), 40) for a in range(3))
            assert np.allclose(evaluate_global(gs, cid, h), [1.0, -2.0, 0.5], atol=1e-12)


def test_global_eval_chart_independent_on_glued_face():
    g = l_shape()
    gs = build_gpc_spline(g, 2, seed=1)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(40):
        h = (F(-2) + F(int(rng.integers(0, 41)), 20), F(int(rng.integers(0, 41)), 20), F(0))
        a = evaluate_global(gs, "A", h)
        b = evaluate_global(gs, "B", transition(g, "A", "B", h))
        worst = max(worst, float(np.abs(a - b).max()))
    assert worst <= 1e-9


def test_global_eval_outside():
    gs = build_gpc_spline(pair(), 2)
    with pytest.raises(GpcError, match="outside"):
        evaluate_global(gs, "A", (2, 0, 0))


# -- processing order --------------------------------------------------------------------


def test_propagation_path_from_middle():
    ag = AbstractionGraph(["L", "M", "R"], [("L", "M"), ("M", "R")])
    assert propagation_order(ag, "M") == ["M", "L", "R"]


def test_propagation_single():
    assert propagation_order(AbstractionGraph(["x"], []), "x") == ["x"]


@pytest.mark.parametrize("start", [0, 1, 2, 3])
def test_propagation_cycle_has_visited_predecessor(start):
    ag = AbstractionGraph([0, 1, 2, 3], [(0, 1), (1, 2), (2, 3), (3, 0)])
    order = propagation_order(ag, start)
    assert sorted(order) == [0, 1, 2, 3]
    adj = ag.adjacency()
    for i, x in enumerate(order[1:], 1):
        assert adj[x] & set(order[:i])


def test_propagation_disconnected():
    with pytest.raises(GpcError, match="disconnected"):
        propagation_order(AbstractionGraph([0, 1, 2], [(0, 1)]), 0)


# -- census ---------------------------------------------------------------------------------


def test_census_single_cuboid():
    g = GpcGraph().add_cuboid(0, (0, 0, 0), (1, 1, 1))
    assert ill_point_census(g).total == 0


def test_census_two_glued():
    assert ill_point_census(pair()).total == 0


def test_census_eight_cube_torus():
    c = ill_point_census(ring())
    assert c.counts["type-1"] == 4
    assert c.total == 4


def test_census_invariant_under_relabeling():
    g = ring()
    names = {c: f"n{7 - i}" for i, c in enumerate(sorted(g.cuboids))}
    h = GpcGraph()
    for c, (lo, hi) in g.cuboids.items():
        h.add_cuboid(names[c], lo, hi)
    for e in g.glues:
        glue(h, names[e.a], e.face_a, names[e.b], e.face_b, e.rotation)
    assert ill_point_census(h).counts == ill_point_census(g).counts


def test_load_graph(tmp_path):
    doc = {
        "cuboids": [{"id": "A", "lo": [0, 0, 0], "hi": [1, 1, 1]}, {"id": "B", "lo": ["1", 0, 0], "hi": [2, "1/1", 1]}],
        "glues": [{"a": "A", "face_a": "+u", "b": "B", "face_b": "-u", "rotation": 0}],
    }
    p = tmp_path / "g.json"
    p.write_text(json.dumps(doc))
    g = load_graph(p)
    assert g.cuboids["B"] == ((1, 0, 0), (2, 1, 1))
    assert len(g.glues) == 1
