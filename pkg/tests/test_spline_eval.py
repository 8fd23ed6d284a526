from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpcspline.control_grid import add_boundary_layer, build_regular, identity_layout, subdivide_cells
from gpcspline.spline_eval import (
    ComponentSpline,
    EvalError,
    audit_boundary_restriction,
    audit_unity,
    evaluate,
    evaluate_jacobian,
    load_spline,
    sample_domain,
    save_spline,
)


def layered(*S, form="semi-standard"):
    return ComponentSpline(identity_layout(add_boundary_layer(build_regular(*S))), form)


@pytest.fixture(scope="module")
def cube3():
    return layered(range(4), range(4), range(4))


def test_constant_payload_reproduced(cube3):
    s = ComponentSpline(cube3.grid.copy())
    for p in s.points:
        p.payload = np.array([1.5, -2.0, 0.25])
    P = sample_domain(s.grid.domain, 500, seed=0)
    assert np.abs(evaluate(s, P).value - [1.5, -2.0, 0.25]).max() <= 1e-12


def test_bezier_corner_interpolation():
    s = layered([0, 1], [0, 1], [0, 1])
    rng = np.random.default_rng(0)
    for p in s.points:
        p.payload = rng.normal(size=3)
    corner = next(p for p in s.points if all(kv[1:] == (1, 1, 1, 1) for kv in p.knots))
    assert np.allclose(evaluate(s, 1, 1, 1).value[0], corner.payload, atol=1e-14)


def test_identity_layout_linear_precision(cube3):
    P = sample_domain(cube3.grid.domain, 1000, seed=1)
    assert np.abs(evaluate(cube3, P).value - P).max() <= 1e-12


def test_jacobian_identity(cube3):
    P = sample_domain(cube3.grid.domain, 50, seed=2, boundary_fraction=0, plane_fraction=0)
    J = evaluate_jacobian(cube3, P)
    assert np.abs(J - np.eye(3)).max() <= 1e-6


def test_jacobian_matches_finite_difference():
    s = layered([0, 1, 2], [0, 1], [0, 2])
    rng = np.random.default_rng(4)
    for p in s.points:
        p.payload = rng.normal(size=3)
    x = np.array([[0.7, 0.3, 1.1]])
    J = evaluate_jacobian(s, x)[0]
    h = 1e-5
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        fd = (evaluate(s, x + e).value - evaluate(s, x - e).value)[0] / (2 * h)
        assert np.allclose(J[:, a], fd, atol=1e-6)


def test_constant_payload_zero_jacobian(cube3):
    s = ComponentSpline(cube3.grid.copy())
    for p in s.points:
        p.payload = np.ones(3)
    J = evaluate_jacobian(s, sample_domain(s.grid.domain, 20, seed=3))
    assert np.abs(J).max() <= 1e-12


def test_rational_uniform_weights_match_semistandard(cube3):
    r = ComponentSpline(cube3.grid, "rational")
    P = sample_domain(cube3.grid.domain, 40, seed=5)
    assert np.allclose(evaluate_jacobian(r, P), evaluate_jacobian(cube3, P), atol=1e-12)
    assert np.allclose(evaluate(r, P).value, evaluate(cube3, P).value, atol=1e-13)


def test_outside_domain_rejected(cube3):
    with pytest.raises(EvalError):
        evaluate(cube3, 3.5, 1, 1)
    with pytest.raises(EvalError):
        evaluate(cube3, np.nan, 1, 1)


def test_unity_fresh_grid(cube3):
    assert audit_unity(cube3, 2000, seed=0) <= 1e-12


def test_unity_after_refinement():
    s = layered(range(4), range(3), range(3))
    rng = np.random.default_rng(7)
    for _ in range(3):
        cells = sorted(s.grid.cells)
        subdivide_cells(s.grid, [cells[rng.integers(len(cells))]])
    assert audit_unity(s, 2000, seed=1) <= 1e-10


def test_corrupt_weight_detected():
    s = layered(range(3), range(3), range(3))
    p = next(iter(s.grid.points.values()))
    p.weight += Fraction(1, 10)
    assert audit_unity(s, 2000, seed=0) >= 0.01


def test_boundary_restriction_layered_vs_open():
    s = layered(range(3), range(3), range(3))
    assert audit_boundary_restriction(s, 500) == []
    o = ComponentSpline(identity_layout(build_regular(range(3), range(3), range(3))))
    bad = audit_boundary_restriction(o, 500)
    boundary_adjacent = [k for k in o.keys if any(kv[2] in (0, 2) for kv in k)]
    assert {v.key for v in bad} >= set(boundary_adjacent)


def test_archive_round_trip(tmp_path):
    s = layered([0, Fraction(1, 3), 1], [0, 1], [0, 2], form="rational")
    subdivide_cells(s.grid, [0])
    path = tmp_path / "a.json"
    save_spline(s, path)
    t = load_spline(path)
    assert t.form == "rational"
    assert t.keys == s.keys
    assert [p.weight for p in t.points] == [p.weight for p in s.points]
    P = sample_domain(s.grid.domain, 100, seed=0)
    assert np.array_equal(evaluate(t, P).value, evaluate(s, P).value)


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 3), st.floats(0, 3), st.floats(0, 3))
def test_unity_pointwise(u, v, w):
    s = layered(range(4), range(4), range(4))
    for p in s.points:
        p.payload = np.ones(1)
    assert evaluate(s, u, v, w).value[0, 0] == pytest.approx(1.0, abs=1e-12)
