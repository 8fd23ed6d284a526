"""Evaluation and audits of trivariate T-splines.

A spline is a :class:`ControlGrid` plus a form.  In the semi-standard
form the weighted blending functions already sum to one, so evaluation is
the plain weighted sum of payloads.  The rational form divides by the
weight sum.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
from scipy.stats import qmc

from .bspline import eval_basis_derivative
from .control_grid import ControlGrid, ControlPoint, Domain, TMesh, GridError

FORMS = ("semi-standard", "rational")
DOMAIN_TOL = 1e-12


class EvalError(ValueError):
    """Evaluation outside the domain or with degenerate coverage."""


@dataclass
class ComponentSpline:
    grid: ControlGrid
    form: str = "semi-standard"

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown form {self.form!r}")

    @property
    def points(self) -> list:
        return list(self.grid.points.values())

    @property
    def keys(self) -> list:
        return list(self.grid.points)

    def payloads(self) -> np.ndarray:
        return np.array([p.payload for p in self.grid.points.values()])

    def set_payloads(self, P: np.ndarray) -> None:
        for p, row in zip(self.grid.points.values(), np.asarray(P, float)):
            p.payload = row.copy()


@dataclass
class EvalResult:
    value: np.ndarray
    denominator: np.ndarray | None = None


def _params(spline: ComponentSpline, u, v=None, w=None) -> np.ndarray:
    if v is None:
        P = np.atleast_2d(np.asarray(u, float))
    else:
        P = np.column_stack([np.atleast_1d(np.asarray(x, float)) for x in (u, v, w)])
    if P.shape[1] != 3:
        raise EvalError("parameters must have three coordinates")
    if not np.all(np.isfinite(P)):
        raise EvalError("non-finite parameter")
    dom = spline.grid.domain
    ok = dom.contains(P, tol=DOMAIN_TOL)
    if not np.all(ok):
        bad = np.flatnonzero(~ok)[0]
        raise EvalError(f"parameter {P[bad].tolist()} outside the domain")
    lo = np.array([float(x) for x in dom.lo])
    hi = np.array([float(x) for x in dom.hi])
    return np.clip(P, lo, hi)


def far_side(domain: Domain, params: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Boolean (n, 3): True where the domain does not continue in +axis."""
    out = np.zeros(params.shape, bool)
    for a in range(3):
        q = params.copy()
        q[:, a] += eps
        out[:, a] = ~domain.contains(q)
    return out


def _basis_1d(knots, u, order, left):
    out = np.empty(u.size)
    r = ~left
    if r.any():
        out[r] = eval_basis_derivative(knots, u[r], order, side="strict")
    if left.any():
        out[left] = eval_basis_derivative(knots, u[left], order, side="left")
    return out


def basis_matrix(spline: ComponentSpline, params: np.ndarray, deriv=(0, 0, 0)) -> sp.csr_matrix:
    """Sparse matrix of weighted blending values ``w_i * d^deriv B_i``.

    Rows follow ``params``, columns follow ``spline.keys``.  On a knot,
    right-continuous branches are used unless the domain ends there in the
    positive direction, where the left limit is taken instead.
    """
    params = np.atleast_2d(np.asarray(params, float))
    left = far_side(spline.grid.domain, params)
    rows, cols, vals = [], [], []
    for j, p in enumerate(spline.grid.points.values()):
        lo = np.array([float(k[0]) for k in p.knots])
        hi = np.array([float(k[4]) for k in p.knots])
        idx = np.flatnonzero(np.all((params >= lo) & (params <= hi), axis=1))
        if idx.size == 0:
            continue
        val = np.full(idx.size, float(p.weight))
        for a in range(3):
            val = val * _basis_1d(p.knots[a], params[idx, a], deriv[a], left[idx, a])
        nz = val != 0
        rows.append(idx[nz])
        cols.append(np.full(nz.sum(), j))
        vals.append(val[nz])
    if rows:
        rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    else:
        rows = cols = np.zeros(0, int)
        vals = np.zeros(0)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(params), len(spline.grid.points)))


def evaluate(spline: ComponentSpline, u, v=None, w=None) -> EvalResult:
    """Evaluate at one or many parameters.

    Accepts ``evaluate(s, u, v, w)`` with scalars/arrays or
    ``evaluate(s, params)`` with an (n, 3) array.
    """
    P = _params(spline, u, v, w)
    B = basis_matrix(spline, P)
    num = B @ spline.payloads()
    if spline.form == "semi-standard":
        return EvalResult(num)
    den = np.asarray(B.sum(axis=1)).ravel()
    if np.any(den <= 1e-14):
        raise EvalError("rational denominator vanishes")
    return EvalResult(num / den[:, None], den)


def evaluate_jacobian(spline: ComponentSpline, u, v=None, w=None) -> np.ndarray:
    """Partial derivatives, shape (n, d, 3)."""
    P = _params(spline, u, v, w)
    C = spline.payloads()
    B = basis_matrix(spline, P)
    num = B @ C
    out = np.zeros((len(P), C.shape[1], 3))
    den = np.asarray(B.sum(axis=1)).ravel()
    if spline.form == "rational" and np.any(den <= 1e-14):
        raise EvalError("rational denominator vanishes")
    for a in range(3):
        d = [0, 0, 0]
        d[a] = 1
        dB = basis_matrix(spline, P, tuple(d))
        dnum = dB @ C
        if spline.form == "semi-standard":
            out[:, :, a] = dnum
        else:
            dden = np.asarray(dB.sum(axis=1)).ravel()
            out[:, :, a] = (dnum * den[:, None] - num * dden[:, None]) / (den**2)[:, None]
    return out


# -- sampling -----------------------------------------------------------------


def sample_domain(domain: Domain, n: int, seed: int = 0, planes=None,
                  boundary_fraction: float = 0.2, plane_fraction: float = 0.2):
    """Quasi-random parameters inside the domain.

    A share of the samples is snapped onto box faces, and, when ``planes``
    (three coordinate lists) is given, another share onto knot planes.
    """
    rng = np.random.default_rng(seed)
    vol = np.array([np.prod([float(hi[a] - lo[a]) for a in range(3)]) for lo, hi in domain.boxes])
    which = rng.choice(len(domain.boxes), size=n, p=vol / vol.sum())
    X = qmc.Halton(d=3, seed=seed).random(n)
    out = np.zeros((n, 3))
    for i, (lo, hi) in enumerate(domain.boxes):
        m = which == i
        lo_f = np.array([float(x) for x in lo])
        hi_f = np.array([float(x) for x in hi])
        out[m] = lo_f + X[m] * (hi_f - lo_f)
    order = rng.permutation(n)
    n_b = int(n * boundary_fraction)
    for i in order[:n_b]:
        lo, hi = domain.boxes[which[i]]
        a = rng.integers(3)
        out[i, a] = float(lo[a] if rng.random() < 0.5 else hi[a])
    if planes is not None:
        n_p = int(n * plane_fraction)
        for i in order[n_b:n_b + n_p]:
            lo, hi = domain.boxes[which[i]]
            a = rng.integers(3)
            cand = [float(c) for c in planes[a] if lo[a] <= c <= hi[a]]
            if cand:
                out[i, a] = cand[rng.integers(len(cand))]
    return out


def boundary_samples(domain: Domain, n: int, seed: int = 0) -> np.ndarray:
    """Quasi-random parameters on the domain boundary."""
    rng = np.random.default_rng(seed)
    out = []
    tries = 0
    while len(out) < n and tries < 50 * n:
        tries += 1
        lo, hi = domain.boxes[rng.integers(len(domain.boxes))]
        p = np.array([float(lo[a]) + rng.random() * float(hi[a] - lo[a]) for a in range(3)])
        a = rng.integers(3)
        p[a] = float(lo[a] if rng.random() < 0.5 else hi[a])
        # keep only points really on the boundary of the union
        eps = 1e-9
        q1, q2 = p.copy(), p.copy()
        q1[a] -= eps
        q2[a] += eps
        if domain.contains(q1[None])[0] != domain.contains(q2[None])[0]:
            out.append(p)
    return np.array(out).reshape(-1, 3)


# -- audits ---------------------------------------------------------------------


def unity_deviation(spline: ComponentSpline, params: np.ndarray) -> np.ndarray:
    B = basis_matrix(spline, params)
    return np.abs(np.asarray(B.sum(axis=1)).ravel() - 1.0)


def audit_unity(spline: ComponentSpline, n_samples: int = 1000, seed: int = 0) -> float:
    """Largest |sum w_i B_i - 1| over quasi-random interior and boundary parameters."""
    g = spline.grid
    P = sample_domain(g.domain, n_samples, seed, planes=[g.mesh.coords(a) for a in range(3)])
    return float(unity_deviation(spline, P).max())


@dataclass(frozen=True)
class Violation:
    key: tuple
    reason: str
    parameter: tuple | None = None


def audit_boundary_restriction(spline: ComponentSpline, n_boundary: int = 1000, seed: int = 0) -> list:
    """Records violating boundary restriction.

    A record violates when its support box leaves the domain, or when it is
    not a bd-control-point yet is nonzero at a boundary parameter.
    """
    g = spline.grid
    out = []
    for key, p in g.points.items():
        lo, hi = p.support()
        if g.domain.escapes(lo, hi):
            out.append(Violation(key, "support escapes the domain"))
    P = boundary_samples(g.domain, n_boundary, seed)
    B = basis_matrix(spline, P).tocsc()
    keys = spline.keys
    flagged = {v.key for v in out}
    for j, key in enumerate(keys):
        if g.points[key].kind == "bd" or key in flagged:
            continue
        col = B.getcol(j)
        if col.nnz:
            i = col.indices[np.argmax(np.abs(col.data))]
            out.append(Violation(key, "non-bd point influences the boundary", tuple(P[i])))
    return out


# -- archive ------------------------------------------------------------------


def _fs(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}" if x.denominator != 1 else str(x.numerator)


def _fp(s: str) -> Fraction:
    return Fraction(s)


def save_spline(spline: ComponentSpline, path) -> None:
    """Write a spline archive (JSON text, rationals as 'p/q' strings)."""
    g = spline.grid
    doc = {
        "format": "gpcspline-archive-1",
        "form": spline.form,
        "layered": g.layered,
        "grid_coords": [[_fs(x) for x in s] for s in g.S],
        "domain": [[[_fs(x) for x in lo], [_fs(x) for x in hi]] for lo, hi in g.domain.boxes],
        "faces": [
            [axis, _fs(c), [_fs(x) for x in r[:4]], r[4]] for axis, c, r in g.mesh.faces()
        ],
        "cells": [[cid, [_fs(x) for x in lo], [_fs(x) for x in hi]] for cid, (lo, hi) in g.cells.items()],
        "points": [
            {
                "knots": [[_fs(x) for x in kv] for kv in key],
                "weight": _fs(p.weight),
                "payload": [repr(float(x)) for x in p.payload],
                "kind": p.kind,
            }
            for key, p in g.points.items()
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_spline(path) -> ComponentSpline:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "gpcspline-archive-1":
        raise GridError("not a spline archive")
    S = [[_fp(x) for x in s] for s in doc["grid_coords"]]
    dom = Domain([(tuple(map(_fp, lo)), tuple(map(_fp, hi))) for lo, hi in doc["domain"]])
    mesh = TMesh()
    for axis, c, r, m in doc["faces"]:
        r = [_fp(x) for x in r]
        mesh.add_face(axis, _fp(c), (r[0], r[2]), (r[1], r[3]), m)
    cells = {cid: (tuple(map(_fp, lo)), tuple(map(_fp, hi))) for cid, lo, hi in doc["cells"]}
    g = ControlGrid(S, dom, mesh, cells, doc["layered"])
    dims = set()
    for rec in doc["points"]:
        key = tuple(tuple(_fp(x) for x in kv) for kv in rec["knots"])
        payload = np.array([float(x) for x in rec["payload"]])
        dims.add(payload.size)
        g.points[key] = ControlPoint(key, _fp(rec["weight"]), payload, rec["kind"])
    if len(dims) > 1:
        raise GridError("mixed payload dimensions")
    return ComponentSpline(g, doc["form"])
