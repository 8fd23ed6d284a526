"""Fitting control-point payloads to samples.

Two pipelines: global least squares with hierarchical refinement of the
worst cells, and the meshless split where boundary payloads are fitted to
surface samples and interior payloads are chosen so that the spline is
discretely harmonic on a parametric lattice.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .control_grid import subdivide_cells
from .spline_eval import ComponentSpline, basis_matrix, evaluate

DAMPING = 1e-8
BOUNDARY_TOL = 1e-12


class FitError(ValueError):
    """Invalid fitting input or solver breakdown."""


@dataclass
class SampleSet:
    params: np.ndarray  # (n, 3)
    targets: np.ndarray  # (n, d)
    cuboids: np.ndarray | None = None

    def __post_init__(self):
        self.params = np.atleast_2d(np.asarray(self.params, float))
        t = np.asarray(self.targets, float)
        self.targets = t.reshape(len(self.params), -1) if t.ndim < 2 else t
        if not np.all(np.isfinite(self.targets)):
            raise FitError("non-finite target")

    def __len__(self):
        return len(self.params)


@dataclass
class SolveReport:
    residual: float
    damped: bool
    free: int


@dataclass
class FitReport:
    rms: list = field(default_factory=list)  # per level
    worst_cell: list = field(default_factory=list)  # per level, normalized
    points: list = field(default_factory=list)  # control points per level
    refined: list = field(default_factory=list)  # cells subdivided after each level
    residual: list = field(default_factory=list)

    def format(self) -> str:
        lines = ["level rms worst_cell points refined"]
        for i, (r, w, n) in enumerate(zip(self.rms, self.worst_cell, self.points)):
            k = self.refined[i] if i < len(self.refined) else 0
            lines.append(f"{i} {r:.6e} {w:.6e} {n} {k}")
        return "\n".join(lines)


def design_matrix(spline: ComponentSpline, params: np.ndarray) -> sp.csr_matrix:
    """Rows map payloads to values; the rational form is row-normalized."""
    B = basis_matrix(spline, params)
    if spline.form == "rational":
        den = np.asarray(B.sum(axis=1)).ravel()
        if np.any(den <= 1e-14):
            raise FitError(f"sample {int(np.flatnonzero(den <= 1e-14)[0])} has no support")
        B = sp.diags(1.0 / den) @ B
    return B.tocsr()


def _normal_solve(A: sp.csr_matrix, R: np.ndarray):
    """Least-squares ``A x = R``; damps only when the normal matrix is singular."""
    N = (A.T @ A).tocsc()
    rhs = A.T @ R
    n = N.shape[0]
    scale = float(N.diagonal().sum()) / max(n, 1)
    deficient = False
    if n <= 3000:
        ev = np.linalg.eigvalsh(N.toarray())
        deficient = ev.min() <= 1e-12 * max(ev.max(), 1e-300)
    if not deficient:
        try:
            return splu(N).solve(rhs), False
        except RuntimeError:
            deficient = True
    Nd = (N + DAMPING * max(scale, 1e-300) * sp.identity(n)).tocsc()
    try:
        return splu(Nd).solve(rhs), True
    except RuntimeError as e:
        raise FitError(f"solver breakdown: {e}") from None


def solve_least_squares(samples: SampleSet, spline: ComponentSpline, fixed=None):
    """Fit free payloads to ``samples``; fixed payloads enter the right side.

    ``fixed`` is an iterable of record keys.  Returns ``(spline, report)``;
    the spline is updated in place.
    """
    keys = spline.keys
    fixed = set(fixed or ())
    fmask = np.array([k in fixed for k in keys], bool)
    free = np.flatnonzero(~fmask)
    if free.size == 0:
        raise FitError("no free control points")
    A = design_matrix(spline, samples.params)
    C = spline.payloads()
    if C.shape[1] != samples.targets.shape[1]:
        raise FitError("target dimension differs from payload dimension")
    Af = A[:, free]
    support = np.diff(Af.indptr)
    if np.any(support == 0):
        raise FitError(f"sample {int(np.flatnonzero(support == 0)[0])} is not supported by a free point")
    R = samples.targets - A[:, np.flatnonzero(fmask)] @ C[fmask]
    X, damped = _normal_solve(Af, R)
    X = np.asarray(X).reshape(len(free), -1)
    for j, row in zip(free, X):
        spline.grid.points[keys[j]].payload = row.copy()
    res = float(np.abs(Af @ X - R).max()) if len(R) else 0.0
    return spline, SolveReport(res, damped, int(free.size))


def _diag(targets: np.ndarray) -> float:
    return float(np.linalg.norm(targets.max(axis=0) - targets.min(axis=0)))


def rms(spline: ComponentSpline, samples: SampleSet) -> float:
    """Root-mean-square error divided by the sample bounding-box diagonal."""
    if len(samples) == 0:
        raise FitError("empty sample set")
    diag = _diag(samples.targets)
    if diag == 0:
        raise FitError("degenerate sample set (zero diagonal)")
    err = evaluate(spline, samples.params).value - samples.targets
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1)))) / diag


def hierarchical_fit(samples: SampleSet, spline: ComponentSpline, error_threshold: float = 0.005,
                     max_levels: int = 3):
    """Fit, then subdivide every cell whose worst error exceeds the threshold.

    Errors are normalized by the sample bounding-box diagonal.  At most
    ``max_levels`` refinement rounds are made.  Returns ``(spline, report)``.
    """
    report = FitReport()
    diag = _diag(samples.targets)
    if diag == 0:
        raise FitError("degenerate sample set (zero diagonal)")
    level = 0
    while True:
        _, sr = solve_least_squares(samples, spline)
        err = np.linalg.norm(evaluate(spline, samples.params).value - samples.targets, axis=1) / diag
        cells = spline.grid.locate_cells(samples.params)
        worst = {}
        for c, e in zip(cells, err):
            if e > worst.get(c, -1.0):
                worst[c] = e
        report.rms.append(float(np.sqrt(np.mean(err**2))))
        report.worst_cell.append(float(err.max()))
        report.points.append(len(spline.grid.points))
        report.residual.append(sr.residual)
        bad = sorted(int(c) for c, e in worst.items() if e > error_threshold and c >= 0)
        if not bad or level >= max_levels:
            break
        subdivide_cells(spline.grid, bad)
        report.refined.append(len(bad))
        level += 1
    return spline, report


# -- meshless pipeline ---------------------------------------------------------------


def _box(spline):
    dom = spline.grid.domain
    return (np.array([float(x) for x in dom.lo]), np.array([float(x) for x in dom.hi]))


def boundary_fit(samples: SampleSet, spline: ComponentSpline):
    """Least squares over the bd-control-points only; others stay untouched."""
    lo, hi = _box(spline)
    P = samples.params
    on = np.any((np.abs(P - lo) <= BOUNDARY_TOL) | (np.abs(P - hi) <= BOUNDARY_TOL), axis=1)
    inside = np.all((P >= lo - BOUNDARY_TOL) & (P <= hi + BOUNDARY_TOL), axis=1)
    bad = np.flatnonzero(~(on & inside))
    if bad.size:
        raise FitError(f"sample {int(bad[0])} is not on the cuboid surface")
    fixed = [k for k, p in spline.grid.points.items() if p.kind != "bd"]
    return solve_least_squares(samples, spline, fixed)


def default_resolution(spline: ComponentSpline) -> tuple:
    return tuple(len(s) + 2 for s in spline.grid.S)


def harmonic_rows(spline: ComponentSpline, resolution=None):
    """Stencil operator rows ``F(u_i) - mean of the 6 neighbours`` at the
    interior nodes of a uniform lattice over the domain box."""
    res = tuple(resolution or default_resolution(spline))
    if any(r < 3 for r in res):
        raise FitError(f"lattice resolution {res} leaves no interior node")
    lo, hi = _box(spline)
    axes = [np.linspace(lo[a], hi[a], res[a]) for a in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    B = design_matrix(spline, grid)
    ids = np.arange(grid.shape[0]).reshape(res)
    inner = ids[1:-1, 1:-1, 1:-1].ravel()
    S = sp.lil_matrix((len(inner), grid.shape[0]))
    for r, i in enumerate(inner):
        a, b, c = np.unravel_index(i, res)
        S[r, i] = 1.0
        for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            S[r, ids[a + d[0], b + d[1], c + d[2]]] = -1.0 / 6.0
    return (S.tocsr() @ B).tocsr(), grid[inner]


def interior_fit(spline: ComponentSpline, resolution=None):
    """Choose non-bd payloads minimizing the discrete Laplacian of the spline.

    bd payloads are held fixed.  Returns ``(spline, report)`` where the
    report residual is the largest stencil value at an interior node.
    """
    if len(spline.grid.cells) < 2:
        raise FitError("single-cell component: no interior lattice to fit")
    keys = spline.keys
    free = np.array([spline.grid.points[k].kind != "bd" for k in keys], bool)
    if not free.any():
        raise FitError("no interior control points: nothing to fit")
    L, _ = harmonic_rows(spline, resolution)
    C = spline.payloads()
    R = -(L[:, np.flatnonzero(~free)] @ C[~free])
    Lf = L[:, np.flatnonzero(free)]
    X, damped = _normal_solve(Lf, R)
    X = np.asarray(X).reshape(int(free.sum()), -1)
    for j, row in zip(np.flatnonzero(free), X):
        spline.grid.points[keys[j]].payload = row.copy()
    res = float(np.abs(L @ spline.payloads()).max())
    return spline, SolveReport(res, damped, int(free.sum()))


def surface_samples(spline: ComponentSpline, per_face: int = 8) -> np.ndarray:
    """Uniform parameters on the six faces of the domain box."""
    lo, hi = _box(spline)
    t = np.linspace(0, 1, per_face)
    out = []
    for axis in range(3):
        o = [k for k in range(3) if k != axis]
        for side in (lo[axis], hi[axis]):
            for s, r in itertools.product(t, t):
                p = np.empty(3)
                p[axis] = side
                p[o[0]] = lo[o[0]] + s * (hi[o[0]] - lo[o[0]])
                p[o[1]] = lo[o[1]] + r * (hi[o[1]] - lo[o[1]])
                out.append(p)
    return np.unique(np.array(out), axis=0)
