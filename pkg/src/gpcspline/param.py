"""Parameterization of annotated surface patches onto cuboid domains.

Harmonic scalar fields on triangle meshes drive both the cube-surface map
and the cylinder map; the volumetric sample lattice is then filled by
relaxing interior nodes toward the mean of their six lattice neighbours.

Cube corner convention: ``corners[i]`` of an annotation maps to the cube
corner ``(i & 1, (i >> 1) & 1, (i >> 2) & 1)``.  Face codes follow
``2 * axis + value``, i.e. the order "-u", "+u", "-v", "+v", "-w", "+w".
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve, spsolve_triangular

from .mesh_io import PatchAnnotation, TriMesh

WEIGHTINGS = ("mean-value", "uniform")


class ParamError(ValueError):
    """Parameterization failure (bad input, singular system, stalled trace)."""


# -- harmonic fields -------------------------------------------------------------


@dataclass
class ScalarField:
    values: np.ndarray
    constrained: np.ndarray  # bool per vertex
    weighting: str
    residual: float = 0.0
    negative_weights: int = 0


def edge_weights(mesh: TriMesh, weighting: str = "mean-value") -> sp.csr_matrix:
    """Sparse (n, n) matrix of neighbour weights ``W[i, j]``.

    Mean-value weights are ``(tan(a/2) + tan(b/2)) / |x_j - x_i|`` with a, b
    the angles at ``i`` next to edge ij; they are not symmetric.
    """
    if weighting not in WEIGHTINGS:
        raise ParamError(f"unknown weighting {weighting!r}")
    n = len(mesh.vertices)
    E = np.array(mesh.edges, int).reshape(-1, 2)
    if weighting == "uniform":
        rows = np.concatenate([E[:, 0], E[:, 1]])
        cols = np.concatenate([E[:, 1], E[:, 0]])
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    X = mesh.vertices
    T = mesh.triangles
    rows, cols, vals = [], [], []
    for c in range(3):
        i, j, k = T[:, c], T[:, (c + 1) % 3], T[:, (c + 2) % 3]
        e1, e2 = X[j] - X[i], X[k] - X[i]
        l1, l2 = np.linalg.norm(e1, axis=1), np.linalg.norm(e2, axis=1)
        cosang = np.einsum("ij,ij->i", e1, e2) / (l1 * l2)
        half = np.tan(np.arccos(np.clip(cosang, -1, 1)) / 2)
        rows += [i, i]
        cols += [j, k]
        vals += [half / l1, half / l2]
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def _harmonic_solve(W: sp.csr_matrix, fixed: np.ndarray, fixed_vals: np.ndarray) -> np.ndarray:
    """Values with ``x_i = sum_j W_ij x_j / sum_j W_ij`` at every free vertex."""
    n = W.shape[0]
    vals = np.zeros(n)
    vals[fixed] = fixed_vals
    free = ~fixed
    if not free.any():
        return vals
    ncomp, labels = csgraph.connected_components(W, directed=False)
    anchored = np.zeros(ncomp, bool)
    anchored[labels[fixed]] = True
    bad = np.flatnonzero(free & ~anchored[labels])
    if bad.size:
        raise ParamError(f"singular system: vertex {int(bad[0])} is not connected to Dirichlet data")
    d = np.asarray(W.sum(axis=1)).ravel()
    A = (sp.diags(d) - W).tocsr()
    fi = np.flatnonzero(free)
    Aff = A[fi][:, fi].tocsc()
    rhs = -A[fi][:, np.flatnonzero(fixed)] @ vals[fixed]
    vals[fi] = spsolve(Aff, rhs)
    return vals


def _residual(W, vals, free) -> float:
    d = np.asarray(W.sum(axis=1)).ravel()
    r = vals - (W @ vals) / np.where(d > 0, d, 1)
    return float(np.abs(r[free]).max()) if free.any() else 0.0


def harmonic_field(mesh: TriMesh, dirichlet, weighting: str = "mean-value") -> ScalarField:
    """Discrete harmonic field with ``dirichlet = [(vertex ids, value), ...]``."""
    if not dirichlet:
        raise ParamError("no Dirichlet data")
    n = len(mesh.vertices)
    fixed = np.zeros(n, bool)
    target = np.zeros(n)
    for verts, value in dirichlet:
        verts = np.asarray(list(verts), int)
        if verts.size == 0:
            raise ParamError("empty Dirichlet vertex set")
        if np.any((verts < 0) | (verts >= n)):
            raise ParamError("Dirichlet vertex out of range")
        clash = verts[fixed[verts] & (target[verts] != value)]
        if clash.size:
            raise ParamError(f"vertex {int(clash[0])} has conflicting Dirichlet values")
        fixed[verts] = True
        target[verts] = value
    W = edge_weights(mesh, weighting)
    neg = int((W.data < 0).sum())
    vals = _harmonic_solve(W, fixed, target[fixed])
    return ScalarField(vals, fixed, weighting, _residual(W, vals, ~fixed), neg)


# -- cube surfaces -----------------------------------------------------------------


def cube_corner(i: int) -> tuple:
    return (i & 1, (i >> 1) & 1, (i >> 2) & 1)


@dataclass
class SurfaceParam:
    mesh: TriMesh
    uvw: np.ndarray  # (n, 3)
    vertex_face: np.ndarray  # face code per vertex
    tri_face: np.ndarray  # face code per triangle
    fields: list = field(default_factory=list)


def _edge_info(ann: PatchAnnotation, patch: int):
    corners = list(ann.corners[patch])
    pos = {v: cube_corner(i) for i, v in enumerate(corners)}
    info = []
    for e, path in enumerate(ann.poly_edges[patch]):
        a, b = pos.get(path[0]), pos.get(path[-1])
        if a is None or b is None:
            raise ParamError(f"poly-edge {e} does not join two corners")
        diff = [k for k in range(3) if a[k] != b[k]]
        if len(diff) != 1:
            raise ParamError(f"poly-edge {e} does not follow a cube edge")
        pinned = {k: a[k] for k in range(3) if k != diff[0]}
        info.append(pinned)
    faces = []
    for r, rect in enumerate(ann.rectangles[patch]):
        common = dict(info[rect[0]])
        for e in rect[1:]:
            common = {k: v for k, v in common.items() if info[e].get(k) == v}
        if len(common) != 1:
            raise ParamError(f"rectangle {r} does not bound a single cube face")
        (axis, val), = common.items()
        faces.append(2 * axis + val)
    if sorted(faces) != list(range(6)):
        raise ParamError("rectangles do not cover the six cube faces")
    return pos, info, faces


def _face_regions(mesh: TriMesh, cut_edges: set) -> np.ndarray:
    """Label triangles by flood fill without crossing ``cut_edges``."""
    rows, cols = [], []
    for e, ts in zip(mesh.edges, mesh.edge_triangles):
        if e in cut_edges:
            continue
        for a, b in zip(ts, ts[1:]):
            rows.append(a)
            cols.append(b)
    m = len(mesh.triangles)
    G = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
    return csgraph.connected_components(G, directed=False)[1]


def cube_surface_param(mesh: TriMesh, annotation: PatchAnnotation, patch: int = 0,
                       weighting: str = "mean-value") -> SurfaceParam:
    """Map an annotated closed patch onto the unit cube surface.

    For each axis a harmonic field is solved with 0 on the poly-edges of
    the low rectangle and 1 on those of the high one.  Each vertex is then
    pushed onto the cube face of its rectangle by pinning that face's
    constant coordinate; poly-edge vertices keep two pinned coordinates
    and corners all three.
    """
    from .mesh_io import validate

    report = validate(mesh, annotation)
    if report.defects:
        kind, where = report.defects[0]
        raise ParamError(f"annotation defect {kind} at {where}")
    pos, info, faces = _edge_info(annotation, patch)
    paths = annotation.poly_edges[patch]
    rects = annotation.rectangles[patch]
    fields, uvw = [], np.zeros((len(mesh.vertices), 3))
    for axis in range(3):
        dirichlet = []
        for val in (0, 1):
            r = faces.index(2 * axis + val)
            verts = sorted({v for e in rects[r] for v in paths[e]})
            dirichlet.append((verts, float(val)))
        f = harmonic_field(mesh, dirichlet, weighting)
        fields.append(f)
        uvw[:, axis] = np.clip(f.values, 0.0, 1.0)

    edge_of = {}
    for e, path in enumerate(paths):
        for a, b in zip(path, path[1:]):
            edge_of[(min(a, b), max(a, b))] = e
    labels = _face_regions(mesh, set(edge_of))
    tri_face = np.full(len(mesh.triangles), -1, int)
    region_face = {}
    for reg in np.unique(labels):
        tris = np.flatnonzero(labels == reg)
        hits = defaultdict(int)
        for t in tris:
            tri = mesh.triangles[t]
            for i in range(3):
                a, b = int(tri[i]), int(tri[(i + 1) % 3])
                e = edge_of.get((min(a, b), max(a, b)))
                if e is not None:
                    for r, rect in enumerate(rects):
                        if e in rect:
                            hits[r] += 1
        if not hits:
            raise ParamError(f"triangle {int(tris[0])} is not bounded by poly-edges")
        r = max(sorted(hits), key=lambda k: hits[k])
        if r in region_face.values():
            raise ParamError(f"rectangle {r} splits into several regions")
        region_face[reg] = r
        tri_face[tris] = faces[r]

    vertex_face = np.full(len(mesh.vertices), -1, int)
    for t, code in enumerate(tri_face):
        for v in mesh.triangles[t]:
            if vertex_face[v] < 0:
                vertex_face[v] = code
            axis, val = divmod(int(code), 2)
            uvw[v, axis] = val
    for e, path in enumerate(paths):
        for v in path:
            for k, val in info[e].items():
                uvw[v, k] = val
    for v, c in pos.items():
        uvw[v] = c
    return SurfaceParam(mesh, uvw, vertex_face, tri_face, fields)


# -- cylinders ---------------------------------------------------------------------


@dataclass
class CylinderParam:
    mesh: TriMesh
    u: np.ndarray
    v: np.ndarray  # in [0, 1), seam at 0
    seam: list  # vertex path from the u=0 loop to the u=1 loop
    cut_mesh: TriMesh
    v_cut: np.ndarray  # v on the cut mesh, 0 and 1 on the two seam copies
    loops: tuple


def boundary_loops(mesh: TriMesh) -> list:
    """Vertex sets of the boundary loops, ordered by smallest vertex id."""
    adj = defaultdict(set)
    for a, b in mesh.boundary_edges:
        adj[a].add(b)
        adj[b].add(a)
    seen, loops = set(), []
    for v in sorted(adj):
        if v in seen:
            continue
        comp, stack = set(), [v]
        while stack:
            x = stack.pop()
            if x in comp:
                continue
            comp.add(x)
            stack.extend(adj[x] - comp)
        seen |= comp
        loops.append(comp)
    return loops


def _ascent(mesh: TriMesh, u: np.ndarray, start: int, goal: float = 1.0) -> list:
    """Steepest ascent along mesh edges until ``u`` reaches ``goal``."""
    X = mesh.vertices
    path = [start]
    while u[path[-1]] < goal:
        i = path[-1]
        best, slope = None, 0.0
        for j in mesh.neighbors[i]:
            s = (u[j] - u[i]) / np.linalg.norm(X[j] - X[i])
            if s > slope:
                best, slope = j, s
        if best is None:
            raise ParamError(f"gradient trace stalls at vertex {i}")
        path.append(best)
    return path


def _cut(mesh: TriMesh, seam: list):
    """Duplicate the seam vertices; triangles left of the seam take the copies."""
    n = len(mesh.vertices)
    seam_edges = {(min(a, b), max(a, b)) for a, b in zip(seam, seam[1:])}
    directed = set(zip(seam, seam[1:]))
    dup = {v: n + i for i, v in enumerate(seam)}
    T = mesh.triangles.copy()
    fan = defaultdict(list)
    for t, tri in enumerate(mesh.triangles):
        for v in tri:
            if int(v) in dup:
                fan[int(v)].append(t)
    for v in seam:
        tris = fan[v]
        parent = {t: t for t in tris}

        def find(x):
            while parent[x] != x:
                x = parent[x]
            return x

        by_edge = defaultdict(list)
        left = set()
        for t in tris:
            tri = [int(x) for x in mesh.triangles[t]]
            for i in range(3):
                a, b = tri[i], tri[(i + 1) % 3]
                if (a, b) in directed:
                    left.add(t)
                if v in (a, b):
                    e = (min(a, b), max(a, b))
                    if e not in seam_edges:
                        by_edge[e].append(t)
        for ts in by_edge.values():
            for a, b in zip(ts, ts[1:]):
                parent[find(a)] = find(b)
        roots = {find(t) for t in left}
        for t in tris:
            if find(t) in roots:
                T[t][T[t] == v] = dup[v]
    X = np.vstack([mesh.vertices, mesh.vertices[seam]])
    return TriMesh(X, T), dup


def cylinder_param(mesh: TriMesh, weighting: str = "mean-value") -> CylinderParam:
    """(u, v) on a tube: u axial between the two loops, v around, cut along a seam."""
    loops = boundary_loops(mesh)
    if len(loops) != 2:
        raise ParamError(f"tube patch needs 2 boundary loops, found {len(loops)}")
    l0, l1 = loops
    u = harmonic_field(mesh, [(sorted(l0), 0.0), (sorted(l1), 1.0)], weighting).values
    seam = _ascent(mesh, u, min(l0))
    cut, dup = _cut(mesh, seam)
    n = len(mesh.vertices)
    fixed = np.zeros(len(cut.vertices), bool)
    fixed[seam] = True
    fixed[n:] = True
    target = np.zeros(len(cut.vertices))
    target[n:] = 1.0
    W = edge_weights(cut, weighting)
    v_cut = _harmonic_solve(W, fixed, target[fixed])
    v = v_cut[:n].copy()
    v[seam] = 0.0
    return CylinderParam(mesh, u, np.mod(v, 1.0), seam, cut, v_cut, (l0, l1))


def trace_polyedge(cyl: CylinderParam, start: int, end: int | None = None) -> list:
    """Vertex path from a corner on the u=0 loop.

    With ``end`` the path follows the straight parameter segment between
    the two corners (shortest path in the lifted (u, v) metric, crossing
    the seam when that is shorter).  Without it the path ascends u and its
    last vertex is the new corner on the far loop.
    """
    u, v, mesh = cyl.u, cyl.v, cyl.mesh
    if start not in cyl.loops[0]:
        raise ParamError(f"start vertex {start} is not on the u=0 loop")
    if end is None:
        return _ascent(mesh, u, start)
    if end not in cyl.loops[1]:
        raise ParamError(f"end vertex {end} is not on the u=1 loop")
    p0 = np.array([u[start], v[start]])
    ve = v[end] + np.round(v[start] - v[end])
    p1 = np.array([u[end], ve])
    d = p1 - p0
    # lift every vertex to the copy of v nearest the segment at its u
    line_v = p0[1] + d[1] * np.clip((u - p0[0]) / (d[0] or 1.0), 0, 1)
    vl = v + np.round(line_v - v)
    E = np.array(mesh.edges, int)
    a, b = E[:, 0], E[:, 1]
    dv = vl[b] - vl[a]
    dv = dv - np.round(dv)
    length = np.hypot(u[b] - u[a], dv)
    mid = np.column_stack([(u[a] + u[b]) / 2, vl[a] + dv / 2])
    s = np.clip(((mid - p0) @ d) / (d @ d), 0, 1)
    off = np.linalg.norm(mid - (p0 + s[:, None] * d), axis=1)
    cost = length + off + 1e-12
    n = len(u)
    G = sp.csr_matrix((np.concatenate([cost, cost]), (np.concatenate([a, b]), np.concatenate([b, a]))),
                      shape=(n, n))
    dist, pred = csgraph.dijkstra(G, indices=start, return_predecessors=True)
    if not np.isfinite(dist[end]):
        raise ParamError("no path between the corners")
    path = [end]
    while path[-1] != start:
        path.append(int(pred[path[-1]]))
    return path[::-1]


# -- surface nodes and the hex lattice ----------------------------------------------


@dataclass
class SurfaceNodes:
    index: np.ndarray  # (m, 3) lattice indices
    positions: np.ndarray  # (m, 3)
    triangles: np.ndarray  # (m, 3) vertex ids
    weights: np.ndarray  # (m, 3) barycentric


def lattice_params(resolution) -> np.ndarray:
    n0, n1, n2 = resolution
    g = np.meshgrid(np.linspace(0, 1, n0), np.linspace(0, 1, n1), np.linspace(0, 1, n2), indexing="ij")
    return np.stack(g, axis=-1)


def _surface_index(resolution) -> np.ndarray:
    idx = np.indices(resolution).reshape(3, -1).T
    hi = np.array(resolution) - 1
    on = np.any((idx == 0) | (idx == hi), axis=1)
    return idx[on]


def place_surface_nodes(sp_: SurfaceParam, resolution) -> SurfaceNodes:
    """Barycentric placement of every boundary lattice node on the surface."""
    resolution = tuple(int(r) for r in resolution)
    if any(r < 2 for r in resolution):
        raise ParamError("lattice resolution must be >= 2 per axis")
    idx = _surface_index(resolution)
    params = idx / (np.array(resolution) - 1.0)
    tris = np.zeros((len(idx), 3), int)
    bary = np.zeros((len(idx), 3))
    done = np.zeros(len(idx), bool)
    T = sp_.mesh.triangles
    for code in range(6):
        axis, val = divmod(code, 2)
        o = [k for k in range(3) if k != axis]
        sel = np.flatnonzero(~done & (params[:, axis] == val))
        if sel.size == 0:
            continue
        ft = np.flatnonzero(sp_.tri_face == code)
        if ft.size == 0:
            raise ParamError(f"cube face {code} has no triangles")
        P = sp_.uvw[T[ft]][:, :, o]  # (t, 3, 2)
        e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
        area = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        sign = np.sign(np.median(area))
        flipped = np.flatnonzero(area * sign <= 0)
        if flipped.size:
            raise ParamError(f"parametric triangle {int(ft[flipped[0]])} is flipped or degenerate")
        q = params[sel][:, o]  # (m, 2)
        rel = q[:, None, :] - P[None, :, 0, :]  # (m, t, 2)
        l1 = (rel[..., 0] * e2[None, :, 1] - rel[..., 1] * e2[None, :, 0]) / area
        l2 = (e1[None, :, 0] * rel[..., 1] - e1[None, :, 1] * rel[..., 0]) / area
        lam = np.stack([1 - l1 - l2, l1, l2], axis=-1)  # (m, t, 3)
        score = lam.min(axis=-1)
        best = score.argmax(axis=1)
        worst = score[np.arange(len(sel)), best]
        if np.any(worst < -1e-9):
            k = sel[np.flatnonzero(worst < -1e-9)[0]]
            raise ParamError(f"point location failed for node {tuple(int(x) for x in idx[k])}")
        w = np.clip(lam[np.arange(len(sel)), best], 0, None)
        bary[sel] = w / w.sum(axis=1, keepdims=True)
        tris[sel] = T[ft[best]]
        done[sel] = True
    X = sp_.mesh.vertices
    pos = np.einsum("mk,mkd->md", bary, X[tris])
    return SurfaceNodes(idx, pos, tris, bary)


@dataclass
class HexSampleGrid:
    positions: np.ndarray  # (n0, n1, n2, 3)
    fixed: np.ndarray  # (n0, n1, n2) bool, surface-fixed nodes
    density: np.ndarray | None = None
    energy_log: list = field(default_factory=list)
    converged: bool = False
    sweeps: int = 0

    @property
    def resolution(self) -> tuple:
        return self.positions.shape[:3]

    @property
    def params(self) -> np.ndarray:
        return lattice_params(self.resolution)

    def copy(self) -> "HexSampleGrid":
        return HexSampleGrid(self.positions.copy(), self.fixed.copy(),
                             None if self.density is None else self.density.copy(),
                             list(self.energy_log), self.converged, self.sweeps)


def transfinite_fill(P: np.ndarray) -> np.ndarray:
    """Trilinear (transfinite) blend of the six boundary faces of ``P``."""
    n0, n1, n2 = P.shape[:3]
    s = [np.linspace(0, 1, n).reshape([-1 if k == a else 1 for k in range(3)] + [1])
         for a, n in enumerate((n0, n1, n2))]
    out = np.zeros_like(P)

    def take(ends):
        sl = tuple(slice(None) if e is None else e for e in ends)
        shape = [1 if e is not None else P.shape[k] for k, e in enumerate(ends)]
        return P[sl].reshape(shape + [P.shape[3]])

    import itertools

    for mask in itertools.product((0, 1), repeat=3):
        m = sum(mask)
        if m == 0:
            continue
        sign = 1 if m % 2 else -1
        axes = [a for a in range(3) if mask[a]]
        for ends in itertools.product((0, -1), repeat=m):
            w = 1.0
            e3 = [None] * 3
            for a, e in zip(axes, ends):
                e3[a] = e
                w = w * ((1 - s[a]) if e == 0 else s[a])
            out = out + sign * w * take(e3)
    return out


def build_hex_grid(sp_: SurfaceParam, resolution, density=None) -> HexSampleGrid:
    """Lattice with surface nodes placed and interior nodes blended in."""
    nodes = place_surface_nodes(sp_, resolution)
    return lattice_from_boundary(nodes.index, nodes.positions, resolution, density)


def lattice_from_boundary(index, positions, resolution, density=None) -> HexSampleGrid:
    P = np.zeros(tuple(resolution) + (3,))
    fixed = np.zeros(tuple(resolution), bool)
    index = np.asarray(index, int)
    P[index[:, 0], index[:, 1], index[:, 2]] = positions
    fixed[index[:, 0], index[:, 1], index[:, 2]] = True
    init = transfinite_fill(P)
    P[~fixed] = init[~fixed]
    return HexSampleGrid(P, fixed, density)


def lattice_energy(P: np.ndarray) -> float:
    """Sum of squared lattice-edge lengths."""
    return float(sum(np.sum(np.diff(P, axis=a) ** 2) for a in range(3)))


def _lattice_system(fixed: np.ndarray):
    shape = fixed.shape
    N = fixed.size
    ids = np.arange(N).reshape(shape)
    rows, cols = [], []
    for a in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        i, j = ids[tuple(lo)].ravel(), ids[tuple(hi)].ravel()
        rows += [i, j]
        cols += [j, i]
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    Adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(N, N))
    free = np.flatnonzero(~fixed.ravel())
    fix = np.flatnonzero(fixed.ravel())
    deg = np.asarray(Adj.sum(axis=1)).ravel()[free]
    Aff = Adj[free][:, free].tocsr()
    Afx = Adj[free][:, fix].tocsr()
    return free, fix, deg, Aff, Afx


def volumetric_relax(grid: HexSampleGrid, threshold: float | None = None, max_iters: int = 10000,
                     mode: str = "gauss-seidel") -> HexSampleGrid:
    """Move interior nodes to the mean of their lattice neighbours.

    Sweeps run in lexicographic Gauss-Seidel order (or Jacobi with
    ``mode="jacobi"``) until the largest displacement in a sweep drops
    below ``threshold`` (default 1e-6 of the bounding-box diagonal).  The
    neighbour-difference energy is logged before the first sweep and after
    every sweep.  Fixed nodes never move.
    """
    if mode not in ("gauss-seidel", "jacobi"):
        raise ParamError(f"unknown relaxation mode {mode!r}")
    out = grid.copy()
    P = out.positions
    flat = P.reshape(-1, 3)
    if threshold is None:
        threshold = 1e-6 * float(np.linalg.norm(flat.max(axis=0) - flat.min(axis=0)))
    free, fix, deg, Aff, Afx = _lattice_system(out.fixed)
    out.energy_log = [lattice_energy(P)]
    out.converged = False
    out.sweeps = 0
    if free.size == 0:
        out.converged = True
        return out
    if np.any(deg == 0):
        raise ParamError("free lattice node without neighbours")
    b = Afx @ flat[fix]
    x = flat[free].copy()
    if mode == "gauss-seidel":
        M = (sp.diags(deg) - sp.tril(Aff, k=-1)).tocsr()
        U = sp.triu(Aff, k=1).tocsr()
    for it in range(1, max_iters + 1):
        if mode == "gauss-seidel":
            xn = spsolve_triangular(M, b + U @ x, lower=True)
        else:
            xn = (b + Aff @ x) / deg[:, None]
        disp = float(np.max(np.linalg.norm(xn - x, axis=1)))
        x = xn
        flat[free] = x
        out.energy_log.append(lattice_energy(P))
        out.sweeps = it
        if disp < threshold:
            out.converged = True
            break
    return out


def relax_collar(a: HexSampleGrid, b: HexSampleGrid, axis: int = 0, k: int = 2,
                 threshold: float | None = None, max_iters: int = 10000):
    """Re-smooth across a seam where the +axis face of ``a`` meets the
    -axis face of ``b``.

    ``k`` cell layers on each side are relaxed together; the outermost
    layer of the collar and every node on the lateral surface stay fixed,
    while the shared face's inner nodes become free.
    """
    if k < 1:
        raise ParamError("collar depth must be >= 1")
    na, nb = a.resolution[axis], b.resolution[axis]
    if k >= min(na, nb):
        raise ParamError("collar deeper than the lattices")
    sa = [slice(None)] * 3
    sa[axis] = slice(na - 1 - k, na)
    sb = [slice(None)] * 3
    sb[axis] = slice(1, k + 1)
    face_a = np.take(a.positions, na - 1, axis=axis)
    face_b = np.take(b.positions, 0, axis=axis)
    if face_a.shape != face_b.shape or not np.allclose(face_a, face_b, atol=1e-9):
        raise ParamError("seam faces do not coincide")
    P = np.concatenate([a.positions[tuple(sa)], b.positions[tuple(sb)]], axis=axis)
    F = np.concatenate([a.fixed[tuple(sa)], b.fixed[tuple(sb)]], axis=axis)
    F = F.copy()
    lateral = np.zeros(F.shape, bool)
    for t in range(3):
        if t != axis:
            idx = [slice(None)] * 3
            idx[t] = 0
            lateral[tuple(idx)] = True
            idx[t] = -1
            lateral[tuple(idx)] = True
    F[:] = lateral
    ends = [slice(None)] * 3
    ends[axis] = 0
    F[tuple(ends)] = True
    ends[axis] = -1
    F[tuple(ends)] = True
    r = volumetric_relax(HexSampleGrid(P, F), threshold, max_iters)
    a2, b2 = a.copy(), b.copy()
    a2.positions[tuple(sa)] = np.take(r.positions, range(0, k + 1), axis=axis)
    b2.positions[tuple(sb)] = np.take(r.positions, range(k + 1, 2 * k + 1), axis=axis)
    idx = [slice(None)] * 3
    idx[axis] = 0
    b2.positions[tuple(idx)] = np.take(r.positions, k, axis=axis)
    return a2, b2, r


# -- synthetic inputs ----------------------------------------------------------------


def cube_mesh(n: int = 4, shape=None):
    """Closed cube surface with ``n x n`` squares per face, plus its annotation.

    ``shape`` optionally maps unit-cube points (m, 3) to space.
    """
    verts, index = [], {}

    def vid(p):
        key = tuple(int(x) for x in p)
        if key not in index:
            index[key] = len(verts)
            verts.append(key)
        return index[key]

    tris = []
    for axis in range(3):
        o = [k for k in range(3) if k != axis]
        for val in (0, n):
            for i in range(n):
                for j in range(n):
                    q = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = [0, 0, 0]
                        p[axis] = val
                        p[o[0]] = i + di
                        p[o[1]] = j + dj
                        q.append(vid(p))
                    # outward orientation
                    flip = (val == n) == (axis == 1)
                    if flip:
                        q = q[::-1]
                    tris += [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
    X = np.array(verts, float) / n
    if shape is not None:
        X = np.asarray(shape(X), float)
    corners = [index[tuple(n * c for c in cube_corner(i))] for i in range(8)]
    poly_edges, ends = [], []
    for i in range(8):
        for axis in range(3):
            c = cube_corner(i)
            if c[axis] == 0:
                path = []
                for t in range(n + 1):
                    p = [n * x for x in c]
                    p[axis] = t
                    path.append(index[tuple(p)])
                poly_edges.append(path)
                ends.append((i, i | (1 << axis)))
    rects = []
    for axis in range(3):
        for val in (0, 1):
            members = [e for e, (p, q) in enumerate(ends)
                       if cube_corner(p)[axis] == val and cube_corner(q)[axis] == val]
            rects.append(members)
    return TriMesh(X, np.array(tris)), PatchAnnotation([corners], [poly_edges], [rects])


def tube_mesh(n_rings: int = 8, n_around: int = 16, radius: float = 1.0, length: float = 1.0):
    """Open straight cylinder along z; ring r sits at z = r / n_rings * length."""
    th = 2 * np.pi * np.arange(n_around) / n_around
    X = np.array([[radius * np.cos(t), radius * np.sin(t), length * r / n_rings]
                  for r in range(n_rings + 1) for t in th])

    def vid(r, i):
        return r * n_around + i % n_around

    T = []
    for r in range(n_rings):
        for i in range(n_around):
            T.append([vid(r, i), vid(r, i + 1), vid(r + 1, i + 1)])
            T.append([vid(r, i), vid(r + 1, i + 1), vid(r + 1, i)])
    return TriMesh(X, np.array(T))


def bent_tube(p: np.ndarray, bend: float = np.pi / 2, r_in: float = 1.0, r_out: float = 2.0,
              height: float = 1.0) -> np.ndarray:
    """Map unit-cube points to a box tube bent around the z axis."""
    p = np.asarray(p, float)
    phi = bend * p[..., 0]
    R = r_in + (r_out - r_in) * p[..., 1]
    return np.stack([R * np.cos(phi), R * np.sin(phi), height * p[..., 2]], axis=-1)


def bent_tube_lattice(n: int = 16) -> HexSampleGrid:
    """Lattice whose surface nodes lie on a bent tube; interior blended in."""
    res = (n, n, n)
    idx = _surface_index(res)
    pos = bent_tube(idx / (n - 1.0))
    return lattice_from_boundary(idx, pos, res)
