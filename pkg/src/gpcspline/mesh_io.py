"""Triangle mesh input, validation and VTK lattice export."""
from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Malformed mesh or lattice input."""


@dataclass
class TriMesh:
    vertices: np.ndarray  # (n, 3)
    triangles: np.ndarray  # (m, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, int).reshape(-1, 3)
        self._build()

    def _build(self):
        e2t = defaultdict(list)
        for t, tri in enumerate(self.triangles):
            for i in range(3):
                a, b = int(tri[i]), int(tri[(i + 1) % 3])
                e2t[(min(a, b), max(a, b))].append(t)
        self.edges = sorted(e2t)
        self.edge_index = {e: i for i, e in enumerate(self.edges)}
        self.edge_triangles = [e2t[e] for e in self.edges]
        nbr = defaultdict(set)
        for a, b in self.edges:
            nbr[a].add(b)
            nbr[b].add(a)
        self.neighbors = [sorted(nbr[v]) for v in range(len(self.vertices))]

    @property
    def boundary_edges(self) -> list:
        return [e for e, ts in zip(self.edges, self.edge_triangles) if len(ts) == 1]

    def euler_characteristic(self) -> int:
        return len(self.vertices) - len(self.edges) + len(self.triangles)

    def components(self) -> int:
        parent = list(range(len(self.vertices)))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in self.edges:
            parent[find(a)] = find(b)
        used = {int(v) for v in self.triangles.ravel()}
        return len({find(v) for v in used})


# -- loading -------------------------------------------------------------------


def _faces_to_tris(faces):
    for fid, f in enumerate(faces):
        if len(f) != 3:
            raise MeshError(f"face {fid} has {len(f)} vertices; only triangles are accepted")
    return faces


def _load_obj(text):
    verts, faces = [], []
    for ln, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
                if len(verts[-1]) != 3:
                    raise ValueError
            elif parts[0] == "f":
                faces.append([int(tok.split("/")[0]) - 1 for tok in parts[1:]])
        except ValueError:
            raise MeshError(f"malformed OBJ line {ln}: {line!r}") from None
    return verts, faces


def _load_off(text):
    toks = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            toks.append(line.split())
    if not toks or not toks[0][0].endswith("OFF"):
        raise MeshError("missing OFF header")
    head = toks[0][1:] if len(toks[0]) > 1 else None
    rows = toks[1:]
    try:
        if head is None:
            head, rows = rows[0], rows[1:]
        nv, nf = int(head[0]), int(head[1])
        verts = [[float(x) for x in r[:3]] for r in rows[:nv]]
        faces = []
        for r in rows[nv: nv + nf]:
            k = int(r[0])
            faces.append([int(x) for x in r[1: 1 + k]])
    except (ValueError, IndexError):
        raise MeshError("malformed OFF body") from None
    if len(verts) != nv or len(faces) != nf:
        raise MeshError("OFF counts do not match the body")
    return verts, faces


def load_mesh(path, format: str | None = None) -> TriMesh:
    """Read an OBJ (v/f records) or OFF triangle mesh."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    text = path.read_text()
    if fmt == "obj":
        verts, faces = _load_obj(text)
    elif fmt == "off":
        verts, faces = _load_off(text)
    else:
        raise MeshError(f"unknown mesh format {fmt!r}")
    faces = _faces_to_tris(faces)
    n = len(verts)
    for fid, f in enumerate(faces):
        if any(not 0 <= i < n for i in f):
            raise MeshError(f"face {fid} references a missing vertex")
    return TriMesh(np.array(verts, float).reshape(-1, 3), np.array(faces, int).reshape(-1, 3))


def save_off(mesh: TriMesh, path) -> None:
    lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.triangles)} 0"]
    lines += [" ".join(repr(float(x)) for x in v) for v in mesh.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in t) for t in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


# -- annotation and validation ----------------------------------------------------


@dataclass
class PatchAnnotation:
    """Corners, poly-edges and rectangles of one or more cuboid patches."""

    corners: list  # per patch: 8 vertex ids
    poly_edges: list  # per patch: 12 vertex paths
    rectangles: list  # per patch: 6 groups of 4 poly-edge ids
    shared_boundary_map: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "PatchAnnotation":
        doc = json.loads(Path(path).read_text())
        return cls(doc["corners"], doc["poly_edges"], doc["rectangles"], doc.get("shared_boundary_map", {}))


@dataclass
class ValidationReport:
    manifold: bool
    closed: bool
    genus: int | None
    boundary_loops: int
    defects: list  # (kind, element id)

    @property
    def ok(self) -> bool:
        return not self.defects


def _boundary_loops(mesh: TriMesh) -> int:
    adj = defaultdict(set)
    for a, b in mesh.boundary_edges:
        adj[a].add(b)
        adj[b].add(a)
    seen, loops = set(), 0
    for v in adj:
        if v in seen:
            continue
        loops += 1
        stack = [v]
        while stack:
            x = stack.pop()
            if x in seen:
                continue
            seen.add(x)
            stack.extend(adj[x] - seen)
    return loops


def _check_annotation(mesh: TriMesh, ann: PatchAnnotation) -> list:
    out = []
    for p, (corners, paths, rects) in enumerate(zip(ann.corners, ann.poly_edges, ann.rectangles)):
        if len(corners) != 8:
            out.append(("corner-count", p))
        if len(paths) != 12:
            out.append(("poly-edge-count", p))
        for e, path in enumerate(paths):
            if len(path) < 2 or len(set(path)) != len(path):
                out.append(("poly-edge-not-simple", (p, e)))
                continue
            for a, b in zip(path, path[1:]):
                if (min(a, b), max(a, b)) not in mesh.edge_index:
                    out.append(("poly-edge-not-connected", (p, e)))
                    break
        ends = Counter(v for path in paths if path for v in (path[0], path[-1]))
        for c in corners:
            if ends.get(c, 0) != 3:
                out.append(("corner-valence", c))
        if len(rects) != 6 or any(len(r) != 4 for r in rects):
            out.append(("rectangle-count", p))
        for r_id, r in enumerate(rects):
            if any(not 0 <= e < len(paths) for e in r):
                out.append(("rectangle-bad-edge", (p, r_id)))
                continue
            deg = Counter(v for e in r for v in (paths[e][0], paths[e][-1]))
            if len(deg) != 4 or any(d != 2 for d in deg.values()):
                out.append(("rectangle-not-closed", (p, r_id)))
        used = Counter(e for r in rects for e in r)
        if any(used.get(e, 0) != 2 for e in range(len(paths))):
            out.append(("rectangle-cover", p))
    return out


def validate(mesh: TriMesh, annotation: PatchAnnotation | None = None) -> ValidationReport:
    """Check manifoldness, closedness, genus and the optional annotation."""
    defects = []
    n = len(mesh.vertices)
    for t, tri in enumerate(mesh.triangles):
        if any(not 0 <= i < n for i in tri) or len(set(tri.tolist())) != 3:
            defects.append(("bad-triangle", t))
    manifold = True
    for eid, ts in enumerate(mesh.edge_triangles):
        if len(ts) > 2:
            manifold = False
            defects.append(("non-manifold-edge", eid))
    closed = manifold and not mesh.boundary_edges
    genus = None
    loops = _boundary_loops(mesh)
    if closed:
        chi = mesh.euler_characteristic()
        genus = (2 * mesh.components() - chi) // 2
    if annotation is not None:
        defects += _check_annotation(mesh, annotation)
    return ValidationReport(manifold, closed, genus, loops, defects)


# -- VTK export ---------------------------------------------------------------


def export_vtk(lattice, path, density=None) -> None:
    """Write an (n0, n1, n2, 3) lattice as legacy ASCII hexahedra.

    ``lattice`` may also be any object with ``positions`` (and optionally
    ``density``) attributes.  A fourth payload column is taken as density.
    """
    if hasattr(lattice, "positions"):
        density = getattr(lattice, "density", None) if density is None else density
        lattice = lattice.positions
    X = np.asarray(lattice, float)
    if X.ndim != 4 or X.shape[3] not in (3, 4):
        raise MeshError("lattice must have shape (n0, n1, n2, 3 or 4)")
    if X.shape[3] == 4 and density is None:
        density = X[..., 3]
    X = X[..., :3]
    n0, n1, n2 = X.shape[:3]
    flat = X.reshape(-1, 3, order="F")
    bad = np.flatnonzero(~np.all(np.isfinite(flat), axis=1))
    if bad.size:
        i = int(bad[0])
        idx = (i % n0, (i // n0) % n1, i // (n0 * n1))
        raise MeshError(f"non-finite position at node {idx}")

    def nid(i, j, k):
        return i + n0 * (j + n1 * k)

    cells = []
    for k in range(n2 - 1):
        for j in range(n1 - 1):
            for i in range(n0 - 1):
                cells.append([nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k), nid(i, j + 1, k),
                              nid(i, j, k + 1), nid(i + 1, j, k + 1), nid(i + 1, j + 1, k + 1),
                              nid(i, j + 1, k + 1)])
    out = ["# vtk DataFile Version 3.0", "gpcspline lattice", "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {len(flat)} double"]
    out += [" ".join(repr(float(x)) for x in p) for p in flat]
    out.append(f"CELLS {len(cells)} {9 * len(cells)}")
    out += ["8 " + " ".join(map(str, c)) for c in cells]
    out.append(f"CELL_TYPES {len(cells)}")
    out += ["12"] * len(cells)
    if density is not None:
        d = np.asarray(density, float).reshape(-1, order="F")
        if d.size != len(flat):
            raise MeshError("density size does not match the lattice")
        out += [f"POINT_DATA {len(flat)}", "SCALARS density double 1", "LOOKUP_TABLE default"]
        out += [repr(float(x)) for x in d]
    Path(path).write_text("\n".join(out) + "\n")


def read_vtk_points(path) -> tuple:
    """Points and hexahedra from a file written by :func:`export_vtk`."""
    lines = Path(path).read_text().splitlines()
    i = next(k for k, l in enumerate(lines) if l.startswith("POINTS"))
    n = int(lines[i].split()[1])
    pts = np.array([[float(x) for x in l.split()] for l in lines[i + 1: i + 1 + n]])
    j = next(k for k, l in enumerate(lines) if l.startswith("CELLS"))
    m = int(lines[j].split()[1])
    cells = np.array([[int(x) for x in l.split()[1:]] for l in lines[j + 1: j + 1 + m]]).reshape(-1, 8)
    return pts, cells
