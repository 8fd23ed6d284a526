"""Generalized poly-cube graphs: cuboid charts glued face to face.

Glues identify a face of one cuboid with a face of another (or the same)
cuboid, up to a quarter-turn rotation.  There is no global embedding; a
point is always given in some cuboid's chart and carried across glues by
transition maps.  Rational inputs give exact transitions.

Rotation convention: a face's local frame uses its two transverse axes in
ascending order (u < v < w), measured from the face's lower corner.  A
rotation ``n`` turns that frame by ``n`` quarter turns,
``(s, t) -> (H - t, s)`` per turn on an ``W x H`` face, before it is
identified with the target face's frame.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .bspline import eval_basis_many
from .control_grid import ControlGrid, Domain, GridError, add_boundary_layer, build_regular, face_axis, frac, _others

FACES = ("-u", "+u", "-v", "+v", "-w", "+w")


class GpcError(ValueError):
    """Invalid graph operation or evaluation request."""


@dataclass(frozen=True)
class Glue:
    a: object
    face_a: str
    b: object
    face_b: str
    rotation: int


@dataclass
class GpcGraph:
    cuboids: dict = field(default_factory=dict)  # id -> (lo3, hi3)
    glues: list = field(default_factory=list)

    def add_cuboid(self, cid, lo, hi) -> "GpcGraph":
        lo = tuple(map(frac, lo))
        hi = tuple(map(frac, hi))
        if any(h <= l for l, h in zip(lo, hi)):
            raise GpcError(f"cuboid {cid} has empty extent")
        self.cuboids[cid] = (lo, hi)
        return self

    def face_extent(self, cid, face) -> tuple:
        lo, hi = self.cuboids[cid]
        axis, _ = face_axis(face)
        return tuple(hi[a] - lo[a] for a in _others(axis))

    def glued(self, cid, face):
        for g in self.glues:
            if (g.a, g.face_a) == (cid, face) or (g.b, g.face_b) == (cid, face):
                return g
        return None

    def neighbors(self, cid) -> list:
        out = set()
        for g in self.glues:
            if g.a == cid:
                out.add(g.b)
            if g.b == cid:
                out.add(g.a)
        return sorted(out, key=_sort_key)


def _sort_key(x):
    return (str(type(x)), x)


def _rot(s, t, W, H, n):
    for _ in range(n % 4):
        s, t, W, H = H - t, s, H, W
    return s, t, W, H


def glue(graph: GpcGraph, a, face_a: str, b, face_b: str, rotation: int = 0) -> GpcGraph:
    """Record a face gluing after checking that the faces are free and match."""
    for cid in (a, b):
        if cid not in graph.cuboids:
            raise GpcError(f"unknown cuboid {cid!r}")
    face_axis(face_a)
    face_axis(face_b)
    if (a, face_a) == (b, face_b):
        raise GpcError("a face cannot be glued to itself")
    for cid, f in ((a, face_a), (b, face_b)):
        if graph.glued(cid, f) is not None:
            raise GpcError(f"face {f} of cuboid {cid!r} is already glued")
    W, H = graph.face_extent(a, face_a)
    _, _, W2, H2 = _rot(0, 0, W, H, rotation)
    if (W2, H2) != graph.face_extent(b, face_b):
        raise GpcError(
            f"face sizes differ: {graph.face_extent(a, face_a)} rotated {rotation} vs "
            f"{graph.face_extent(b, face_b)}"
        )
    graph.glues.append(Glue(a, face_a, b, face_b, rotation % 4))
    return graph


def _face_frame(graph, cid, face):
    lo, hi = graph.cuboids[cid]
    axis, side = face_axis(face)
    coord = hi[axis] if side > 0 else lo[axis]
    o = _others(axis)
    return lo, axis, side, coord, o, (hi[o[0]] - lo[o[0]], hi[o[1]] - lo[o[1]])


def _step(graph: GpcGraph, g: Glue, h, forward: bool):
    """Carry h across one glue (a -> b when forward)."""
    src, fs, dst, fd = (g.a, g.face_a, g.b, g.face_b) if forward else (g.b, g.face_b, g.a, g.face_a)
    lo, axis, side, coord, o, (W, H) = _face_frame(graph, src, fs)
    lo2, axis2, side2, coord2, o2, _ = _face_frame(graph, dst, fd)
    s, t = h[o[0]] - lo[o[0]], h[o[1]] - lo[o[1]]
    depth = side * (h[axis] - coord)
    n = g.rotation if forward else (4 - g.rotation) % 4
    s2, t2, _, _ = _rot(s, t, W, H, n)
    out = [None] * 3
    out[o2[0]] = lo2[o2[0]] + s2
    out[o2[1]] = lo2[o2[1]] + t2
    out[axis2] = coord2 - side2 * depth
    return tuple(out)


def _glue_between(graph, x, y):
    for g in graph.glues:
        if (g.a, g.b) == (x, y):
            return g, True
        if (g.b, g.a) == (x, y):
            return g, False
    return None, None


def shortest_path(graph: GpcGraph, start, goal) -> list:
    """Shortest glue path; ties go to the lexicographically smallest id sequence."""
    if start not in graph.cuboids or goal not in graph.cuboids:
        raise GpcError("unknown cuboid")
    dist = {goal: 0}
    q = deque([goal])
    while q:
        x = q.popleft()
        for y in graph.neighbors(x):
            if y not in dist:
                dist[y] = dist[x] + 1
                q.append(y)
    if start not in dist:
        raise GpcError(f"cuboids {start!r} and {goal!r} are not connected")
    path = [start]
    while path[-1] != goal:
        x = path[-1]
        path.append(min((y for y in graph.neighbors(x) if dist.get(y) == dist[x] - 1), key=_sort_key))
    return path


def transition(graph: GpcGraph, src, dst, h) -> tuple:
    """Map parameters from the chart of ``src`` to the chart of ``dst``."""
    h = tuple(h)
    if src == dst:
        return h
    path = shortest_path(graph, src, dst)
    for x, y in zip(path, path[1:]):
        g, fwd = _glue_between(graph, x, y)
        h = _step(graph, g, h, fwd)
    return h


# ---------------------------------------------------------------------------
# splines over a graph


@dataclass
class GpcSpline:
    """One control grid per cuboid, open across glued faces and clamped on
    free ones.  Records anchored on a glued face are kept only in the
    cuboid of smaller id, so each shared point exists once."""

    graph: GpcGraph
    grids: dict  # cid -> ControlGrid
    multi_step: bool = False

    def _arrays(self, cid):
        cache = self.__dict__.setdefault("_cache", {})
        g = self.grids[cid]
        if cid not in cache or cache[cid][0] != len(g.points):
            keys = list(g.points)
            K = np.array([[[float(x) for x in kv] for kv in k] for k in keys]).reshape(-1, 3, 5)
            W = np.array([float(g.points[k].weight) for k in keys])
            P = np.array([g.points[k].payload for k in keys]).reshape(len(keys), -1)
            cache[cid] = (len(keys), K, W, P)
        return cache[cid][1:]


def build_gpc_spline(graph: GpcGraph, intervals: int | dict = 2, payload=None, seed: int = 0) -> GpcSpline:
    """Uniform grids on every cuboid of the graph.

    ``intervals`` is the number of knot intervals per axis (or a dict per
    cuboid).  ``payload`` is a callable ``(cid, anchor) -> vector``; the
    default draws reproducible random 3-vectors.
    """
    rng = np.random.default_rng(seed)
    grids = {}
    for cid in sorted(graph.cuboids, key=_sort_key):
        lo, hi = graph.cuboids[cid]
        n = intervals[cid] if isinstance(intervals, dict) else intervals
        S = [[lo[a] + (hi[a] - lo[a]) * Fraction(i, n) for i in range(n + 1)] for a in range(3)]
        free = [f for f in FACES if graph.glued(cid, f) is None]
        g = add_boundary_layer(build_regular(*S), faces=free)
        for key in list(g.points):
            anchor = tuple(k[2] for k in key)
            if _owned_elsewhere(graph, cid, anchor):
                del g.points[key]
                continue
            p = g.points[key]
            p.payload = np.asarray(payload(cid, anchor), float) if payload else rng.normal(size=3)
        grids[cid] = g
    return GpcSpline(graph, grids)


def _owned_elsewhere(graph, cid, anchor) -> bool:
    lo, hi = graph.cuboids[cid]
    for f in FACES:
        axis, side = face_axis(f)
        if anchor[axis] != (hi[axis] if side > 0 else lo[axis]):
            continue
        g = graph.glued(cid, f)
        if g is None:
            continue
        other = g.b if (g.a, g.face_a) == (cid, f) else g.a
        if _sort_key(other) < _sort_key(cid):
            return True
    return False


def _gather(gs: GpcSpline, cid, h) -> list:
    graph = gs.graph
    hosts = [cid]
    lo, hi = graph.cuboids[cid]
    for f in FACES:
        axis, side = face_axis(f)
        if h[axis] == (hi[axis] if side > 0 else lo[axis]):
            g = graph.glued(cid, f)
            if g is not None:
                hosts.append(g.b if (g.a, g.face_a) == (cid, f) else g.a)
    out = set()
    for x in hosts:
        out.add(x)
        out.update(graph.neighbors(x))
        if gs.multi_step:
            for y in graph.neighbors(x):
                out.update(graph.neighbors(y))
    return sorted(out, key=_sort_key)


def evaluate_global(gs: GpcSpline, cid, h) -> np.ndarray:
    """Rational point-based sum over the host cuboid and its glued neighbours."""
    graph = gs.graph
    if cid not in graph.cuboids:
        raise GpcError(f"unknown cuboid {cid!r}")
    h = tuple(map(frac, h))
    lo, hi = graph.cuboids[cid]
    if any(not lo[a] <= h[a] <= hi[a] for a in range(3)):
        raise GpcError(f"parameter {tuple(map(float, h))} outside cuboid {cid!r}")
    num = None
    den = 0.0
    for y in _gather(gs, cid, h):
        hy = [float(x) for x in transition(graph, cid, y, h)]
        K, W, P = gs._arrays(y)
        if not len(W):
            continue
        inside = np.all((K[:, :, 0] <= hy) & (hy <= K[:, :, 4]), axis=1)
        if not inside.any():
            continue
        b = W[inside].copy()
        for a in range(3):
            b *= eval_basis_many(K[inside, a], hy[a])
        contrib = b @ P[inside]
        num = contrib if num is None else num + contrib
        den += float(b.sum())
    if den <= 1e-14:
        raise GpcError("rational denominator vanishes")
    return num / den


# ---------------------------------------------------------------------------
# processing order


@dataclass
class AbstractionGraph:
    nodes: list
    edges: list  # (a, b) pairs sharing a boundary

    def adjacency(self) -> dict:
        adj = {n: set() for n in self.nodes}
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return adj


def propagation_order(agraph: AbstractionGraph, start) -> list:
    """Breadth-first order from ``start``; neighbours are queued in sorted order."""
    adj = agraph.adjacency()
    if start not in adj:
        raise GpcError(f"unknown node {start!r}")
    order, seen, q = [], {start}, deque([start])
    while q:
        x = q.popleft()
        order.append(x)
        for y in sorted(adj[x], key=_sort_key):
            if y not in seen:
                seen.add(y)
                q.append(y)
    missing = [n for n in agraph.nodes if n not in seen]
    if missing:
        raise GpcError(f"node {missing[0]!r} is disconnected")
    return order


# ---------------------------------------------------------------------------
# ill-point census


@dataclass
class IllPointCensus:
    counts: dict  # "type-1".."type-4" -> int
    singular: int
    unclassified: int
    locations: dict  # type -> list of descriptors

    @property
    def total(self) -> int:
        return sum(self.counts.values())


class _DSU:
    def __init__(self):
        self.p = {}

    def find(self, x):
        self.p.setdefault(x, x)
        while self.p[x] != x:
            self.p[x] = self.p[self.p[x]]
            x = self.p[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.p[max(ra, rb, key=repr)] = min(ra, rb, key=repr)


def _corner_point(graph, cid, signs):
    lo, hi = graph.cuboids[cid]
    return tuple(hi[a] if signs[a] else lo[a] for a in range(3))


def _which_corner(graph, cid, pt):
    lo, hi = graph.cuboids[cid]
    signs = []
    for a in range(3):
        if pt[a] == lo[a]:
            signs.append(0)
        elif pt[a] == hi[a]:
            signs.append(1)
        else:
            raise GpcError("transition does not map corners to corners")
    return tuple(signs)


def _face_corners(face):
    axis, side = face_axis(face)
    for signs in itertools.product((0, 1), repeat=3):
        if signs[axis] == (1 if side > 0 else 0):
            yield signs


def ill_point_census(graph: GpcGraph) -> IllPointCensus:
    """Classify edge and corner classes of the glued cuboids.

    An edge class gathering ``k`` cuboid edges with ``g`` glues between
    their faces is regular for (1, 0), (2, 1), (4, 4); a concave line
    (k = 3, g = 2) is Type-1; k > 4 is singular.  Corner classes with
    ``c`` cuboid corners and ``f`` free incident faces give Type-2 (5, 5),
    Type-3 (4, 6) and Type-4 (7, 3).
    """
    corners = _DSU()
    edges = _DSU()
    for cid in graph.cuboids:
        for s in itertools.product((0, 1), repeat=3):
            corners.find((cid, s))
        for axis in range(3):
            for s in itertools.product((0, 1), repeat=2):
                edges.find((cid, axis, s))
    for g in graph.glues:
        for s in _face_corners(g.face_a):
            pt = _corner_point(graph, g.a, s)
            t = _which_corner(graph, g.b, _step(graph, g, pt, True))
            corners.union((g.a, s), (g.b, t))
        # edges on the face: pairs of face corners differing along one axis
        fa = list(_face_corners(g.face_a))
        for s1, s2 in itertools.combinations(fa, 2):
            diff = [a for a in range(3) if s1[a] != s2[a]]
            if len(diff) != 1:
                continue
            t1 = _which_corner(graph, g.b, _step(graph, g, _corner_point(graph, g.a, s1), True))
            t2 = _which_corner(graph, g.b, _step(graph, g, _corner_point(graph, g.a, s2), True))
            ax_b = [a for a in range(3) if t1[a] != t2[a]][0]
            ea = (g.a, diff[0], tuple(s1[a] for a in _others(diff[0])))
            eb = (g.b, ax_b, tuple(t1[a] for a in _others(ax_b)))
            edges.union(ea, eb)

    def incident_faces(cid, signs, axes):
        names = "uvw"
        return [(cid, ("+" if signs[a] else "-") + names[a]) for a in axes]

    counts = {p: 0 for p in ("type-1", "type-2", "type-3", "type-4")}
    locations = {p: [] for p in counts}
    singular = unclassified = 0

    classes = {}
    for m in list(edges.p):
        classes.setdefault(edges.find(m), []).append(m)
    for rep, members in classes.items():
        k = len(members)
        faces = []
        for cid, axis, s in members:
            signs = [0, 0, 0]
            for a, v in zip(_others(axis), s):
                signs[a] = v
            faces += incident_faces(cid, signs, _others(axis))
        g = sum(1 for c, f in faces if graph.glued(c, f) is not None) // 2
        if k > 4:
            singular += 1
        elif (k, g) == (3, 2):
            counts["type-1"] += 1
            locations["type-1"].append(sorted(members, key=repr)[0])
        elif (k, g) not in ((1, 0), (2, 1), (4, 4)):
            unclassified += 1

    classes = {}
    for m in list(corners.p):
        classes.setdefault(corners.find(m), []).append(m)
    kinds = {(5, 5): "type-2", (4, 6): "type-3", (7, 3): "type-4"}
    for rep, members in classes.items():
        c = len(members)
        f = sum(1 for cid, s in members for x in incident_faces(cid, s, range(3))
                if graph.glued(*x) is None)
        kind = kinds.get((c, f))
        if kind:
            counts[kind] += 1
            locations[kind].append(sorted(members, key=repr)[0])
        elif c > 8:
            singular += 1
    return IllPointCensus(counts, singular, unclassified, locations)


def load_graph(path) -> GpcGraph:
    """Read a graph file: JSON with 'cuboids' [{id, lo, hi}] and 'glues'
    [{a, face_a, b, face_b, rotation}]; rationals as 'p/q' strings."""
    import json

    with open(path) as fh:
        doc = json.load(fh)
    g = GpcGraph()
    for c in doc["cuboids"]:
        g.add_cuboid(c["id"], [Fraction(str(x)) for x in c["lo"]], [Fraction(str(x)) for x in c["hi"]])
    for e in doc.get("glues", []):
        glue(g, e["a"], e["face_a"], e["b"], e["face_b"], e.get("rotation", 0))
    return g
