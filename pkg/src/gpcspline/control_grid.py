"""Trivariate T-mesh control grid in exact knot coordinates.

The grid keeps three things:

* a face store (:class:`TMesh`): axis-aligned rectangles in knot space,
  each with a multiplicity.  Knot vectors are inferred by walking a ray
  through this store.
* a cell tiling of the domain, used for subdivision and error bookkeeping.
* the weighted blending records (:class:`ControlPoint`), keyed by their
  three knot vectors.  Co-anchored points differ only in their knots.

All knot values are :class:`fractions.Fraction`.  Floating point only
appears in payloads and evaluation.
"""
from __future__ import annotations

import bisect
import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .bspline import split_basis

Knots = tuple  # five Fractions
Key = tuple  # three Knots


class GridError(ValueError):
    """Invalid grid operation."""


def frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**9)
    return Fraction(x)


def _others(axis: int) -> tuple[int, int]:
    return tuple(a for a in range(3) if a != axis)


# ----------------------------------------------------------------------------
# domain


@dataclass
class Domain:
    """Union of closed axis-aligned boxes in knot space."""

    boxes: list  # [(lo3, hi3)] with Fraction entries

    def __post_init__(self):
        self._planes = {}

    @classmethod
    def box(cls, lo, hi) -> "Domain":
        return cls([(tuple(map(frac, lo)), tuple(map(frac, hi)))])

    @property
    def lo(self):
        return tuple(min(b[0][a] for b in self.boxes) for a in range(3))

    @property
    def hi(self):
        return tuple(max(b[1][a] for b in self.boxes) for a in range(3))

    def planes(self, axis: int) -> list:
        """All box face coordinates along one axis."""
        if axis not in self._planes:
            vals = set()
            for lo, hi in self.boxes:
                vals.add(lo[axis])
                vals.add(hi[axis])
            self._planes[axis] = sorted(vals)
        return self._planes[axis]

    def contains_point(self, p, tol=0.0) -> bool:
        for lo, hi in self.boxes:
            if all(float(lo[a]) - tol <= p[a] <= float(hi[a]) + tol for a in range(3)):
                return True
        return False

    def contains(self, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(pts)
        inside = np.zeros(len(pts), bool)
        for lo, hi in self.boxes:
            lo_f = np.array([float(v) for v in lo]) - tol
            hi_f = np.array([float(v) for v in hi]) + tol
            inside |= np.all((pts >= lo_f) & (pts <= hi_f), axis=1)
        return inside

    def _pieces(self, lo, hi):
        """Split an open box by every domain plane into elementary pieces."""
        cuts = []
        for a in range(3):
            inner = [c for c in self.planes(a) if lo[a] < c < hi[a]]
            cuts.append([lo[a]] + inner + [hi[a]])
        for i, j, k in itertools.product(*(range(len(c) - 1) for c in cuts)):
            plo = (cuts[0][i], cuts[1][j], cuts[2][k])
            phi = (cuts[0][i + 1], cuts[1][j + 1], cuts[2][k + 1])
            yield plo, phi

    def _piece_inside(self, plo, phi) -> bool:
        mid = [(plo[a] + phi[a]) / 2 for a in range(3)]
        return any(all(lo[a] <= mid[a] <= hi[a] for a in range(3)) for lo, hi in self.boxes)

    def escapes(self, lo, hi) -> bool:
        """True when the open box (lo, hi) overlaps the complement of the domain."""
        if any(lo[a] >= hi[a] for a in range(3)):
            return False
        return any(not self._piece_inside(plo, phi) for plo, phi in self._pieces(lo, hi))

    def outside(self, lo, hi) -> bool:
        """True when the open box (lo, hi) does not meet the domain interior."""
        if any(lo[a] >= hi[a] for a in range(3)):
            return True
        return not any(self._piece_inside(plo, phi) for plo, phi in self._pieces(lo, hi))

    def is_boundary_plane(self, axis: int, c, p2) -> bool:
        """Whether the point with coordinate c on `axis` and others p2 lies on
        the domain boundary with the normal along `axis`."""
        o = _others(axis)
        eps = Fraction(1, 10**12)
        pt_lo = [None] * 3
        pt_hi = [None] * 3
        for i, a in enumerate(o):
            pt_lo[a] = pt_hi[a] = p2[i]
        pt_lo[axis] = c - eps
        pt_hi[axis] = c + eps
        return self.contains_point([float(v) for v in pt_lo]) != self.contains_point(
            [float(v) for v in pt_hi]
        )


# ----------------------------------------------------------------------------
# face store


class TMesh:
    """Axis-aligned face rectangles with multiplicities.

    A face perpendicular to ``axis`` at ``coord`` covers a closed rectangle
    in the two remaining axes.  A ray meets the plane when the rectangle
    contains the ray's transverse coordinates; touching an edge counts.
    Overlapping faces never add up: the crossing multiplicity is the
    maximum over the faces met.
    """

    def __init__(self):
        self._faces = defaultdict(list)
        self._coords = [[], [], []]

    def copy(self) -> "TMesh":
        m = TMesh()
        for k, v in self._faces.items():
            m._faces[k] = list(v)
        m._coords = [list(c) for c in self._coords]
        return m

    def add_face(self, axis: int, coord, lo2, hi2, mult: int = 1) -> None:
        coord = frac(coord)
        rect = (frac(lo2[0]), frac(hi2[0]), frac(lo2[1]), frac(hi2[1]), int(mult))
        plane = self._faces[(axis, coord)]
        for r in plane:
            if r[0] <= rect[0] and rect[1] <= r[1] and r[2] <= rect[2] and rect[3] <= r[3] and r[4] >= rect[4]:
                break
        else:
            plane.append(rect)
        cs = self._coords[axis]
        i = bisect.bisect_left(cs, coord)
        if i == len(cs) or cs[i] != coord:
            cs.insert(i, coord)

    def set_multiplicity(self, axis: int, coord, lo2, hi2, mult: int) -> None:
        """Replace the multiplicity of faces lying inside a rectangle."""
        coord = frac(coord)
        lo2 = tuple(map(frac, lo2))
        hi2 = tuple(map(frac, hi2))
        new = []
        for r in self._faces.get((axis, coord), []):
            if lo2[0] <= r[0] and r[1] <= hi2[0] and lo2[1] <= r[2] and r[3] <= hi2[1]:
                new.append(r[:4] + (mult,))
            else:
                new.append(r)
        self._faces[(axis, coord)] = new

    def faces(self):
        for (axis, coord), rects in self._faces.items():
            for r in rects:
                yield axis, coord, r

    def coords(self, axis: int) -> list:
        return self._coords[axis]

    def multiplicity(self, axis: int, coord, p2) -> int:
        best = 0
        for r in self._faces.get((axis, coord), ()):
            if r[0] <= p2[0] <= r[1] and r[2] <= p2[1] <= r[3]:
                if r[4] > best:
                    best = r[4]
        return best

    def crossings(self, axis: int, p, direction: int):
        """Yield (coord, mult) met by the ray from p along +/- axis, nearest first.

        The starting plane itself is excluded.
        """
        o = _others(axis)
        p2 = (p[o[0]], p[o[1]])
        cs = self._coords[axis]
        x = p[axis]
        if direction > 0:
            i = bisect.bisect_right(cs, x)
            rng = range(i, len(cs))
        else:
            i = bisect.bisect_left(cs, x)
            rng = range(i - 1, -1, -1)
        for j in rng:
            m = self.multiplicity(axis, cs[j], p2)
            if m:
                yield cs[j], m


# ----------------------------------------------------------------------------
# control points


@dataclass
class ControlPoint:
    """One weighted blending record."""

    knots: Key
    weight: Fraction
    payload: np.ndarray
    kind: str = "interior"

    @property
    def anchor(self):
        return tuple(k[2] for k in self.knots)

    def support(self):
        return tuple(k[0] for k in self.knots), tuple(k[4] for k in self.knots)


@dataclass
class RefinementLog:
    """Ordered record of every basis split applied during refinement."""

    entries: list = field(default_factory=list)

    def add(self, key, knot, axis, c1, c2, children):
        self.entries.append((key, knot, axis, c1, c2, tuple(children)))

    def __len__(self):
        return len(self.entries)


def replay(points: dict, log: RefinementLog) -> dict:
    """Replay a refinement log on a {key: weight} map."""
    out = dict(points)
    for key, knot, axis, c1, c2, children in log.entries:
        w = out.pop(key)
        for c, ch in zip((c1, c2), children):
            if c and ch is not None:
                out[ch] = out.get(ch, 0) + w * c
    return out


# ----------------------------------------------------------------------------
# the grid


class ControlGrid:
    """T-mesh, cell tiling and blending records of one spline component."""

    def __init__(self, S, domain: Domain, mesh: TMesh, cells: dict, layered=False):
        self.S = [list(s) for s in S]
        self.domain = domain
        self.mesh = mesh
        self.cells = cells
        self.layered = layered
        self.points: dict = {}
        self._next_cell = max(cells) + 1 if cells else 0

    # -- bookkeeping -------------------------------------------------------
    def copy(self) -> "ControlGrid":
        g = ControlGrid(self.S, Domain(list(self.domain.boxes)), self.mesh.copy(),
                        dict(self.cells), self.layered)
        g._next_cell = self._next_cell
        g.points = {
            k: ControlPoint(p.knots, p.weight, p.payload.copy(), p.kind)
            for k, p in self.points.items()
        }
        return g

    @property
    def dim(self) -> int:
        for p in self.points.values():
            return len(p.payload)
        return 3

    def add_point(self, knots: Key, weight, payload, kind=None) -> None:
        """Insert a record, merging with an existing one of identical knots."""
        weight = frac(weight)
        payload = np.asarray(payload, float)
        old = self.points.get(knots)
        if old is None:
            self.points[knots] = ControlPoint(knots, weight, payload, kind or "interior")
            return
        tot = old.weight + weight
        if tot != 0:
            a, b = float(old.weight), float(weight)
            old.payload = (a * old.payload + b * payload) / (a + b)
        old.weight = tot

    def vertices(self) -> set:
        vs = set()
        for lo, hi in self.cells.values():
            for c in itertools.product(*zip(lo, hi)):
                vs.add(c)
        return vs

    def kind_of(self, knots: Key) -> str:
        """A record is a bd-control-point when some knot vector is clamped
        (four equal knots at one end) on a plane where the support's end
        face overlaps the domain boundary."""
        for a in range(3):
            kv = knots[a]
            o = _others(a)
            for end in (kv[0], kv[4]):
                if kv.count(end) != 4:
                    continue
                lo2 = (knots[o[0]][0], knots[o[1]][0])
                hi2 = (knots[o[0]][4], knots[o[1]][4])
                if self._face_on_boundary(a, end, lo2, hi2):
                    return "bd"
        return "interior"

    def _face_on_boundary(self, axis, c, lo2, hi2) -> bool:
        o = _others(axis)
        cuts = []
        for i, b in enumerate(o):
            inner = [x for x in self.domain.planes(b) if lo2[i] < x < hi2[i]]
            cuts.append([lo2[i]] + inner + [hi2[i]])
        for i in range(len(cuts[0]) - 1):
            for j in range(len(cuts[1]) - 1):
                mid = ((cuts[0][i] + cuts[0][i + 1]) / 2, (cuts[1][j] + cuts[1][j + 1]) / 2)
                if self.domain.is_boundary_plane(axis, c, mid):
                    return True
        return False

    # -- knot inference ------------------------------------------------------
    def _side_knots(self, axis, p, direction, n):
        out = []
        last = p[axis]
        m_last = 0
        for c, m in self.mesh.crossings(axis, p, direction):
            out.extend([c] * m)
            last, m_last = c, m
            if len(out) >= n:
                return out[:n]
        end_mult = m_last if out else self.anchor_multiplicity(axis, p)
        if end_mult >= 4:
            # clamped end: replicate the end knot beyond the domain
            return out + [last] * (n - len(out))
        # open grid: continue with the last interval met
        distinct = [p[axis]] + sorted(set(out), key=lambda c: c * direction)
        if len(distinct) >= 2:
            step = abs(distinct[-1] - distinct[-2])
        else:
            back = next(self.mesh.crossings(axis, p, -direction), None)
            step = abs(p[axis] - back[0]) if back else Fraction(1)
        while len(out) < n:
            last = last + direction * step
            out.append(last)
        return out

    def anchor_multiplicity(self, axis, p) -> int:
        o = _others(axis)
        m = self.mesh.multiplicity(axis, p[axis], (p[o[0]], p[o[1]]))
        return max(m, 1)

    def trace_windows(self, anchor, axis) -> list:
        """All valid five-knot windows centred on the anchor along one axis."""
        p = tuple(map(frac, anchor))
        m = self.anchor_multiplicity(axis, p)
        left = self._side_knots(axis, p, -1, 2)
        right = self._side_knots(axis, p, +1, 2)
        seq = list(reversed(left)) + [p[axis]] * m + right
        wins = []
        for j in range(m):
            w = tuple(seq[j: j + 5])
            if w.count(w[2]) <= 4 and w[0] < w[4]:
                wins.append(w)
        return wins

    def trace_knots(self, anchor, axis, slot: int = -1) -> Knots:
        """Knot vector of the anchor along one axis.

        With a multiple anchor plane several co-anchored windows exist; the
        default picks the innermost one.
        """
        if tuple(map(frac, anchor)) not in self.vertices():
            raise GridError(f"{anchor} is not a grid vertex")
        wins = self.trace_windows(anchor, axis)
        if slot == -1:
            # innermost: the window whose support lies most inside the domain
            lo, hi = self.domain.lo[axis], self.domain.hi[axis]
            wins = sorted(wins, key=lambda w: (w[0] == w[1] == lo) + (w[3] == w[4] == hi))
            return wins[0]
        return wins[slot]

    def inconsistent(self) -> list:
        """Records whose knots are not a window of the traced sequence."""
        bad = []
        for key in self.points:
            anchor = tuple(k[2] for k in key)
            for a in range(3):
                if key[a] not in self.trace_windows(anchor, a):
                    bad.append(key)
                    break
        return bad

    def missing_knot(self, key: Key):
        """First (axis, knot) present on the record's own rays but missing from it."""
        anchor = tuple(k[2] for k in key)
        for a in range(3):
            kv = key[a]
            o = _others(a)
            p2 = (anchor[o[0]], anchor[o[1]])
            cs = self.mesh.coords(a)
            i = bisect.bisect_right(cs, kv[0])
            while i < len(cs) and cs[i] < kv[4]:
                c = cs[i]
                m = self.mesh.multiplicity(a, c, p2)
                if m and kv.count(c) < m:
                    return a, c
                i += 1
        return None

    def excess_knot(self, key: Key):
        """First (axis, knot, count) carried by the record but absent from its ray.

        Only knots whose ray point lies inside the domain are checked;
        extrapolated or replicated knots beyond the domain are exempt.
        """
        anchor = tuple(k[2] for k in key)
        for a in range(3):
            kv = key[a]
            o = _others(a)
            p2 = (anchor[o[0]], anchor[o[1]])
            for c in sorted(set(kv)):
                if c == anchor[a]:
                    continue
                q = [0.0, 0.0, 0.0]
                q[a] = float(c)
                q[o[0]], q[o[1]] = float(p2[0]), float(p2[1])
                if not self.domain.contains_point(q):
                    continue
                n = kv.count(c)
                if self.mesh.multiplicity(a, c, p2) < n:
                    return a, c, n
        return None

    def insert_vertex(self, axis: int, c, p2, mult: int) -> None:
        """Add a zero-area face so the ray through p2 meets knot c."""
        self.mesh.add_face(axis, c, p2, p2, mult)

    # -- refinement ----------------------------------------------------------
    def split_point(self, key: Key, axis: int, knot, log: RefinementLog | None = None):
        p = self.points.pop(key)
        s = split_basis(key[axis], knot)
        children = []
        for c, kv in ((s.c1, s.knots1), (s.c2, s.knots2)):
            if c == 0:
                children.append(None)
                continue
            nk = list(key)
            nk[axis] = kv
            nk = tuple(nk)
            self.add_point(nk, p.weight * c, p.payload)
            children.append(nk)
        if log is not None:
            log.add(key, knot, axis, s.c1, s.c2, children)
        return [c for c in children if c is not None]

    def refine(self, log: RefinementLog | None = None, max_steps: int = 10**6) -> RefinementLog:
        """Split records until every one carries exactly the knots on its rays.

        Missing knots are inserted into the record by a basis split.  Knots
        a record carries but its ray does not meet become new vertices of
        the mesh, which may in turn demand splits of neighbouring records.
        """
        log = log if log is not None else RefinementLog()
        todo = list(self.points)
        steps = 0
        while todo:
            key = todo.pop()
            if key not in self.points:
                continue
            steps += 1
            if steps > max_steps:
                raise GridError("refinement did not reach a fixpoint")
            miss = self.missing_knot(key)
            if miss is not None:
                todo.extend(self.split_point(key, miss[0], miss[1], log))
                continue
            extra = self.excess_knot(key)
            if extra is None:
                continue
            a, c, n = extra
            o = _others(a)
            anchor = tuple(k[2] for k in key)
            p2 = (anchor[o[0]], anchor[o[1]])
            self.insert_vertex(a, c, p2, n)
            todo.append(key)
            for other in self.points:
                if other[a][0] <= c <= other[a][4] and all(
                    other[b][0] <= anchor[b] <= other[b][4] for b in o
                ):
                    todo.append(other)
        self._refresh_kinds()
        return log

    def _refresh_kinds(self):
        for k, p in self.points.items():
            if p.kind != "auxiliary":
                p.kind = self.kind_of(k)

    def confine(self, log: RefinementLog | None = None, max_steps: int = 10**6) -> list:
        """Split records whose support leaves the domain, then drop the parts
        lying entirely outside.  Returns the dropped records."""
        log = log if log is not None else RefinementLog()
        todo = list(self.points)
        dropped = []
        steps = 0
        while todo:
            key = todo.pop()
            if key not in self.points:
                continue
            lo = tuple(k[0] for k in key)
            hi = tuple(k[4] for k in key)
            if self.domain.outside(lo, hi):
                dropped.append(self.points.pop(key))
                continue
            if not self.domain.escapes(lo, hi):
                continue
            cut = self._confining_cut(key)
            if cut is None:
                raise GridError(f"cannot confine record {key}")
            steps += 1
            if steps > max_steps:
                raise GridError("confinement did not terminate")
            todo.extend(self.split_point(key, cut[0], cut[1], log))
        self._refresh_kinds()
        return dropped

    def _confining_cut(self, key):
        lo = [k[0] for k in key]
        hi = [k[4] for k in key]
        best = None
        for a in range(3):
            kv = key[a]
            for c in self.domain.planes(a):
                if not (kv[0] < c < kv[4]) or kv.count(c) >= 4:
                    continue
                # prefer a cut leaving one side entirely outside
                l2, h2 = list(lo), list(hi)
                h2[a] = c
                left_out = self.domain.outside(tuple(l2), tuple(h2))
                l3, h3 = list(lo), list(hi)
                l3[a] = c
                right_out = self.domain.outside(tuple(l3), tuple(h3))
                score = 0 if (left_out or right_out) else 1
                cand = (score, a, c)
                if best is None or cand < best:
                    best = cand
        return None if best is None else (best[1], best[2])

    # -- cells ---------------------------------------------------------------
    def cell_of(self, cid):
        return self.cells[cid]

    def locate_cells(self, params: np.ndarray) -> np.ndarray:
        """Cell id of every parameter (-1 if none)."""
        params = np.atleast_2d(params)
        out = np.full(len(params), -1, int)
        for cid, (lo, hi) in self.cells.items():
            lo_f = np.array([float(v) for v in lo])
            hi_f = np.array([float(v) for v in hi])
            m = np.all((params >= lo_f) & (params <= hi_f), axis=1) & (out < 0)
            out[m] = cid
        return out


# ----------------------------------------------------------------------------
# construction


def _ascending(S):
    s = [frac(x) for x in S]
    if len(s) < 2 or any(b <= a for a, b in zip(s, s[1:])):
        raise GridError(f"knot list must have >= 2 strictly ascending entries: {S}")
    return s


def greville(knots: Key) -> np.ndarray:
    return np.array([float(k[1] + k[2] + k[3]) / 3 for k in knots])


def build_regular(S1, S2, S3) -> ControlGrid:
    """Tensor-product grid with one weight-1 point per vertex.

    Knot vectors are open: beyond the domain they continue with the end
    interval, so supports overhang the box until a boundary layer is added.
    Payloads default to the Greville points of the records.
    """
    S = [_ascending(S1), _ascending(S2), _ascending(S3)]
    lo = tuple(s[0] for s in S)
    hi = tuple(s[-1] for s in S)
    domain = Domain([(lo, hi)])
    mesh = TMesh()
    for a in range(3):
        o = _others(a)
        for c in S[a]:
            mesh.add_face(a, c, (lo[o[0]], lo[o[1]]), (hi[o[0]], hi[o[1]]), 1)
    cells = {}
    for cid, (i, j, k) in enumerate(
        itertools.product(range(len(S[0]) - 1), range(len(S[1]) - 1), range(len(S[2]) - 1))
    ):
        cells[cid] = ((S[0][i], S[1][j], S[2][k]), (S[0][i + 1], S[1][j + 1], S[2][k + 1]))
    g = ControlGrid(S, domain, mesh, cells, layered=False)
    for v in itertools.product(*S):
        key = tuple(g.trace_windows(v, a)[0] for a in range(3))
        g.points[key] = ControlPoint(key, Fraction(1), greville(key), "interior")
    return g


def add_boundary_layer(grid: ControlGrid, faces=None) -> ControlGrid:
    """Clamp domain faces with four-fold knots.

    Every boundary vertex gains co-anchored bd-control-points (2 on a
    face, 4 on an edge, 8 on a corner); interior vertices are untouched.
    New points copy the payload of the record they sit next to.  ``faces``
    restricts the layer to some of "-u", "+u", ..., "+w"; other faces stay
    open.
    """
    faces = ["-u", "+u", "-v", "+v", "-w", "+w"] if faces is None else list(faces)
    g = grid.copy()
    lo, hi = g.domain.lo, g.domain.hi
    for f in faces:
        a, side = face_axis(f)
        c = hi[a] if side > 0 else lo[a]
        o = _others(a)
        if g.mesh.multiplicity(a, c, (lo[o[0]], lo[o[1]])) >= 4:
            raise GridError(f"boundary layer already present on {f}")
        g.mesh.set_multiplicity(a, c, (lo[o[0]], lo[o[1]]), (hi[o[0]], hi[o[1]]), 4)
    g.layered = True
    old = g.points
    g.points = {}
    for key, p in old.items():
        anchor = tuple(k[2] for k in key)
        per_axis = []
        for a in range(3):
            wins = g.trace_windows(anchor, a)
            if key[a] in wins:
                per_axis.append([key[a]])
            elif len(wins) == 1:
                per_axis.append(wins)
            else:
                per_axis.append(wins)
        for combo in itertools.product(*per_axis):
            g.add_point(tuple(combo), p.weight, p.payload)
    g._refresh_kinds()
    return g


def identity_layout(grid: ControlGrid) -> ControlGrid:
    """Set every payload to the record's Greville point (linear precision)."""
    for key, p in grid.points.items():
        p.payload = greville(key)
    return grid


# ----------------------------------------------------------------------------
# subdivision


def subdivide_cells(grid: ControlGrid, cells: Iterable[int]) -> tuple[ControlGrid, RefinementLog]:
    """Split each listed cell into eight and restore knot consistency.

    The grid is modified in place and also returned.  Every basis split is
    an exact identity, so the spline does not change.
    """
    cells = list(cells)
    for cid in cells:
        if cid not in grid.cells:
            raise GridError(f"unknown cell id {cid}")
    log = RefinementLog()
    if not cells:
        return grid, log
    for cid in cells:
        lo, hi = grid.cells.pop(cid)
        mid = tuple((lo[a] + hi[a]) / 2 for a in range(3))
        for a in range(3):
            o = _others(a)
            grid.mesh.add_face(a, mid[a], (lo[o[0]], lo[o[1]]), (hi[o[0]], hi[o[1]]), 1)
        for corner in itertools.product((0, 1), repeat=3):
            clo = tuple(lo[a] if corner[a] == 0 else mid[a] for a in range(3))
            chi = tuple(mid[a] if corner[a] == 0 else hi[a] for a in range(3))
            grid.cells[grid._next_cell] = (clo, chi)
            grid._next_cell += 1
    grid.refine(log)
    return grid, log


def split_cells(grid: ControlGrid, cuts, log: RefinementLog | None = None):
    """Split cells in two at arbitrary planes.

    ``cuts`` is an iterable of (cell id, axis, coordinate); each coordinate
    must lie strictly inside its cell.  Used to overlay mismatched face
    grids.  Returns the grid and the refinement log.
    """
    log = log if log is not None else RefinementLog()
    done = False
    for cid, axis, c in cuts:
        c = frac(c)
        if cid not in grid.cells:
            raise GridError(f"unknown cell id {cid}")
        lo, hi = grid.cells[cid]
        if not lo[axis] < c < hi[axis]:
            raise GridError(f"cut {c} outside cell {cid}")
        del grid.cells[cid]
        o = _others(axis)
        grid.mesh.add_face(axis, c, (lo[o[0]], lo[o[1]]), (hi[o[0]], hi[o[1]]), 1)
        h1 = list(hi)
        h1[axis] = c
        l2 = list(lo)
        l2[axis] = c
        for box in ((lo, tuple(h1)), (tuple(l2), hi)):
            grid.cells[grid._next_cell] = box
            grid._next_cell += 1
        done = True
    if done:
        grid.refine(log)
    return grid, log


def rule1_violations(grid: ControlGrid) -> list:
    """Cells with a face whose opposite edges carry different knot sums."""
    bad = []
    for cid, (lo, hi) in grid.cells.items():
        for a in range(3):
            o = _others(a)
            for b in o:
                # edges parallel to b on the face normal to a: the two opposite
                # edges have equal length in a box; check the interior T-junction sums
                e1 = _edge_knots(grid, lo, hi, b, a, lo[a])
                e2 = _edge_knots(grid, lo, hi, b, a, hi[a])
                if sum(e1) != sum(e2):
                    bad.append(cid)
    return bad


def _edge_knots(grid, lo, hi, along, fixed_axis, fixed_val):
    """Knot intervals along one cell edge, split at T-junctions."""
    third = [x for x in range(3) if x not in (along, fixed_axis)][0]
    p = [None] * 3
    p[fixed_axis] = fixed_val
    p[third] = lo[third]
    p[along] = lo[along]
    pts = [lo[along]]
    for c, _ in grid.mesh.crossings(along, tuple(p), +1):
        if c >= hi[along]:
            break
        pts.append(c)
    pts.append(hi[along])
    return [b - a for a, b in zip(pts, pts[1:])]


# ----------------------------------------------------------------------------
# merge readiness


def face_axis(face: str) -> tuple[int, int]:
    """'-u' -> (0, -1), '+w' -> (2, +1)."""
    names = {"u": 0, "v": 1, "w": 2}
    if len(face) != 2 or face[0] not in "+-" or face[1] not in names:
        raise GridError(f"invalid face id {face!r}")
    return names[face[1]], (1 if face[0] == "+" else -1)


def to_be_merged(grid: ControlGrid, face: str) -> list:
    """Records carrying bd-knots of the given face (end knot at least twice)."""
    axis, side = face_axis(face)
    b = grid.domain.hi[axis] if side > 0 else grid.domain.lo[axis]
    out = []
    for key in grid.points:
        kv = key[axis]
        if kv.count(b) >= 2:
            out.append(key)
    return out


def modification_zone(grid: ControlGrid, face: str) -> set:
    """Cells having a vertex that anchors a to-be-merged record."""
    anchors = {tuple(k[2] for k in key) for key in to_be_merged(grid, face)}
    zone = set()
    for cid, (lo, hi) in grid.cells.items():
        for c in itertools.product(*zip(lo, hi)):
            if c in anchors:
                zone.add(cid)
                break
    return zone


def boundary_cells(grid: ControlGrid, face: str) -> set:
    axis, side = face_axis(face)
    b = grid.domain.hi[axis] if side > 0 else grid.domain.lo[axis]
    return {cid for cid, (lo, hi) in grid.cells.items() if (hi if side > 0 else lo)[axis] == b}


def enforce_boundary_requirement(grid: ControlGrid, face: str, new_cells: Iterable[int]):
    """Make every to-be-merged record of `face` carry weight 1 again.

    Nothing happens when the recent subdivisions miss the modification
    zone.  Otherwise the boundary cell layer is subdivided until the face
    is uniformly refined and the weights on the face are restored.
    """
    new_cells = set(new_cells)
    zone = modification_zone(grid, face)
    touched = {c for c in new_cells if c in zone or c not in grid.cells}
    # cells that no longer exist were split; check their footprint instead
    if not touched:
        return grid
    for _ in range(16):
        bad = [k for k in to_be_merged(grid, face) if grid.points[k].weight != 1]
        if not bad:
            return grid
        axis, side = face_axis(face)
        cells = boundary_cells(grid, face)
        # split the coarsest boundary cells first, in lockstep over the face
        size = {c: min(grid.cells[c][1][a] - grid.cells[c][0][a] for a in _others(axis)) for c in cells}
        top = max(size.values())
        subdivide_cells(grid, [c for c in cells if size[c] == top])
    raise GridError("boundary requirement not restored")
