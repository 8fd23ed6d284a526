"""Merging component splines into one global semi-standard spline.

Components are placed in a shared knot frame by integer offsets.  The
merged spline is one monolithic grid: the union of the component meshes,
with glued faces demoted to ordinary knot planes and every remaining
domain-boundary face kept four-fold.  Its blending functions come from a
standard weight-1 lattice over the bounding box (points outside the union
play the auxiliary role) refined into that mesh, then confined to the
domain.  Because every step is an exact basis split, the result sums to
one by construction.

Payloads are carried over from the components by identifying the three
facing control points of each column across a glued face.

The per-slot weights around a central point are also available on their
own, through :func:`compute_merge_weights` and :func:`lookup_weights`.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources

import numpy as np

from .bspline import split_basis
from .control_grid import (
    ControlGrid,
    ControlPoint,
    Domain,
    GridError,
    TMesh,
    add_boundary_layer,
    boundary_cells,
    build_regular,
    face_axis,
    frac,
    greville,
    split_cells,
    to_be_merged,
    _others,
)
from .spline_eval import ComponentSpline, audit_boundary_restriction, sample_domain, unity_deviation

PATTERNS = ("type-1", "type-2", "type-3", "type-4")


class MergeError(ValueError):
    """Merge precondition or post-merge audit failure."""


def _templates() -> dict:
    text = resources.files("gpcspline").joinpath("data/merge_templates.json").read_text()
    return json.loads(text)["patterns"]


def _check_pattern(pattern):
    if pattern not in PATTERNS:
        raise MergeError(f"unsupported pattern {pattern!r}")


# ---------------------------------------------------------------------------
# weight tables


@dataclass
class WeightTable:
    """3x3x3 slot weights, ``W[a][b][c]``, slot number ``9a + 3b + c + 1``.

    Index 0 on an axis is the window leaning to the negative side of the
    central knot, 1 the centred one, 2 the positive one.  ``None`` marks an
    absent slot.
    """

    pattern: str
    W: list

    def slot(self, s: int):
        if not 1 <= s <= 27:
            raise IndexError(f"slot {s} outside 1..27")
        s -= 1
        return self.W[s // 9][(s // 3) % 3][s % 3]

    def slots(self) -> list:
        return [self.slot(s) for s in range(1, 28)]

    def __eq__(self, other):
        return isinstance(other, WeightTable) and self.slots() == other.slots()

    def format(self) -> str:
        """Three blocks (one per a), rows b = 2, 1, 0."""
        lines = [f"{self.pattern}"]
        for a in range(3):
            lines.append(f"  a={a}")
            for b in (2, 1, 0):
                cells = ["-" if x is None else str(x) for x in self.W[a][b]]
                lines.append("    " + "  ".join(f"{c:>8}" for c in cells))
        return "\n".join(lines)


def _from_slots(pattern, slots) -> WeightTable:
    W = [[[None] * 3 for _ in range(3)] for _ in range(3)]
    for s, v in enumerate(slots):
        W[s // 9][(s // 3) % 3][s % 3] = v
    return WeightTable(pattern, W)


def lookup_weights(pattern: str, intervals=None) -> WeightTable:
    """Hard-coded slot weights for uniform knot intervals."""
    _check_pattern(pattern)
    if intervals is not None and len({frac(h) for h in _flat_intervals(intervals)}) > 1:
        raise MergeError("look-up tables need uniform intervals; use compute_merge_weights")
    raw = _templates()[pattern]["table"]
    return _from_slots(pattern, [None if x == "-" else Fraction(x) for x in raw])


def _flat_intervals(intervals):
    if isinstance(intervals, (int, Fraction, float)):
        return [intervals]
    out = []
    for ax in intervals:
        out.extend(ax if hasattr(ax, "__iter__") else [ax])
    return out


def _axis_knots(h) -> list:
    """Seven knots k-3..k3 around 0 from six intervals (h-3, h-2, h-1, h1, h2, h3)."""
    h = [frac(x) for x in h]
    if len(h) != 6 or any(x <= 0 for x in h):
        raise MergeError("each axis needs six positive knot intervals")
    left = [-(h[2]), -(h[2] + h[1]), -(h[2] + h[1] + h[0])]
    right = [h[3], h[3] + h[4], h[3] + h[4] + h[5]]
    return left[::-1] + [Fraction(0)] + right


def _contributions(knots7, max_steps=64) -> dict:
    """Per-axis: weight each neighbour (offset -1, 0, 1) gives to the three
    windows anchored at the central knot once it is made triple."""
    k = knots7  # k[3] == 0
    slots = [tuple(k[1:3]) + (k[3],) * 3, (k[2],) + (k[3],) * 3 + (k[4],), (k[3],) * 3 + tuple(k[4:6])]
    out = {}
    for o in (-1, 0, 1):
        funcs = {tuple(k[o + 1: o + 6]): Fraction(1)}
        for _ in range(max_steps):
            todo = [kv for kv in funcs if kv[0] < 0 < kv[4] and kv.count(0) < 3]
            if not todo:
                break
            kv = todo[0]
            w = funcs.pop(kv)
            s = split_basis(kv, Fraction(0))
            for c, ch in ((s.c1, s.knots1), (s.c2, s.knots2)):
                if c:
                    funcs[ch] = funcs.get(ch, 0) + w * c
        else:
            raise MergeError("local refinement did not terminate")
        out[o] = [funcs.get(sl, Fraction(0)) for sl in slots]
    return out


def compute_merge_weights(pattern: str, intervals=1) -> WeightTable:
    """Slot weights around a central point by local refinement.

    The 27 neighbours of the central point form a standard weight-1 grid;
    the pattern's auxiliary neighbours complete the cube on the missing
    side.  The central knot is made triple on every axis, each neighbour is
    split accordingly, and the parts landing on the 27 central slots are
    summed, auxiliary parents excluded.

    ``intervals`` is a single positive number (uniform) or three sequences
    of six intervals ``(h-3, h-2, h-1, h1, h2, h3)``, one per axis.
    """
    _check_pattern(pattern)
    if isinstance(intervals, (int, float, Fraction)):
        intervals = [[intervals] * 6] * 3
    if len(intervals) != 3:
        raise MergeError("need intervals for three axes")
    tpl = _templates()[pattern]
    aux = {tuple(o) for o in tpl["auxiliary"]}
    absent = [x == "-" for x in tpl["table"]]
    C = [_contributions(_axis_knots(h)) for h in intervals]
    slots = []
    for s in range(27):
        a, b, c = s // 9, (s // 3) % 3, s % 3
        if absent[s]:
            slots.append(None)
            continue
        tot = Fraction(0)
        for o in itertools.product((-1, 0, 1), repeat=3):
            if o in aux:
                continue
            tot += C[0][o[0]][a] * C[1][o[1]][b] * C[2][o[2]][c]
        slots.append(tot)
    return _from_slots(pattern, slots)


# ---------------------------------------------------------------------------
# placement and interface handling


@dataclass
class Placement:
    spline: ComponentSpline
    offset: tuple = (0, 0, 0)

    def box(self):
        g = self.spline.grid
        off = tuple(map(frac, self.offset))
        return (tuple(g.domain.lo[a] + off[a] for a in range(3)),
                tuple(g.domain.hi[a] + off[a] for a in range(3)))


@dataclass
class InterfaceSpec:
    components: list  # of Placement
    pattern: str = "type-1"
    center: tuple = (0, 0, 0)


def face_grid(grid: ControlGrid, face: str) -> set:
    """Boundary-cell footprints on a face, relative to the face's lower corner."""
    axis, side = face_axis(grid_face := face)
    o = _others(axis)
    lo = grid.domain.lo
    rects = set()
    for cid in boundary_cells(grid, grid_face):
        clo, chi = grid.cells[cid]
        rects.add(tuple(x - lo[a] for a in o for x in (clo[a], chi[a])))
    return rects


def _uniform_lines(rects):
    """Per-axis line lists if the face grid is a uniform tensor grid, else None."""
    lines = [sorted({x for q in rects for x in q[2 * i: 2 * i + 2]}) for i in range(2)]
    for ls in lines:
        steps = {b - a for a, b in zip(ls, ls[1:])}
        if len(steps) != 1:
            return None
    full = {(a0, a1, b0, b1) for a0, a1 in zip(lines[0], lines[0][1:]) for b0, b1 in zip(lines[1], lines[1][1:])}
    return lines if full == set(rects) else None


def harmonize_interface(A: ComponentSpline, B: ComponentSpline, faces, mode: str = "auto") -> tuple:
    """Split boundary cells on both faces until the two face grids coincide.

    ``mode="lcm"`` refines two uniform face grids to the uniform grid whose
    cell count per axis is the lcm of both (2 and 3 cells give 6), which
    keeps knot intervals uniform.  ``mode="overlay"`` cuts each face at the
    other's lines only.  ``"auto"`` uses lcm when both faces are uniform.
    Both splines are modified in place and returned; their shapes do not
    change.
    """
    if mode not in ("auto", "lcm", "overlay"):
        raise MergeError(f"unknown harmonization mode {mode!r}")
    fa, fb = faces
    ax_a, _ = face_axis(fa)
    ax_b, _ = face_axis(fb)
    if ax_a != ax_b:
        raise MergeError("faces must be normal to the same axis")
    ga, gb = A.grid, B.grid
    o = _others(ax_a)
    ext_a = [ga.domain.hi[a] - ga.domain.lo[a] for a in o]
    ext_b = [gb.domain.hi[a] - gb.domain.lo[a] for a in o]
    if ext_a != ext_b:
        raise MergeError(f"face extents differ: {ext_a} vs {ext_b}")
    ua, ub = _uniform_lines(face_grid(ga, fa)), _uniform_lines(face_grid(gb, fb))
    if mode == "lcm" and (ua is None or ub is None):
        raise MergeError("lcm harmonization needs uniform face grids")
    if mode != "overlay" and ua is not None and ub is not None:
        for i in range(2):
            n = math.lcm(len(ua[i]) - 1, len(ub[i]) - 1)
            lines = [ext_a[i] * Fraction(k, n) for k in range(n + 1)]
            ua[i] = ub[i] = lines
        rects = {(a0, a1, b0, b1) for a0, a1 in zip(ua[0], ua[0][1:]) for b0, b1 in zip(ua[1], ua[1][1:])}
        for g, fg in ((ga, fa), (gb, fb)):
            for _ in range(256):
                cuts = _overlay_cuts(g, fg, rects)
                if not cuts:
                    break
                split_cells(g, cuts)
            else:
                raise MergeError("interface harmonization did not converge")
        return A, B
    for _ in range(64):
        changed = False
        for g, fg, other, fo in ((ga, fa, gb, fb), (gb, fb, ga, fa)):
            cuts = _overlay_cuts(g, fg, face_grid(other, fo))
            if cuts:
                split_cells(g, cuts)
                changed = True
        if not changed:
            return A, B
    raise MergeError("interface harmonization did not converge")


def _overlay_cuts(g, face, other_rects):
    axis, _ = face_axis(face)
    o = _others(axis)
    lo = g.domain.lo
    for cid in sorted(boundary_cells(g, face)):
        clo, chi = g.cells[cid]
        r = [clo[o[0]] - lo[o[0]], chi[o[0]] - lo[o[0]], clo[o[1]] - lo[o[1]], chi[o[1]] - lo[o[1]]]
        for q in other_rects:
            if q[1] <= r[0] or q[0] >= r[1] or q[3] <= r[2] or q[2] >= r[3]:
                continue
            for i, a in enumerate(o):
                for x in q[2 * i: 2 * i + 2]:
                    if r[2 * i] < x < r[2 * i + 1]:
                        return [(cid, a, x + lo[a])]
    return []


def _prop1(spline: ComponentSpline, face: str):
    bad = [k for k in to_be_merged(spline.grid, face) if spline.grid.points[k].weight != 1]
    if bad:
        raise MergeError(f"to-be-merged point with weight {spline.grid.points[bad[0]].weight} on {face}")


# ---------------------------------------------------------------------------
# assembly


@dataclass
class MergeReport:
    matched: int = 0
    fallback: int = 0
    dropped: int = 0
    central_before: dict = field(default_factory=dict)
    central_after: dict = field(default_factory=dict)
    unity: float | None = None
    violations: int | None = None
    auxiliary: list = field(default_factory=list)  # records dropped by confinement


def _translated(pl: Placement):
    g = pl.spline.grid
    off = tuple(map(frac, pl.offset))

    def tk(key):
        return tuple(tuple(x + off[a] for x in key[a]) for a in range(3))

    faces = []
    for axis, c, r in g.mesh.faces():
        o = _others(axis)
        faces.append((axis, c + off[axis], (r[0] + off[o[0]], r[2] + off[o[1]]),
                      (r[1] + off[o[0]], r[3] + off[o[1]]), r[4]))
    cells = [(tuple(lo[a] + off[a] for a in range(3)), tuple(hi[a] + off[a] for a in range(3)))
             for lo, hi in g.cells.values()]
    points = [(tk(k), p) for k, p in g.points.items()]
    S = [[x + off[a] for x in g.S[a]] for a in range(3)]
    return faces, cells, points, S


def _face_pieces(domain: Domain, axis, c, lo2, hi2):
    o = _others(axis)
    cuts = []
    for i, a in enumerate(o):
        inner = [x for x in domain.planes(a) if lo2[i] < x < hi2[i]]
        cuts.append([lo2[i]] + inner + [hi2[i]])
    for i in range(len(cuts[0]) - 1):
        for j in range(len(cuts[1]) - 1):
            yield (cuts[0][i], cuts[1][j]), (cuts[0][i + 1], cuts[1][j + 1])


def _central_weights(g: ControlGrid, center) -> dict:
    c = tuple(map(frac, center))
    return {k: p.weight for k, p in g.points.items() if tuple(kv[2] for kv in k) == c}


def assemble(placements, confine: bool = True, center=None):
    """Join placed components into one spline.

    With ``confine=False`` the faces bordering the region outside the union
    stay single knot planes and escaping supports are kept, which is the
    state before bd-points are inserted around a central point.
    """
    parts = [_translated(pl) for pl in placements]
    boxes = [pl.box() for pl in placements]
    domain = Domain(boxes)
    coords = [sorted({x for p in parts for x in p[3][a]}) for a in range(3)]
    g = add_boundary_layer(build_regular(*coords))
    bb_lo, bb_hi = g.domain.lo, g.domain.hi
    g.domain = domain
    g.cells = {i: box for i, box in enumerate(c for p in parts for c in p[1])}
    g._next_cell = len(g.cells)
    for faces, _, _, _ in parts:
        for axis, c, lo2, hi2, m in faces:
            if m < 4:
                g.mesh.add_face(axis, c, lo2, hi2, m)
                continue
            for plo, phi in _face_pieces(domain, axis, c, lo2, hi2):
                mid = ((plo[0] + phi[0]) / 2, (plo[1] + phi[1]) / 2)
                if not domain.is_boundary_plane(axis, c, mid):
                    mult = 1
                elif confine or c in (bb_lo[axis], bb_hi[axis]):
                    mult = 4
                else:
                    mult = 1
                g.mesh.add_face(axis, c, plo, phi, mult)
    report = MergeReport()
    g.refine()
    if center is not None:
        report.central_before = _central_weights(g, center)
    if confine:
        report.auxiliary = g.confine()
        report.dropped = len(report.auxiliary)
    else:
        for key in list(g.points):
            lo, hi = g.points[key].support()
            if domain.outside(lo, hi):
                del g.points[key]
                report.dropped += 1
    if center is not None:
        report.central_after = _central_weights(g, center)
    _carry_payloads(g, parts, boxes, report)
    return ComponentSpline(g), report


def _map_key(g: ControlGrid, box, key):
    """Column identification across glued faces (three facing points per side)."""
    anchor = [kv[2] for kv in key]
    moved = [False] * 3
    for a in range(3):
        kv = key[a]
        o = _others(a)
        for side, c in ((+1, box[1][a]), (-1, box[0][a])):
            n = kv.count(c)
            if n < 2:
                continue
            q = [float(x) for x in anchor]
            q[a] = float(c) + side * 1e-9
            if not g.domain.contains_point(q):
                continue
            p = tuple(anchor[b] if b != a else c for b in range(3))
            if n == 3:
                anchor[a] = c
            elif n == 4:
                nxt = next(g.mesh.crossings(a, p, side), None)
                if nxt is None:
                    continue
                anchor[a] = nxt[0]
            moved[a] = True
    if not any(moved):
        return key
    out = []
    for a in range(3):
        if not moved[a]:
            out.append(key[a])
            continue
        wins = g.trace_windows(tuple(anchor), a)
        # an unmoved anchor keeps its own multiplicity within the window
        same = [w for w in wins if w.count(anchor[a]) == key[a].count(anchor[a])]
        out.append(same[0] if anchor[a] == key[a][2] and same else wins[len(wins) // 2])
    return tuple(out)


def _carry_payloads(g, parts, boxes, report):
    sources = {}
    for (faces, cells, points, S), box in zip(parts, boxes):
        for key, p in points:
            sources.setdefault(_map_key(g, box, key), []).append(p.payload)
    src_keys = list(sources)
    src_anchor = np.array([[float(kv[2]) for kv in k] for k in src_keys])
    src_val = [np.mean(sources[k], axis=0) for k in src_keys]
    index = {k: i for i, k in enumerate(src_keys)}
    for key, p in g.points.items():
        i = index.get(key)
        if i is None:
            anc = np.array([float(kv[2]) for kv in key])
            d = np.linalg.norm(src_anchor - anc, axis=1)
            i = int(np.argmin(d))
            report.fallback += 1
        else:
            report.matched += 1
        p.payload = np.array(src_val[i], float)


# ---------------------------------------------------------------------------
# public merges


def merge_two_cube(A: ComponentSpline, B: ComponentSpline, faces=("+u", "-u")):
    """Glue B onto face ``faces[0]`` of A.

    The facing columns are identified pairwise and averaged, knot vectors
    are re-traced across the joined grid, and the result is one spline.
    """
    fa, fb = faces
    ax, sa = face_axis(fa)
    axb, sb = face_axis(fb)
    if ax != axb or sa == sb:
        raise MergeError("two-cube merge needs opposite faces normal to one axis")
    _prop1(A, fa)
    _prop1(B, fb)
    if face_grid(A.grid, fa) != face_grid(B.grid, fb):
        raise MergeError("face knot grids differ; run harmonize_interface first")
    ga, gb = A.grid, B.grid
    off = [ga.domain.lo[a] - gb.domain.lo[a] for a in range(3)]
    if sa > 0:
        off[ax] = ga.domain.hi[ax] - gb.domain.lo[ax]
    else:
        off[ax] = ga.domain.lo[ax] - gb.domain.hi[ax]
    merged, report = assemble([Placement(A), Placement(B, tuple(off))])
    return merged, report


def split_spline(spline: ComponentSpline, axis: int, coord):
    """Cut a layered tensor-product spline at a knot plane into two layered
    components whose merge gives the original back.

    Each component record copies the payload of the global record it is
    identified with by the column rule, so facing columns agree.
    """
    g = spline.grid
    coord = frac(coord)
    if coord not in g.S[axis][1:-1]:
        raise MergeError(f"{coord} is not an inner knot line along axis {axis}")
    out = []
    for part in (0, 1):
        S = [list(s) for s in g.S]
        S[axis] = [x for x in S[axis] if (x <= coord if part == 0 else x >= coord)]
        c = add_boundary_layer(build_regular(*S))
        box = (c.domain.lo, c.domain.hi)
        for key, p in c.points.items():
            gk = _map_key(g, box, key)
            if gk not in g.points:
                raise MergeError(f"record {key} has no counterpart in the source spline")
            p.payload = np.array(g.points[gk].payload, float)
            p.weight = g.points[gk].weight
        out.append(ComponentSpline(c, spline.form))
    return out[0], out[1]


def glued_pairs(placements):
    """(i, j, face_i, face_j) for placed boxes sharing a face of positive area."""
    names = "uvw"
    out = []
    for i, j in itertools.combinations(range(len(placements)), 2):
        bi, bj = placements[i].box(), placements[j].box()
        for a in range(3):
            o = _others(a)
            overlap = all(min(bi[1][b], bj[1][b]) > max(bi[0][b], bj[0][b]) for b in o)
            if not overlap:
                continue
            if bi[1][a] == bj[0][a]:
                out.append((i, j, "+" + names[a], "-" + names[a]))
            elif bj[1][a] == bi[0][a]:
                out.append((i, j, "-" + names[a], "+" + names[a]))
    return out


def merge_typed(spec: InterfaceSpec, audit: bool = True, n_samples: int = 10_000, seed: int = 0):
    """Merge the components around a central point of a typed pattern.

    Regular face pairs are harmonized and joined as in the two-cube case;
    around the central point the boundary planes of the missing region are
    clamped, and every function whose support would leave the domain is
    split there, the parts outside being dropped.  Unity and boundary
    restriction are audited afterwards.
    """
    _check_pattern(spec.pattern)
    pls = spec.components
    for i, j, fi, fj in glued_pairs(pls):
        ga, gb = pls[i].spline.grid, pls[j].spline.grid
        if face_grid(ga, fi) != face_grid(gb, fj):
            harmonize_interface(pls[i].spline, pls[j].spline, (fi, fj))
        _prop1(pls[i].spline, fi)
        _prop1(pls[j].spline, fj)
    merged, report = assemble(pls, confine=True, center=spec.center)
    if audit:
        g = merged.grid
        P = sample_domain(g.domain, n_samples, seed, planes=[g.mesh.coords(a) for a in range(3)])
        dev = unity_deviation(merged, P)
        report.unity = float(dev.max())
        if report.unity > 1e-10:
            worst = P[int(np.argmax(dev))]
            raise MergeError(f"unity audit failed: {report.unity:.3e} at {worst.tolist()}")
        viol = audit_boundary_restriction(merged, seed=seed)
        report.violations = len(viol)
        if viol:
            raise MergeError(f"boundary restriction violated by {len(viol)} points, e.g. {viol[0].reason}")
    return merged, report


def pattern_components(pattern: str, n: int = 2, h=1, payload=None):
    """Canonical configuration of a pattern: one layered cube per octant
    present around the central point at the origin.

    Each cube spans ``n`` intervals of width ``h`` per axis.  Payloads are
    the Greville points in the shared frame, or a constant if given.
    """
    _check_pattern(pattern)
    missing = {tuple(o) for o in _templates()[pattern]["missing_octants"]}
    h = frac(h)
    size = n * h
    out = []
    for octant in itertools.product((-1, 1), repeat=3):
        if octant in missing:
            continue
        S = [[i * h for i in range(n + 1)]] * 3
        g = add_boundary_layer(build_regular(*S))
        off = tuple(Fraction(0) if s > 0 else -size for s in octant)
        for key, p in g.points.items():
            if payload is None:
                p.payload = greville(key) + np.array([float(x) for x in off])
            else:
                p.payload = np.array(payload, float)
        out.append(Placement(ComponentSpline(g), off))
    return out


def before_confinement(spec: InterfaceSpec):
    """Merged spline without bd-points around the central point."""
    return assemble(spec.components, confine=False, center=spec.center)
