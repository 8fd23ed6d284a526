"""Cubic B-spline basis on five knots.

Every blending function in the package is a product of three univariate
cubic basis functions, each one fully described by five non-decreasing
knots ``[r0, r1, r2, r3, r4]``.  This module evaluates them, differentiates
them and splits them by knot insertion.

Evaluation follows the Cox-de Boor recursion with the usual ``0/0 = 0``
convention.  Parameters lying on a knot use the right-continuous branch,
except ``u == r4`` which takes the left limit so that clamped end knots
reach the value 1.  Passing ``side="left"`` selects left limits everywhere,
which the spline evaluator needs on faces where the domain lies below;
``side="strict"`` is purely right-continuous, without the end exception.

Knots may be floats or :class:`fractions.Fraction`; :func:`split_basis`
keeps exact arithmetic when given rationals.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Sequence

import numpy as np

DEGREE = 3
SIDES = ("right", "left", "strict")


class KnotError(ValueError):
    """Invalid knot vector or insertion request."""


def check_knots(knots: Sequence) -> tuple:
    """Validate a five-knot vector and return it as a tuple."""
    k = tuple(knots)
    if len(k) != 5:
        raise KnotError(f"expected 5 knots, got {len(k)}")
    for a, b in zip(k, k[1:]):
        if b < a:
            raise KnotError(f"knots not non-decreasing: {k}")
    for v in set(k):
        if k.count(v) > 4:
            raise KnotError(f"knot {v} repeated more than 4 times")
    return k


def _spans(t: np.ndarray, u: np.ndarray, side: str) -> np.ndarray:
    """Degree-0 indicators, shape (4, len(u))."""
    out = np.zeros((4, u.size))
    for j in range(4):
        a, b = t[j], t[j + 1]
        if a == b:
            continue
        if side == "left":
            out[j] = (u > a) & (u <= b)
        else:
            out[j] = (u >= a) & (u < b)
    if side == "right" and t[4] > t[0]:
        # left limit at the right end of the support
        last = max(j for j in range(4) if t[j] < t[j + 1])
        out[last] = np.where(u == t[4], 1.0, out[last])
    return out


def _raise(t: np.ndarray, lower: np.ndarray, p: int, u: np.ndarray) -> np.ndarray:
    """One step of the Cox-de Boor recursion from degree p-1 to p."""
    n = lower.shape[0] - 1
    out = np.zeros((n, u.size))
    for i in range(n):
        d1 = t[i + p] - t[i]
        if d1 > 0:
            out[i] += (u - t[i]) / d1 * lower[i]
        d2 = t[i + p + 1] - t[i + 1]
        if d2 > 0:
            out[i] += (t[i + p + 1] - u) / d2 * lower[i + 1]
    return out


def _diff(t: np.ndarray, lower: np.ndarray, p: int) -> np.ndarray:
    """Derivative combination: N'_{i,p} from N_{i,p-1}, N_{i+1,p-1}."""
    n = lower.shape[0] - 1
    out = np.zeros((n, lower.shape[1]))
    for i in range(n):
        d1 = t[i + p] - t[i]
        if d1 > 0:
            out[i] += p / d1 * lower[i]
        d2 = t[i + p + 1] - t[i + 1]
        if d2 > 0:
            out[i] -= p / d2 * lower[i + 1]
    return out


def _as_array(u):
    arr = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite parameter")
    return arr


def eval_basis(knots: Sequence, u, side: str = "right"):
    """Value of the cubic basis function on ``knots`` at ``u``.

    ``u`` may be a scalar or an array; the result has the same shape.
    Outside ``[r0, r4]`` the value is exactly zero.
    """
    return eval_basis_derivative(knots, u, 0, side=side)


def eval_basis_derivative(knots: Sequence, u, order: int, side: str = "right"):
    """Derivative of order 0, 1 or 2 of the cubic basis function.

    Parameters
    ----------
    knots : sequence of 5 reals
    u : float or array_like
    order : int
        0 gives the value itself, 1 and 2 the analytic derivatives.
    side : {"right", "left", "strict"}
        Which one-sided limit to take on knots.
    """
    if order not in (0, 1, 2):
        raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")
    if side not in SIDES:
        raise ValueError(f"unknown side {side!r}")
    t = np.asarray([float(x) for x in check_knots(knots)])
    arr = _as_array(u)
    flat = arr.reshape(-1)
    n = _spans(t, flat, side)
    for p in range(1, DEGREE + 1 - order):
        n = _raise(t, n, p, flat)
    for p in range(DEGREE + 1 - order, DEGREE + 1):
        n = _diff(t, n, p)
    val = n[0]
    if arr.ndim == 0:
        return float(val[0])
    return val.reshape(arr.shape)


@dataclass(frozen=True)
class SplitResult:
    """Two children of a knot insertion, ``N = c1*N1 + c2*N2``."""

    c1: Real
    knots1: tuple
    c2: Real
    knots2: tuple


def _ratio(num, den):
    if den == 0:
        # the matching child is null (num == 0) or the clip at 1 applies
        return 0 if num == 0 else 1
    return min(num / den, 1)


def split_basis(knots: Sequence, k) -> SplitResult:
    """Split a cubic basis function by inserting knot ``k``.

    The children take the first and last five entries of the merged,
    sorted knot list.  Works exactly with :class:`~fractions.Fraction`.

    >>> s = split_basis([0, 1, 2, 3, 4], Fraction(3, 2))
    >>> s.c1, s.knots1
    (Fraction(1, 2), (0, 1, Fraction(3, 2), 2, 3))
    """
    r = check_knots(knots)
    if not (r[0] <= k <= r[4]):
        raise KnotError(f"inserted knot {k} outside [{r[0]}, {r[4]}]")
    if (r[3] == r[0] and r[0] < k < r[3]) or (r[4] == r[1] and r[1] < k < r[4]):
        raise KnotError("degenerate split inside a zero-length span")
    merged = sorted(list(r) + [k])
    c1 = _ratio(k - r[0], r[3] - r[0])
    c2 = _ratio(r[4] - k, r[4] - r[1])
    return SplitResult(c1, tuple(merged[:5]), c2, tuple(merged[1:]))


def blend(ku, kv, kw, u, v, w, sides=("right", "right", "right")):
    """Trivariate blending function, the product of three cubic bases."""
    return (
        eval_basis(ku, u, side=sides[0])
        * eval_basis(kv, v, side=sides[1])
        * eval_basis(kw, w, side=sides[2])
    )


def uniform_knots(center, h=1) -> tuple:
    """Five uniform knots spaced ``h`` apart around ``center``."""
    if isinstance(center, int) and isinstance(h, int):
        center = Fraction(center)
    return tuple(center + d * h for d in (-2, -1, 0, 1, 2))


def eval_basis_many(K, u: float, side: str = "right") -> np.ndarray:
    """Values of many basis functions at one parameter.

    ``K`` is an (m, 5) array of knot vectors; the conventions match
    :func:`eval_basis`.
    """
    if side not in SIDES:
        raise ValueError(f"unknown side {side!r}")
    K = np.asarray(K, float)
    m = K.shape[0]
    N = np.zeros((m, 4))
    for j in range(4):
        a, b = K[:, j], K[:, j + 1]
        if side == "left":
            N[:, j] = (a < u) & (u <= b)
        else:
            N[:, j] = (a <= u) & (u < b)
    if side == "right":
        nonempty = K[:, 1:] > K[:, :-1]
        last = 3 - np.argmax(nonempty[:, ::-1], axis=1)
        hit = (u == K[:, 4]) & nonempty.any(axis=1)
        N[hit, last[hit]] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        for p in range(1, DEGREE + 1):
            M = np.zeros((m, 4 - p))
            for i in range(4 - p):
                d1 = K[:, i + p] - K[:, i]
                d2 = K[:, i + p + 1] - K[:, i + 1]
                t1 = np.where(d1 > 0, (u - K[:, i]) / np.where(d1 > 0, d1, 1), 0.0)
                t2 = np.where(d2 > 0, (K[:, i + p + 1] - u) / np.where(d2 > 0, d2, 1), 0.0)
                M[:, i] = t1 * N[:, i] + t2 * N[:, i + 1]
            N = M
    return N[:, 0]
