"""Design points, design spaces, design measures and exact designs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptySupport, NegativeWeight, OutOfDomain, TooFewTrials

PRUNE_WEIGHT = 1e-10
DEFAULT_MERGE_TOL = 1e-3


def as_points(x, dim: int | None = None) -> np.ndarray:
    """Coerce scalars, 1-D lists of scalars or lists of vectors to an (n, d) array.

    A flat sequence is read as n scalar points unless ``dim`` says otherwise.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if dim is not None and dim > 1:
            if arr.size != dim:
                raise DimensionMismatch(f"expected a point of dimension {dim}, got {arr.size}")
            arr = arr.reshape(1, dim)
        else:
            arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise DimensionMismatch(f"cannot interpret array of shape {arr.shape} as points")
    if dim is not None and arr.shape[1] != dim:
        raise DimensionMismatch(f"expected points of dimension {dim}, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise OutOfDomain("design points must be finite")
    return arr


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BoxBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower, upper):
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch("box bounds must be vectors of equal length")
        if np.any(lo > hi):
            raise OutOfDomain("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", _frozen(lo))
        object.__setattr__(self, "upper", _frozen(hi))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        w = self.upper - self.lower
        return np.where(w > 0, w, 1.0)

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        pts = as_points(points, self.dim)
        slack = tol * self.width
        return np.all((pts >= self.lower - slack) & (pts <= self.upper + slack), axis=1)

    def grid(self, n=None, step=None) -> np.ndarray:
        """Tensor grid with ``n`` points per axis, or spacing ``step``.

        With ``step`` the upper bound is always included even when the width
        is not a multiple of the step.
        """
        axes = []
        for i in range(self.dim):
            lo, hi = self.lower[i], self.upper[i]
            if step is not None:
                s = float(np.broadcast_to(step, (self.dim,))[i])
                k = int(math.floor((hi - lo) / s + 1e-9))
                ax = lo + s * np.arange(k + 1)
                if hi - ax[-1] > 1e-9 * max(1.0, abs(hi)):
                    ax = np.append(ax, hi)
            else:
                m = int(np.broadcast_to(n if n is not None else 101, (self.dim,))[i])
                ax = np.linspace(lo, hi, m) if m > 1 else np.array([(lo + hi) / 2])
            axes.append(ax)
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class FiniteCandidateSet:
    points: np.ndarray

    def __init__(self, points):
        pts = as_points(points)
        if pts.shape[0] == 0:
            raise EmptySupport("candidate set is empty")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def width(self) -> np.ndarray:
        w = self.points.max(axis=0) - self.points.min(axis=0)
        return np.where(w > 0, w, 1.0)

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        pts = as_points(points, self.dim)
        d = np.abs(pts[:, None, :] - self.points[None, :, :]).max(axis=2)
        return d.min(axis=1) <= tol * max(1.0, float(np.abs(self.points).max()))

    def grid(self, n=None, step=None) -> np.ndarray:
        return np.array(self.points)

    def to_dict(self) -> dict:
        return {"points": self.points.tolist()}


DesignSpace = BoxBounds | FiniteCandidateSet


@dataclass(frozen=True)
class DesignMeasure:
    """Finite probability measure on design points.

    Build instances with :func:`new_measure`; the constructor assumes the
    invariants (positive weights summing to one, distinct support) already hold.
    """

    support: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "weights": self.weights.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> DesignMeasure:
        return new_measure(data["support"], data["weights"])

    @classmethod
    def from_json(cls, text: str) -> DesignMeasure:
        return cls.from_dict(json.loads(text))

    def __repr__(self) -> str:
        pairs = ", ".join(
            f"{np.array2string(u, precision=4)}: {w:.4f}" for u, w in zip(self.support, self.weights)
        )
        return f"DesignMeasure({{{pairs}}})"


def new_measure(support, weights) -> DesignMeasure:
    """Normalize ``weights`` to the simplex and drop (near-)zero-weight points.

    Exactly coincident support points are combined.
    """
    w = np.asarray(weights, dtype=float).ravel()
    raw = np.asarray(support, dtype=float)
    if raw.ndim == 1 and w.size == 1 and raw.size > 1:
        # one vector-valued point
        pts = as_points(raw, dim=raw.size)
    else:
        pts = as_points(raw)
    if pts.shape[0] != w.size:
        raise DimensionMismatch(f"{pts.shape[0]} support points but {w.size} weights")
    if w.size == 0:
        raise EmptySupport("a design measure needs at least one support point")
    if np.any(~np.isfinite(w)):
        raise NegativeWeight("weights must be finite")
    if np.any(w < 0):
        raise NegativeWeight(f"negative weight {w.min():g}")
    total = w.sum()
    if total <= 0:
        raise EmptySupport("all weights are zero")
    w = w / total
    keep = w >= PRUNE_WEIGHT
    pts, w = pts[keep], w[keep]

    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    if uniq.shape[0] < pts.shape[0]:
        # keep first-occurrence order
        inverse = np.asarray(inverse).ravel()
        order = []
        seen = {}
        for i, g in enumerate(inverse):
            if g not in seen:
                seen[g] = len(order)
                order.append(i)
        agg = np.zeros(len(order))
        for i, g in enumerate(inverse):
            agg[seen[g]] += w[i]
        pts, w = pts[order], agg
    w = w / w.sum()
    return DesignMeasure(_frozen(pts), _frozen(w))


def merge_support(measure: DesignMeasure, tol: float = DEFAULT_MERGE_TOL, scale=None) -> DesignMeasure:
    """Merge support points closer than ``tol`` into their weighted centroid.

    Clusters are the connected components of the "distance <= tol" graph, so
    chains of near-duplicates collapse together. ``scale`` (per-coordinate)
    divides coordinates before measuring distance, e.g. a box width to work
    in normalized coordinates.
    """
    if tol < 0:
        raise ValueError("merge tolerance must be nonnegative")
    pts, w = measure.support, measure.weights
    m = w.size
    if m <= 1:
        return measure
    z = pts / (np.asarray(scale, dtype=float) if scale is not None else 1.0)
    dist = np.sqrt(((z[:, None, :] - z[None, :, :]) ** 2).sum(axis=2))
    parent = list(range(m))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    ii, jj = np.nonzero(np.triu(dist <= tol, k=1))
    for i, j in zip(ii, jj):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = [find(i) for i in range(m)]
    labels = sorted(set(roots))
    new_pts = np.empty((len(labels), pts.shape[1]))
    new_w = np.empty(len(labels))
    for k, r in enumerate(labels):
        idx = [i for i in range(m) if roots[i] == r]
        wk = w[idx]
        new_w[k] = wk.sum()
        new_pts[k] = (wk[:, None] * pts[idx]).sum(axis=0) / new_w[k]
    return new_measure(new_pts, new_w)


@dataclass(frozen=True)
class ExactDesign:
    """N-point design; repeated points are allowed."""

    points: np.ndarray

    def __init__(self, points):
        pts = as_points(points)
        if pts.shape[0] < 1:
            raise TooFewTrials("an exact design needs at least one point")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def N(self) -> int:
        return self.points.shape[0]

    def to_measure(self) -> DesignMeasure:
        return new_measure(self.points, np.ones(self.N))

    def to_dict(self) -> dict:
        return {"points": self.points.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> ExactDesign:
        return cls(data["points"])

    @classmethod
    def from_json(cls, text: str) -> ExactDesign:
        return cls.from_dict(json.loads(text))


def apportion(weights, N: int) -> np.ndarray:
    """Integer counts r_i >= 1 summing to N, by the efficient-rounding multiplier rule."""
    lam = np.asarray(weights, dtype=float)
    m = lam.size
    if N < m:
        raise TooFewTrials(f"N={N} is smaller than the number of support points {m}")
    # small guard so that exact multiples are not pushed up by round-off
    r = np.ceil(lam * (N - m / 2.0) - 1e-9).astype(int)
    r = np.maximum(r, 1)
    while r.sum() > N:
        ratio = np.where(r > 1, r / lam, -np.inf)
        top = np.flatnonzero(ratio >= ratio.max() * (1 - 1e-12))
        r[top[-1]] -= 1
    while r.sum() < N:
        ratio = r / lam
        r[np.flatnonzero(ratio <= ratio.min() * (1 + 1e-12))[0]] += 1
    return r


def round_to_exact(measure: DesignMeasure, N: int) -> ExactDesign:
    counts = apportion(measure.weights, N)
    return ExactDesign(np.repeat(measure.support, counts, axis=0))
