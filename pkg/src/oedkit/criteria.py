"""Information matrices, the variance function d(u, xi), design criteria and
the D/G equivalence certificate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .design import DesignMeasure, ExactDesign, as_points
from .errors import SingularInformation

SINGULAR_RATIO = 1e-12


def point_matrices(model, theta, points) -> np.ndarray:
    """Elementary information matrices I(u) g(u) g(u)^T, shape (n, p, p)."""
    pts = as_points(points, model.dim)
    G = model.sensitivities(theta, pts)
    w = model.info_weights(pts)
    return w[:, None, None] * G[:, :, None] * G[:, None, :]


def info_matrix(model, theta, design) -> np.ndarray:
    """Fisher information (average per observation) of a measure or exact design."""
    if isinstance(design, ExactDesign):
        pts = design.points
        lam = np.full(design.N, 1.0 / design.N)
    elif isinstance(design, DesignMeasure):
        pts, lam = design.support, design.weights
    else:
        raise TypeError(f"expected DesignMeasure or ExactDesign, got {type(design).__name__}")
    G = model.sensitivities(theta, pts)
    w = lam * model.info_weights(pts)
    M = (G * w[:, None]).T @ G
    return 0.5 * (M + M.T)


def check_nonsingular(M: np.ndarray) -> np.ndarray:
    """Return the eigenvalues of ``M``; raise if it is numerically singular."""
    ev = np.linalg.eigvalsh(M)
    if ev[-1] <= 0 or ev[0] <= SINGULAR_RATIO * ev[-1]:
        raise SingularInformation(
            f"information matrix is singular (eigenvalues {ev[0]:.3g} .. {ev[-1]:.3g})"
        )
    return ev


def _equilibrated_cholesky(M: np.ndarray):
    """Cholesky factor of D M D with D = diag(M)^-1/2, plus the scaling vector."""
    check_nonsingular(M)
    scale = 1.0 / np.sqrt(np.diag(M))
    return np.linalg.cholesky(M * scale[:, None] * scale[None, :]), scale


def d_from_sensitivities(M: np.ndarray, G: np.ndarray, weights=None) -> np.ndarray:
    """Row-wise I(u) g^T M^{-1} g for sensitivity rows ``G``."""
    L, scale = _equilibrated_cholesky(M)
    Y = linalg.solve_triangular(L, (G * scale).T, lower=True)
    d = np.einsum("ij,ij->j", Y, Y)
    return d if weights is None else d * weights


def d_from_matrices(M: np.ndarray, F: np.ndarray) -> np.ndarray:
    """trace(M^{-1} F_i) for a stack of elementary matrices (rank may exceed one)."""
    L, scale = _equilibrated_cholesky(M)
    Fs = F * scale[None, :, None] * scale[None, None, :]
    Minv = linalg.cho_solve((L, True), np.eye(M.shape[0]))
    return np.einsum("ij,nji->n", Minv, Fs)


def _root_factor(model, theta, measure: DesignMeasure) -> np.ndarray:
    """Triangular R with R^T R = M, from a QR of the weighted sensitivity rows."""
    M = info_matrix(model, theta, measure)
    check_nonsingular(M)
    G = model.sensitivities(theta, measure.support)
    A = G * np.sqrt(measure.weights * model.info_weights(measure.support))[:, None]
    return np.linalg.qr(A, mode="r")


def _d_from_root(R: np.ndarray, G: np.ndarray, weights) -> np.ndarray:
    Y = linalg.solve_triangular(R, G.T, trans="T")
    return np.einsum("ij,ij->j", Y, Y) * weights


def variance_function_many(model, theta, measure: DesignMeasure, points) -> np.ndarray:
    R = _root_factor(model, theta, measure)
    pts = as_points(points, model.dim)
    return _d_from_root(R, model.sensitivities(theta, pts), model.info_weights(pts))


def variance_function(model, theta, measure: DesignMeasure, u) -> float:
    return float(variance_function_many(model, theta, measure, as_points(u, model.dim))[0])


@dataclass(frozen=True)
class Criterion:
    kind: str
    Q: np.ndarray | None = None
    points: np.ndarray | None = None

    def __post_init__(self):
        kind = self.kind.upper()
        object.__setattr__(self, "kind", kind)
        if kind not in {"D", "A", "E", "L", "G"}:
            raise ValueError(f"unknown criterion {self.kind!r}")
        if kind == "L":
            if self.Q is None:
                raise ValueError("L-criterion needs a weight matrix Q")
            Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
            object.__setattr__(self, "Q", Q)
        if kind == "G" and self.points is None:
            raise ValueError("G-criterion needs an explicit evaluation set")

    @property
    def maximize(self) -> bool:
        return self.kind in {"D", "E"}


def criterion_value(crit: Criterion, M: np.ndarray, model=None, theta=None, measure=None) -> float:
    """D: log det M (max); A: trace M^-1 (min); L: trace Q^T Q M^-1 (min);
    E: smallest eigenvalue (max); G: max of d over the criterion's set (min)."""
    M = np.asarray(M, dtype=float)
    if crit.kind == "E":
        return float(np.linalg.eigvalsh(M)[0])
    if crit.kind == "G":
        if model is None or measure is None:
            raise ValueError("G-criterion needs the model, theta and the measure")
        return float(variance_function_many(model, theta, measure, crit.points).max())
    check_nonsingular(M)
    if crit.kind == "D":
        return float(np.linalg.slogdet(M)[1])
    Minv = np.linalg.inv(M)
    if crit.kind == "A":
        return float(np.trace(Minv))
    return float(np.trace(crit.Q.T @ crit.Q @ Minv))


def log_det(M: np.ndarray) -> float:
    sign, val = np.linalg.slogdet(M)
    return float(val) if sign > 0 else -np.inf


def grid_resolution(points) -> float:
    """Largest nearest-neighbour distance in a grid (0 for a single point)."""
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 2:
        return 0.0
    if pts.shape[1] == 1:
        s = np.sort(pts[:, 0])
        gaps = np.diff(s)
        return float(gaps.max()) if gaps.size else 0.0
    from scipy.spatial import cKDTree

    dist, _ = cKDTree(pts).query(pts, k=2)
    return float(dist[:, 1].max())


@dataclass
class Certificate:
    """Grid certificate of D-optimality (equivalently G-optimality)."""

    criterion: str
    max_d: float
    p: int
    gap: float
    argmax: list
    support_d: list
    grid_size: int
    epsilon: float
    resolution: float = 0.0
    certified: bool = field(init=False)

    def __post_init__(self):
        self.certified = bool(self.max_d <= self.p + self.epsilon)

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "max_d": self.max_d,
            "p": self.p,
            "gap": self.gap,
            "argmax": list(self.argmax),
            "support_d": list(self.support_d),
            "grid_size": self.grid_size,
            "epsilon": self.epsilon,
            "resolution": self.resolution,
            "certified": self.certified,
        }


def make_certificate(d_grid, d_support, grid_points, support_points, p: int, eps: float) -> Certificate:
    d_all = np.concatenate([np.asarray(d_grid, float), np.asarray(d_support, float)])
    pts_all = np.vstack([np.asarray(grid_points, float), np.asarray(support_points, float)])
    k = int(np.argmax(d_all))  # first maximizer = lowest index
    max_d = float(d_all[k])
    return Certificate(
        criterion="D",
        max_d=max_d,
        p=int(p),
        gap=max_d - p,
        argmax=pts_all[k].tolist(),
        support_d=[float(v) for v in d_support],
        grid_size=int(len(d_grid)),
        epsilon=float(eps),
        resolution=grid_resolution(grid_points),
    )


def equivalence_certificate(model, theta, measure: DesignMeasure, grid, eps: float = 1e-4) -> Certificate:
    grid = as_points(grid, model.dim)
    if grid.shape[0] == 0:
        raise ValueError("certificate grid is empty")
    R = _root_factor(model, theta, measure)
    d_grid = _d_from_root(R, model.sensitivities(theta, grid), model.info_weights(grid))
    d_sup = _d_from_root(R, model.sensitivities(theta, measure.support), model.info_weights(measure.support))
    return make_certificate(d_grid, d_sup, grid, measure.support, model.p, eps)
