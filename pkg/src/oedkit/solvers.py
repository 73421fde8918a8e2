"""Design optimization: vertex-direction (Fedorov and Wynn steps), multiplicative
weight updates, exchange for exact designs and robust design over finite
parameter sets."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .criteria import (
    SINGULAR_RATIO,
    Certificate,
    grid_resolution,
    make_certificate,
    point_matrices,
)
from .design import (
    PRUNE_WEIGHT,
    BoxBounds,
    DesignMeasure,
    ExactDesign,
    FiniteCandidateSet,
    as_points,
    merge_support,
    new_measure,
)
from .errors import DegenerateInit, RankDeficientCandidates, SingularInformation

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("iter", "criterion_value", "max_d", "step", "support_size")


@dataclass
class SolverOptions:
    """Settings shared by the design solvers.

    ``merge_tol`` is a distance in design-space units; ``None`` means one grid
    spacing. ``refine`` controls the golden-section refinement of selected
    points on box spaces: ``"final"`` refines the support once the grid
    iteration has finished, ``"each"`` refines every selected point, ``"none"``
    stays on the grid. ``correct_every`` is the period (in iterations) of the
    weight re-optimization on the current support.
    """

    step: str = "fedorov"
    max_iter: int = 5000
    epsilon: float = 1e-4
    merge_tol: float | None = None
    grid: np.ndarray | None = None
    seed: int = 0
    refine: str = "final"
    correct_every: int = 25
    window: int = 50

    def __post_init__(self):
        if self.step not in ("fedorov", "wynn"):
            raise ValueError(f"unknown step rule {self.step!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        if self.refine not in ("final", "each", "none"):
            raise ValueError(f"unknown refine mode {self.refine!r}")
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=float)
            if g.size == 0:
                raise ValueError("candidate grid is empty")


@dataclass
class SolverResult:
    measure: DesignMeasure
    trace: list
    certified: bool
    certificate: Certificate | None = None
    flags: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.measure
        yield self.trace

    @property
    def log_det(self) -> float:
        return self.flags.get("log_det", math.nan)

    def trace_csv(self) -> str:
        return trace_to_csv(self.trace)


def trace_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for row in rows:
        writer.writerow([row[0], repr(float(row[1])), repr(float(row[2])), repr(float(row[3])), row[4]])
    return buf.getvalue()


def default_grid(space, n: int | None = None) -> np.ndarray:
    if isinstance(space, FiniteCandidateSet):
        return np.array(space.points)
    if n is None:
        n = max(5, int(round(10_000 ** (1.0 / space.dim))))
        n = min(n, 201)
    return space.grid(n=n)


def _logdet(M: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(M)
    if ev[-1] <= 0 or ev[0] <= SINGULAR_RATIO * ev[-1]:
        return -math.inf
    return float(np.sum(np.log(ev)))


def _weighted(F: np.ndarray, w: np.ndarray) -> np.ndarray:
    M = np.einsum("n,nij->ij", w, F)
    return 0.5 * (M + M.T)


def _d_values(Minv: np.ndarray, F: np.ndarray) -> np.ndarray:
    return np.einsum("ij,nji->n", Minv, F)


def _is_rank_one(F: np.ndarray) -> bool:
    if F.shape[1] == 1:
        return True
    ev = np.linalg.eigvalsh(F)
    top = np.abs(ev[:, -1])
    return bool(np.all(np.abs(ev[:, :-1]).max(axis=1) <= 1e-10 * np.maximum(top, 1e-300)))


def fedorov_step(d_star: float, p: int) -> float:
    """Optimal step toward a rank-one vertex with variance d_star > p."""
    return (d_star - p) / (p * (d_star - 1.0))


def _line_search_step(M: np.ndarray, F: np.ndarray) -> float:
    """argmax over [0, 1) of log det((1 - a) M + a F), via the eigenvalues of M^-1 F."""
    mu = np.real(np.linalg.eigvals(np.linalg.solve(M, F)))
    mu = np.maximum(mu, 0.0)

    def slope(a):
        return float(np.sum((mu - 1.0) / (1.0 - a + a * mu)))

    if slope(0.0) <= 0:
        return 0.0
    hi = 1.0 - 1e-12
    if slope(hi) >= 0:
        return hi
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


class _Info:
    """Elementary information matrices on a design space, with an evaluation cache for the grid."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], p: int, space, grid: np.ndarray):
        self.fn = fn
        self.p = p
        self.space = space
        self.grid = grid
        self.F_grid = fn(grid)
        self.rank_one = _is_rank_one(self.F_grid)
        self.resolution = grid_resolution(grid)

    def at(self, points) -> np.ndarray:
        return self.fn(as_points(points, self.grid.shape[1]))


def _init_indices(K: int, p: int) -> np.ndarray:
    m = min(K, max(2 * p, p + 1))
    return np.unique(np.round(np.linspace(0, K - 1, m)).astype(int))


def _start_weights(info: _Info, init: DesignMeasure | None):
    if init is not None:
        pts = as_points(init.support, info.grid.shape[1])
        F = info.at(pts)
        w = np.array(init.weights)
        if _logdet(_weighted(F, w)) == -math.inf:
            raise DegenerateInit("initial design has a singular information matrix")
        return pts, F, w
    K = info.grid.shape[0]
    idx = _init_indices(K, info.p)
    for choice in (idx, np.arange(K)):
        w = np.full(choice.size, 1.0 / choice.size)
        F = info.F_grid[choice]
        if _logdet(_weighted(F, w)) > -math.inf:
            return info.grid[choice].copy(), F.copy(), w
    raise DegenerateInit("the candidate grid does not support a nonsingular information matrix")


def _golden_refine(objective, u: np.ndarray, space: BoxBounds, radius: np.ndarray) -> np.ndarray:
    """One pass of bounded scalar maximization per coordinate around ``u``."""
    best = u.copy()
    best_val = objective(best)
    for j in range(best.size):
        lo = max(space.lower[j], best[j] - radius[j])
        hi = min(space.upper[j], best[j] + radius[j])
        if hi - lo <= 0:
            continue

        def neg(t, j=j):
            v = best.copy()
            v[j] = t
            return -objective(v)

        res = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-9 * max(1.0, hi - lo)})
        cand = best.copy()
        cand[j] = res.x
        val = -res.fun
        # endpoints are not probed by the bounded method
        for edge in (lo, hi):
            e = best.copy()
            e[j] = edge
            ev = objective(e)
            if ev > val:
                cand, val = e, ev
        if val > best_val:
            best, best_val = cand, val
    return best


def _add_point(pts, F, w, u, Fu, alpha):
    w = (1.0 - alpha) * w
    hit = np.flatnonzero(np.all(pts == u, axis=1))
    if hit.size:
        w[hit[0]] += alpha
        return pts, F, w
    return np.vstack([pts, u]), np.concatenate([F, Fu[None]], axis=0), np.append(w, alpha)


def _prune(pts, F, w):
    keep = w >= PRUNE_WEIGHT
    if not np.any(keep):
        keep[np.argmax(w)] = True
    w = w[keep]
    return pts[keep], F[keep], w / w.sum()


def _multiplicative_on_support(F, w, p, iters=500, tol=1e-12):
    """Multiplicative updates restricted to the current support; returns the weights."""
    for _ in range(iters):
        M = _weighted(F, w)
        try:
            Minv = np.linalg.inv(M)
        except np.linalg.LinAlgError:
            break
        d = _d_values(Minv, F)
        if np.max(np.abs(d[w > PRUNE_WEIGHT] - p)) < tol:
            break
        w = w * d / p
        w = w / w.sum()
    return w


def _sym_vec(F: np.ndarray) -> np.ndarray:
    p = F.shape[1]
    iu = np.triu_indices(p)
    return F[:, iu[0], iu[1]]


def caratheodory_reduce(pts, F, w):
    """Drop support points while keeping sum(w F) and sum(w) fixed.

    Points are removed along null vectors of the stacked [vec(F_i); 1]
    columns, so the support ends up no larger than the rank of that stack
    (at most p(p+1)/2 + 1, fewer when the matrices are structured).
    """
    pts, F, w = pts.copy(), F.copy(), w.copy()
    while w.size > 1:
        A = np.vstack([_sym_vec(F).T, np.ones(w.size)])
        _, s, vt = np.linalg.svd(A)
        rank = int(np.sum(s > 1e-10 * s[0]))
        if w.size <= rank:
            break
        c = vt[-1]
        if np.max(c) <= 0:
            c = -c
        pos = c > 1e-12 * np.abs(c).max()
        ratio = np.full(w.size, np.inf)
        ratio[pos] = w[pos] / c[pos]
        drop = int(np.argmin(ratio))
        w = w - ratio[drop] * c
        w[drop] = 0.0
        keep = w > 1e-14
        pts, F, w = pts[keep], F[keep], w[keep]
        w = w / w.sum()
    return pts, F, w


def _refine_support(info: _Info, pts, F, w):
    """Move each support point to a local maximum of d within one grid spacing."""
    if not isinstance(info.space, BoxBounds):
        return pts, F, w
    Minv = np.linalg.inv(_weighted(F, w))
    radius = np.full(pts.shape[1], info.resolution if info.resolution > 0 else 0.0)
    if np.all(radius == 0):
        return pts, F, w
    new_pts = pts.copy()
    for i in range(pts.shape[0]):
        obj = lambda v: float(_d_values(Minv, info.at(v[None]))[0])  # noqa: E731
        new_pts[i] = _golden_refine(obj, pts[i], info.space, radius)
    return new_pts, info.at(new_pts), w


def _joint_refine(info: _Info, pts, w):
    """Local maximization of log det jointly over support coordinates (within one
    grid spacing) and weights (softmax parametrization)."""
    if not isinstance(info.space, BoxBounds) or info.resolution <= 0:
        return pts, info.at(pts), w
    n, dim = pts.shape
    lo = np.maximum(info.space.lower, pts - info.resolution)
    hi = np.minimum(info.space.upper, pts + info.resolution)
    bounds = [(a, b) for a, b in zip(lo.ravel(), hi.ravel())] + [(-40.0, 40.0)] * n

    def unpack(x):
        z = x[n * dim :]
        e = np.exp(z - z.max())
        return x[: n * dim].reshape(n, dim), e / e.sum()

    def neg(x):
        u, lam = unpack(x)
        val = _logdet(_weighted(info.at(u), lam))
        return -val if np.isfinite(val) else 1e300

    x0 = np.concatenate([pts.ravel(), np.log(np.maximum(w, 1e-300))])
    start = neg(x0)
    res = minimize(neg, x0, method="L-BFGS-B", bounds=bounds, options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 500})
    if not res.fun < start:
        return pts, info.at(pts), w
    u, lam = unpack(res.x)
    return u, info.at(u), lam


def _merge_arrays(info: _Info, pts, w, tol):
    m = merge_support(new_measure(pts, w), tol)
    return np.array(m.support), info.at(m.support), np.array(m.weights)


def _polish(info: _Info, pts, F, w, merge_tol: float, refine: bool, rounds: int = 6):
    """Merge near-duplicates, re-optimize weights on the support and optionally
    move support points to local maxima of d; keeps the best log det seen."""
    p = info.p
    best = (pts, F, w, _logdet(_weighted(F, w)))
    cur_pts, cur_F, cur_w = pts, F, w
    for _ in range(rounds):
        cand_pts, cand_F, cand_w = _merge_arrays(info, cur_pts, cur_w, merge_tol)
        if _logdet(_weighted(cand_F, cand_w)) == -math.inf:
            cand_pts, cand_F, cand_w = cur_pts, cur_F, cur_w
        cand_w = _multiplicative_on_support(cand_F, cand_w, p, iters=2000)
        cand_pts, cand_F, cand_w = _prune(cand_pts, cand_F, cand_w)
        if refine:
            cand_pts, cand_F, cand_w = _refine_support(info, cand_pts, cand_F, cand_w)
            cand_w = _multiplicative_on_support(cand_F, cand_w, p, iters=2000)
            cand_pts, cand_F, cand_w = _prune(cand_pts, cand_F, cand_w)
            cand_pts, cand_F, cand_w = _joint_refine(info, cand_pts, cand_w)
            cand_w = _multiplicative_on_support(cand_F, cand_w, p, iters=2000)
            cand_pts, cand_F, cand_w = _prune(cand_pts, cand_F, cand_w)
        val = _logdet(_weighted(cand_F, cand_w))
        if not val > best[3] + 1e-14:
            break
        best = (cand_pts, cand_F, cand_w, val)
        cur_pts, cur_F, cur_w = cand_pts, cand_F, cand_w
    pts, F, w, _ = best
    return caratheodory_reduce(pts, F, w)


def _certificate(info: _Info, pts, F, w, eps) -> Certificate:
    Minv = np.linalg.inv(_weighted(F, w))
    return make_certificate(_d_values(Minv, info.F_grid), _d_values(Minv, F), info.grid, pts, info.p, eps)


def vertex_direction(info: _Info, opts: SolverOptions, init: DesignMeasure | None = None) -> SolverResult:
    """Vertex-direction ascent on log det over the candidate grid of ``info``."""
    p = info.p
    eps = opts.epsilon
    pts, F, w = _start_weights(info, init)
    refine_each = opts.refine == "each" and isinstance(info.space, BoxBounds)
    trace = []
    offset = pts.shape[0]
    certified = False
    merge_tol = opts.merge_tol if opts.merge_tol is not None else info.resolution * (1 + 1e-9)
    k = 0
    while True:
        M = _weighted(F, w)
        Minv = np.linalg.inv(M)
        d_grid = _d_values(Minv, info.F_grid)
        j = int(np.argmax(d_grid))
        u_star, F_star, d_star = info.grid[j], info.F_grid[j], float(d_grid[j])
        if refine_each and info.resolution > 0:
            obj = lambda v: float(_d_values(Minv, info.at(v[None]))[0])  # noqa: E731
            u_ref = _golden_refine(obj, u_star, info.space, np.full(u_star.size, info.resolution))
            if not np.array_equal(u_ref, u_star):
                F_ref = info.at(u_ref[None])[0]
                d_ref = float(_d_values(Minv, F_ref[None])[0])
                if d_ref > d_star:
                    u_star, F_star, d_star = u_ref, F_ref, d_ref
        d_sup = _d_values(Minv, F)
        d_max = max(d_star, float(d_sup.max()))
        if d_max < p + eps:
            certified = True
            break
        if k >= opts.max_iter:
            break
        k += 1
        if opts.step == "fedorov":
            alpha = fedorov_step(d_star, p) if info.rank_one else _line_search_step(M, F_star)
        else:
            alpha = 1.0 / (k + offset)
        pts, F, w = _add_point(pts, F, w, u_star, F_star, alpha)
        if opts.correct_every and k % opts.correct_every == 0:
            w_new = _multiplicative_on_support(F, w, p, iters=50)
            if _logdet(_weighted(F, w_new)) >= _logdet(_weighted(F, w)):
                w = w_new
            pts, F, w = _prune(pts, F, w)
        trace.append((k, _logdet(_weighted(F, w)), d_star, alpha, w.size))

    flags = {"iterations": k, "no_progress": not certified}
    pts, F, w = _polish(info, pts, F, w, merge_tol, refine=opts.refine != "none" and isinstance(info.space, BoxBounds))
    cert = _certificate(info, pts, F, w, eps)
    flags["log_det"] = _logdet(_weighted(F, w))
    if not cert.certified:
        log.warning("design not certified after %d iterations (max d = %.6g, p = %d)", k, cert.max_d, p)
    return SolverResult(new_measure(pts, w), trace, cert.certified, cert, flags)


def _model_info(model, theta, opts: SolverOptions) -> _Info:
    grid = as_points(opts.grid, model.dim) if opts.grid is not None else default_grid(model.space)
    if grid.shape[0] == 0:
        raise ValueError("candidate grid is empty")
    return _Info(lambda pts: point_matrices(model, theta, pts), model.p, model.space, grid)


def fedorov_wynn(model, theta, opts: SolverOptions | None = None, init: DesignMeasure | None = None) -> SolverResult:
    """Approximate D-optimal design by vertex-direction ascent.

    Each iteration moves mass toward the grid maximizer of d(u, xi) with the
    Fedorov step (d - p) / (p (d - 1)) or the Wynn step 1/(k + n0). The run
    stops when max d < p + epsilon. Weights are periodically re-optimized on
    the current support, and the output is merged, polished and certified.
    """
    opts = opts or SolverOptions()
    return vertex_direction(_model_info(model, theta, opts), opts, init)


def multiplicative_solve(model, theta, grid, iterations: int = 100_000, epsilon: float = 1e-4) -> SolverResult:
    """Multiplicative weight iteration lambda_i <- lambda_i d_i / p from uniform weights on ``grid``."""
    pts = grid.points if isinstance(grid, FiniteCandidateSet) else as_points(grid, model.dim)
    F = point_matrices(model, theta, pts)
    p = model.p
    K = pts.shape[0]
    w = np.full(K, 1.0 / K)
    M = _weighted(F, w)
    if _logdet(M) == -math.inf:
        raise SingularInformation("the grid does not support a nonsingular information matrix")
    trace = []
    certified = False
    for k in range(iterations + 1):
        M = _weighted(F, w)
        d = _d_values(np.linalg.inv(M), F)
        d_max = float(d.max())
        if d_max < p + epsilon:
            certified = True
            break
        if k == iterations:
            break
        w = w * d / p
        w = w / w.sum()
        trace.append((k + 1, _logdet(_weighted(F, w)), d_max, math.nan, int(np.sum(w >= PRUNE_WEIGHT))))
    keep = w >= PRUNE_WEIGHT
    # Slowly decaying neighbours of a support point are folded into it, as in
    # the vertex-direction solver.
    measure = merge_support(new_measure(pts[keep], w[keep]), grid_resolution(pts) * (1 + 1e-9))
    Fk = point_matrices(model, theta, measure.support)
    wk = np.array(measure.weights)
    Minv = np.linalg.inv(_weighted(Fk, wk))
    cert = make_certificate(_d_values(Minv, F), _d_values(Minv, Fk), pts, measure.support, p, epsilon)
    flags = {"iterations": len(trace), "no_progress": not certified, "log_det": _logdet(_weighted(Fk, wk))}
    return SolverResult(measure, trace, cert.certified, cert, flags)


def multiplicative_update(weights, d, p: int) -> np.ndarray:
    """One multiplicative step; preserves the simplex when sum(lambda d) = p."""
    w = np.asarray(weights, dtype=float) * np.asarray(d, dtype=float) / p
    return w / w.sum()


class ExchangeResult(NamedTuple):
    design: ExactDesign
    log_det: float


def _rows(model, theta, pts):
    G = model.sensitivities(theta, pts)
    return G * np.sqrt(model.info_weights(pts))[:, None]


def exchange_exact(model, theta, N: int, candidates, restarts: int = 20, seed: int = 0, max_sweeps: int = 1000) -> ExchangeResult:
    """Fedorov exchange for an N-point exact design maximizing det(sum g g^T).

    From random starts, the (design point, candidate) swap with the largest
    determinant ratio is applied until no swap improves; the best design over
    all restarts is returned with the log determinant of its total information.
    """
    cand = candidates.points if isinstance(candidates, FiniteCandidateSet) else as_points(candidates, model.dim)
    X = _rows(model, theta, cand)
    p = model.p
    if N < p:
        raise RankDeficientCandidates(f"N={N} trials cannot identify {p} parameters")
    if np.linalg.matrix_rank(X) < p:
        raise RankDeficientCandidates("candidate set does not span the parameter space")
    rng = np.random.default_rng(seed)
    K = cand.shape[0]
    best_idx, best_val = None, -math.inf
    for _ in range(max(1, restarts)):
        idx = None
        for _attempt in range(100):
            trial = rng.choice(K, size=N, replace=N > K)
            if _logdet(X[trial].T @ X[trial]) > -math.inf:
                idx = trial
                break
        if idx is None:
            idx = _greedy_start(X, N)
        idx = _exchange_run(X, idx, max_sweeps)
        val = _logdet(X[idx].T @ X[idx])
        if val > best_val + 1e-12:
            best_idx, best_val = idx.copy(), val
    return ExchangeResult(ExactDesign(cand[np.sort(best_idx)]), float(best_val))


def _greedy_start(X, N):
    """Pivoted selection of p independent rows, padded by repetition."""
    p = X.shape[1]
    chosen = []
    R = X.copy()
    for _ in range(p):
        j = int(np.argmax(np.einsum("ij,ij->i", R, R)))
        chosen.append(j)
        v = R[j] / np.linalg.norm(R[j])
        R = R - np.outer(R @ v, v)
    while len(chosen) < N:
        chosen.append(chosen[len(chosen) % p])
    return np.array(chosen[:N])


def _exchange_run(X, idx, max_sweeps):
    idx = idx.copy()
    for _ in range(max_sweeps):
        Xd = X[idx]
        Minv = np.linalg.inv(Xd.T @ Xd)
        d_cand = np.einsum("ij,jk,ik->i", X, Minv, X)
        d_des = d_cand[idx]
        cross = Xd @ Minv @ X.T  # (N, K)
        delta = (1 + d_cand[None, :]) * (1 - d_des[:, None]) + cross**2
        i, j = np.unravel_index(int(np.argmax(delta)), delta.shape)
        if delta[i, j] <= 1.0 + 1e-10:
            break
        idx[i] = j
    return idx


@dataclass
class RobustSpec:
    thetas: list
    mode: str = "average"
    prior: np.ndarray | None = None

    def __post_init__(self):
        if len(self.thetas) == 0:
            raise ValueError("parameter set is empty")
        if self.mode not in ("average", "minimax"):
            raise ValueError(f"unknown robust mode {self.mode!r}")
        m = len(self.thetas)
        if self.prior is None:
            self.prior = np.full(m, 1.0 / m)
        else:
            pr = np.asarray(self.prior, dtype=float)
            if pr.size != m or np.any(pr < 0) or abs(pr.sum() - 1) > 1e-9:
                raise ValueError("prior weights must lie on the simplex")
            self.prior = pr


def _robust_values(Fs, w):
    return np.array([_logdet(_weighted(F, w)) for F in Fs])


def robust_solve(model, spec: RobustSpec, opts: SolverOptions | None = None) -> SolverResult:
    """Average or minimax D-optimal design over a finite parameter set.

    Average mode ascends sum pi_i log det M_i along the maximizer of
    sum pi_i d_i(u). Minimax mode ascends min_i log det M_i along the maximizer
    of d for the current worst parameter, falling back to a direction that
    averages the near-active parameters when that step does not improve.
    Steps come from a bounded line search. The run stops when the optimality
    condition holds to epsilon or the objective improves by less than epsilon
    over ``opts.window`` iterations; the best iterate is returned.
    """
    opts = opts or SolverOptions()
    grid = as_points(opts.grid, model.dim) if opts.grid is not None else default_grid(model.space)
    p = model.p
    thetas = [np.asarray(t, dtype=float) for t in spec.thetas]
    Fg = np.stack([point_matrices(model, t, grid) for t in thetas])  # (m, K, p, p)
    prior = spec.prior
    minimax = spec.mode == "minimax"

    def objective_of(vals):
        return float(vals.min()) if minimax else float(prior @ vals)

    idx = _init_indices(grid.shape[0], p)
    w = np.full(idx.size, 1.0 / idx.size)
    sup = list(idx)
    vals = _robust_values(Fg[:, sup], w)
    if np.any(vals == -math.inf):
        sup = list(range(grid.shape[0]))
        w = np.full(len(sup), 1.0 / len(sup))
        vals = _robust_values(Fg[:, sup], w)
        if np.any(vals == -math.inf):
            bad = int(np.flatnonzero(vals == -math.inf)[0])
            raise SingularInformation(f"singular information for parameter {bad}")

    trace = []
    history = []
    worst_history = []
    best = (list(sup), w.copy(), objective_of(vals))
    certified = False
    k = 0
    while True:
        Ms = [_weighted(Fg[i, sup], w) for i in range(len(thetas))]
        Minvs = [np.linalg.inv(M) for M in Ms]
        D = np.stack([_d_values(Minvs[i], Fg[i]) for i in range(len(thetas))])  # (m, K)
        vals = np.array([_logdet(M) for M in Ms])
        obj = objective_of(vals)
        if minimax:
            worst = int(np.argmin(vals))
            worst_history.append(worst)
            active = vals <= vals.min() + max(1e-6, 1e-6 * abs(vals.min()))
            mix = _minimax_mix(D, active, p)
            direction = mix @ D
        else:
            direction = prior @ D
        d_max = float(direction.max())
        if d_max < p + opts.epsilon:
            certified = True
            break
        history.append(obj)
        if k >= opts.max_iter:
            break
        if len(history) > opts.window and history[-1] - history[-1 - opts.window] < opts.epsilon * 1e-3:
            break
        k += 1
        if minimax:
            j = int(np.argmax(D[worst]))
        else:
            j = int(np.argmax(direction))
        alpha = _robust_line_search(Fg, sup, w, j, objective_of)
        if alpha <= 0 and minimax:
            j = int(np.argmax(direction))
            alpha = _robust_line_search(Fg, sup, w, j, objective_of)
            if alpha <= 0:
                alpha = 1.0 / (k + 1 + len(sup))
        if j in sup:
            w = (1 - alpha) * w
            w[sup.index(j)] += alpha
        else:
            w = np.append((1 - alpha) * w, alpha)
            sup.append(j)
        if opts.correct_every and k % opts.correct_every == 0:
            sup, w = _robust_correct(Fg, sup, w, prior, minimax, objective_of, p)
        new_obj = objective_of(_robust_values(Fg[:, sup], w))
        if new_obj > best[2]:
            best = (list(sup), w.copy(), new_obj)
        trace.append((k, new_obj, d_max, alpha, len(sup)))

    sup, w = best[0], best[1]
    sup, w = _robust_correct(Fg, list(sup), w.copy(), prior, minimax, objective_of, p, iters=2000)
    final_vals = _robust_values(Fg[:, sup], w)
    final_obj = objective_of(final_vals)
    if final_obj < best[2]:
        sup, w = best[0], best[1]
        final_vals = _robust_values(Fg[:, sup], w)
        final_obj = best[2]
    small = w < 1e-6 * w.max()
    if np.any(small):
        keep = [j for j, drop in zip(sup, small) if not drop]
        w_keep = w[~small] / w[~small].sum()
        keep, w_keep = _robust_correct(Fg, keep, w_keep, prior, minimax, objective_of, p, iters=2000)
        vals_keep = _robust_values(Fg[:, keep], w_keep)
        if objective_of(vals_keep) >= final_obj - 1e-10:
            sup, w, final_vals, final_obj = keep, w_keep, vals_keep, objective_of(vals_keep)
    measure = new_measure(grid[sup], w)
    oscillating = False
    if minimax and len(worst_history) > opts.window:
        tail = worst_history[-opts.window :]
        switches = sum(a != b for a, b in zip(tail[:-1], tail[1:]))
        oscillating = switches > opts.window // 4
    Ms = [_weighted(Fg[i, sup], w) for i in range(len(thetas))]
    D = np.stack([_d_values(np.linalg.inv(M), Fg[i]) for i, M in enumerate(Ms)])
    if minimax:
        active = final_vals <= final_vals.min() + max(1e-6, 1e-6 * abs(final_vals.min()))
        direction = _minimax_mix(D, active, p) @ D
    else:
        direction = prior @ D
    max_d = float(direction.max())
    certified = max_d < p + opts.epsilon
    flags = {
        "iterations": k,
        "no_progress": not certified,
        "log_det": final_obj,
        "objective_values": final_vals.tolist(),
        "max_direction": max_d,
        "stop_rule": "improvement window" if not certified else "optimality condition",
        "oscillating": oscillating,
    }
    return SolverResult(measure, trace, certified, None, flags)


def _minimax_mix(D, active, p):
    """Mixture of the active parameters minimizing the largest combined d (small LP-like problem)."""
    m = D.shape[0]
    act = np.flatnonzero(active)
    if act.size == 1:
        mix = np.zeros(m)
        mix[act[0]] = 1.0
        return mix
    sub = D[act]

    def worst(z):
        e = np.exp(z - z.max())
        return float(((e / e.sum()) @ sub).max())

    res = minimize(worst, np.zeros(act.size), method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 2000})
    e = np.exp(res.x - res.x.max())
    mix = np.zeros(m)
    mix[act] = e / e.sum()
    return mix


def _robust_line_search(Fg, sup, w, j, objective_of) -> float:
    m = Fg.shape[0]
    Ms = [_weighted(Fg[i, sup], w) for i in range(m)]
    Fj = [Fg[i, j] for i in range(m)]
    mus = [np.maximum(np.real(np.linalg.eigvals(np.linalg.solve(Ms[i], Fj[i]))), 0.0) for i in range(m)]
    base = np.array([_logdet(M) for M in Ms])

    def value(a):
        return objective_of(np.array([base[i] + np.sum(np.log(1 - a + a * mus[i])) for i in range(m)]))

    res = minimize_scalar(lambda a: -value(a), bounds=(0.0, 1.0 - 1e-9), method="bounded", options={"xatol": 1e-12})
    a = float(res.x)
    if value(a) <= value(0.0):
        return 0.0
    return a


def _robust_correct(Fg, sup, w, prior, minimax, objective_of, p, iters=50):
    """Re-optimize weights on the current support; accept only if the objective improves."""
    sup = list(sup)
    old = objective_of(_robust_values(Fg[:, sup], w))
    if minimax:
        new_w = _minimax_weights(Fg[:, sup], w)
    else:
        new_w = w.copy()
        for _ in range(iters):
            d = sum(prior[i] * _d_values(np.linalg.inv(_weighted(Fg[i, sup], new_w)), Fg[i, sup]) for i in range(len(prior)))
            nxt = new_w * d / p
            nxt = nxt / nxt.sum()
            if np.max(np.abs(nxt - new_w)) < 1e-15:
                new_w = nxt
                break
            new_w = nxt
    if objective_of(_robust_values(Fg[:, sup], new_w)) >= old:
        w = new_w
    keep = w >= PRUNE_WEIGHT
    if not np.all(keep):
        trial_sup = [s for s, k in zip(sup, keep) if k]
        trial_w = w[keep] / w[keep].sum()
        if objective_of(_robust_values(Fg[:, trial_sup], trial_w)) >= objective_of(_robust_values(Fg[:, sup], w)) - 1e-12:
            sup, w = trial_sup, trial_w
    return sup, w


def _minimax_weights(Fs, w):
    """Maximize min_i log det on a fixed support (softmax parametrization)."""
    m = Fs.shape[0]

    def neg(z):
        e = np.exp(z - z.max())
        v = e / e.sum()
        vals = np.array([_logdet(_weighted(Fs[i], v)) for i in range(m)])
        return -float(vals.min()) if np.all(np.isfinite(vals)) else 1e300

    z0 = np.log(np.maximum(w, 1e-300))
    res = minimize(neg, z0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 4000})
    e = np.exp(res.x - res.x.max())
    cand = e / e.sum()
    return cand if neg(res.x) <= neg(z0) else w
