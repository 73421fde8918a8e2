"""Ordinary Kriging, space-filling designs and expected-improvement optimization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist
from scipy.stats import norm

from .design import BoxBounds, ExactDesign, FiniteCandidateSet, as_points
from .errors import InsufficientCandidates, OEDError, SingularCovariance

MSE_CLAMP = 1e-9
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class Kernel:
    """Covariance sigma_p2 * C(r / lengthscale) plus observation noise ``noise``."""

    family: str = "squared_exponential"
    lengthscale: float = 0.2
    sigma_p2: float = 1.0
    noise: float = 0.0

    def __post_init__(self):
        fam = self.family.lower().replace("-", "_")
        if fam in ("se", "gaussian"):
            fam = "squared_exponential"
        if fam not in ("squared_exponential", "exponential"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if not self.lengthscale > 0 or not self.sigma_p2 > 0 or self.noise < 0:
            raise ValueError("need lengthscale > 0, sigma_p2 > 0 and noise >= 0")

    def correlation(self, a, b) -> np.ndarray:
        r = cdist(np.atleast_2d(a), np.atleast_2d(b)) / self.lengthscale
        if self.family == "squared_exponential":
            return np.exp(-0.5 * r**2)
        return np.exp(-r)

    def with_params(self, **kw) -> Kernel:
        args = dict(family=self.family, lengthscale=self.lengthscale, sigma_p2=self.sigma_p2, noise=self.noise)
        args.update(kw)
        return Kernel(**args)


@dataclass(frozen=True)
class Prediction:
    mean: np.ndarray | float
    mse: np.ndarray | float


@dataclass
class KrigingModel:
    """Ordinary Kriging fitted to (sites, y) with a Cholesky factorization of C_y."""

    kernel: Kernel
    sites: np.ndarray
    y: np.ndarray
    _chol: tuple = field(init=False, repr=False)
    theta0: float = field(init=False)
    _ones_solve: np.ndarray = field(init=False, repr=False)
    _resid_solve: np.ndarray = field(init=False, repr=False)
    _ones_quad: float = field(init=False, repr=False)

    def __post_init__(self):
        self.sites = as_points(self.sites)
        self.y = np.asarray(self.y, dtype=float).ravel()
        n = self.sites.shape[0]
        if n < 1:
            raise ValueError("Kriging needs at least one observation")
        if self.y.size != n:
            raise ValueError(f"{n} sites but {self.y.size} observations")
        k = self.kernel
        Cy = k.noise * np.eye(n) + k.sigma_p2 * k.correlation(self.sites, self.sites)
        if k.noise == 0 and n > 1:
            dist = cdist(self.sites, self.sites)
            np.fill_diagonal(dist, np.inf)
            if dist.min() == 0:
                raise SingularCovariance("duplicate sites with zero observation noise")
        ev = np.linalg.eigvalsh(Cy)
        if ev[0] <= ev[-1] / MAX_CONDITION:
            raise SingularCovariance(f"covariance matrix is ill-conditioned (condition {ev[-1] / max(ev[0], 1e-300):.3g})")
        try:
            self._chol = cho_factor(Cy, lower=True)
        except LinAlgError as exc:
            raise SingularCovariance("covariance matrix is not positive definite") from exc
        ones = np.ones(n)
        self._ones_solve = cho_solve(self._chol, ones)
        self._ones_quad = float(ones @ self._ones_solve)
        self.theta0 = float(self._ones_solve @ self.y) / self._ones_quad
        self._resid_solve = cho_solve(self._chol, self.y - self.theta0)

    def predict(self, points) -> Prediction:
        pts = as_points(points, self.sites.shape[1])
        k = self.kernel
        c = k.sigma_p2 * k.correlation(pts, self.sites)  # (m, n)
        mean = self.theta0 + c @ self._resid_solve
        Cinv_c = cho_solve(self._chol, c.T)  # (n, m)
        quad = np.einsum("mi,im->m", c, Cinv_c)
        lack = 1.0 - self._ones_solve @ c.T
        mse = k.sigma_p2 - quad + lack**2 / self._ones_quad
        floor = -MSE_CLAMP * k.sigma_p2
        if np.any(mse < floor):
            raise SingularCovariance(f"negative prediction MSE {mse.min():.3g} beyond round-off")
        return Prediction(mean, np.maximum(mse, 0.0))


def fit(kernel: Kernel, sites, y) -> KrigingModel:
    return KrigingModel(kernel, sites, y)


def krige_predict(kernel: Kernel, sites, y, u) -> Prediction:
    """Predictor and MSE at a single point."""
    pred = KrigingModel(kernel, sites, y).predict(as_points(u, as_points(sites).shape[1]))
    return Prediction(float(pred.mean[0]), float(pred.mse[0]))


def expected_improvement(mean, mse, y_max: float):
    """Closed-form EI of exceeding ``y_max`` under N(mean, mse)."""
    mu = np.asarray(mean, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(mse, dtype=float), 0.0))
    gain = mu - y_max
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, gain / np.where(sd > 0, sd, 1.0), 0.0)
    ei = np.where(sd > 0, gain * norm.cdf(z) + sd * norm.pdf(z), np.maximum(gain, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def kriging_expected_improvement(kernel: Kernel, sites, y, u, y_max: float) -> float:
    pred = krige_predict(kernel, sites, y, u)
    return expected_improvement(pred.mean, pred.mse, y_max)


def profile_lengthscale(kernel: Kernel, sites, y, candidates=None) -> Kernel:
    """Lengthscale maximizing the profile likelihood (sigma_p2 profiled in closed form).

    The noise-to-signal ratio of ``kernel`` is kept fixed.
    """
    sites = as_points(sites)
    y = np.asarray(y, dtype=float).ravel()
    n = sites.shape[0]
    span = float(np.max(sites.max(axis=0) - sites.min(axis=0))) or 1.0
    if candidates is None:
        candidates = span * np.logspace(-2, 0.5, 40)
    ratio = kernel.noise / kernel.sigma_p2
    best, best_val = None, math.inf
    ones = np.ones(n)
    for ell in candidates:
        trial = kernel.with_params(lengthscale=float(ell), sigma_p2=1.0, noise=ratio)
        R = trial.correlation(sites, sites) + ratio * np.eye(n)
        ev = np.linalg.eigvalsh(R)
        if ev[0] <= ev[-1] / MAX_CONDITION:
            continue
        try:
            ch = cho_factor(R, lower=True)
        except LinAlgError:
            continue
        r1 = cho_solve(ch, ones)
        mu = float(r1 @ y) / float(ones @ r1)
        res = y - mu
        s2 = float(res @ cho_solve(ch, res)) / n
        if s2 <= 0:
            continue
        val = n * math.log(s2) + 2 * float(np.sum(np.log(np.diag(ch[0]))))
        if val < best_val:
            best_val = val
            best = kernel.with_params(lengthscale=float(ell), sigma_p2=s2, noise=ratio * s2)
    return best if best is not None else kernel


def _candidates(space, candidates, n_per_axis=21):
    if candidates is not None:
        return candidates.points if isinstance(candidates, FiniteCandidateSet) else as_points(candidates, space.dim)
    if isinstance(space, FiniteCandidateSet):
        return np.array(space.points)
    return space.grid(n=n_per_axis)


def _maximin_value(P):
    if P.shape[0] < 2:
        return math.inf
    d = cdist(P, P)
    np.fill_diagonal(d, np.inf)
    return float(d.min())


def latin_hypercube(space: BoxBounds, N: int, seed: int = 0) -> np.ndarray:
    """Random Latin hypercube whose coordinates take the values lower + (0..N-1)/(N-1) * width."""
    rng = np.random.default_rng(seed)
    d = space.dim
    if N == 1:
        return ((space.lower + space.upper) / 2)[None, :]
    levels = np.arange(N) / (N - 1)
    U = np.column_stack([rng.permutation(levels) for _ in range(d)])
    return space.lower + U * (space.upper - space.lower)


def space_fill(space, N: int, method: str = "maximin", candidates=None, seed: int = 0, restarts: int = 5) -> ExactDesign:
    """Maximin, minimax or Latin-hypercube design of N points.

    Maximin and minimax pick points from a finite candidate set by greedy
    construction followed by pairwise swaps with candidates, from several
    seeded starts.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if method == "lhs":
        if not isinstance(space, BoxBounds):
            raise ValueError("Latin hypercube designs need a box space")
        return ExactDesign(latin_hypercube(space, N, seed))
    if method not in ("maximin", "minimax"):
        raise ValueError(f"unknown space-filling method {method!r}")
    C = _candidates(space, candidates)
    K = C.shape[0]
    if K < N:
        raise InsufficientCandidates(f"{K} candidates for {N} points")
    rng = np.random.default_rng(seed)
    D = cdist(C, C)
    if method == "maximin":
        score = lambda idx: _maximin_value(C[idx])  # noqa: E731
    else:
        score = lambda idx: -float(D[:, idx].min(axis=1).max())  # noqa: E731

    best_idx, best_val = None, -math.inf
    for r in range(max(1, restarts)):
        idx = _greedy(D, N, method, first=None if r == 0 else int(rng.integers(K)))
        idx = _swap_search(idx, K, score)
        val = score(idx)
        if val > best_val + 1e-12:
            best_idx, best_val = idx, val
    return ExactDesign(C[sorted(best_idx)])


def _greedy(D, N, method, first=None):
    K = D.shape[0]
    if method == "maximin":
        # start from the two farthest candidates
        if first is None:
            i, j = np.unravel_index(int(np.argmax(D)), D.shape)
            idx = [int(i)] if N == 1 else [int(i), int(j)]
        else:
            idx = [first]
        while len(idx) < N:
            nearest = D[:, idx].min(axis=1)
            nearest[idx] = -1.0
            idx.append(int(np.argmax(nearest)))
        return idx
    idx = [] if first is None else [first]
    while len(idx) < N:
        cover = D[:, idx].min(axis=1) if idx else np.full(K, np.inf)
        radii = np.minimum(cover[:, None], D).max(axis=0)
        if idx:
            radii[idx] = np.inf
        idx.append(int(np.argmin(radii)))
    return idx


def _swap_search(idx, K, score, max_rounds=50):
    idx = list(idx)
    cur = score(idx)
    for _ in range(max_rounds):
        improved = False
        for pos in range(len(idx)):
            for cand in range(K):
                if cand in idx:
                    continue
                trial = idx.copy()
                trial[pos] = cand
                val = score(trial)
                if val > cur + 1e-12:
                    idx, cur, improved = trial, val, True
        if not improved:
            break
    return idx


@dataclass
class EgoResult:
    best_point: np.ndarray
    best_value: float
    trace: list
    evaluations: int
    sites: np.ndarray
    values: np.ndarray

    def __iter__(self):
        yield self.best_point
        yield self.best_value
        yield self.trace


def ego_optimize(
    objective,
    space: BoxBounds,
    budget: int = 40,
    init=None,
    kernel: Kernel | None = None,
    ei_tol: float = 1e-6,
    seed: int = 0,
    n_candidates: int | None = None,
) -> EgoResult:
    """Maximize a deterministic black box by sequential expected improvement.

    Without ``kernel`` a squared-exponential kernel with a small nugget is used
    and its lengthscale and variance are re-estimated by profile likelihood
    after every evaluation. Trace rows are (iteration, u, y, max EI); a
    proposal that duplicates an existing site is moved by one candidate-grid
    step and flagged in the trace.
    """
    if init is None:
        n0 = min(budget, max(3, 2 * space.dim + 2))
        init = ExactDesign(latin_hypercube(space, n0, seed))
    elif not isinstance(init, ExactDesign):
        init = ExactDesign(as_points(init, space.dim))
    if budget < init.N:
        raise ValueError("budget is smaller than the initial design")
    n_axis = n_candidates or max(11, int(round(2001 ** (1.0 / space.dim))))
    grid = space.grid(n=n_axis)
    step = (space.upper - space.lower) / max(n_axis - 1, 1)
    sites = [np.array(u) for u in init.points]
    values = [float(objective(u if space.dim > 1 else float(u[0]))) for u in sites]
    trace = [{"iter": 0, "u": u.tolist(), "y": y, "max_ei": math.nan, "perturbed": False} for u, y in zip(sites, values)]
    base = kernel if kernel is not None else Kernel("squared_exponential", 0.2, 1.0, 0.0)
    it = 0
    while len(sites) < budget:
        it += 1
        X = np.array(sites)
        y = np.array(values)
        k = base if kernel is not None else _auto_kernel(X, y)
        model = KrigingModel(k, X, y)
        y_max = float(y.max())
        pred = model.predict(grid)
        ei = expected_improvement(pred.mean, pred.mse, y_max)
        j = int(np.argmax(ei))
        u_new, ei_new = grid[j].copy(), float(ei[j])
        u_new, ei_new = _refine_ei(model, space, u_new, ei_new, step, y_max)
        if ei_new < ei_tol:
            break
        perturbed = False
        if np.min(np.max(np.abs(X - u_new) / np.where(step > 0, step, 1.0), axis=1)) < 1e-6:
            u_new = np.clip(u_new + step * np.where(u_new + step <= space.upper, 1.0, -1.0), space.lower, space.upper)
            perturbed = True
        y_new = float(objective(u_new if space.dim > 1 else float(u_new[0])))
        sites.append(u_new)
        values.append(y_new)
        trace.append({"iter": it, "u": u_new.tolist(), "y": y_new, "max_ei": ei_new, "perturbed": perturbed})
    vals = np.array(values)
    b = int(np.argmax(vals))
    return EgoResult(np.array(sites[b]), float(vals[b]), trace, len(values), np.array(sites), vals)


def _auto_kernel(X, y):
    scale = float(np.var(y)) or 1.0
    base = Kernel("squared_exponential", 0.2, scale, 1e-10 * scale)
    for nugget in (1e-10, 1e-8, 1e-6):
        try:
            k = profile_lengthscale(base.with_params(noise=nugget * scale), X, y)
            KrigingModel(k, X, y)
            return k
        except OEDError:
            continue
    return base.with_params(noise=1e-6 * scale, lengthscale=0.05)


def _refine_ei(model, space, u, ei_val, step, y_max):
    from scipy.optimize import minimize

    lo = np.maximum(space.lower, u - step)
    hi = np.minimum(space.upper, u + step)

    def neg(v):
        p = model.predict(v[None])
        return -float(expected_improvement(p.mean[0], p.mse[0], y_max))

    try:
        res = minimize(neg, u, method="L-BFGS-B", bounds=list(zip(lo, hi)))
    except OEDError:
        return u, ei_val
    if -res.fun > ei_val:
        return np.asarray(res.x, dtype=float), float(-res.fun)
    return u, ei_val
