"""Seeded simulations of sequential estimation and adaptive control loops.

Noise is drawn from ``numpy.random.Generator(PCG64(seed))`` with
``standard_normal``, so traces are reproducible across platforms.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .design import as_points
from .errors import DegenerateDenominator, EstimationDivergence, NumericalBlowup

BLOWUP_LEVEL = 1e6
EF_DENOMINATOR_MIN = 1e-8


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class SimTrace:
    """Per-step records of a simulation, stored column-wise."""

    columns: dict
    meta: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __getitem__(self, name: str) -> np.ndarray:
        return np.asarray(self.columns[name])

    def last(self, name: str) -> float:
        return float(self.columns[name][-1])

    def to_csv(self) -> str:
        names = list(self.columns)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        cols = [np.asarray(self.columns[n]) for n in names]
        for i in range(len(self)):
            w.writerow([_fmt(c[i]) for c in cols])
        return buf.getvalue()

    def summary(self) -> dict:
        final = {n: _jsonable(self.columns[n][-1]) for n in self.columns} if len(self) else {}
        return {"steps": len(self), "final": final, "meta": _jsonable(self.meta), "flags": list(self.flags)}

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def _fmt(v):
    if isinstance(v, (str, bool, np.bool_)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    return v


def simulate_lai_wei(theta, c: float, N: int, seed: int = 0, sigma: float = 1.0) -> SimTrace:
    """Regression y_k = theta_1 + theta_2 u_k + e_k under the feedback input
    u_1 = 0, u_{n+1} = mean(u_1..u_n) + (c/n) sum(e_1..e_n).

    Least-squares estimates from the first k observations are recorded at every step.
    """
    if c == 0:
        raise ValueError("c must be nonzero")
    if N < 10:
        raise ValueError("N must be at least 10")
    th = np.asarray(theta, dtype=float).ravel()
    rng = make_rng(seed)
    eps = sigma * rng.standard_normal(N)
    # running mean m_n of u_1..u_n obeys m_n = m_{n-1} + c E_{n-1} / (n (n - 1)),
    # with E_n the partial noise sums, so the recursion vectorizes
    n = np.arange(1, N + 1, dtype=float)
    E = np.cumsum(eps)
    incr = np.zeros(N)
    incr[1:] = c * E[:-1] / (n[1:] * n[:-1])
    mean_u = np.cumsum(incr)
    u = np.zeros(N)
    u[1:] = mean_u[:-1] + c * E[:-1] / n[:-1]
    y = th[0] + th[1] * u + eps

    # slope and intercept from cumulative sums of shifted data (the shift limits cancellation)
    shift = u.mean()
    us = u - shift
    su, sy = np.cumsum(us), np.cumsum(y)
    suu = np.cumsum(us * us) - su * su / n
    suy = np.cumsum(us * y) - su * sy / n
    ok = suu > 1e-12 * n
    t2 = np.where(ok, suy / np.where(ok, suu, 1.0), np.nan)
    t1 = np.where(ok, sy / n - t2 * (su / n + shift), np.nan)
    flags = []
    singular = not np.isfinite(t2[-1])
    if singular:
        flags.append("singular information: inputs never varied")
    meta = {
        "theta": th.tolist(),
        "c": c,
        "sigma": sigma,
        "seed": seed,
        "slope_limit": th[1] - 1.0 / c,
        "lambda_min_M": float(np.linalg.eigvalsh(np.array([[N, u.sum()], [u.sum(), u @ u]]))[0]),
        "singular": singular,
    }
    return SimTrace({"k": np.arange(1, N + 1), "u": u, "y": y, "theta1": t1, "theta2": t2}, meta, flags)


def _quad_regressor(u):
    u = np.asarray(u, dtype=float)
    return np.stack([np.ones_like(u), u, u * u], axis=-1)


def simulate_sto_aw(
    theta,
    sigma: float,
    N: int,
    delta: float = 0.1,
    seed: int = 0,
    lower: float = -2.0,
    upper: float = 2.0,
    grid_size: int = 401,
    alpha: str | float = "log",
) -> SimTrace:
    """Self-tuning maximization of f(u, theta) = theta_0 + theta_1 u + theta_2 u^2.

    After three forced distinct inputs, u_{k+1} maximizes
    f(u, theta_hat_k) + alpha_k r(u)^T M_k^{-1} r(u) over a grid, where M_k is
    the unnormalized information of the inputs so far and alpha_k =
    (log k)^(1 + delta). Pass a number for ``alpha`` to use a constant weight
    (0 gives forced certainty equivalence).
    """
    th = np.asarray(theta, dtype=float).ravel()
    if th.size != 3:
        raise ValueError("theta must have three entries")
    if not th[2] < 0:
        raise ValueError("theta_2 must be negative for a well-posed maximum")
    if not delta > 0:
        raise ValueError("delta must be positive")
    rng = make_rng(seed)
    grid = np.linspace(lower, upper, grid_size)
    R = _quad_regressor(grid)
    width = upper - lower
    forced = [lower + 0.25 * width, lower + 0.5 * width, lower + 0.75 * width]
    u_star = -th[1] / (2 * th[2])
    M = np.zeros((3, 3))
    b = np.zeros(3)
    us, ys, thetas, avg_f = [], [], [], []
    f_sum = 0.0
    theta_hat = np.full(3, np.nan)
    for k in range(1, N + 1):
        if k <= 3:
            u = forced[k - 1]
        else:
            a_k = math.log(k - 1) ** (1 + delta) if alpha == "log" else float(alpha)
            Minv = np.linalg.inv(M)
            score = R @ theta_hat + a_k * np.einsum("ij,jk,ik->i", R, Minv, R)
            u = float(grid[int(np.argmax(score))])
        r = _quad_regressor(u)
        y = float(r @ th) + sigma * float(rng.standard_normal())
        M += np.outer(r, r)
        b += r * y
        if k >= 3:
            theta_hat = np.linalg.solve(M, b)
        f_sum += float(r @ th)
        us.append(u)
        ys.append(y)
        thetas.append(theta_hat.copy())
        avg_f.append(f_sum / k)
    T = np.array(thetas)
    ev = np.linalg.eigvalsh(M)
    meta = {
        "theta": th.tolist(),
        "u_star": u_star,
        "f_star": float(_quad_regressor(u_star) @ th),
        "sigma": sigma,
        "delta": delta,
        "alpha": alpha,
        "seed": seed,
        "condition_M": float(ev[-1] / ev[0]) if ev[0] > 0 else math.inf,
    }
    cols = {
        "k": np.arange(1, N + 1),
        "u": np.array(us),
        "y": np.array(ys),
        "theta0": T[:, 0],
        "theta1": T[:, 1],
        "theta2": T[:, 2],
        "mean_f": np.array(avg_f),
    }
    return SimTrace(cols, meta)


@dataclass(frozen=True)
class ScalarPlant:
    """x_{k+1} = x_k + T [u_k + theta (x_k + 1)], observed as y_k = x_k + e_k (y_0 = x_0)."""

    theta: float = 1.0
    T: float = 0.01
    x0: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("sampling period must be positive")
        if self.sigma < 0:
            raise ValueError("noise level must be nonnegative")

    def step(self, x: float, u: float) -> float:
        return x + self.T * (u + self.theta * (x + 1.0))


def ef_estimate(y, u, T: float, k: int) -> float:
    """Root of the averaged estimating function after k steps:

    [(y_k - y_0)/(kT) - sum_{i<k} u_i / k] / [1 + sum_{i<k} y_i / k].
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    den = 1.0 + y[:k].sum() / k
    if abs(den) <= EF_DENOMINATOR_MIN:
        raise DegenerateDenominator(f"estimating-function denominator {den:.3g} is too close to zero")
    return float(((y[k] - y[0]) / (k * T) - u[:k].sum() / k) / den)


def simulate_nfc(
    plant: ScalarPlant,
    a: float = 1.0,
    theta0: float = 2.0,
    controller: str = "nfc",
    N: int = 1000,
    seed: int = 0,
    threshold: float = 0.05,
    window: int = 100,
) -> SimTrace:
    """Closed loop of the scalar plant under one of three controllers.

    ``nfc``: theta_hat_{k+1} = theta_hat_k + T y_k (y_k + 1),
    u_k = -(a + theta_hat_k) y_k - theta_hat_k.
    ``fce_ef``: certainty equivalence with the estimating-function estimate
    theta_tilde_k, u_k = -(a + theta_tilde_k) x_hat_k - theta_tilde_k, where
    x_hat_k = y_{k-1} + T [u_{k-1} + theta_tilde_k (y_{k-1} + 1)] is the model
    prediction of x_k under theta_tilde_k.
    ``switch``: nfc, except when the standard deviation of theta_tilde over
    the last ``window`` steps is below ``threshold``, then fce_ef.
    """
    if controller not in ("nfc", "fce_ef", "switch"):
        raise ValueError(f"unknown controller {controller!r}")
    if N < 1:
        raise ValueError("N must be at least 1")
    rng = make_rng(seed)
    T = plant.T
    x = plant.x0
    th_hat = float(theta0)
    th_tilde = float(theta0)
    xs, ys, us, hats, tildes, modes = [], [], [], [], [], []
    u_sum = 0.0
    y_sum = 0.0
    y0 = plant.x0
    flags = []
    degenerate = 0
    for k in range(N + 1):
        y = x if k == 0 else x + plant.sigma * float(rng.standard_normal())
        if k >= 1:
            den = 1.0 + y_sum / k
            if abs(den) > EF_DENOMINATOR_MIN:
                th_tilde = ((y - y0) / (k * T) - u_sum / k) / den
            else:
                degenerate += 1
        if controller == "nfc":
            mode = "nfc"
        elif controller == "fce_ef":
            mode = "fce_ef"
        else:
            recent = tildes[-(window - 1) :] + [th_tilde]
            mode = "fce_ef" if len(recent) >= window and float(np.std(recent)) < threshold else "nfc"
        if mode == "nfc":
            u = -(a + th_hat) * y - th_hat
        else:
            x_hat = y if k == 0 else ys[-1] + T * (us[-1] + th_tilde * (ys[-1] + 1.0))
            u = -(a + th_tilde) * x_hat - th_tilde
        xs.append(x)
        ys.append(y)
        us.append(u)
        hats.append(th_hat)
        tildes.append(th_tilde)
        modes.append(mode)
        if not abs(x) <= BLOWUP_LEVEL or not math.isfinite(u):
            trace = _nfc_trace(xs, ys, us, hats, tildes, modes, plant, a, theta0, controller, seed, flags)
            raise NumericalBlowup(f"state magnitude exceeded {BLOWUP_LEVEL:g} at step {k}", trace)
        if k == N:
            break
        th_hat = th_hat + T * y * (y + 1.0)
        u_sum += u
        y_sum += y
        x = plant.step(x, u)
    if degenerate:
        flags.append(f"estimating-function denominator degenerate at {degenerate} steps")
    return _nfc_trace(xs, ys, us, hats, tildes, modes, plant, a, theta0, controller, seed, flags)


def _nfc_trace(xs, ys, us, hats, tildes, modes, plant, a, theta0, controller, seed, flags):
    n = len(xs)
    cols = {
        "k": np.arange(n),
        "t": np.arange(n) * plant.T,
        "x": np.array(xs),
        "y": np.array(ys),
        "u": np.array(us),
        "theta_hat": np.array(hats),
        "theta_tilde": np.array(tildes),
        "mode": list(modes),
    }
    meta = {
        "theta": plant.theta,
        "T": plant.T,
        "x0": plant.x0,
        "sigma": plant.sigma,
        "a": a,
        "theta0": theta0,
        "controller": controller,
        "seed": seed,
    }
    return SimTrace(cols, meta, list(flags))


NON_CONVERGENCE_LEVEL = 0.5


def dispersion(series, window: int = 500, center: float | None = None) -> float:
    """Spread of the last ``window`` values: standard deviation, or RMS about ``center``.

    With ``center`` set to the true parameter this is the non-convergence
    statistic; it exceeds NON_CONVERGENCE_LEVEL when the estimate settles away
    from the truth.
    """
    s = np.asarray(series, dtype=float)[-window:]
    if center is None:
        return float(np.std(s))
    return float(np.sqrt(np.mean((s - center) ** 2)))


def gauss_newton(model, theta0, points, y, max_iter: int = 50, tol: float = 1e-12) -> np.ndarray:
    """Least squares by Gauss-Newton with step halving; raises EstimationDivergence."""
    th = np.asarray(theta0, dtype=float).copy()
    pts = as_points(points, model.dim)
    y = np.asarray(y, dtype=float)

    def rss(t):
        r = y - model.responses(t, pts)
        return float(r @ r)

    try:
        cur = rss(th)
    except Exception as exc:
        raise EstimationDivergence(f"model evaluation failed at the starting point: {exc}") from exc
    for _ in range(max_iter):
        J = model.sensitivities(th, pts)
        r = y - model.responses(th, pts)
        step, *_ = np.linalg.lstsq(J, r, rcond=None)
        if not np.all(np.isfinite(step)):
            raise EstimationDivergence("non-finite Gauss-Newton step")
        t = 1.0
        accepted = False
        while t > 1e-10:
            trial = th + t * step
            try:
                val = rss(trial)
            except Exception:
                val = math.inf
            if val <= cur:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        done = abs(cur - val) <= tol * max(1.0, cur) and np.max(np.abs(t * step)) <= 1e-10 * max(1.0, np.max(np.abs(th)))
        th, cur = trial, val
        if done:
            break
    if not np.all(np.isfinite(th)):
        raise EstimationDivergence("Gauss-Newton produced non-finite estimates")
    return th


def _spread_indices(K: int, n: int) -> np.ndarray:
    return np.round(np.linspace(0, K - 1, n + 2)[1:-1]).astype(int)


def _model_grid(model, grid):
    if grid is not None:
        return as_points(grid, model.dim)
    from .solvers import default_grid

    return default_grid(model.space)


def sequential_design(model, theta_true, theta0, N: int, sigma: float, seed: int = 0, grid=None) -> SimTrace:
    """Fully sequential D-optimal design with least-squares re-estimation.

    The first p inputs are distinct interior grid points. Afterwards each new
    input maximizes d(u, xi_k) at the current estimate, where xi_k is the
    empirical measure of the inputs so far, and the estimate is refreshed by
    Gauss-Newton from the previous one. ``log_det`` is the log determinant of
    the unnormalized information sum_i g g^T at the current estimate.
    """
    p = model.p
    G = _model_grid(model, grid)
    K = G.shape[0]
    if K < p:
        raise ValueError("grid has fewer points than parameters")
    if N < p:
        raise ValueError("N must be at least the number of parameters")
    rng = make_rng(seed)
    truth = np.asarray(theta_true, dtype=float)
    th = np.asarray(theta0, dtype=float).copy()
    pts, ys = [], []
    rows = {"k": [], "u_index": [], "log_det": [], "gn_failed": []}
    thetas, us = [], []
    flags = []
    start = _spread_indices(K, p)
    for k in range(1, N + 1):
        if k <= p:
            j = int(start[k - 1])
        else:
            P = np.array(pts)
            Gs = model.sensitivities(th, P) * np.sqrt(model.info_weights(P))[:, None]
            M = Gs.T @ Gs / len(pts)
            d = np.einsum("ij,ji->i", model.sensitivities(th, G), np.linalg.solve(M, model.sensitivities(th, G).T))
            d = d * model.info_weights(G)
            j = int(np.argmax(d))
        u = G[j]
        y = float(model.responses(truth, u[None])[0]) + sigma * float(rng.standard_normal())
        pts.append(u)
        ys.append(y)
        failed = False
        if k >= p:
            try:
                th = gauss_newton(model, th, np.array(pts), np.array(ys))
            except EstimationDivergence as exc:
                failed = True
                flags.append(f"step {k}: {exc}")
        P = np.array(pts)
        Gs = model.sensitivities(th, P) * np.sqrt(model.info_weights(P))[:, None]
        sign, ld = np.linalg.slogdet(Gs.T @ Gs)
        rows["k"].append(k)
        rows["u_index"].append(j)
        rows["log_det"].append(ld if sign > 0 else -math.inf)
        rows["gn_failed"].append(failed)
        thetas.append(th.copy())
        us.append(u.copy())
    cols = {"k": np.array(rows["k"])}
    U = np.array(us)
    for i in range(U.shape[1]):
        cols[f"u{i}" if U.shape[1] > 1 else "u"] = U[:, i]
    cols["y"] = np.array(ys)
    Th = np.array(thetas)
    for i in range(p):
        cols[f"theta{i}"] = Th[:, i]
    cols["log_det"] = np.array(rows["log_det"])
    cols["gn_failed"] = np.array(rows["gn_failed"])
    meta = {"theta_true": truth.tolist(), "theta0": np.asarray(theta0, float).tolist(), "sigma": sigma, "seed": seed}
    return SimTrace(cols, meta, flags)


def discriminate_sequential(model_a, model_b, theta_true, grid, N: int, sigma: float, seed: int = 0, theta_a0=None, theta_b0=None) -> SimTrace:
    """Sequential discrimination between two models, data generated by ``model_a``.

    After max(p_A, p_B) spread starting points, each step fits both models by
    least squares and observes at the grid point where their predictions
    differ most (first such point on ties).
    """
    G = as_points(grid, model_a.dim)
    K = G.shape[0]
    n0 = max(model_a.p, model_b.p)
    if K < n0:
        raise ValueError("grid has fewer points than parameters")
    rng = make_rng(seed)
    truth = np.asarray(theta_true, dtype=float)
    tha = np.zeros(model_a.p) if theta_a0 is None else np.asarray(theta_a0, float).copy()
    thb = np.zeros(model_b.p) if theta_b0 is None else np.asarray(theta_b0, float).copy()
    start = np.round(np.linspace(0, K - 1, n0)).astype(int) if n0 > 1 else np.array([K // 2])
    pts, ys, idxs, rss_a, rss_b, gaps = [], [], [], [], [], []
    flags = []
    for k in range(1, N + 1):
        if k <= n0:
            j = int(start[k - 1])
            gap = math.nan
        else:
            diff = model_a.responses(tha, G) - model_b.responses(thb, G)
            sq = diff**2
            j = int(np.argmax(sq))
            gap = float(sq[j])
        u = G[j]
        y = float(model_a.responses(truth, u[None])[0]) + sigma * float(rng.standard_normal())
        pts.append(u)
        ys.append(y)
        P, Y = np.array(pts), np.array(ys)
        for which, model in (("A", model_a), ("B", model_b)):
            try:
                est = gauss_newton(model, tha if which == "A" else thb, P, Y)
                if which == "A":
                    tha = est
                else:
                    thb = est
            except EstimationDivergence as exc:
                flags.append(f"step {k}, model {which}: {exc}")
        ra = Y - model_a.responses(tha, P)
        rb = Y - model_b.responses(thb, P)
        idxs.append(j)
        rss_a.append(float(ra @ ra))
        rss_b.append(float(rb @ rb))
        gaps.append(gap)
    cols = {"k": np.arange(1, N + 1), "u_index": np.array(idxs)}
    U = np.array(pts)
    for i in range(U.shape[1]):
        cols[f"u{i}" if U.shape[1] > 1 else "u"] = U[:, i]
    cols.update({"y": np.array(ys), "gap": np.array(gaps), "rss_a": np.array(rss_a), "rss_b": np.array(rss_b)})
    meta = {"theta_true": truth.tolist(), "sigma": sigma, "seed": seed, "theta_a": tha.tolist(), "theta_b": thb.tolist()}
    return SimTrace(cols, meta, flags)
