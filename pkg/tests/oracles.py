"""Independent reference computations used by the tests."""

import math

import numpy as np
from scipy import integrate, linalg, stats


def central_fd(f, theta, rel=1e-6):
    """Central finite-difference gradient of scalar or vector f at theta."""
    th = np.asarray(theta, dtype=float)
    cols = []
    for j in range(th.size):
        h = rel * max(abs(th[j]), 1e-3)
        up, dn = th.copy(), th.copy()
        up[j] += h
        dn[j] -= h
        cols.append((np.asarray(f(up)) - np.asarray(f(dn))) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_close(a, b, rel):
    """Componentwise relative agreement with a floor tied to the vector norm."""
    a, b = np.asarray(a), np.asarray(b)
    scale = np.maximum(np.abs(b), 1e-3 * np.max(np.abs(b)) + 1e-300)
    return bool(np.all(np.abs(a - b) <= rel * scale))


def compartment_exact(theta, times, infusion):
    """Two-compartment concentrations from matrix exponentials of the piecewise-constant system."""
    kcp, kpc, kel, V = theta
    A = np.array([[-(kel + kcp), kpc], [kcp, -kpc]])
    out = []
    for t in times:
        switches = sorted({0.0, t, *(s for seg in infusion for s in seg[:2] if 0 < s < t)})
        x = np.zeros(2)
        for a, b in zip(switches[:-1], switches[1:]):
            rate = sum(r for s0, s1, r in infusion if s0 <= 0.5 * (a + b) < s1)
            big = np.zeros((3, 3))
            big[:2, :2] = A
            big[0, 2] = rate
            x = (linalg.expm(big * (b - a)) @ np.concatenate([x, [1.0]]))[:2]
        out.append(x[0] / V)
    return np.array(out)


def ei_quadrature(mean, sd, y_max):
    """Expected improvement as the integral of (y - y_max) against the predictive normal density."""
    if sd == 0:
        return max(mean - y_max, 0.0)
    f = lambda y: (y - y_max) * stats.norm.pdf(y, mean, sd)
    val, _ = integrate.quad(f, y_max, mean + 40 * sd if mean + 40 * sd > y_max else y_max + 40 * sd, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def blup_dense(K_fn, sites, y, u, noise=0.0):
    """Ordinary Kriging by solving the bordered system [[K, 1], [1^T, 0]] directly."""
    n = sites.shape[0]
    K = K_fn(sites, sites) + noise * np.eye(n)
    k = K_fn(sites, u[None, :])[:, 0]
    big = np.zeros((n + 1, n + 1))
    big[:n, :n] = K
    big[:n, n] = 1
    big[n, :n] = 1
    sol = np.linalg.solve(big, np.concatenate([k, [1.0]]))
    v, mu = sol[:n], sol[n]
    mean = v @ y
    mse = K_fn(u[None, :], u[None, :])[0, 0] - v @ k - mu
    return mean, mse


def se_kernel(lengthscale, sigma_p2):
    def K(a, b):
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        return sigma_p2 * np.exp(-d2 / (2 * lengthscale**2))

    return K


def two_point_logdet_best(g, grid):
    """Exhaustive best equal-weight-free two-point D design for a 2-parameter regressor g."""
    best = -math.inf
    pts = [np.asarray(g(u), dtype=float) for u in grid]
    for i in range(len(grid)):
        for j in range(i + 1, len(grid)):
            for w in np.linspace(0.01, 0.99, 99):
                M = w * np.outer(pts[i], pts[i]) + (1 - w) * np.outer(pts[j], pts[j])
                s, ld = np.linalg.slogdet(M)
                if s > 0 and ld > best:
                    best = ld
    return best
