"""Parametric regression models: responses, parameter sensitivities, information weights."""

from __future__ import annotations

import itertools
import math
from abc import ABC, abstractmethod
from functools import lru_cache

import numpy as np

from .design import BoxBounds, ExactDesign, FiniteCandidateSet, as_points
from .errors import IntegrationFailure, OutOfDomain, UnsupportedOrder

PK_THETA = (0.066, 0.038, 0.0242, 30.0)
PK_INFUSION = ((0.0, 1.0, 75.0), (1.0, math.inf, 1.45))


class RegressionModel(ABC):
    """Scalar response eta(theta, u) with sensitivities d eta / d theta.

    Subclasses implement the vectorized :meth:`responses` and
    :meth:`sensitivities`; the single-point methods are derived from them.
    """

    p: int
    space: BoxBounds | FiniteCandidateSet | None = None
    name: str = "model"

    def __init__(self, info_weight: float = 1.0):
        if not info_weight > 0:
            raise ValueError("info_weight must be positive")
        self._info_weight = float(info_weight)

    @abstractmethod
    def responses(self, theta, points) -> np.ndarray: ...

    @abstractmethod
    def sensitivities(self, theta, points) -> np.ndarray: ...

    @property
    def dim(self) -> int:
        return self.space.dim if self.space is not None else 1

    def response(self, theta, u) -> float:
        return float(self.responses(theta, as_points(u, self.dim))[0])

    def sensitivity(self, theta, u) -> np.ndarray:
        return self.sensitivities(theta, as_points(u, self.dim))[0]

    def info_weight(self, u) -> float:
        return self._info_weight

    def info_weights(self, points) -> np.ndarray:
        return np.full(as_points(points, self.dim).shape[0], self._info_weight)

    def _theta(self, theta) -> np.ndarray:
        th = np.asarray(theta, dtype=float).ravel()
        if th.size != self.p:
            raise ValueError(f"{self.name}: expected {self.p} parameters, got {th.size}")
        if not np.all(np.isfinite(th)):
            raise ValueError(f"{self.name}: parameters must be finite")
        return th


class LinearModel(RegressionModel):
    """eta(theta, u) = r(u)^T theta for a user-supplied regressor map r."""

    def __init__(self, regressor, p: int, space=None, name: str = "linear", info_weight: float = 1.0):
        super().__init__(info_weight)
        self.regressor = regressor
        self.p = int(p)
        self.space = space
        self.name = name

    def regressors(self, points) -> np.ndarray:
        pts = as_points(points, self.dim)
        R = np.array([np.asarray(self.regressor(u), dtype=float).ravel() for u in pts])
        if R.shape[1] != self.p:
            raise ValueError(f"{self.name}: regressor has length {R.shape[1]}, expected {self.p}")
        return R

    def responses(self, theta, points) -> np.ndarray:
        return self.regressors(points) @ self._theta(theta)

    def sensitivities(self, theta, points) -> np.ndarray:
        self._theta(theta)
        return self.regressors(points)


class PolynomialModel(LinearModel):
    """theta_0 + theta_1 u + ... + theta_k u^k on a scalar interval."""

    def __init__(self, degree: int, lower: float = -1.0, upper: float = 1.0, info_weight: float = 1.0):
        self.degree = int(degree)
        super().__init__(
            None,
            self.degree + 1,
            BoxBounds([lower], [upper]),
            name=f"polynomial{self.degree}",
            info_weight=info_weight,
        )

    def regressors(self, points) -> np.ndarray:
        u = as_points(points, 1)[:, 0]
        return np.vander(u, self.degree + 1, increasing=True)


class WeighingModel(LinearModel):
    """y = u^T theta with u in {-1, 0, 1}^n (left pan, absent, right pan)."""

    def __init__(self, n: int = 8, info_weight: float = 1.0):
        levels = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=n)))
        super().__init__(None, n, FiniteCandidateSet(levels), name=f"weighing{n}", info_weight=info_weight)

    def regressors(self, points) -> np.ndarray:
        return as_points(points, self.p)


class ExponentialModel(RegressionModel):
    """eta(theta, u) = exp(-theta u), one parameter."""

    p = 1

    def __init__(self, lower: float = 0.0, upper: float = 10.0, info_weight: float = 1.0):
        super().__init__(info_weight)
        self.space = BoxBounds([lower], [upper])
        self.name = "exponential"

    def responses(self, theta, points) -> np.ndarray:
        th = self._theta(theta)[0]
        return np.exp(-th * as_points(points, 1)[:, 0])

    def sensitivities(self, theta, points) -> np.ndarray:
        th = self._theta(theta)[0]
        u = as_points(points, 1)[:, 0]
        return (-u * np.exp(-th * u))[:, None]


def _rk4_propagator(A: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step for z' = A z, returned as a matrix."""
    I = np.eye(A.shape[0])
    k1 = A
    k2 = A @ (I + 0.5 * h * k1)
    k3 = A @ (I + 0.5 * h * k2)
    k4 = A @ (I + h * k3)
    return I + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


class CompartmentModel(RegressionModel):
    """Two-compartment pharmacokinetic model observed through the central concentration.

    theta = (K_CP, K_PC, K_EL, V): transfer and elimination rates in 1/min and
    the central volume in litres. The drug amounts obey

        x_C' = -(K_EL + K_CP) x_C + K_PC x_P + u(t)
        x_P' =  K_CP x_C - K_PC x_P

    from x(0) = 0, and y(t) = x_C(t) / V. The state and its six forward
    sensitivities are integrated together with fixed-step RK4 (step ``h``
    minutes, shortened to land on infusion switches and requested times).
    """

    p = 4

    def __init__(
        self,
        infusion=PK_INFUSION,
        h: float = 0.05,
        horizon: float = 720.0,
        lower: float = 1.0,
        info_weight: float = 1.0,
    ):
        super().__init__(info_weight)
        if not h > 0:
            raise ValueError("integration step must be positive")
        self.h = float(h)
        self.horizon = float(horizon)
        self.infusion = tuple((float(a), float(b), float(r)) for a, b, r in infusion)
        self.space = BoxBounds([lower], [horizon])
        self.name = "compartment"

    def _rate(self, t_mid: float) -> float:
        return sum(r for a, b, r in self.infusion if a <= t_mid < b)

    def _check(self, theta) -> np.ndarray:
        th = self._theta(theta)
        if th[3] <= 0:
            raise ValueError("compartment volume V must be positive")
        if np.any(th[:3] < 0):
            raise ValueError("rate constants must be nonnegative")
        return th

    @staticmethod
    @lru_cache(maxsize=256)
    def _segment_matrix(rates: tuple, rate: float, hs: float, n: int) -> np.ndarray:
        kcp, kpc, kel = rates
        A = np.array([[-(kel + kcp), kpc], [kcp, -kpc]])
        dA = [
            np.array([[-1.0, 0.0], [1.0, 0.0]]),
            np.array([[0.0, 1.0], [0.0, -1.0]]),
            np.array([[-1.0, 0.0], [0.0, 0.0]]),
        ]
        # z = (x, s_kcp, s_kpc, s_kel, 1); the constant state carries the infusion
        big = np.zeros((9, 9))
        big[0:2, 0:2] = A
        for j in range(3):
            r0 = 2 + 2 * j
            big[r0 : r0 + 2, r0 : r0 + 2] = A
            big[r0 : r0 + 2, 0:2] = dA[j]
        big[0, 8] = rate
        step = _rk4_propagator(big, hs)
        return np.linalg.matrix_power(step, n)

    def trajectory(self, theta, times, h: float | None = None) -> np.ndarray:
        """Augmented states (x_C, x_P, sensitivities..., 1) at each requested time."""
        th = self._check(theta)
        h = self.h if h is None else float(h)
        t = np.asarray(times, dtype=float).ravel()
        if t.size and (t.min() < 0 or t.max() > self.horizon * (1 + 1e-12)):
            raise OutOfDomain(f"sampling times must lie in [0, {self.horizon:g}] min")
        order = np.argsort(t, kind="stable")
        ts = t[order]
        switches = {a for a, _, _ in self.infusion} | {b for _, b, _ in self.infusion}
        events = sorted({0.0, *ts.tolist(), *(s for s in switches if 0 < s < (ts[-1] if ts.size else 0))})
        z = np.zeros(9)
        z[8] = 1.0
        states = {0.0: z.copy()}
        rates = tuple(float(v) for v in th[:3])
        for ta, tb in zip(events[:-1], events[1:]):
            span = tb - ta
            if span <= 0:
                continue
            n = max(1, int(math.ceil(span / h - 1e-9)))
            P = self._segment_matrix(rates, self._rate(0.5 * (ta + tb)), span / n, n)
            z = P @ z
            if not np.all(np.isfinite(z)):
                raise IntegrationFailure(f"non-finite state at t={tb:g} min")
            states[tb] = z.copy()
        out = np.empty((t.size, 9))
        for k, idx in enumerate(order):
            out[idx] = states[ts[k]]
        return out

    def simulate(self, theta, times, h: float | None = None) -> np.ndarray:
        """Noise-free concentrations y(t) = x_C(t) / V."""
        th = self._check(theta)
        return self.trajectory(th, times, h)[:, 0] / th[3]

    def responses(self, theta, points) -> np.ndarray:
        return self.simulate(theta, as_points(points, 1)[:, 0])

    def sensitivities(self, theta, points) -> np.ndarray:
        th = self._check(theta)
        Z = self.trajectory(th, as_points(points, 1)[:, 0])
        V = th[3]
        return np.column_stack([Z[:, 2] / V, Z[:, 4] / V, Z[:, 6] / V, -Z[:, 0] / V**2])


def simulate_compartment(model: CompartmentModel, theta, times) -> np.ndarray:
    return model.simulate(theta, times)


def eval_sensitivity(model: RegressionModel, theta, u) -> np.ndarray:
    return model.sensitivity(theta, u)


def hadamard_matrix(n: int) -> np.ndarray:
    """Sylvester Hadamard matrix of order n (n a power of two)."""
    if n < 1 or (n & (n - 1)) != 0:
        raise UnsupportedOrder(f"Sylvester construction needs a power of two, got {n}")
    H = np.ones((1, 1))
    while H.shape[0] < n:
        H = np.block([[H, H], [H, -H]])
    return H


def hadamard_design(n: int) -> ExactDesign:
    return ExactDesign(hadamard_matrix(n))
