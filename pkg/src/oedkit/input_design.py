"""Frequency-domain input design for SISO models y = F(theta, z) u + G(z) e."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .criteria import Certificate
from .design import BoxBounds, as_points
from .errors import NoiseModelZero, OutOfDomain
from .solvers import SolverOptions, _Info, vertex_direction


@dataclass(frozen=True)
class RationalTF:
    """B(z) / A(z) with B = sum_i num[i] z^-(num_start + i) and A = 1 + sum_j den[j] z^-(j + 1)."""

    num: tuple
    den: tuple = ()
    num_start: int = 1

    def __post_init__(self):
        object.__setattr__(self, "num", tuple(float(v) for v in self.num))
        object.__setattr__(self, "den", tuple(float(v) for v in self.den))
        if self.den and np.any(np.abs(self.poles()) >= 1.0):
            raise OutOfDomain("transfer function has poles on or outside the unit circle")

    def poles(self) -> np.ndarray:
        if not self.den:
            return np.zeros(0)
        return np.roots(np.concatenate([[1.0], self.den]))

    def numerator(self, zinv: np.ndarray) -> np.ndarray:
        return sum(c * zinv ** (self.num_start + i) for i, c in enumerate(self.num)) + 0j * zinv

    def denominator(self, zinv: np.ndarray) -> np.ndarray:
        return 1.0 + sum(c * zinv ** (j + 1) for j, c in enumerate(self.den)) + 0j * zinv

    def __call__(self, omega) -> np.ndarray:
        zinv = np.exp(-1j * np.asarray(omega, dtype=float))
        return self.numerator(zinv) / self.denominator(zinv)


UNIT_TF = RationalTF((1.0,), (), num_start=0)


@dataclass(frozen=True)
class InputModel:
    """F(theta_F) = (b_1 z^-1 + ... + b_nb z^-nb) / (1 + a_1 z^-1 + ... + a_na z^-na).

    The parameters are theta_F = (b_1..b_nb, a_1..a_na). G is fixed and known.
    """

    nb: int
    na: int = 0
    G: RationalTF = UNIT_TF
    sigma2: float = 1.0

    def __post_init__(self):
        if self.nb < 1 or self.na < 0:
            raise ValueError("need nb >= 1 and na >= 0")
        if not self.sigma2 > 0:
            raise ValueError("noise variance must be positive")

    @property
    def p(self) -> int:
        return self.nb + self.na

    def transfer(self, theta_F) -> RationalTF:
        th = np.asarray(theta_F, dtype=float).ravel()
        if th.size != self.p:
            raise ValueError(f"expected {self.p} parameters, got {th.size}")
        return RationalTF(th[: self.nb], th[self.nb :])

    def sensitivity(self, theta_F, omega) -> np.ndarray:
        """Complex vector dF/dtheta_F / G at each frequency, shape (n, p)."""
        F = self.transfer(theta_F)
        w = np.atleast_1d(np.asarray(omega, dtype=float)).ravel()
        zinv = np.exp(-1j * w)
        A = F.denominator(zinv)
        B = F.numerator(zinv)
        g = self.G(w)
        if np.any(np.abs(g) < 1e-12):
            raise NoiseModelZero("noise filter G vanishes on the frequency grid")
        cols = [zinv**i / A for i in range(1, self.nb + 1)]
        cols += [-(zinv**j) * B / A**2 for j in range(1, self.na + 1)]
        return np.column_stack(cols) / g[:, None]


def freq_info_matrix(model: InputModel, theta_F, omega) -> np.ndarray:
    """Per-frequency information (1/sigma^2) Re{h h^*}; a stack when ``omega`` is an array."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0) or np.any(w > math.pi + 1e-12):
        raise OutOfDomain("frequencies must lie in [0, pi]")
    h = model.sensitivity(theta_F, w)
    M = np.real(h[:, :, None] * np.conj(h[:, None, :])) / model.sigma2
    M = 0.5 * (M + np.transpose(M, (0, 2, 1)))
    return M[0] if w.ndim == 0 else M


@dataclass(frozen=True)
class Spectrum:
    omega: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        om = np.asarray(self.omega, dtype=float).ravel()
        pw = np.asarray(self.power, dtype=float).ravel()
        if om.size != pw.size:
            raise ValueError("omega and power lengths differ")
        if np.any(pw < 0):
            raise ValueError("line powers must be nonnegative")
        if np.unique(om).size != om.size:
            raise ValueError("spectral lines must be at distinct frequencies")
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "power", pw)

    @property
    def total_power(self) -> float:
        return float(self.power.sum())

    def info_matrix(self, model: InputModel, theta_F) -> np.ndarray:
        if self.omega.size == 0:
            return np.zeros((model.p, model.p))
        return np.einsum("n,nij->ij", self.power, freq_info_matrix(model, theta_F, self.omega))

    def to_dict(self) -> dict:
        return {"omega": self.omega.tolist(), "power": self.power.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> Spectrum:
        return cls(data["omega"], data["power"])


def optimal_spectrum(
    model: InputModel,
    theta_F,
    grid=None,
    total_power: float = 1.0,
    opts: SolverOptions | None = None,
) -> tuple[Spectrum, Certificate]:
    """D-optimal discrete input spectrum of power ``total_power`` on a frequency grid in (0, pi]."""
    if not total_power > 0:
        raise ValueError("total power must be positive")
    opts = opts or SolverOptions()
    if grid is None:
        grid = opts.grid if opts.grid is not None else np.linspace(0, math.pi, 513)[1:]
    grid = as_points(grid, 1)
    if np.any(grid <= 0) or np.any(grid > math.pi + 1e-12):
        raise OutOfDomain("frequency grid must lie in (0, pi]")
    model.transfer(theta_F)
    space = BoxBounds([grid.min()], [math.pi])
    info = _Info(lambda pts: freq_info_matrix(model, theta_F, pts[:, 0]), model.p, space, grid)
    result = vertex_direction(info, opts)
    measure = result.measure
    if measure.size > model.p:
        warnings.warn(
            f"optimal spectrum has {measure.size} lines, more than the {model.p} parameters",
            stacklevel=2,
        )
    spectrum = Spectrum(measure.support[:, 0], total_power * measure.weights)
    return spectrum, result.certificate


def synthesize_multisine(spectrum: Spectrum, duration: int, seed: int = 0) -> np.ndarray:
    """u_k = sum_i sqrt(2 lambda_i) cos(omega_i k + phi_i), phases uniform on [0, 2 pi).

    A line at omega = pi is a pure alternating sequence, so it gets amplitude
    sqrt(lambda) and zero phase to keep its power equal to lambda.
    """
    n = int(duration)
    if n < 2 * spectrum.omega.size:
        raise ValueError("duration must be at least twice the number of lines")
    rng = np.random.default_rng(seed)
    k = np.arange(n)
    u = np.zeros(n)
    for om, lam in zip(spectrum.omega, spectrum.power):
        phase = rng.uniform(0.0, 2 * math.pi)
        if abs(om - math.pi) < 1e-12:
            u += math.sqrt(lam) * np.cos(math.pi * k)
        else:
            u += math.sqrt(2 * lam) * np.cos(om * k + phase)
    return u
