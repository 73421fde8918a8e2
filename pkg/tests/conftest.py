"""Shared solver runs so that expensive designs are computed once per session."""

import math
from functools import lru_cache

import numpy as np
import pytest

from oedkit import (
    CompartmentModel,
    ExponentialModel,
    InputModel,
    LinearModel,
    PolynomialModel,
    SolverOptions,
    fedorov_wynn,
    freq_info_matrix,
    multiplicative_solve,
    optimal_spectrum,
)
from oedkit.design import BoxBounds
from oedkit.models import PK_THETA

GRID41 = np.linspace(-1, 1, 41)[:, None]
FREQ_GRID = np.linspace(0, math.pi, 513)[1:]


class Run:
    """A finished solver run with what is needed to recompute d on its support."""

    def __init__(self, name, result, p, info_fn, step_rule="fedorov", rank_one=True, epsilon=1e-4):
        self.name = name
        self.result = result
        self.p = p
        self.info_fn = info_fn
        self.step_rule = step_rule
        self.rank_one = rank_one
        self.epsilon = epsilon

    def d_on(self, points):
        m = self.result.measure
        F = self.info_fn(m.support)
        M = np.einsum("n,nij->ij", m.weights, F)
        Minv = np.linalg.inv(M)
        return np.einsum("ij,nji->n", Minv, self.info_fn(points))


def _model_fn(model, theta):
    from oedkit.criteria import point_matrices

    return lambda pts: point_matrices(model, theta, pts)


def _regression(name, model, theta, opts, step_rule="fedorov"):
    res = fedorov_wynn(model, theta, opts)
    return Run(name, res, model.p, _model_fn(model, theta), step_rule, epsilon=opts.epsilon)


def _spectrum(name, model, theta):
    spec, cert = optimal_spectrum(model, theta, FREQ_GRID)

    class _Res:
        pass

    res = _Res()
    from oedkit import new_measure

    res.measure = new_measure(spec.omega, spec.power / spec.total_power)
    res.certificate = cert
    res.certified = cert.certified
    res.trace = []
    res.spectrum = spec
    fn = lambda pts: freq_info_matrix(model, theta, np.asarray(pts, float)[:, 0])  # noqa: E731
    return Run(name, res, model.p, fn, rank_one=False)


@lru_cache(maxsize=None)
def solver_runs():
    line = LinearModel(lambda u: [1.0, u[0]], 2, BoxBounds([-1], [1]))
    runs = [
        _regression("line", line, np.zeros(2), SolverOptions(grid=np.linspace(-1, 1, 201)[:, None])),
        _regression("quadratic", PolynomialModel(2), np.zeros(3), SolverOptions(grid=GRID41, epsilon=1e-7)),
        _regression("cubic", PolynomialModel(3), np.zeros(4), SolverOptions(grid=np.linspace(-1, 1, 201)[:, None])),
        _regression("quadratic-refine-each", PolynomialModel(2, 0, 3), np.zeros(3), SolverOptions(refine="each")),
        _regression("quadratic-no-refine", PolynomialModel(2), np.zeros(3), SolverOptions(grid=GRID41, refine="none")),
        _regression("exponential", ExponentialModel(), np.array([0.5]), SolverOptions()),
        _regression(
            "compartment",
            CompartmentModel(),
            np.array(PK_THETA),
            SolverOptions(grid=np.arange(1.0, 721.0)[:, None], merge_tol=2.0, epsilon=0.02),
        ),
        _regression("quadratic-wynn", PolynomialModel(2), np.zeros(3), SolverOptions(grid=GRID41, step="wynn", max_iter=400), "wynn"),
    ]
    mult = multiplicative_solve(PolynomialModel(2), np.zeros(3), GRID41, epsilon=1e-7)
    runs.append(Run("quadratic-multiplicative", mult, 3, _model_fn(PolynomialModel(2), np.zeros(3)), "multiplicative", epsilon=1e-7))
    runs += [
        _spectrum("fir1", InputModel(1), [1.0]),
        _spectrum("fir2", InputModel(2), [1.0, 0.5]),
        _spectrum("fir3", InputModel(3), [1.0, 0.2, 0.1]),
        _spectrum("one-pole", InputModel(1, 1), [1.0, -0.5]),
    ]
    return tuple(runs)


@pytest.fixture(scope="session")
def runs():
    return solver_runs()


@pytest.fixture(scope="session")
def run_by_name(runs):
    return {r.name: r for r in runs}


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
