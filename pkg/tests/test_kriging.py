import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import blup_dense, ei_quadrature, se_kernel

from oedkit import (
    BoxBounds,
    ExactDesign,
    FiniteCandidateSet,
    Kernel,
    KrigingModel,
    ego_optimize,
    expected_improvement,
    krige_predict,
    latin_hypercube,
    profile_lengthscale,
    space_fill,
)
from oedkit.errors import SingularCovariance

UNIT = BoxBounds([0.0], [1.0])
FIVE = FiniteCandidateSet([0.0, 0.25, 0.5, 0.75, 1.0])


def test_single_observation_is_constant_predictor():
    p = krige_predict(Kernel(), [[0.3]], [2.5], [0.9])
    assert p.mean == pytest.approx(2.5)


def test_constant_data_predicts_constant():
    rng = np.random.default_rng(0)
    sites = rng.uniform(0, 1, size=(8, 1))
    model = KrigingModel(Kernel(lengthscale=0.3), sites, np.full(8, 4.2))
    np.testing.assert_allclose(model.predict(np.linspace(0, 1, 11)).mean, 4.2, atol=1e-9)


def test_interpolates_noise_free_data():
    rng = np.random.default_rng(1)
    sites = rng.uniform(0, 1, size=(10, 2))
    y = np.sin(3 * sites[:, 0]) + sites[:, 1]
    pred = KrigingModel(Kernel(lengthscale=0.3, sigma_p2=2.0), sites, y).predict(sites)
    np.testing.assert_allclose(pred.mean, y, atol=1e-10)
    assert np.all(pred.mse <= 1e-10 * 2.0)


def test_noisy_data_is_smoothed():
    sites = np.linspace(0, 1, 6)[:, None]
    y = np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    pred = KrigingModel(Kernel(lengthscale=0.3, noise=0.5), sites, y).predict(sites)
    assert np.all(pred.mse > 0)
    assert np.max(np.abs(pred.mean - y)) > 0.1


@pytest.mark.parametrize("family", ["squared_exponential", "exponential"])
def test_matches_bordered_system(family):
    rng = np.random.default_rng(2)
    kern = Kernel(family, 0.25, 1.7, 0.0)
    for _ in range(20):
        n = int(rng.integers(2, 15))
        sites = rng.uniform(0, 1, size=(n, 2))
        y = rng.normal(size=n)
        K = lambda a, b: kern.sigma_p2 * kern.correlation(a, b)  # noqa: E731
        model = KrigingModel(kern, sites, y)
        for u in rng.uniform(0, 1, size=(5, 2)):
            mean, mse = blup_dense(K, sites, y, u)
            pred = model.predict(u[None])
            assert pred.mean[0] == pytest.approx(mean, abs=1e-9)
            assert pred.mse[0] == pytest.approx(max(mse, 0.0), abs=1e-9)


def test_dense_oracle_uses_same_kernel():
    kern = Kernel("squared_exponential", 0.4, 1.3)
    a = np.array([[0.1], [0.6]])
    np.testing.assert_allclose(kern.sigma_p2 * kern.correlation(a, a), se_kernel(0.4, 1.3)(a, a))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mse_nonnegative(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 20))
    sites = rng.uniform(0, 1, size=(n, 1))
    kern = Kernel("exponential", float(rng.uniform(0.05, 1)), 1.0, float(rng.choice([0.0, 0.1])))
    pred = KrigingModel(kern, sites, rng.normal(size=n)).predict(np.linspace(0, 1, 51))
    assert np.all(pred.mse >= 0)


def test_duplicate_sites_need_noise():
    with pytest.raises(SingularCovariance):
        KrigingModel(Kernel(), [[0.2], [0.2]], [1.0, 2.0])
    KrigingModel(Kernel(noise=0.1), [[0.2], [0.2]], [1.0, 2.0])


def test_expected_improvement_reference_values():
    assert expected_improvement(0.5, 0.0, 1.0) == 0.0
    assert expected_improvement(1.5, 0.0, 1.0) == pytest.approx(0.5)
    assert expected_improvement(1.0, 1.0, 1.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-15)
    assert expected_improvement(1.0, 1.0, 1.0) == pytest.approx(ei_quadrature(1.0, 1.0, 1.0), abs=1e-8)


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.0, 3.0))
def test_expected_improvement_nonnegative(mean, y_max, sd):
    assert expected_improvement(mean, sd * sd, y_max) >= 0


def test_expected_improvement_increases_with_spread():
    sds = np.linspace(0.5, 3, 300)
    for mean, y_max in [(0.0, 1.0), (1.0, 1.0), (2.0, 1.0), (-3.0, 0.5)]:
        ei = expected_improvement(np.full_like(sds, mean), sds**2, y_max)
        assert np.all(np.diff(ei) > 0)


def test_unsampled_cells_have_positive_improvement():
    sites = np.array([[0.05], [0.55], [0.95]])
    y = np.array([0.2, 0.9, 0.1])
    model = KrigingModel(Kernel(lengthscale=0.2), sites, y)
    centres = (np.arange(10) + 0.5) / 10
    empty = [c for c in centres if np.min(np.abs(sites[:, 0] - c)) > 0.05]
    pred = model.predict(np.array(empty))
    assert np.all(expected_improvement(pred.mean, pred.mse, y.max()) > 0)


def test_profile_lengthscale_recovers_scale():
    rng = np.random.default_rng(4)
    sites = np.sort(rng.uniform(0, 1, 40))[:, None]
    y = np.sin(2 * math.pi * sites[:, 0])
    k = profile_lengthscale(Kernel(noise=1e-10), sites, y)
    assert 0.05 < k.lengthscale < 1.0
    assert k.sigma_p2 > 0


def test_maximin_pair():
    d = space_fill(FIVE, 2, "maximin")
    assert sorted(d.points[:, 0].tolist()) == [0.0, 1.0]


def test_minimax_single_point():
    d = space_fill(FIVE, 1, "minimax")
    assert d.points[:, 0].tolist() == [0.5]


def test_lhs_lattice():
    d = space_fill(BoxBounds([0, 0], [1, 1]), 5, "lhs", seed=3)
    for j in range(2):
        assert sorted(d.points[:, j].tolist()) == [0, 0.25, 0.5, 0.75, 1.0]
    np.testing.assert_array_equal(latin_hypercube(UNIT, 4, seed=1), latin_hypercube(UNIT, 4, seed=1))


def test_space_fill_box_uses_candidate_grid():
    d = space_fill(UNIT, 3, "maximin")
    assert sorted(d.points[:, 0].tolist()) == [0.0, 0.5, 1.0]


def test_ego_stops_when_improvement_is_negligible():
    calls = []

    def f(u):
        calls.append(u)
        return -((u - 0.5) ** 2)

    init = ExactDesign([[0.0], [0.5], [1.0]])
    res = ego_optimize(f, UNIT, budget=10, init=init, kernel=Kernel(lengthscale=0.5), ei_tol=10.0)
    assert res.evaluations == 3 and len(calls) == 3
    assert res.best_point[0] == 0.5


def test_ego_unimodal():
    res = ego_optimize(lambda u: -((u - 0.7) ** 2), UNIT, budget=15, seed=0)
    assert abs(res.best_point[0] - 0.7) <= 0.02


def test_ego_is_reproducible():
    f = lambda u: math.sin(10 * u) + u  # noqa: E731
    a = ego_optimize(f, UNIT, budget=12, seed=5)
    b = ego_optimize(f, UNIT, budget=12, seed=5)
    assert a.trace == b.trace
    point, value, trace = a
    assert value == max(t["y"] for t in trace)
