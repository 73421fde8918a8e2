import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oedkit import (
    CompartmentModel,
    Criterion,
    ExponentialModel,
    LinearModel,
    PolynomialModel,
    WeighingModel,
    criterion_value,
    equivalence_certificate,
    hadamard_design,
    info_matrix,
    new_measure,
    variance_function,
    variance_function_many,
)
from oedkit.criteria import check_nonsingular, log_det, make_certificate
from oedkit.design import BoxBounds
from oedkit.errors import SingularInformation
from oedkit.models import PK_THETA

LINE = LinearModel(lambda u: [1.0, u[0]], 2, BoxBounds([-1], [1]))
EVEN = new_measure([-1, 1], [0.5, 0.5])


def _random_measure(model, rng, k):
    space = model.space
    if hasattr(space, "lower"):
        pts = rng.uniform(space.lower, space.upper, size=(k, space.dim))
    else:
        pts = space.points[rng.choice(space.points.shape[0], size=k, replace=False)]
    return new_measure(pts, rng.uniform(0.1, 1.0, size=k))


MODELS = [
    (PolynomialModel(2), np.zeros(3), 6),
    (PolynomialModel(3, 0, 2), np.zeros(4), 8),
    (ExponentialModel(), np.array([0.7]), 3),
    (WeighingModel(3), np.zeros(3), 10),
    (CompartmentModel(), np.array(PK_THETA), 8),
]


def test_single_point_information():
    M = info_matrix(LINE, [0, 0], new_measure([1.0], [1.0]))
    np.testing.assert_array_equal(M, [[1, 1], [1, 1]])


def test_hadamard_information_is_identity():
    M = info_matrix(WeighingModel(8), np.zeros(8), hadamard_design(8))
    np.testing.assert_allclose(M, np.eye(8), atol=1e-15)


def test_variance_function_closed_form():
    M = info_matrix(LINE, [0, 0], EVEN)
    np.testing.assert_allclose(M, np.eye(2))
    for u in np.linspace(-1, 1, 11):
        assert variance_function(LINE, [0, 0], EVEN, [u]) == pytest.approx(1 + u * u, abs=1e-14)
    assert variance_function(LINE, [0, 0], EVEN, [0.0]) == pytest.approx(1.0)


@pytest.mark.parametrize("model,theta,k", MODELS, ids=lambda x: getattr(x, "name", ""))
def test_trace_identity_on_random_measures(model, theta, k):
    rng = np.random.default_rng(7)
    used = 0
    while used < 100:
        m = _random_measure(model, rng, k)
        try:
            check_nonsingular(info_matrix(model, theta, m))
        except SingularInformation:
            continue
        d = variance_function_many(model, theta, m, m.support)
        assert abs(d @ m.weights - model.p) <= 1e-10
        used += 1


@pytest.mark.parametrize("model,theta,k", MODELS, ids=lambda x: getattr(x, "name", ""))
def test_information_symmetric_psd(model, theta, k):
    rng = np.random.default_rng(11)
    for _ in range(100):
        M = info_matrix(model, theta, _random_measure(model, rng, rng.integers(1, k + 1)))
        np.testing.assert_array_equal(M, M.T)
        assert np.linalg.eigvalsh(M)[0] >= -1e-10 * max(1.0, np.abs(M).max())


def test_criterion_values():
    assert criterion_value(Criterion("D"), np.eye(3)) == 0.0
    assert criterion_value(Criterion("A"), np.diag([1.0, 4.0])) == pytest.approx(1.25)
    assert criterion_value(Criterion("E"), np.diag([2.0, 3.0])) == pytest.approx(2.0)
    Q = np.array([[1.0, 0.0]])
    assert criterion_value(Criterion("L", Q=Q), np.diag([2.0, 3.0])) == pytest.approx(0.5)
    G = Criterion("G", points=np.linspace(-1, 1, 5)[:, None])
    assert criterion_value(G, np.eye(2), LINE, [0, 0], EVEN) == pytest.approx(2.0)
    assert Criterion("d").maximize and not Criterion("A").maximize


def test_singular_information_detected():
    with pytest.raises(SingularInformation):
        check_nonsingular(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SingularInformation):
        variance_function(LINE, [0, 0], new_measure([0.5], [1.0]), [0.0])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.99), st.integers(1, 6))
def test_log_det_concave(seed, a, p):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(p, p + 2))
    B = rng.normal(size=(p, p + 2))
    M1, M2 = A @ A.T + 1e-3 * np.eye(p), B @ B.T + 1e-3 * np.eye(p)
    lhs = log_det((1 - a) * M1 + a * M2)
    rhs = (1 - a) * log_det(M1) + a * log_det(M2)
    assert lhs >= rhs - 1e-10


def test_certificate_for_optimal_line_design():
    grid = np.linspace(-1, 1, 201)
    cert = equivalence_certificate(LINE, [0, 0], EVEN, grid, eps=1e-6)
    assert cert.certified
    assert cert.max_d == pytest.approx(2.0, abs=1e-12)
    assert abs(cert.argmax[0]) == 1.0
    assert cert.grid_size == 201 and cert.resolution == pytest.approx(0.01)


def test_certificate_rejects_lopsided_design():
    m = new_measure([-1, 1], [0.9, 0.1])
    cert = equivalence_certificate(LINE, [0, 0], m, np.linspace(-1, 1, 201), eps=1e-6)
    # explicit 2x2 inverse: M = [[1, -0.8], [-0.8, 1]], d(1) = (1 + 1.6 + 1) / 0.36
    M = np.array([[1.0, -0.8], [-0.8, 1.0]])
    g = np.array([1.0, 1.0])
    assert not cert.certified
    assert cert.max_d == pytest.approx(g @ np.linalg.inv(M) @ g)
    assert cert.gap > 0 and cert.argmax == [1.0]


def test_certificate_ties_use_lowest_index():
    cert = make_certificate([1.0, 2.0, 2.0], [2.0], [[0.0], [1.0], [2.0]], [[1.0]], 2, 0.0)
    assert cert.argmax == [1.0]


def test_certificate_json_keys():
    cert = equivalence_certificate(LINE, [0, 0], EVEN, np.linspace(-1, 1, 21))
    keys = set(cert.to_dict())
    assert {"criterion", "max_d", "p", "gap", "argmax", "support_d", "grid_size"} <= keys


def test_exact_design_weights_by_count():
    from oedkit import ExactDesign

    M = info_matrix(LINE, [0, 0], ExactDesign([[-1.0], [1.0], [1.0]]))
    np.testing.assert_allclose(M, [[1, 1 / 3], [1 / 3, 1]])
