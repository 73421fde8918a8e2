import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oedkit import BoxBounds, DesignMeasure, ExactDesign, FiniteCandidateSet, merge_support, new_measure, round_to_exact
from oedkit.design import apportion
from oedkit.errors import DimensionMismatch, EmptySupport, NegativeWeight, TooFewTrials

weights_st = st.lists(st.floats(0.01, 10.0), min_size=1, max_size=12)


def test_normalizes_equal_weights():
    m = new_measure([-1, 0, 1], [1, 1, 1])
    np.testing.assert_allclose(m.weights, [1 / 3] * 3, atol=1e-15)


def test_single_point_gets_unit_weight():
    m = new_measure([5], [2])
    assert m.size == 1 and m.weights[0] == 1.0 and m.support[0, 0] == 5


def test_negative_weight_rejected():
    with pytest.raises(NegativeWeight):
        new_measure([0, 1], [1, -0.1])


def test_empty_and_mismatched_inputs_rejected():
    with pytest.raises(EmptySupport):
        new_measure(np.zeros((0, 1)), [])
    with pytest.raises(EmptySupport):
        new_measure([0, 1], [0, 0])
    with pytest.raises(DimensionMismatch):
        new_measure([0, 1, 2], [1, 1])


def test_tiny_weights_pruned_and_duplicates_combined():
    m = new_measure([0, 1, 0, 2], [0.5, 1e-14, 0.25, 0.25])
    assert m.size == 2
    np.testing.assert_allclose(m.support[:, 0], [0, 2])
    np.testing.assert_allclose(m.weights, [0.75, 0.25])


def test_json_round_trip():
    m = new_measure([[0.0, 1.0], [2.0, 3.0]], [1, 3])
    back = DesignMeasure.from_json(m.to_json())
    np.testing.assert_array_equal(back.support, m.support)
    np.testing.assert_array_equal(back.weights, m.weights)
    e = ExactDesign([[1.0], [1.0], [2.0]])
    assert ExactDesign.from_json(e.to_json()).points.tolist() == e.points.tolist()


def test_merge_centroid():
    m = merge_support(new_measure([1.0, 1.01], [0.5, 0.5]), 0.05)
    assert m.size == 1
    assert m.support[0, 0] == pytest.approx(1.005, abs=1e-12) and m.weights[0] == 1.0


def test_merge_leaves_distant_points():
    m = merge_support(new_measure([0.0, 10.0], [0.5, 0.5]), 0.05)
    assert m.size == 2


def test_merge_is_transitive():
    m = merge_support(new_measure([0.0, 0.04, 0.08], [1, 1, 1]), 0.05)
    assert m.size == 1
    assert m.support[0, 0] == pytest.approx(0.04)


def test_merge_scale_uses_normalized_coordinates():
    m = new_measure([0.0, 5.0], [1, 1])
    assert merge_support(m, 1e-3, scale=[10000.0]).size == 1
    assert merge_support(m, 1e-3).size == 2


@settings(max_examples=100, deadline=None)
@given(weights_st, st.integers(0, 2**31 - 1), st.floats(0.0, 0.5))
def test_merge_preserves_mass_and_never_grows(ws, seed, tol):
    rng = np.random.default_rng(seed)
    m = new_measure(rng.uniform(0, 1, size=len(ws)), ws)
    merged = merge_support(m, tol)
    assert merged.size <= m.size
    assert abs(merged.weights.sum() - 1) <= 1e-12
    np.testing.assert_allclose(merged.support.T @ merged.weights, m.support.T @ m.weights, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(weights_st)
def test_measure_lies_on_simplex(ws):
    m = new_measure(np.arange(len(ws), dtype=float), ws)
    assert abs(m.weights.sum() - 1) <= 1e-12
    assert np.all(m.weights > 0)


@pytest.mark.parametrize(
    "weights,N,counts",
    [([0.5, 0.5], 8, [4, 4]), ([0.25] * 4, 8, [2, 2, 2, 2]), ([1 / 3] * 3, 5, [2, 2, 1])],
)
def test_apportionment_examples(weights, N, counts):
    assert apportion(weights, N).tolist() == counts


def test_rounding_duplicates_schedule():
    m = new_measure([1, 10, 74, 720], [0.25] * 4)
    pts = round_to_exact(m, 8).points[:, 0].tolist()
    assert pts == [1, 1, 10, 10, 74, 74, 720, 720]


def test_rounding_needs_enough_trials():
    with pytest.raises(TooFewTrials):
        round_to_exact(new_measure([0, 1, 2], [1, 1, 1]), 2)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 20), min_size=1, max_size=8))
def test_rounding_exact_multiples_is_identity(counts):
    N = sum(counts)
    assert apportion(np.array(counts) / N, N).tolist() == counts


@settings(max_examples=200, deadline=None)
@given(weights_st, st.integers(0, 200))
def test_apportion_sums_to_N(ws, extra):
    N = len(ws) + extra
    r = apportion(np.array(ws) / sum(ws), N)
    assert r.sum() == N and np.all(r >= 1)


def test_box_grid_and_membership():
    box = BoxBounds([1.0], [720.0])
    g = box.grid(step=1.0)
    assert g.shape == (720, 1) and g[0, 0] == 1 and g[-1, 0] == 720
    assert box.contains([5.0]) and not box.contains([0.5])
    g2 = BoxBounds([0, 0], [1, 1]).grid(n=3)
    assert g2.shape == (9, 2)


def test_candidate_set_points():
    c = FiniteCandidateSet([[0.0], [0.5], [1.0]])
    assert c.points.shape == (3, 1)
