import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossemo.errors import NumericError, ShapeError
from crossemo.numkit import SeededRng, as_matrix, finite_diff_grad, matmul


class TestMatmul:
    def test_identity(self):
        m = np.arange(9, dtype=float).reshape(3, 3) + 1
        assert np.array_equal(matmul(np.eye(3), m), m)

    def test_hand_product(self):
        out = matmul([[1, 2], [3, 4]], [[1], [1]])
        assert np.array_equal(out, [[3], [7]])

    def test_zero_matrix(self):
        m = np.random.default_rng(0).normal(size=(2, 5))
        assert np.array_equal(matmul(np.zeros((4, 2)), m), np.zeros((4, 5)))

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_rejects_nan(self):
        bad = np.ones((2, 2))
        bad[0, 0] = np.nan
        with pytest.raises(NumericError):
            matmul(bad, np.ones((2, 2)))

    def test_associativity(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = rng.normal(size=(3, 4))
            b = rng.normal(size=(4, 5))
            c = rng.normal(size=(5, 2))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            assert np.allclose(left, right, rtol=1e-9, atol=1e-12)


class TestAsMatrix:
    def test_rejects_1d(self):
        with pytest.raises(ShapeError):
            as_matrix([1.0, 2.0])

    def test_row_major(self):
        m = as_matrix([[1, 2], [3, 4]])
        assert m.flags["C_CONTIGUOUS"]
        assert m.dtype == np.float64


class TestSeededRng:
    def test_equal_seeds_equal_draws(self):
        a = SeededRng(1234).random(10_000)
        b = SeededRng(1234).random(10_000)
        assert np.array_equal(a, b)

    def test_distinct_seeds_differ(self):
        assert not np.array_equal(SeededRng(1).random(100), SeededRng(2).random(100))

    def test_derived_streams_are_independent(self):
        root = SeededRng(5)
        child_a = root.derive("a")
        # consuming the parent or a sibling must not perturb a derived stream
        root.random(50)
        root.derive("b").random(50)
        fresh = SeededRng(5).derive("a")
        assert np.array_equal(child_a.random(20), fresh.random(20))

    def test_nested_derivation_deterministic(self):
        x = SeededRng(9).derive("outer").derive("inner").random(5)
        y = SeededRng(9).derive("outer").derive("inner").random(5)
        assert np.array_equal(x, y)


class TestFiniteDiffGrad:
    def test_quadratic(self):
        grad = finite_diff_grad(lambda t: float(t[0] ** 2), np.array([3.0]), 1e-4)
        assert abs(grad[0] - 6.0) < 1e-6

    def test_constant(self):
        grad = finite_diff_grad(lambda t: 1.5, np.zeros(4), 1e-4)
        assert np.array_equal(grad, np.zeros(4))

    def test_sum(self):
        grad = finite_diff_grad(lambda t: float(t.sum()), np.arange(5, dtype=float), 1e-4)
        assert np.allclose(grad, np.ones(5), atol=1e-9)

    def test_nonfinite_rejected(self):
        with pytest.raises(NumericError):
            finite_diff_grad(lambda t: float("nan"), np.zeros(2), 1e-4)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-2, 2), min_size=2, max_size=5))
    def test_matches_closed_form(self, values):
        # f = sum(sin(t)) has gradient cos(t); central differences are O(eps^2)
        theta = np.array(values)
        grad = finite_diff_grad(lambda t: float(np.sum(np.sin(t))), theta, 1e-4)
        assert np.allclose(grad, np.cos(theta), atol=1e-7)
