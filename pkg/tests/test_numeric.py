import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from klrf.numeric import (
    dft_low_magnitudes,
    gaussian_kernel,
    least_squares_min_norm,
    shannon_term,
    variance_trace,
)


def dft_oracle(x, k):
    """Direct O(n^2) DFT summation, independent of numpy's FFT."""
    x = np.asarray(x, dtype=float)
    n = max(len(x), k)
    x = np.concatenate([x, np.zeros(n - len(x))])
    out = np.empty(k)
    for f in range(k):
        re = sum(x[t] * np.cos(-2 * np.pi * f * t / n) for t in range(n))
        im = sum(x[t] * np.sin(-2 * np.pi * f * t / n) for t in range(n))
        out[f] = np.hypot(re, im)
    return out


class TestLeastSquares:
    def test_identity(self):
        w = least_squares_min_norm(np.eye(3), np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(w, [1.0, 2.0, 3.0], atol=1e-12)

    def test_equal_columns_share_weight(self):
        # all columns equal b: minimal-norm solution on sum(w) = 1 is uniform
        b = np.array([0.2, 0.5, 0.3])
        A = np.tile(b[:, None], (1, 5))
        w = least_squares_min_norm(A, b)
        np.testing.assert_allclose(w, np.full(5, 0.2), atol=1e-10)

    def test_residual_orthogonal_to_column_space(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            A = rng.normal(size=(4, 6))
            b = rng.normal(size=4)
            w = least_squares_min_norm(A, b)
            assert np.linalg.norm(A.T @ (A @ w - b)) < 1e-8 * max(
                1.0, np.linalg.norm(b)
            )

    def test_minimum_norm_among_minimizers(self):
        # rank-deficient system: duplicated columns
        rng = np.random.default_rng(4)
        base = rng.normal(size=(3, 2))
        A = np.hstack([base, base])
        b = rng.normal(size=3)
        w = least_squares_min_norm(A, b)
        # shifting weight between duplicate columns keeps the residual but
        # grows the norm
        shift = np.array([0.1, 0.0, -0.1, 0.0])
        w2 = w + shift
        np.testing.assert_allclose(A @ w, A @ w2, atol=1e-12)
        assert np.linalg.norm(w) < np.linalg.norm(w2)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            least_squares_min_norm(np.eye(3), np.ones(4))
        with pytest.raises(ValueError):
            least_squares_min_norm(np.ones(3), np.ones(3))

    def test_nonfinite_rejected(self):
        A = np.eye(2)
        A[0, 0] = np.nan
        with pytest.raises(ValueError):
            least_squares_min_norm(A, np.ones(2))
        with pytest.raises(ValueError):
            least_squares_min_norm(np.eye(2), np.array([np.inf, 0.0]))

    @given(
        arrays(float, (3, 5), elements=st.floats(-5, 5)),
        arrays(float, (3,), elements=st.floats(-5, 5)),
    )
    @settings(max_examples=50, deadline=None)
    def test_never_beaten_by_uniform_weights(self, A, b):
        w = least_squares_min_norm(A, b)
        uniform = np.full(5, 1.0 / 5)
        assert (
            np.linalg.norm(A @ w - b)
            <= np.linalg.norm(A @ uniform - b) + 1e-9
        )


class TestDftLowMagnitudes:
    def test_constant_series(self):
        np.testing.assert_allclose(
            dft_low_magnitudes(np.full(8, 2.5), 4), [20.0, 0, 0, 0], atol=1e-12
        )

    def test_nyquist_only_energy(self):
        # alternating series of length 4: all energy at frequency 2 (Nyquist)
        np.testing.assert_allclose(
            dft_low_magnitudes([1.0, -1.0, 1.0, -1.0], 3), [0, 0, 4.0], atol=1e-12
        )
        np.testing.assert_allclose(
            dft_low_magnitudes([1.0, -1.0, 1.0, -1.0], 2), [0, 0], atol=1e-12
        )

    def test_pure_cosine(self):
        t = np.arange(8)
        x = np.cos(2 * np.pi * t / 8)
        np.testing.assert_allclose(dft_low_magnitudes(x, 2), [0.0, 4.0], atol=1e-12)

    def test_matches_direct_summation_oracle(self):
        rng = np.random.default_rng(7)
        for n in (1, 2, 5, 16):
            x = rng.normal(size=n)
            for k in (1, 3, 6):
                np.testing.assert_allclose(
                    dft_low_magnitudes(x, k), dft_oracle(x, k), atol=1e-9
                )

    def test_zero_padding_short_series(self):
        out = dft_low_magnitudes([3.0], 4)
        assert out.shape == (4,)
        np.testing.assert_allclose(out, dft_oracle([3.0], 4), atol=1e-12)

    def test_circular_shift_invariance(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=12)
        for s in (1, 5, 11):
            np.testing.assert_allclose(
                dft_low_magnitudes(x, 6),
                dft_low_magnitudes(np.roll(x, s), 6),
                atol=1e-9,
            )

    def test_bad_inputs_rejected(self):
        with pytest.raises(ValueError):
            dft_low_magnitudes([], 2)
        with pytest.raises(ValueError):
            dft_low_magnitudes([1.0], 0)
        with pytest.raises(ValueError):
            dft_low_magnitudes(np.ones((2, 2)), 2)


class TestShannonTerm:
    def test_pure(self):
        assert shannon_term([4, 0, 0]) == 0.0

    def test_uniform_two_class(self):
        assert abs(shannon_term([1, 1]) - (-np.log(2))) < 1e-12

    def test_three_one_split(self):
        expected = 0.75 * np.log(0.75) + 0.25 * np.log(0.25)
        assert abs(shannon_term([3, 1]) - expected) < 1e-12

    def test_empty_child_convention(self):
        assert shannon_term([0, 0, 0]) == 0.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            shannon_term([1, -1])

    @given(arrays(float, 4, elements=st.floats(0, 100)))
    @settings(max_examples=100, deadline=None)
    def test_never_positive(self, hist):
        assert shannon_term(hist) <= 0.0

    def test_scale_invariant(self):
        h = np.array([2.0, 3.0, 5.0])
        assert abs(shannon_term(h) - shannon_term(h * 17.0)) < 1e-12


class TestVarianceTrace:
    def test_single_vector(self):
        assert variance_trace([[1.0, 2.0, 3.0]]) == 0.0

    def test_hand_value(self):
        assert abs(variance_trace([[0.0, 0.0], [2.0, 0.0]]) - 1.0) < 1e-12

    def test_identical_vectors(self):
        assert variance_trace([[1.0, 2.0]] * 5) == 0.0

    def test_empty(self):
        assert variance_trace([]) == 0.0

    def test_one_dimensional_input(self):
        assert abs(variance_trace([0.0, 2.0]) - 1.0) < 1e-12

    @given(arrays(float, (6, 3), elements=st.floats(-10, 10)))
    @settings(max_examples=100, deadline=None)
    def test_nonnegative_and_translation_invariant(self, v):
        assert variance_trace(v) >= 0.0
        assert abs(variance_trace(v) - variance_trace(v + 3.7)) < 1e-9

    @given(arrays(float, (5, 2), elements=st.floats(-10, 10)))
    @settings(max_examples=50, deadline=None)
    def test_permutation_invariant(self, v):
        assert abs(variance_trace(v) - variance_trace(v[::-1])) < 1e-12


class TestGaussianKernel:
    def test_zero_distance(self):
        assert gaussian_kernel(0.0, 2.0) == 1.0

    def test_one_sigma(self):
        assert abs(gaussian_kernel(1.5, 1.5) - np.exp(-0.5)) < 1e-12

    def test_three_sigma(self):
        assert abs(gaussian_kernel(3.0, 1.0) - np.exp(-4.5)) < 1e-12

    def test_strictly_decreasing(self):
        vals = [gaussian_kernel(d, 1.0) for d in np.linspace(0, 5, 20)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_bad_sigma_rejected(self):
        with pytest.raises(ValueError):
            gaussian_kernel(1.0, 0.0)
        with pytest.raises(ValueError):
            gaussian_kernel(1.0, -1.0)
