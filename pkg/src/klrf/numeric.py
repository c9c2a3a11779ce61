"""Small numeric kernels: least squares, DFT magnitudes, entropy, variance."""

from __future__ import annotations

import numpy as np

# Singular values below this fraction of the largest are treated as zero.
SVD_CUTOFF = 1e-10


def least_squares_min_norm(A, b):
    """Minimum-norm minimizer of ||A w - b||^2 via the SVD pseudoinverse.

    A is (m, n), b is (m,); A is routinely rank-deficient here (wide, with
    few rows), which is exactly the case the pseudoinverse handles.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0]:
        raise ValueError(f"shape mismatch: A {A.shape}, b {b.shape}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite entries in least-squares input")
    # solve at unit scale: subnormal-magnitude matrices otherwise make the
    # SVD's internal divisions underflow and poison the result with NaNs
    scale = float(np.max(np.abs(A)))
    if scale == 0.0:
        return np.zeros(A.shape[1])
    return np.linalg.pinv(A / scale, rcond=SVD_CUTOFF) @ b / scale


def dft_low_magnitudes(series, k):
    """Magnitudes of the k lowest-frequency DFT coefficients (0 .. k-1).

    The series is zero-padded to length >= k so all k frequencies exist.
    Sequences here are short; numpy's FFT over the padded length is plenty.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("series must be a nonempty vector")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = max(x.size, k)
    if n > x.size:
        x = np.concatenate([x, np.zeros(n - x.size)])
    return np.abs(np.fft.fft(x)[:k])


def shannon_term(hist):
    """Sum of p log p over the normalized histogram, with 0 log 0 := 0.

    Always <= 0; returns 0 for one-hot and all-zero (empty child) histograms.
    Natural logarithm.
    """
    h = np.asarray(hist, dtype=float)
    if np.any(h < 0):
        raise ValueError("histogram entries must be nonnegative")
    total = h.sum()
    if total == 0:
        return 0.0
    p = h[h > 0] / total
    p = p[p > 0]  # guard: tiny entries can underflow to 0 when normalized
    return float(np.sum(p * np.log(p)))


def variance_trace(vectors):
    """Sum over coordinates of the population variance; 0 for empty input."""
    v = np.asarray(vectors, dtype=float)
    if v.size == 0:
        return 0.0
    if v.ndim == 1:
        v = v[:, None]
    return float(np.sum(v.var(axis=0)))


def gaussian_kernel(dist, sigma):
    """exp(-dist^2 / (2 sigma^2)); strictly decreasing in dist, g(0) = 1."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return float(np.exp(-(float(dist) ** 2) / (2.0 * sigma**2)))
