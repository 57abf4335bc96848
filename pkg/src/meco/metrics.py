"""Sample-quality metrics: squared error, kernel MMD and the Gaussian Frechet distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "mse_theta",
    "MmdConfig",
    "mmd2",
    "median_bandwidth",
    "GaussianSummary",
    "summarize",
    "frechet2",
    "sqrtm_psd",
]


def mse_theta(theta, theta_star) -> float:
    a = np.asarray(theta, dtype=np.float64)
    b = np.asarray(theta_star, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sum(d * d))


@dataclass(frozen=True)
class MmdConfig:
    bandwidth: float | str = "median-heuristic"
    estimator: str = "biased"
    chunk: int = 2048

    def __post_init__(self):
        if self.estimator not in ("biased", "unbiased"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median-heuristic":
                raise ValueError(f"unknown bandwidth rule {self.bandwidth!r}")
        elif not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def _pair_d2(a, b):
    d2 = np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def median_bandwidth(x, y=None) -> float:
    """Median pairwise Euclidean distance over the pooled set (distinct pairs, exact)."""
    pts = _as_points(x) if y is None else np.vstack([_as_points(x), _as_points(y)])
    n = pts.shape[0]
    if n < 2:
        raise ValueError("median heuristic needs at least two points")
    iu = np.triu_indices(n, k=1)
    d = np.sqrt(_pair_d2(pts, pts)[iu])
    med = float(np.median(d))
    if not med > 0:
        raise ValueError("all points coincide; median bandwidth is zero")
    return med


def _kernel_sum(a, b, sigma, chunk, exclude_diag=False):
    """Sum of ``exp(-|a_i - b_j|^2 / (2 sigma^2))`` in fixed row-block order."""
    total = 0.0
    scale = -0.5 / (sigma * sigma)
    for start in range(0, a.shape[0], chunk):
        blk = a[start : start + chunk]
        k = np.exp(scale * _pair_d2(blk, b))
        if exclude_diag:
            rows = np.arange(blk.shape[0])
            k[rows, start + rows] = 0.0
        total += float(np.sum(k))
    return total


def mmd2(x_batch, y_batch, config: MmdConfig = MmdConfig()) -> float:
    """Squared MMD with the Gaussian kernel ``exp(-|a-b|^2 / (2 sigma^2))``."""
    x, y = _as_points(x_batch), _as_points(y_batch)
    n, m = x.shape[0], y.shape[0]
    if n == 0 or m == 0:
        raise ValueError("both batches must be non-empty")
    sigma = median_bandwidth(x, y) if config.bandwidth == "median-heuristic" else float(config.bandwidth)
    c = config.chunk
    if config.estimator == "biased":
        kxx = _kernel_sum(x, x, sigma, c) / (n * n)
        kyy = _kernel_sum(y, y, sigma, c) / (m * m)
    else:
        if n < 2 or m < 2:
            raise ValueError("the unbiased estimator needs at least two points per batch")
        kxx = _kernel_sum(x, x, sigma, c, exclude_diag=True) / (n * (n - 1))
        kyy = _kernel_sum(y, y, sigma, c, exclude_diag=True) / (m * (m - 1))
    kxy = _kernel_sum(x, y, sigma, c) / (n * m)
    return kxx + kyy - 2.0 * kxy


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray


def summarize(points) -> GaussianSummary:
    """Sample mean and unbiased covariance of a point cloud."""
    pts = _as_points(points)
    if pts.shape[0] < 2:
        raise ValueError("need at least two points")
    return GaussianSummary(pts.mean(axis=0), np.atleast_2d(np.cov(pts, rowvar=False)))


def sqrtm_psd(mat, tol: float = 1e-10) -> np.ndarray:
    """Symmetric PSD square root by eigendecomposition.

    Eigenvalues in ``[-tol, 0)`` are treated as round-off and set to zero;
    anything more negative is rejected.
    """
    mat = np.asarray(mat, dtype=np.float64)
    sym = 0.5 * (mat + mat.T)
    w, vecs = np.linalg.eigh(sym)
    if w.min() < -tol * max(1.0, float(np.abs(w).max())):
        raise ValueError(f"matrix is not positive semi-definite (eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (vecs * np.sqrt(w)) @ vecs.T


def frechet2(a: GaussianSummary, b: GaussianSummary) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    The cross term uses the symmetric form ``(S_a^(1/2) S_b S_a^(1/2))^(1/2)``,
    which has the same trace and stays PSD in floating point.
    """
    ca, cb = np.atleast_2d(a.cov), np.atleast_2d(b.cov)
    root_a = sqrtm_psd(ca)
    cross = sqrtm_psd(root_a @ cb @ root_a)
    diff = np.asarray(a.mean, dtype=np.float64) - np.asarray(b.mean, dtype=np.float64)
    value = float(diff @ diff + np.trace(ca) + np.trace(cb) - 2.0 * np.trace(cross))
    return max(value, 0.0)
