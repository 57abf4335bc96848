"""Noise distributions ``q(x)`` with seeded sampling and exact log-densities.

All distributions take and return batches of shape ``(n, dim)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, solve_triangular
from scipy.special import logsumexp

from .models import GaussianMeanModel, ParamVector, UnnormalizedModel

__all__ = [
    "NoiseDistribution",
    "DegenerateDataError",
    "FittedGaussian",
    "fit_gaussian",
    "EmpiricalConvolution",
    "sample_empirical_conv",
    "Mixture",
    "ExactGaussianModelNoise",
    "VarianceReport",
    "variance_diagnostic",
    "density_gap",
    "noise_from_config",
]

LOG_2PI = math.log(2.0 * math.pi)


class DegenerateDataError(ValueError):
    """Too few points to fit a distribution."""


def _as_batch(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, dim)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got array of shape {x.shape}")
    return x


class NoiseDistribution:
    """A sampler with a tractable normalized log-density."""

    dim: int

    def sample(self, rng, count: int) -> np.ndarray:
        raise NotImplementedError

    def log_density(self, x) -> np.ndarray:
        raise NotImplementedError


class FittedGaussian(NoiseDistribution):
    """Multivariate normal ``N(mean, cov)`` with a cached lower Cholesky factor."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64)).copy()
        self.dim = self.mean.size
        cov = np.asarray(cov, dtype=np.float64).reshape(self.dim, self.dim)
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance is not symmetric")
        self.cov = 0.5 * (cov + cov.T)
        try:
            self.chol = cho_factor(self.cov, lower=True)[0]
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        self.chol = np.tril(self.chol)
        self._log_norm = -0.5 * self.dim * LOG_2PI - float(np.sum(np.log(np.diag(self.chol))))

    def __repr__(self):
        return f"FittedGaussian(mean={self.mean.tolist()}, cov={self.cov.tolist()})"

    def sample(self, rng, count: int) -> np.ndarray:
        z = rng.normal(size=(count, self.dim))
        return self.mean + z @ self.chol.T

    def log_density(self, x) -> np.ndarray:
        x = _as_batch(x, self.dim)
        w = solve_triangular(self.chol, (x - self.mean).T, lower=True)
        return self._log_norm - 0.5 * np.sum(w * w, axis=0)


def fit_gaussian(data, jitter: float = 1e-6) -> FittedGaussian:
    """Sample mean and unbiased sample covariance plus ``jitter * I``."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    n, d = data.shape
    if n < d + 1:
        raise DegenerateDataError(f"need at least {d + 1} points to fit a {d}-d Gaussian, got {n}")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / (n - 1) + jitter * np.eye(d)
    return FittedGaussian(mean, cov)


def sample_empirical_conv(anchors, kernel_std: float, rng, count: int, return_index: bool = False):
    """Uniformly chosen anchors perturbed by ``N(0, kernel_std**2 I)``."""
    anchors = np.asarray(anchors, dtype=np.float64)
    if anchors.ndim == 1:
        anchors = anchors.reshape(-1, 1)
    if anchors.shape[0] == 0:
        raise ValueError("anchor set is empty")
    if not kernel_std > 0:
        raise ValueError(f"kernel_std must be positive, got {kernel_std}")
    idx = rng.integers(0, anchors.shape[0], size=count)
    points = anchors[idx] + kernel_std * rng.normal(size=(count, anchors.shape[1]))
    return (points, idx) if return_index else points


class EmpiricalConvolution(NoiseDistribution):
    """``q(x) = (1/n) sum_i N(x; x_i, s^2 I)`` over the training points ``x_i``.

    :meth:`log_density` is the exact full-anchor density.
    :meth:`minibatch_log_density` is the cheap approximation built from the
    anchors that produced the current noise batch plus ``batch_size - 1``
    extra uniform anchors.
    """

    def __init__(self, anchors, kernel_std: float = 0.05, batch_size: int = 64, chunk: int = 2048):
        anchors = np.asarray(anchors, dtype=np.float64)
        if anchors.ndim == 1:
            anchors = anchors.reshape(-1, 1)
        if anchors.shape[0] == 0:
            raise ValueError("anchor set is empty")
        if not kernel_std > 0:
            raise ValueError(f"kernel_std must be positive, got {kernel_std}")
        self.anchors = anchors
        self.dim = anchors.shape[1]
        self.kernel_std = float(kernel_std)
        self.batch_size = int(batch_size)
        self.chunk = int(chunk)
        self.last_index: np.ndarray | None = None

    def sample(self, rng, count: int) -> np.ndarray:
        points, idx = sample_empirical_conv(self.anchors, self.kernel_std, rng, count, return_index=True)
        self.last_index = idx
        return points

    def _log_mean_kernel(self, x, anchors) -> np.ndarray:
        s2 = self.kernel_std**2
        log_norm = -0.5 * self.dim * (LOG_2PI + math.log(s2))
        out = np.empty(x.shape[0])
        for start in range(0, x.shape[0], self.chunk):
            xs = x[start : start + self.chunk]
            d2 = np.sum((xs[:, None, :] - anchors[None, :, :]) ** 2, axis=-1)
            out[start : start + self.chunk] = logsumexp(-0.5 * d2 / s2, axis=1)
        return log_norm + out - math.log(anchors.shape[0])

    def log_density(self, x) -> np.ndarray:
        return self._log_mean_kernel(_as_batch(x, self.dim), self.anchors)

    def minibatch_anchors(self, rng, index=None) -> np.ndarray:
        index = self.last_index if index is None else np.asarray(index)
        extra = rng.integers(0, self.anchors.shape[0], size=max(self.batch_size - 1, 0))
        chosen = extra if index is None else np.concatenate([np.unique(index), extra])
        return self.anchors[chosen]

    def minibatch_log_density(self, x, rng, index=None) -> np.ndarray:
        return self._log_mean_kernel(_as_batch(x, self.dim), self.minibatch_anchors(rng, index))


class Mixture(NoiseDistribution):
    """Finite mixture of noise distributions of equal dimension."""

    def __init__(self, components, weights=None):
        self.components = list(components)
        if not self.components:
            raise ValueError("mixture needs at least one component")
        self.dim = self.components[0].dim
        if any(c.dim != self.dim for c in self.components):
            raise ValueError("mixture components differ in dimension")
        w = np.ones(len(self.components)) if weights is None else np.asarray(weights, dtype=np.float64)
        if w.shape != (len(self.components),) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("mixture weights must be non-negative with positive sum")
        self.weights = w / w.sum()
        self._log_w = np.log(self.weights)

    def sample(self, rng, count: int) -> np.ndarray:
        which = rng.generator.choice(len(self.components), size=count, p=self.weights)
        out = np.empty((count, self.dim))
        for k, comp in enumerate(self.components):
            mask = which == k
            if mask.any():
                out[mask] = comp.sample(rng, int(mask.sum()))
        return out

    def log_density(self, x) -> np.ndarray:
        x = _as_batch(x, self.dim)
        parts = np.stack([lw + c.log_density(x) for lw, c in zip(self._log_w, self.components)])
        return logsumexp(parts, axis=0)


class ExactGaussianModelNoise(NoiseDistribution):
    """The normalized model itself, ``q = p(.; theta)``, for the Gaussian mean family.

    Unlike the other distributions this one moves with ``theta``, so it also
    exposes ``grad_log_density_theta``; the variance diagnostic uses it to
    differentiate the per-sample ratio ``p0 / q`` including the dependence
    of ``q`` on ``theta``.
    """

    dim = 1

    def __init__(self, theta: float):
        self.theta = float(theta)
        self._model = GaussianMeanModel()
        self._params = self._model.params(self.theta)

    def sample(self, rng, count: int) -> np.ndarray:
        return self.theta + rng.normal(size=(count, 1))

    def log_density(self, x) -> np.ndarray:
        return self._model.log_density(_as_batch(x, 1), self._params)

    def grad_log_density_theta(self, x) -> np.ndarray:
        return _as_batch(x, 1) - self.theta


class VarianceReport(NamedTuple):
    sigma_g2: float
    zeta_g2: float
    zeta_h2: float
    overflow: bool
    n_mc: int


def variance_diagnostic(
    model: UnnormalizedModel,
    theta: ParamVector,
    q: NoiseDistribution,
    n_mc: int,
    rng,
    data=None,
    batch: int = 1,
    noise_points=None,
) -> VarianceReport:
    """Monte-Carlo estimates of the stochastic-oracle variances at ``theta``.

    ``sigma_g2`` is the variance of the ratio ``p0(z)/q(z)``, ``z ~ q``.
    ``zeta_g2`` is the total variance (trace of the covariance) of its
    ``theta``-gradient ``(p0/q) * (grad log p0 - grad log q)``; the second
    term is present only when ``q`` depends on ``theta``.  ``zeta_h2`` is the
    total variance of ``grad_theta log p0(x)`` over ``data`` (nan without
    data).  With ``batch > 1`` each sample is the mean of ``batch`` draws.
    Ratios are formed as ``exp(log p0 - log q)``; if they would overflow the
    variances come back as ``inf`` and ``overflow`` is set.
    """
    if n_mc < 2:
        raise ValueError("n_mc must be at least 2")
    z = q.sample(rng, n_mc * batch) if noise_points is None else np.asarray(noise_points, dtype=np.float64)
    z = _as_batch(z, model.dim)
    if z.shape[0] != n_mc * batch:
        raise ValueError(f"expected {n_mc * batch} noise points, got {z.shape[0]}")
    log_r = model.log_unnorm(z, theta) - q.log_density(z)
    if not np.all(np.isfinite(log_r)):
        raise ValueError("non-finite log ratio in the noise sample")
    shift = float(np.max(log_r))
    overflow = 2.0 * shift > 700.0
    r = np.exp(log_r - shift)

    grads = model.per_sample_grad_theta(z, theta)
    grad_q = getattr(q, "grad_log_density_theta", None)
    if grad_q is not None:
        grads = grads - grad_q(z)
    dg = r[:, None] * grads
    if batch > 1:
        r = r.reshape(n_mc, batch).mean(axis=1)
        dg = dg.reshape(n_mc, batch, -1).mean(axis=1)

    def rescale(v):
        if overflow:
            return math.inf if v > 0 else 0.0
        return v * math.exp(2.0 * shift)

    sigma_g2 = rescale(float(np.var(r, ddof=1)))
    zeta_g2 = rescale(float(np.sum(np.var(dg, axis=0, ddof=1))))

    zeta_h2 = math.nan
    if data is not None:
        gh = model.per_sample_grad_theta(_as_batch(data, model.dim), theta)
        zeta_h2 = float(np.sum(np.var(gh, axis=0, ddof=1)))
    return VarianceReport(sigma_g2, zeta_g2, zeta_h2, bool(overflow), int(n_mc))


@dataclass
class DensityGap:
    max_abs: float
    mean_abs: float


def density_gap(q: EmpiricalConvolution, points, rng, index=None) -> DensityGap:
    """Gap between full-anchor and mini-batch log-densities of ``q`` on ``points``."""
    full = q.log_density(points)
    approx = q.minibatch_log_density(points, rng, index)
    diff = np.abs(full - approx)
    return DensityGap(float(diff.max()), float(diff.mean()))


def noise_from_config(spec: dict, data=None) -> NoiseDistribution:
    """Build a noise distribution from a config mapping with a ``kind`` key.

    Kinds: ``fitted_gaussian`` (fit to ``data`` unless ``mean``/``cov`` are
    given), ``gaussian`` (explicit ``mean``/``cov``), ``empirical_conv``
    (anchors are ``data``) and ``mixture`` (``components`` list, optional
    ``weights``).
    """
    kind = spec.get("kind")
    if kind == "fitted_gaussian":
        if "mean" in spec:
            return FittedGaussian(spec["mean"], spec["cov"])
        if data is None:
            raise ValueError("fitted_gaussian noise needs training data")
        return fit_gaussian(data, spec.get("jitter", 1e-6))
    if kind == "gaussian":
        return FittedGaussian(spec["mean"], spec["cov"])
    if kind == "empirical_conv":
        if data is None:
            raise ValueError("empirical_conv noise needs training data")
        return EmpiricalConvolution(data, spec.get("kernel_std", 0.05), spec.get("batch_size", 64))
    if kind == "mixture":
        comps = [noise_from_config(c, data) for c in spec["components"]]
        return Mixture(comps, spec.get("weights"))
    raise ValueError(f"unknown noise kind {kind!r}")
