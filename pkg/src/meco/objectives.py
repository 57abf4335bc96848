"""Baseline objectives and their stochastic gradients.

Gradients are flat arrays in the layout of the model's :class:`ParamVector`.
The losses are composed from per-point quantities whose ``theta``-gradients
come from the model (reverse mode on the tape for the MLP), with the outer
derivatives applied as per-point weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .models import ParamVector, UnnormalizedModel
from .sampling import LangevinConfig, langevin_chain

__all__ = [
    "NceParams",
    "BaselineConfig",
    "UnsupportedDimensionError",
    "nce_loss_and_grad",
    "ence_loss_and_grad",
    "score_matching_loss_and_grad",
    "cd_grad",
    "mcmc_mle_grad",
    "PersistentPool",
    "ENCE_CLIP",
    "MAX_SCORE_MATCHING_DIM",
]

ENCE_CLIP = 60.0
MAX_SCORE_MATCHING_DIM = 4


class UnsupportedDimensionError(ValueError):
    pass


@dataclass
class NceParams:
    """Model parameters extended with ``alpha``, an estimate of ``log Z``."""

    theta: ParamVector
    alpha: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")

    def flat(self) -> np.ndarray:
        return np.append(self.theta.values, self.alpha)

    def with_flat(self, flat) -> "NceParams":
        flat = np.asarray(flat, dtype=np.float64)
        return NceParams(self.theta.with_values(flat[:-1]), float(flat[-1]))


@dataclass(frozen=True)
class BaselineConfig:
    noise_ratio: int = 1
    langevin_steps: int = 20
    langevin_step_size: float = 0.01
    batch_size: int = 64

    def __post_init__(self):
        if self.noise_ratio < 1 or self.batch_size < 1:
            raise ValueError("noise_ratio and batch_size must be positive")
        if self.langevin_steps not in (20, 50, 100):
            raise ValueError(f"langevin_steps must be one of 20, 50, 100, got {self.langevin_steps}")
        if not self.langevin_step_size > 0:
            raise ValueError("langevin_step_size must be positive")


def _log_q(q, x, given, label):
    lq = q.log_density(x) if given is None else np.asarray(given, dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(lq))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"log q is not finite at {label} point {i}: {np.asarray(x)[i].tolist()}")
    return lq


def _contrast(model, tau, q, data_batch, noise_batch, log_q_data, log_q_noise):
    data = model._check_batch(data_batch)
    noise = model._check_batch(noise_batch)
    if data.shape[0] == 0 or noise.shape[0] == 0:
        raise ValueError("data and noise batches must be non-empty")
    g_data = model.log_unnorm(data, tau.theta) - _log_q(q, data, log_q_data, "data") - tau.alpha
    g_noise = model.log_unnorm(noise, tau.theta) - _log_q(q, noise, log_q_noise, "noise") - tau.alpha
    return data, noise, g_data, g_noise


def _tau_grad(model, tau, data, noise, w_data, w_noise) -> NceParams:
    """Gradient of a loss whose derivative in each ``G`` value is ``w``."""
    g_theta = model.weighted_grad_theta(data, w_data, tau.theta) + model.weighted_grad_theta(noise, w_noise, tau.theta)
    g_alpha = -float(np.sum(w_data) + np.sum(w_noise))
    if not (math.isfinite(g_alpha) and np.all(np.isfinite(g_theta))):
        raise FloatingPointError("non-finite NCE gradient")
    return NceParams(tau.theta.with_values(g_theta), g_alpha)


def nce_loss_and_grad(model, tau: NceParams, q, data_batch, noise_batch, log_q_data=None, log_q_noise=None):
    """Logistic NCE loss and its gradient in ``tau = (theta, alpha)``.

    With ``G = log p0 - log q - alpha`` the loss is
    ``mean_data softplus(-G) + mean_noise softplus(G)``, which is the usual
    ``-mean log h - mean log(1 - h)`` with ``h = sigmoid(G)`` in stable form.
    """
    data, noise, g_d, g_n = _contrast(model, tau, q, data_batch, noise_batch, log_q_data, log_q_noise)
    loss = float(np.mean(np.logaddexp(0.0, -g_d)) + np.mean(np.logaddexp(0.0, g_n)))
    w_d = -expit(-g_d) / g_d.size
    w_n = expit(g_n) / g_n.size
    return loss, _tau_grad(model, tau, data, noise, w_d, w_n)


def ence_loss_and_grad(
    model, tau: NceParams, q, data_batch, noise_batch, log_q_data=None, log_q_noise=None, stats: dict | None = None
):
    """Exponential-loss NCE: ``mean_data exp(-u/2) + mean_noise exp(u/2)``.

    ``u/2`` is clipped to ``[-60, 60]`` before exponentiating; clipped points
    contribute no gradient and are counted in ``stats["clip_events"]``.
    """
    data, noise, u_d, u_n = _contrast(model, tau, q, data_batch, noise_batch, log_q_data, log_q_noise)
    a_d = np.clip(0.5 * u_d, -ENCE_CLIP, ENCE_CLIP)
    a_n = np.clip(0.5 * u_n, -ENCE_CLIP, ENCE_CLIP)
    in_d = a_d == 0.5 * u_d
    in_n = a_n == 0.5 * u_n
    clips = int((~in_d).sum() + (~in_n).sum())
    if stats is not None and clips:
        stats["clip_events"] = stats.get("clip_events", 0) + clips
    e_d = np.exp(-a_d)
    e_n = np.exp(a_n)
    loss = float(np.mean(e_d) + np.mean(e_n))
    w_d = -0.5 * e_d * in_d / u_d.size
    w_n = 0.5 * e_n * in_n / u_n.size
    return loss, _tau_grad(model, tau, data, noise, w_d, w_n)


def score_matching_loss_and_grad(model: UnnormalizedModel, theta: ParamVector, data_batch):
    """Hyvarinen score matching, ``mean[ 0.5 |grad_x f0|^2 + tr hess_x f0 ]``.

    The Hessian trace is exact: one extra reverse sweep per input coordinate
    through the recorded score, which is why the input dimension is capped.
    """
    if model.dim > MAX_SCORE_MATCHING_DIM:
        raise UnsupportedDimensionError(
            f"score matching supports input dimension <= {MAX_SCORE_MATCHING_DIM}, got {model.dim}"
        )
    model._check_theta(theta)
    x_val = model._check_batch(data_batch)
    tape = ad.Tape()
    names = list(theta.layout)
    nodes = [tape.variable(theta.view(k), name=k) for k in names]
    x = tape.variable(x_val, name="x")
    f = model.energy(x, dict(zip(names, nodes)))
    score = ad.input_grad(ad.sum(f), x)
    per_point = ad.mul(ad.sum(ad.mul(score, score), axis=1), 0.5)
    for j in range(model.dim):
        if not isinstance(score, ad.Node):
            break
        s_j = ad.column(score, j)
        h_j = ad.input_grad(ad.sum(s_j), x)
        per_point = ad.add(per_point, ad.column(h_j, j))
    loss = ad.mean(per_point)
    if not isinstance(loss, ad.Node):
        return float(np.asarray(loss)), np.zeros(len(theta))
    grads = ad.grad(loss, nodes)
    return float(loss.value), np.concatenate([g.reshape(-1) for g in grads])


def _two_phase(model, theta, positive, negative):
    """``-mean grad f0(positive) + mean grad f0(negative)``."""
    n, m = positive.shape[0], negative.shape[0]
    return model.weighted_grad_theta(negative, np.full(m, 1.0 / m), theta) - model.weighted_grad_theta(
        positive, np.full(n, 1.0 / n), theta
    )


def cd_grad(model, theta, data_batch, langevin_steps, step_size, rng, stats=None, noise_scale: float = 1.0):
    """Contrastive divergence: Langevin chains started at the data batch."""
    if langevin_steps < 0:
        raise ValueError("langevin_steps must be non-negative")
    data = model._check_batch(data_batch)
    if langevin_steps == 0:
        return np.zeros(len(theta))
    cfg = LangevinConfig(int(langevin_steps), float(step_size), noise_scale)
    negative = langevin_chain(model, theta, data, cfg, rng, reset_to=data, stats=stats)
    return _two_phase(model, theta, data, negative)


class PersistentPool:
    """Persistent chain states for MCMC-MLE.

    Holds ``size`` points, initially drawn from ``N(0, init_std^2 I)``.  Each
    call to :func:`mcmc_mle_grad` first redraws a ``refresh`` fraction of the
    pool from the same broad Gaussian, then advances a random subset of
    chains and writes their final states back.
    """

    def __init__(self, dim: int, size: int, rng, init_std: float = 4.0, refresh: float = 0.05):
        if size < 1:
            raise ValueError("pool size must be positive")
        self.dim = int(dim)
        self.init_std = float(init_std)
        self.refresh = float(refresh)
        self.points = init_std * rng.normal(size=(size, dim))
        self.last_index: np.ndarray | None = None

    @classmethod
    def for_batch(cls, dim, batch_size, rng, init_std: float = 4.0):
        return cls(dim, 10 * batch_size, rng, init_std)

    def __len__(self):
        return self.points.shape[0]


def mcmc_mle_grad(
    model, theta, data_batch, sampler_config: LangevinConfig, pool: PersistentPool | None, rng,
    stats=None, init=None, init_std: float = 4.0,
):
    """MLE gradient with the model expectation replaced by Langevin samples.

    Chains start from ``pool`` when given (and the pool is updated in place);
    otherwise from ``init`` (a noise distribution with ``sample``), or from
    ``N(0, init_std^2 I)`` when that is also absent.
    """
    data = model._check_batch(data_batch)
    n = data.shape[0]
    if pool is not None:
        if len(pool) == 0:
            raise ValueError("persistent pool is empty")
        n_fresh = int(round(pool.refresh * len(pool)))
        if n_fresh:
            fresh = rng.integers(0, len(pool), size=n_fresh)
            pool.points[fresh] = pool.init_std * rng.normal(size=(n_fresh, pool.dim))
        idx = rng.generator.choice(len(pool), size=min(n, len(pool)), replace=False)
        start = pool.points[idx].copy()
    elif init is not None:
        start = init.sample(rng, n)
    else:
        start = init_std * rng.normal(size=(n, model.dim))
    negative = langevin_chain(model, theta, start, sampler_config, rng, reset_to=start, stats=stats)
    if pool is not None:
        pool.points[idx] = negative
        pool.last_index = idx
    return _two_phase(model, theta, data, negative)
