"""MECO and the generic first-order optimizers used by the baselines.

MECO minimizes the negative log-likelihood of an unnormalized model written
as a composition: ``L(theta) = -mean log p0(x_i) + log g(theta)`` with
``g(theta) = E_q[p0 / q]``.  It tracks the inner value ``g`` with a moving
average ``u`` and the full gradient with a moving average ``v``::

    u <- (1 - gamma) u + gamma * mean_noise p0(z~)/q(z~)
    v <- (1 - beta) v + beta * ( -mean_data grad log p0(z)
                                + mean_noise p0(z~)/(q(z~) u) grad log p0(z~) )
    theta <- theta - eta v

``u`` is kept as ``log u`` so that ratios ``p0/q`` are only ever formed as
``exp(log p0 - log q - log u)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .models import ParamVector
from .numerics import logaddexp

__all__ = [
    "MecoState",
    "MecoConfig",
    "ConstantSchedule",
    "PlSchedule",
    "meco_init",
    "meco_step",
    "meco_update",
    "meco_direction",
    "pl_next_eta",
    "sgd_step",
    "ngd_step",
    "AdamState",
    "adam_step",
    "schedule_from_config",
    "DEFAULT_U_MIN_LOG",
]

DEFAULT_U_MIN_LOG = math.log(1e-8)


def pl_next_eta(eta_prev: float, mu: float) -> float:
    """Positive root of ``1 - mu*eta = eta**2 / eta_prev**2``.

    Solved as ``1/eta = mu/2 + sqrt(mu**2/4 + 1/eta_prev**2)``.
    """
    if not eta_prev > 0:
        raise ValueError("eta_prev must be positive")
    if mu < 0:
        raise ValueError("mu must be non-negative")
    return 1.0 / (0.5 * mu + math.sqrt(0.25 * mu * mu + 1.0 / (eta_prev * eta_prev)))


@dataclass(frozen=True)
class ConstantSchedule:
    eta0: float

    def eta(self, t: int) -> float:
        return self.eta0


class PlSchedule:
    """Decreasing step sizes for objectives satisfying the PL inequality.

    ``eta(t)`` is ``pl_next_eta`` applied ``t`` times to ``eta0``.  The moving
    average weights follow ``gamma_t = beta_t = min(1, c * max(1, mu) * eta(t-1))``.
    """

    def __init__(self, mu: float, eta0: float, c: float = 1.0):
        if not mu > 0 or not eta0 > 0 or not c > 0:
            raise ValueError("mu, eta0 and c must be positive")
        self.mu = float(mu)
        self.eta0 = float(eta0)
        self.c = float(c)
        self._etas = [self.eta0]

    def __repr__(self):
        return f"PlSchedule(mu={self.mu}, eta0={self.eta0}, c={self.c})"

    def eta(self, t: int) -> float:
        if t < 0:
            raise ValueError("t must be non-negative")
        while len(self._etas) <= t:
            self._etas.append(pl_next_eta(self._etas[-1], self.mu))
        return self._etas[t]

    def weight(self, t: int) -> float:
        return min(1.0, self.c * max(1.0, self.mu) * self.eta(max(t - 1, 0)))


def schedule_from_config(spec) -> ConstantSchedule | PlSchedule:
    """``{"kind": "constant", "eta0": ...}`` or ``{"kind": "pl", "mu": ..., "eta0": ..., "c": ...}``."""
    if isinstance(spec, (int, float)):
        return ConstantSchedule(float(spec))
    kind = spec.get("kind", "constant")
    if kind == "constant":
        return ConstantSchedule(float(spec["eta0"]))
    if kind == "pl":
        return PlSchedule(float(spec["mu"]), float(spec["eta0"]), float(spec.get("c", 1.0)))
    raise ValueError(f"unknown schedule kind {kind!r}")


@dataclass(frozen=True)
class MecoConfig:
    gamma: float = 0.1
    beta: float = 0.9
    eta: float | ConstantSchedule | PlSchedule = 0.01
    u_min_log: float = DEFAULT_U_MIN_LOG
    batch_data: int = 64
    batch_noise: int = 64

    def __post_init__(self):
        if not 0 < self.gamma <= 1 or not 0 < self.beta <= 1:
            raise ValueError("gamma and beta must lie in (0, 1]")
        if isinstance(self.eta, (int, float)) and not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.batch_data < 1 or self.batch_noise < 1:
            raise ValueError("batch sizes must be positive")

    def rates(self, t: int) -> tuple[float, float, float]:
        """``(eta, gamma, beta)`` for step ``t``."""
        if isinstance(self.eta, PlSchedule):
            w = self.eta.weight(t)
            return self.eta.eta(t), w, w
        if isinstance(self.eta, ConstantSchedule):
            return self.eta.eta0, self.gamma, self.beta
        return float(self.eta), self.gamma, self.beta


@dataclass(frozen=True)
class MecoState:
    log_u: float
    v: np.ndarray
    t: int = 1
    clip_events: int = 0

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.float64))


def _noise_log_ratio(model, theta, noise_batch, q, log_q_noise):
    noise = model._check_batch(noise_batch)
    if noise.shape[0] == 0:
        raise ValueError("noise batch is empty")
    lq = q.log_density(noise) if log_q_noise is None else np.asarray(log_q_noise, dtype=np.float64)
    if not np.all(np.isfinite(lq)):
        i = int(np.flatnonzero(~np.isfinite(lq))[0])
        raise ValueError(f"noise log-density is not finite at point {i}: {noise[i].tolist()}")
    return noise, model.log_unnorm(noise, theta) - lq


def meco_direction(model, theta, data_batch, noise, log_r, log_u) -> np.ndarray:
    """``-mean_data grad log p0 + mean_noise exp(log_r - log_u) grad log p0``."""
    data = model._check_batch(data_batch)
    if data.shape[0] == 0:
        raise ValueError("data batch is empty")
    w_noise = np.exp(log_r - log_u) / noise.shape[0]
    w_data = np.full(data.shape[0], -1.0 / data.shape[0])
    return model.weighted_grad_theta(data, w_data, theta) + model.weighted_grad_theta(noise, w_noise, theta)


def meco_init(model, theta1: ParamVector, q, data_batch, noise_batch, log_q_noise=None, config=None) -> MecoState:
    """``u_1`` is the mean ratio over the first noise batch, ``v_1`` the matching gradient estimate."""
    noise, log_r = _noise_log_ratio(model, theta1, noise_batch, q, log_q_noise)
    log_u = float(logsumexp(log_r) - math.log(log_r.size))
    clips = 0
    floor = DEFAULT_U_MIN_LOG if config is None else config.u_min_log
    if log_u < floor:
        log_u, clips = floor, 1
    v = meco_direction(model, theta1, data_batch, noise, log_r, log_u)
    return MecoState(log_u, v, 1, clips)


def meco_update(
    state: MecoState, model, theta: ParamVector, q, data_batch, noise_batch, gamma: float, beta: float,
    u_min_log: float = DEFAULT_U_MIN_LOG, log_q_noise=None,
) -> MecoState:
    """Advance ``u`` and ``v`` at the current ``theta`` without moving ``theta``."""
    noise, log_r = _noise_log_ratio(model, theta, noise_batch, q, log_q_noise)
    fresh = float(logsumexp(log_r) - math.log(log_r.size))
    if gamma >= 1.0:
        log_u = fresh
    else:
        log_u = logaddexp(math.log1p(-gamma) + state.log_u, math.log(gamma) + fresh)
    clips = state.clip_events
    if log_u < u_min_log:
        log_u = u_min_log
        clips += 1
    direction = meco_direction(model, theta, data_batch, noise, log_r, log_u)
    v = (1.0 - beta) * state.v + beta * direction
    return MecoState(log_u, v, state.t + 1, clips)


def meco_step(
    state: MecoState, model, theta: ParamVector, q, data_batch, noise_batch, config: MecoConfig, log_q_noise=None
) -> tuple[ParamVector, MecoState]:
    """One MECO iteration: update ``u``, then ``v``, then ``theta <- theta - eta v``."""
    eta, gamma, beta = config.rates(state.t)
    new = meco_update(state, model, theta, q, data_batch, noise_batch, gamma, beta, config.u_min_log, log_q_noise)
    return theta.with_values(theta.values - eta * new.v), new


def sgd_step(theta, grad, eta):
    return np.asarray(theta, dtype=np.float64) - eta * np.asarray(grad, dtype=np.float64)


def ngd_step(theta, grad, eta, norm_floor: float = 1e-12):
    """Normalized gradient step ``theta - eta * grad / max(|grad|, norm_floor)``."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    grad = np.asarray(grad, dtype=np.float64)
    return np.asarray(theta, dtype=np.float64) - eta * grad / max(float(np.linalg.norm(grad)), norm_floor)


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(state: AdamState, theta, grad, eta, beta1=0.9, beta2=0.999, eps=1e-8):
    """Adam with bias correction; returns ``(theta_next, state_next)``."""
    grad = np.asarray(grad, dtype=np.float64)
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    theta_next = np.asarray(theta, dtype=np.float64) - eta * m_hat / (np.sqrt(v_hat) + eps)
    return theta_next, AdamState(m, v, t)
