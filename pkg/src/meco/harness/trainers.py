"""One training loop body per method, behind a common ``step()`` interface."""

from __future__ import annotations

import math

import numpy as np

from ..models import ParamVector
from ..noise import EmpiricalConvolution
from ..objectives import (
    NceParams,
    PersistentPool,
    cd_grad,
    ence_loss_and_grad,
    mcmc_mle_grad,
    nce_loss_and_grad,
    score_matching_loss_and_grad,
)
from ..optim import AdamState, MecoConfig, adam_step, meco_init, meco_step, meco_update, ngd_step, schedule_from_config
from ..sampling import LangevinConfig

__all__ = ["TrainingDiverged", "make_trainer"]


class TrainingDiverged(FloatingPointError):
    pass


class _Stepper:
    """Applies sgd / ngd / adam to a flat parameter vector."""

    def __init__(self, kind: str, lr: float, size: int, norm_floor: float = 1e-12):
        self.kind = kind
        self.lr = float(lr)
        self.norm_floor = norm_floor
        self.adam = AdamState.zeros(size) if kind == "adam" else None

    def __call__(self, flat, grad):
        if self.kind == "sgd":
            return flat - self.lr * grad
        if self.kind == "ngd":
            return ngd_step(flat, grad, self.lr, self.norm_floor)
        flat, self.adam = adam_step(self.adam, flat, grad, self.lr)
        return flat


def _check_finite(values, what="parameters"):
    if not np.all(np.isfinite(values)):
        raise TrainingDiverged(f"non-finite {what}")


class Trainer:
    log_u: float | None = None
    clip_events: int = 0
    grad_norm: float = math.nan

    def __init__(self, model, theta: ParamVector, data, q, spec: dict, rng):
        self.model = model
        self.theta = theta
        self.data = data
        self.q = q
        self.spec = spec
        self.rng = rng
        self.batch_data = int(spec.get("batch_data", 64))
        self.stats: dict = {}
        self._last_data = None

    def data_batch(self, size=None):
        idx = self.rng.integers(0, self.data.shape[0], size=size or self.batch_data)
        self._last_data = self.data[idx]
        return self._last_data

    def noise_batch(self, count):
        """Noise points and their log q (mini-batch approximation if configured)."""
        z = self.q.sample(self.rng, count)
        if isinstance(self.q, EmpiricalConvolution) and self.spec.get("noise_density", "full") == "minibatch":
            return z, self.q.minibatch_log_density(z, self.rng)
        return z, self.q.log_density(z)

    def step(self):
        raise NotImplementedError

    def loss_proxy(self) -> float:
        return math.nan


class MecoTrainer(Trainer):
    def __init__(self, model, theta, data, q, spec, rng):
        super().__init__(model, theta, data, q, spec, rng)
        eta = spec.get("schedule", spec.get("lr", 0.01))
        self.config = MecoConfig(
            gamma=float(spec.get("gamma", 0.1)),
            beta=float(spec.get("beta", 0.9)),
            eta=schedule_from_config(eta),
            u_min_log=math.log(float(spec.get("u_min", 1e-8))),
            batch_data=self.batch_data,
            batch_noise=int(spec.get("batch_noise", self.batch_data)),
        )
        self.optimizer = spec.get("optimizer", "sgd")
        self.stepper = _Stepper("adam", float(spec.get("lr", 0.01)), len(theta)) if self.optimizer == "adam" else None
        z = self.data_batch()
        zt, lq = self.noise_batch(self.config.batch_noise)
        self.state = meco_init(model, theta, q, z, zt, log_q_noise=lq, config=self.config)
        self._sync()

    def _sync(self):
        self.log_u = self.state.log_u
        self.clip_events = self.state.clip_events
        self.grad_norm = float(np.linalg.norm(self.state.v))

    def step(self):
        z = self.data_batch()
        zt, lq = self.noise_batch(self.config.batch_noise)
        if self.stepper is None:
            self.theta, self.state = meco_step(self.state, self.model, self.theta, self.q, z, zt, self.config, lq)
        else:
            _, gamma, beta = self.config.rates(self.state.t)
            self.state = meco_update(self.state, self.model, self.theta, self.q, z, zt, gamma, beta,
                                     self.config.u_min_log, lq)
            self.theta = self.theta.with_values(self.stepper(self.theta.values, self.state.v))
        _check_finite(self.theta.values)
        self._sync()

    def loss_proxy(self):
        """``-mean log p0(data batch) + log u``: the MLE objective with ``u`` in place of ``Z``."""
        return float(-np.mean(self.model.log_unnorm(self._last_data, self.theta)) + self.state.log_u)


class NceTrainer(Trainer):
    def __init__(self, model, theta, data, q, spec, rng, exponential=False):
        super().__init__(model, theta, data, q, spec, rng)
        self.exponential = exponential
        self.tau = NceParams(theta, float(spec.get("alpha_init", 0.0)))
        self.noise_ratio = int(spec.get("noise_ratio", 1))
        self.stepper = _Stepper(spec.get("optimizer", "sgd"), float(spec.get("lr", 0.1)), len(theta) + 1)
        self._loss = math.nan

    @property
    def alpha(self):
        return self.tau.alpha

    def step(self):
        z = self.data_batch()
        zt, lq = self.noise_batch(self.noise_ratio * self.batch_data)
        if self.exponential:
            loss, grad = ence_loss_and_grad(self.model, self.tau, self.q, z, zt, log_q_noise=lq, stats=self.stats)
            self.clip_events = self.stats.get("clip_events", 0)
        else:
            loss, grad = nce_loss_and_grad(self.model, self.tau, self.q, z, zt, log_q_noise=lq)
        g = grad.flat()
        _check_finite(g, "gradient")
        flat = self.stepper(self.tau.flat(), g)
        _check_finite(flat)
        self.tau = self.tau.with_flat(flat)
        self.theta = self.tau.theta
        self.grad_norm = float(np.linalg.norm(g))
        self._loss = loss

    def loss_proxy(self):
        return self._loss


class ChainTrainer(Trainer):
    """Contrastive divergence (chains from data) or persistent MCMC-MLE."""

    def __init__(self, model, theta, data, q, spec, rng, persistent=False):
        super().__init__(model, theta, data, q, spec, rng)
        self.sampler = LangevinConfig(int(spec.get("langevin_steps", 20)), float(spec.get("langevin_step_size", 0.01)))
        self.persistent = persistent
        self.pool = (
            PersistentPool.for_batch(model.dim, self.batch_data, rng, float(spec.get("init_std", 4.0)))
            if persistent
            else None
        )
        self.stepper = _Stepper(spec.get("optimizer", "sgd"), float(spec.get("lr", 0.01)), len(theta))
        self._gap = math.nan

    def step(self):
        z = self.data_batch()
        if self.persistent:
            grad = mcmc_mle_grad(self.model, self.theta, z, self.sampler, self.pool, self.rng, stats=self.stats)
        else:
            grad = cd_grad(self.model, self.theta, z, self.sampler.steps, self.sampler.step_size, self.rng,
                           stats=self.stats)
        _check_finite(grad, "gradient")
        self.theta = self.theta.with_values(self.stepper(self.theta.values, grad))
        _check_finite(self.theta.values)
        self.grad_norm = float(np.linalg.norm(grad))
        self.clip_events = self.stats.get("divergences", 0)


class ScoreMatchingTrainer(Trainer):
    def __init__(self, model, theta, data, q, spec, rng):
        super().__init__(model, theta, data, q, spec, rng)
        self.stepper = _Stepper(spec.get("optimizer", "sgd"), float(spec.get("lr", 0.01)), len(theta))
        self._loss = math.nan

    def step(self):
        z = self.data_batch()
        loss, grad = score_matching_loss_and_grad(self.model, self.theta, z)
        _check_finite(grad, "gradient")
        self.theta = self.theta.with_values(self.stepper(self.theta.values, grad))
        _check_finite(self.theta.values)
        self.grad_norm = float(np.linalg.norm(grad))
        self._loss = loss

    def loss_proxy(self):
        return self._loss


class MleClosedForm(Trainer):
    """Running sample mean of the training points seen so far (Gaussian mean model only)."""

    def __init__(self, model, theta, data, q, spec, rng):
        super().__init__(model, theta, data, q, spec, rng)
        self.batch_data = int(spec.get("batch_data", 1))
        self._sum = 0.0
        self._count = 0

    def step(self):
        n = self.data.shape[0]
        if self._count < n:
            take = self.data[self._count : self._count + self.batch_data, 0]
            self._sum += float(np.sum(take))
            self._count += take.size
            self.theta = self.theta.with_values([self._sum / self._count])


def make_trainer(spec: dict, model, theta, data, q, rng) -> Trainer:
    method = spec["method"]
    if method == "meco":
        return MecoTrainer(model, theta, data, q, spec, rng)
    if method in ("nce", "ence"):
        return NceTrainer(model, theta, data, q, spec, rng, exponential=method == "ence")
    if method in ("cd", "mcmc"):
        return ChainTrainer(model, theta, data, q, spec, rng, persistent=method == "mcmc")
    if method == "score_matching":
        return ScoreMatchingTrainer(model, theta, data, q, spec, rng)
    if method == "mle_closed_form":
        return MleClosedForm(model, theta, data, q, spec, rng)
    raise ValueError(f"unknown method {method!r}")
