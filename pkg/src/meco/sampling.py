"""Unadjusted Langevin dynamics on ``log p0``.

One step is ``x <- x + (eps/2) grad_x log p0(x) + noise_scale * sqrt(eps) * N(0, I)``.
There is no Metropolis correction, so the chain targets ``p0`` only up to
a discretization bias of order ``eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["LangevinConfig", "DivergenceError", "langevin_chain", "DIVERGENCE_NORM"]

DIVERGENCE_NORM = 1e6


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"Langevin chain became non-finite at step {step}")


@dataclass(frozen=True)
class LangevinConfig:
    steps: int = 100
    step_size: float = 0.01
    noise_scale: float = 1.0
    clamp_box: tuple[float, float] | None = None

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be non-negative, got {self.steps}")
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")


def langevin_chain(model, theta, x0, config: LangevinConfig, rng, reset_to=None, stats: dict | None = None):
    """Run ``config.steps`` Langevin updates from ``x0`` and return the final batch.

    Without ``reset_to`` a non-finite state raises :class:`DivergenceError`.
    With ``reset_to`` (an array shaped like ``x0``) any chain that becomes
    non-finite or leaves the ball of radius ``DIVERGENCE_NORM`` is put back
    at its row of ``reset_to``; each such event adds one to
    ``stats["divergences"]``.

    ``noise_scale=0`` turns off the injected noise, which is only useful for
    deterministic tests.
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    if x.ndim == 1:
        x = x.reshape(-1, model.dim)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial chain state is not finite")
    eps = float(config.step_size)
    sigma = config.noise_scale * math.sqrt(eps)
    for step in range(1, config.steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            x = x + 0.5 * eps * model.grad_x(x, theta)
        if sigma > 0:
            x = x + sigma * rng.normal(size=x.shape)
        if config.clamp_box is not None:
            np.clip(x, config.clamp_box[0], config.clamp_box[1], out=x)
        if reset_to is None:
            if not np.all(np.isfinite(x)):
                raise DivergenceError(step)
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                bad = ~np.all(np.isfinite(x), axis=1) | (np.linalg.norm(x, axis=1) > DIVERGENCE_NORM)
            if bad.any():
                x[bad] = np.asarray(reset_to, dtype=np.float64).reshape(x.shape)[bad]
                if stats is not None:
                    stats["divergences"] = stats.get("divergences", 0) + int(bad.sum())
    return x
