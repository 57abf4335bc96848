"""Unnormalized models ``p0(x; theta) = exp(f0(x; theta))``.

Two concrete models are provided: the one-dimensional Gaussian mean family
``f0(x; theta) = theta * x - x**2 / 2`` and a fully connected MLP energy.
Model energies are written with the polymorphic primitives of
:mod:`meco.autodiff`, so the same function gives plain values on arrays and a
differentiable graph on tape nodes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad

__all__ = [
    "ParamVector",
    "UnnormalizedModel",
    "GaussianMeanModel",
    "MlpEnergyModel",
    "log_partition_gaussian",
    "mle_gap_gaussian",
    "mlp_energy",
    "save_checkpoint",
    "load_checkpoint",
]

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class ParamVector:
    """Flat float64 parameter vector with a named-slice layout.

    ``layout`` maps each block name to ``(offset, shape)``; the blocks tile
    ``values`` exactly once, in order, with no gaps.
    """

    values: np.ndarray
    layout: dict[str, tuple[int, tuple[int, ...]]] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        if not self.layout:
            self.layout = {"theta": (0, (self.values.size,))}
        pos = 0
        for name, (offset, shape) in self.layout.items():
            if offset != pos:
                raise ValueError(f"layout block {name!r} starts at {offset}, expected {pos}")
            pos += int(np.prod(shape, dtype=np.int64))
        if pos != self.values.size:
            raise ValueError(f"layout covers {pos} entries but values has {self.values.size}")

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ParamVector":
        layout = {}
        offset = 0
        flat = []
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            layout[name] = (offset, tuple(arr.shape))
            offset += arr.size
            flat.append(arr.reshape(-1))
        values = np.concatenate(flat) if flat else np.zeros(0)
        return cls(values, layout)

    def __len__(self):
        return self.values.size

    def view(self, name: str) -> np.ndarray:
        offset, shape = self.layout[name]
        size = int(np.prod(shape, dtype=np.int64))
        return self.values[offset : offset + size].reshape(shape)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: self.view(name) for name in self.layout}

    def with_values(self, values) -> "ParamVector":
        return ParamVector(np.array(values, dtype=np.float64), dict(self.layout))

    def copy(self) -> "ParamVector":
        return self.with_values(self.values.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


def save_checkpoint(path, params: ParamVector, meta: dict | None = None) -> None:
    """Write ``params`` as one JSON header line followed by raw ``<f8`` data."""
    header = {
        "format": "meco-params",
        "version": 1,
        "dtype": "<f8",
        "n_values": int(params.values.size),
        "layout": [
            {"name": name, "offset": int(offset), "shape": list(shape)}
            for name, (offset, shape) in params.layout.items()
        ],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(blob + b"\n")
        fh.write(params.values.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamVector, dict]:
    raw = Path(path).read_bytes()
    newline = raw.index(b"\n")
    header = json.loads(raw[:newline].decode("utf-8"))
    if header.get("format") != "meco-params":
        raise ValueError(f"{path}: not a parameter checkpoint")
    values = np.frombuffer(raw[newline + 1 :], dtype="<f8").astype(np.float64)
    if values.size != header["n_values"]:
        raise ValueError(f"{path}: expected {header['n_values']} values, found {values.size}")
    layout = {b["name"]: (b["offset"], tuple(b["shape"])) for b in header["layout"]}
    return ParamVector(values, layout), header.get("meta", {})


class UnnormalizedModel:
    """Base class for ``p0(x; theta) = exp(energy(x, theta))``.

    Subclasses implement :meth:`energy`, which maps a batch ``x`` of shape
    ``(n, dim)`` and a dict of parameter blocks to the ``(n,)`` log
    unnormalized densities.  It must use :mod:`meco.autodiff` primitives so it
    works on both arrays and tape nodes.  The gradient helpers below are
    derived from it by reverse-mode differentiation; subclasses may override
    them with closed forms.
    """

    dim: int

    def energy(self, x, params: dict):
        raise NotImplementedError

    def layout(self) -> dict[str, tuple[int, tuple[int, ...]]]:
        raise NotImplementedError

    def _check_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(1, -1) if x.size == self.dim else x.reshape(-1, self.dim)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got array of shape {x.shape}")
        return x

    def _check_theta(self, theta: ParamVector):
        if theta.layout != self.layout():
            raise ValueError("parameter layout does not match the model")

    def log_unnorm(self, x, theta: ParamVector) -> np.ndarray:
        """``log p0(x; theta)`` for each row of ``x``."""
        self._check_theta(theta)
        return np.asarray(self.energy(self._check_batch(x), theta.arrays()), dtype=np.float64)

    def weighted_grad_theta(self, x, weights, theta: ParamVector) -> np.ndarray:
        """``sum_i weights[i] * grad_theta log p0(x_i; theta)`` as a flat array."""
        self._check_theta(theta)
        x = self._check_batch(x)
        tape = ad.Tape()
        names = list(theta.layout)
        nodes = [tape.variable(theta.view(n), name=n) for n in names]
        f = self.energy(x, dict(zip(names, nodes)))
        total = ad.sum(ad.mul(f, np.asarray(weights, dtype=np.float64)))
        grads = ad.grad(total, nodes)
        return np.concatenate([g.reshape(-1) for g in grads])

    def grad_theta(self, x, theta: ParamVector) -> ParamVector:
        """``grad_theta log p0(x; theta)`` for a single point."""
        x = self._check_batch(x)
        if x.shape[0] != 1:
            raise ValueError("grad_theta takes a single point; use weighted_grad_theta for batches")
        return theta.with_values(self.weighted_grad_theta(x, np.ones(1), theta))

    def per_sample_grad_theta(self, x, theta: ParamVector) -> np.ndarray:
        """Row ``i`` is ``grad_theta log p0(x_i; theta)``; shape ``(n, len(theta))``."""
        x = self._check_batch(x)
        return np.stack([self.weighted_grad_theta(x[i : i + 1], np.ones(1), theta) for i in range(x.shape[0])])

    def grad_x(self, x, theta: ParamVector) -> np.ndarray:
        """``grad_x log p0(x; theta)`` for each row, shape ``(n, dim)``."""
        self._check_theta(theta)
        x = self._check_batch(x)
        tape = ad.Tape()
        xn = tape.variable(x)
        f = self.energy(xn, theta.arrays())
        return ad.grad(ad.sum(f), [xn])[0]


def log_partition_gaussian(theta: float) -> float:
    """``log of integral exp(theta*x - x**2/2) dx = log sqrt(2 pi) + theta**2 / 2``."""
    return HALF_LOG_2PI + 0.5 * float(theta) ** 2


def mle_gap_gaussian(theta: float, theta_star: float) -> float:
    """Population ``L(theta) - L(theta_star)`` for unit-variance data with mean ``theta_star``.

    ``L(theta) = E[-theta x + x^2/2] + log Z(theta)`` with ``E[x] = theta_star``.
    """
    theta, theta_star = float(theta), float(theta_star)
    cross = -(theta - theta_star) * theta_star
    return cross + log_partition_gaussian(theta) - log_partition_gaussian(theta_star)


class GaussianMeanModel(UnnormalizedModel):
    """``p0(x; theta) = exp(theta * x - x**2 / 2)``: unit-variance Gaussian with mean ``theta``."""

    dim = 1

    def layout(self):
        return {"theta": (0, (1,))}

    def params(self, theta: float) -> ParamVector:
        return ParamVector(np.array([float(theta)]), self.layout())

    def energy(self, x, params):
        xs = ad.column(x, 0)
        return ad.sub(ad.mul(xs, params["theta"]), ad.mul(ad.mul(xs, xs), 0.5))

    def log_partition(self, theta: ParamVector) -> float:
        return log_partition_gaussian(theta.values[0])

    def log_density(self, x, theta: ParamVector) -> np.ndarray:
        """Exact normalized log-density ``log p(x; theta)``."""
        return self.log_unnorm(x, theta) - self.log_partition(theta)

    def sample(self, theta: ParamVector, rng, count: int) -> np.ndarray:
        return theta.values[0] + rng.normal(size=(count, 1))

    # closed forms, cheaper than the tape for the 1-d experiments
    def weighted_grad_theta(self, x, weights, theta):
        x = self._check_batch(x)
        return np.array([float(np.dot(np.asarray(weights, dtype=np.float64), x[:, 0]))])

    def per_sample_grad_theta(self, x, theta):
        return self._check_batch(x)[:, :1].copy()

    def grad_x(self, x, theta):
        x = self._check_batch(x)
        return theta.values[0] - x


def mlp_energy(x, params, activation=ad.swish):
    """Forward pass ``f0(x)`` of the MLP, one value per row of ``x``.

    ``params`` is a :class:`ParamVector` or a dict holding ``W0, b0, ..., Wk, bk``.
    """
    if isinstance(params, ParamVector):
        params = params.arrays()
    n_layers = sum(1 for k in params if k.startswith("W"))
    h = x
    for i in range(n_layers - 1):
        h = activation(ad.add(ad.matmul(h, params[f"W{i}"]), params[f"b{i}"]))
    last = n_layers - 1
    out = ad.add(ad.matmul(h, params[f"W{last}"]), params[f"b{last}"])
    return ad.column(out, 0)


_ACTIVATIONS = {"swish": ad.swish, "softplus": ad.softplus, "tanh": ad.tanh}


class MlpEnergyModel(UnnormalizedModel):
    """``f0(x; theta)`` given by an MLP with smooth activations and a scalar output.

    The default is 3 hidden layers of width 300 with swish activations.
    """

    def __init__(self, dim: int = 2, hidden: tuple[int, ...] = (300, 300, 300), activation: str = "swish"):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; choose from {sorted(_ACTIVATIONS)}")
        self.dim = int(dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self._act = _ACTIVATIONS[activation]
        self._sizes = (self.dim, *self.hidden, 1)
        layout = {}
        offset = 0
        for i, (fan_in, fan_out) in enumerate(zip(self._sizes[:-1], self._sizes[1:])):
            layout[f"W{i}"] = (offset, (fan_in, fan_out))
            offset += fan_in * fan_out
            layout[f"b{i}"] = (offset, (fan_out,))
            offset += fan_out
        self._layout = layout

    def __repr__(self):
        return f"MlpEnergyModel(dim={self.dim}, hidden={self.hidden}, activation={self.activation!r})"

    @property
    def n_params(self) -> int:
        offset, shape = list(self._layout.values())[-1]
        return offset + int(np.prod(shape))

    def layout(self):
        return self._layout

    def init_params(self, rng) -> ParamVector:
        """Glorot-uniform weights, zero biases."""
        arrays = {}
        for i, (fan_in, fan_out) in enumerate(zip(self._sizes[:-1], self._sizes[1:])):
            a = math.sqrt(6.0 / (fan_in + fan_out))
            arrays[f"W{i}"] = rng.uniform(size=(fan_in, fan_out), low=-a, high=a)
            arrays[f"b{i}"] = np.zeros(fan_out)
        return ParamVector.from_arrays(arrays)

    def zeros(self) -> ParamVector:
        return ParamVector(np.zeros(self.n_params), dict(self._layout))

    def energy(self, x, params):
        return mlp_energy(x, params, self._act)
