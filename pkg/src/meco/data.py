"""Seeded synthetic datasets: six 2D toy densities and 1-D Gaussian samples.

The 2D generators follow the parametrizations common in EBM and flow toy
experiments, recentered so that each distribution's symmetry center is the
origin.  All of them stay inside ``BOUNDING_BOX`` with overwhelming
probability at the sample sizes used here (outputs are not clipped).

==============  ==============================================================
name            construction (u ~ U(0,1), e ~ N(0,1), applied per point)
==============  ==============================================================
2spirals        t = 3 pi sqrt(u); arm = (-t cos t + 0.5 u1, t sin t + 0.5 u2)/3,
                half the points mirrored through the origin, plus 0.1 e
8gaussians      one of 8 centers 2 (cos k pi/4, sin k pi/4), plus 0.25 e
checkerboard    x = 4 u1 - 2; y = u2 - 2 b + (floor(x) mod 2), b ~ {0,1};
                both coordinates times 2
circles         radius 3 (outer half) or 1.5 (inner half) at a uniform angle,
                plus 0.24 e
moons           outer arc (cos t, sin t), inner arc (1 - cos t, 0.5 - sin t),
                t ~ U(0, pi), plus 0.1 e, then 2 (x, y) + (-1, -0.5)
swissroll       t = 1.5 pi (1 + 2 u); (t cos t, t sin t) + e, divided by 5, minus
                its exact mean (0.4, 0.4 / (3 pi))
gaussian1d      theta_star + e, one column
==============  ==============================================================
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import RngStream

__all__ = ["DatasetSpec", "generate", "DATASETS_2D", "BOUNDING_BOX", "write_points_csv", "read_points_csv"]

DATASETS_2D = ("2spirals", "8gaussians", "checkerboard", "circles", "moons", "swissroll")
BOUNDING_BOX = (-4.5, 4.5)

_SWISSROLL_MEAN = np.array([2.0, 2.0 / (3.0 * math.pi)]) / 5.0


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    n: int = 10_000
    seed: int = 0
    params: dict = field(default_factory=dict)
    stream_id: int = 0

    def __post_init__(self):
        if self.name not in DATASETS_2D + ("gaussian1d",):
            raise ValueError(f"unknown dataset {self.name!r}")
        if self.n <= 0:
            raise ValueError("n must be positive")


def _halves(n):
    return n // 2, n - n // 2


def _two_spirals(rng, n, p):
    t = 3.0 * math.pi * np.sqrt(rng.uniform(size=n))
    arm = np.stack([-t * np.cos(t), t * np.sin(t)], axis=1) + 0.5 * rng.uniform(size=(n, 2))
    sign = np.where(np.arange(n) < n // 2, 1.0, -1.0)[:, None]
    return sign * arm / 3.0 + p.get("noise", 0.1) * rng.normal(size=(n, 2))


def _eight_gaussians(rng, n, p):
    radius = p.get("radius", 2.0)
    k = rng.integers(0, 8, size=n)
    ang = k * (math.pi / 4.0)
    centers = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return centers + p.get("std", 0.25) * rng.normal(size=(n, 2))


def _checkerboard(rng, n, p):
    x = 4.0 * rng.uniform(size=n) - 2.0
    y = rng.uniform(size=n) - 2.0 * rng.integers(0, 2, size=n)
    y = y + np.mod(np.floor(x), 2.0)
    return 2.0 * np.stack([x, y], axis=1)


def _circles(rng, n, p):
    n_out, n_in = _halves(n)
    radius = np.concatenate([np.full(n_out, p.get("radius", 3.0)), np.full(n_in, p.get("radius", 3.0) * 0.5)])
    ang = 2.0 * math.pi * rng.uniform(size=n)
    pts = radius[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return pts + p.get("noise", 0.24) * rng.normal(size=(n, 2))


def _moons(rng, n, p):
    n_out, n_in = _halves(n)
    t = math.pi * rng.uniform(size=n)
    outer = np.stack([np.cos(t[:n_out]), np.sin(t[:n_out])], axis=1)
    inner = np.stack([1.0 - np.cos(t[n_out:]), 0.5 - np.sin(t[n_out:])], axis=1)
    pts = np.vstack([outer, inner]) + p.get("noise", 0.1) * rng.normal(size=(n, 2))
    return 2.0 * pts + np.array([-1.0, -0.5])


def _swissroll(rng, n, p):
    t = 1.5 * math.pi * (1.0 + 2.0 * rng.uniform(size=n))
    pts = np.stack([t * np.cos(t), t * np.sin(t)], axis=1) + p.get("noise", 1.0) * rng.normal(size=(n, 2))
    return pts / 5.0 - _SWISSROLL_MEAN


def _gaussian1d(rng, n, p):
    return p.get("theta_star", 16.0) + p.get("std", 1.0) * rng.normal(size=(n, 1))


_GENERATORS = {
    "2spirals": _two_spirals,
    "8gaussians": _eight_gaussians,
    "checkerboard": _checkerboard,
    "circles": _circles,
    "moons": _moons,
    "swissroll": _swissroll,
    "gaussian1d": _gaussian1d,
}


def generate(spec: DatasetSpec) -> np.ndarray:
    """Draw ``spec.n`` points, shape ``(n, 2)`` (or ``(n, 1)`` for gaussian1d)."""
    rng = RngStream(spec.seed, spec.stream_id)
    return _GENERATORS[spec.name](rng, spec.n, dict(spec.params))


def write_points_csv(path, points) -> None:
    """CSV with a header row (``x,y`` in 2D, ``x`` in 1D) and full-precision values."""
    pts = np.asarray(points, dtype=np.float64)
    pts = pts.reshape(-1, 1) if pts.ndim == 1 else pts
    header = ["x", "y"] if pts.shape[1] == 2 else [f"x{i}" for i in range(pts.shape[1])] if pts.shape[1] > 2 else ["x"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([[repr(float(v)) for v in row] for row in pts])


def read_points_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
