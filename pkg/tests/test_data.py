import math

import numpy as np
import pytest
from scipy.cluster.vq import kmeans2

from meco.data import BOUNDING_BOX, DATASETS_2D, DatasetSpec, generate, read_points_csv, write_points_csv


def test_gaussian1d_moments():
    x = generate(DatasetSpec("gaussian1d", 100_000, seed=0, params={"theta_star": 16.0}))
    assert x.shape == (100_000, 1)
    assert 15.99 <= x.mean() <= 16.01
    assert 0.99 <= x.var() <= 1.01


def test_eight_gaussians_modes():
    pts = generate(DatasetSpec("8gaussians", 8000, seed=1))
    centers, _ = kmeans2(pts, 8, minit="++", seed=0, iter=50)
    ang = np.arange(8) * math.pi / 4
    vertices = 2.0 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    dist = np.linalg.norm(centers[:, None, :] - vertices[None, :, :], axis=2)
    # each vertex claimed by exactly one center, all within 0.3
    assert sorted(dist.argmin(axis=1).tolist()) == list(range(8))
    assert dist.min(axis=1).max() < 0.3


@pytest.mark.parametrize("name", DATASETS_2D)
def test_box_and_center(name):
    pts = generate(DatasetSpec(name, 10_000, seed=2))
    assert pts.shape == (10_000, 2)
    lo, hi = BOUNDING_BOX
    assert pts.min() >= lo and pts.max() <= hi
    assert np.all(np.abs(pts.mean(axis=0)) < 0.1)


@pytest.mark.parametrize("name", DATASETS_2D + ("gaussian1d",))
def test_deterministic(name):
    a = generate(DatasetSpec(name, 500, seed=5))
    b = generate(DatasetSpec(name, 500, seed=5))
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, generate(DatasetSpec(name, 500, seed=6)))


@pytest.mark.parametrize("n", [1000, 1001])
def test_circles_balance(n):
    pts = generate(DatasetSpec("circles", n, seed=3, params={"noise": 0.0}))
    r = np.linalg.norm(pts, axis=1)
    outer = int(np.sum(np.isclose(r, 3.0)))
    inner = int(np.sum(np.isclose(r, 1.5)))
    assert outer + inner == n
    assert abs(outer - n / 2) <= 1 and abs(inner - n / 2) <= 1


@pytest.mark.parametrize("n", [1000, 1001])
def test_moons_balance(n):
    pts = generate(DatasetSpec("moons", n, seed=4, params={"noise": 0.0}))
    u = (pts - np.array([-1.0, -0.5])) / 2.0
    on_outer = np.isclose(u[:, 0] ** 2 + u[:, 1] ** 2, 1.0) & (u[:, 1] >= -1e-12)
    on_inner = np.isclose((1 - u[:, 0]) ** 2 + (0.5 - u[:, 1]) ** 2, 1.0) & (u[:, 1] <= 0.5 + 1e-12)
    assert np.all(on_outer | on_inner)
    outer = int(on_outer.sum())
    assert abs(outer - n / 2) <= 1 and abs((n - outer) - n / 2) <= 1


def test_unknown_name_and_bad_n():
    with pytest.raises(ValueError):
        DatasetSpec("pinwheel")
    with pytest.raises(ValueError):
        DatasetSpec("moons", 0)


def test_csv_roundtrip(tmp_path):
    pts = generate(DatasetSpec("swissroll", 50, seed=1))
    path = tmp_path / "pts.csv"
    write_points_csv(path, pts)
    assert path.read_text().splitlines()[0] == "x,y"
    np.testing.assert_array_equal(read_points_csv(path), pts)
