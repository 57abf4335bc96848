"""Experiment runners.  Each returns its records and writes outputs under ``config.output_dir``."""

from __future__ import annotations

import math
import time
import zlib
from pathlib import Path

import numpy as np

from ..data import BOUNDING_BOX, DatasetSpec, generate, write_points_csv
from ..metrics import MmdConfig, frechet2, median_bandwidth, mmd2, mse_theta, summarize
from ..models import GaussianMeanModel, MlpEnergyModel, log_partition_gaussian, mle_gap_gaussian, save_checkpoint
from ..noise import ExactGaussianModelNoise, FittedGaussian, fit_gaussian, noise_from_config, variance_diagnostic
from ..numerics import RngStream
from ..sampling import LangevinConfig, langevin_chain
from .config import ExperimentConfig
from .records import RunRecord, check_output_dir, write_csv, write_summary
from .trainers import TrainingDiverged, make_trainer

__all__ = [
    "run_gaussian1d",
    "run_landscape",
    "run_variance",
    "run_density2d",
    "nce_landscape_values",
    "stream_id",
    "RUNNERS",
]

TRAIN_STREAM, HELDOUT_STREAM, REFERENCE_STREAM = 0, 1, 2


def stream_id(label: str) -> int:
    """Stable stream id for a named cell; ids below 16 are reserved for data."""
    return 16 + zlib.crc32(label.encode("utf-8"))


def _prepare(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    check_output_dir(out, config.hash)
    return out


def _aggregate(records, metric_key):
    """Per-method mean/std over seeds that finished, with failures listed."""
    by_method: dict[str, list] = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r.summary)
    out = {}
    for method, rows in by_method.items():
        ok = [s[metric_key] for s in rows if s.get("status") == "ok" and s.get(metric_key) is not None]
        out[method] = {
            "mean": float(np.mean(ok)) if ok else None,
            "std": float(np.std(ok)) if ok else None,
            "n_effective": len(ok),
            "failed_seeds": [s["seed"] for s in rows if s.get("status") != "ok"],
        }
    return out


def _train_loop(trainer, record: RunRecord, budget: dict, log_every, metric_fn):
    """Run up to ``budget["max_steps"]`` steps, checking the time budget before every step.

    ``budget["clock"]`` picks what ``wall_secs`` measures: ``"wall"`` (default)
    or ``"cpu"``, the process CPU time, which stays fair when other work
    shares the machine.
    """
    max_steps, wall_secs = budget["max_steps"], budget.get("wall_secs")
    clock = time.process_time if budget.get("clock", "wall") == "cpu" else time.perf_counter
    t0 = time.perf_counter()
    c0 = clock()
    record.log(0, metric_fn(trainer), trainer.grad_norm, trainer.log_u, trainer.clip_events, 0.0)
    step = 0
    for step in range(1, int(max_steps) + 1):
        if wall_secs is not None and clock() - c0 >= wall_secs:
            step -= 1
            break
        trainer.step()
        if step % log_every == 0 or step == max_steps:
            ms = 1e3 * (time.perf_counter() - t0)
            record.log(step, metric_fn(trainer), trainer.grad_norm, trainer.log_u, trainer.clip_events, ms)
    if record.rows[-1][0] != step:
        ms = 1e3 * (time.perf_counter() - t0)
        record.log(step, metric_fn(trainer), trainer.grad_norm, trainer.log_u, trainer.clip_events, ms)
    return step


# ---------------------------------------------------------------------------
# 1-D Gaussian mean estimation race


def run_gaussian1d(config: ExperimentConfig, write: bool = True) -> list[RunRecord]:
    s = config.settings
    out = _prepare(config) if write else None
    theta_star = float(s["dataset"].get("params", {}).get("theta_star", 16.0))
    model = GaussianMeanModel()
    budget = config.budget
    records = []
    for seed in config.seeds:
        ds = s["dataset"]
        data = generate(DatasetSpec("gaussian1d", int(ds.get("n", 10_000)), seed, ds.get("params", {}), TRAIN_STREAM))
        for spec in config.methods:
            name = spec["name"]
            rng = RngStream(seed, stream_id(name))
            q = noise_from_config(spec.get("noise", s["noise"]), data)
            theta0 = model.params(float(s.get("theta_init", 0.0)))
            trainer = make_trainer(spec, model, theta0, data, q, rng)
            rec = RunRecord(f"{name}_s{seed}", name, seed, config.hash, "mse")
            metric = lambda tr: mse_theta(tr.theta.values, [theta_star])  # noqa: E731
            try:
                _train_loop(trainer, rec, budget, int(s.get("log_every", 1)), metric)
                rec.finalize(theta=float(trainer.theta.values[0]))
            except TrainingDiverged as exc:
                rec.finalize(status="failed", error=str(exc))
            records.append(rec)
            if write:
                rec.write(out)
    if write:
        write_summary(out, config.to_dict(), config.hash, {
            "cells": [r.summary for r in records],
            "methods": _aggregate(records, "final_mse"),
        })
    return records


# ---------------------------------------------------------------------------
# loss landscape


def _tau_alpha(theta):
    """``alpha`` of ``tau(theta)``: the exact log-partition, so ``p0 exp(-alpha)`` is normalized."""
    return 0.5 * theta * theta + 0.5 * math.log(2.0 * math.pi)


def nce_landscape_values(thetas, data, noise, theta_q=0.0):
    """Per-sample NCE and eNCE loss terms at ``tau(theta)`` for each ``theta``.

    Returns arrays of shape ``(len(thetas), n)``: for NCE the per-pair term
    ``softplus(-G(x_i)) + softplus(G(y_i))`` and for eNCE
    ``exp(-G(x_i)/2) + exp(G(y_i)/2)``, with ``G`` the log-ratio of the
    normalized model ``N(theta, 1)`` to the noise ``N(theta_q, 1)``.
    """
    x = np.asarray(data, dtype=np.float64).reshape(-1)
    y = np.asarray(noise, dtype=np.float64).reshape(-1)
    nce, ence = [], []
    for theta in np.atleast_1d(thetas):
        # log N(x; theta, 1) - log N(x; theta_q, 1)
        gx = (theta - theta_q) * x - 0.5 * (theta * theta - theta_q * theta_q)
        gy = (theta - theta_q) * y - 0.5 * (theta * theta - theta_q * theta_q)
        nce.append(np.logaddexp(0.0, -gx) + np.logaddexp(0.0, gy))
        ence.append(np.exp(np.clip(-0.5 * gx, -700, 700)) + np.exp(np.clip(0.5 * gy, -700, 700)))
    return np.array(nce), np.array(ence)


def run_landscape(config: ExperimentConfig, write: bool = True) -> list[dict]:
    """Grid of the MLE objective and Monte-Carlo NCE / eNCE losses along ``tau(theta)``."""
    s = config.settings
    g = s["theta_grid"]
    points = int(g["points"])
    thetas = np.array([float(g["lo"])]) if points == 1 else np.linspace(float(g["lo"]), float(g["hi"]), points)
    theta_star, theta_q = float(s["theta_star"]), float(s["theta_q"])
    n_mc = int(s["n_mc"])
    seed = config.seeds[0]
    rng = RngStream(seed, stream_id("landscape"))
    x = theta_star + rng.normal(size=n_mc)
    y = theta_q + rng.normal(size=n_mc)
    # population MLE objective: E[-theta x + x^2/2] + log Z(theta) with x ~ N(theta_star, 1)
    const = 0.5 * (theta_star**2 + 1.0)
    rows = []
    for theta in thetas:
        nce_terms, ence_terms = nce_landscape_values([theta], x, y, theta_q)
        mle = -theta * theta_star + const + log_partition_gaussian(theta)
        rows.append({
            "theta": float(theta),
            "mle": float(mle),
            "mle_gap": mle_gap_gaussian(theta, theta_star),
            "nce": float(np.mean(nce_terms)),
            "nce_se": float(np.std(nce_terms, ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else math.nan,
            "ence": float(np.mean(ence_terms)),
            "ence_se": float(np.std(ence_terms, ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else math.nan,
        })
    if write:
        out = _prepare(config)
        cols = ["theta", "mle", "mle_gap", "nce", "nce_se", "ence", "ence_se"]
        write_csv(out / "grid_landscape.csv", cols + ["config_hash"], [[r[c] for c in cols] + [config.hash] for r in rows])
        write_summary(out, config.to_dict(), config.hash, {"rows": len(rows)})
    return rows


# ---------------------------------------------------------------------------
# noise variance diagnostics


def _steps_to_target(q, theta_star, conv, seed, label):
    """MECO steps until ``(theta - theta_star)^2 <= target``; ``max_steps + 1`` if never reached."""
    model = GaussianMeanModel()
    data = generate(DatasetSpec("gaussian1d", int(conv["n_train"]), seed, {"theta_star": theta_star}, TRAIN_STREAM))
    rng = RngStream(seed, stream_id(label))
    spec = {"method": "meco", "gamma": conv["gamma"], "beta": conv["beta"], "lr": conv["lr"],
            "batch_data": conv["batch_data"], "batch_noise": conv["batch_noise"]}
    moving = isinstance(q, ExactGaussianModelNoise)
    theta0 = model.params(float(conv["theta_init"]))
    trainer = make_trainer(spec, model, theta0, data, ExactGaussianModelNoise(theta0.values[0]) if moving else q, rng)
    target = float(conv["target_mse"])
    for step in range(1, int(conv["max_steps"]) + 1):
        if moving:
            trainer.q = ExactGaussianModelNoise(trainer.theta.values[0])
        try:
            trainer.step()
        except TrainingDiverged:
            return int(conv["max_steps"]) + 1
        if (trainer.theta.values[0] - theta_star) ** 2 <= target:
            return step
    return int(conv["max_steps"]) + 1


def run_variance(config: ExperimentConfig, write: bool = True, convergence: bool = True) -> dict:
    """Ratio-variance diagnostics for the exact and mean-shifted noise, plus MECO steps-to-target."""
    s = config.settings
    model = GaussianMeanModel()
    theta = float(s["theta"])
    params = model.params(theta)
    n_mc = int(s["n_mc"])
    seed = config.seeds[0]
    theta_star = float(s["theta_star"])
    data = generate(DatasetSpec("gaussian1d", n_mc, seed, {"theta_star": theta}, TRAIN_STREAM))
    cases = [("exact", None)] + [(f"offset_{d:g}", float(d)) for d in s["offsets"]]
    rows = []
    for label, delta in cases:
        q = ExactGaussianModelNoise(theta) if delta is None else FittedGaussian([theta + delta], [[1.0]])
        rep = variance_diagnostic(model, params, q, n_mc, RngStream(seed, stream_id(f"variance:{label}")), data=data)
        row = {"noise": label, "delta": delta, "sigma_g2": rep.sigma_g2, "zeta_g2": rep.zeta_g2,
               "zeta_h2": rep.zeta_h2, "overflow": rep.overflow}
        if convergence:
            qc = ExactGaussianModelNoise(theta_star) if delta is None else FittedGaussian([theta_star + delta], [[1.0]])
            row["steps_to_target"] = [
                _steps_to_target(qc, theta_star, s["convergence"], sd, f"variance-run:{label}") for sd in config.seeds
            ]
        rows.append(row)
    report = {"theta": theta, "n_mc": n_mc, "cases": rows}
    if write:
        out = _prepare(config)
        cols = ["noise", "delta", "sigma_g2", "zeta_g2", "zeta_h2", "overflow"]
        write_csv(out / "variance.csv", cols + ["config_hash"], [[r[c] for c in cols] + [config.hash] for r in rows])
        write_summary(out, config.to_dict(), config.hash, report)
    return report


# ---------------------------------------------------------------------------
# 2D density estimation


def reference_bandwidth(dataset: dict, points: int) -> float:
    """MMD bandwidth for a dataset: median heuristic on a fixed reference draw shared by all runs."""
    ref = generate(DatasetSpec(dataset["name"], points, 0, dataset.get("params", {}), REFERENCE_STREAM))
    return median_bandwidth(ref)


def generate_samples(model, theta, n, init: FittedGaussian, ev: dict, rng):
    """Langevin samples from the model, started from the broad Gaussian ``init``."""
    clamp = float(ev.get("clamp", 6.0))
    cfg = LangevinConfig(int(ev["langevin_steps"]), float(ev["langevin_step_size"]), clamp_box=(-clamp, clamp))
    x0 = init.sample(rng, n)
    return langevin_chain(model, theta, x0, cfg, rng, reset_to=x0)


def density_grid(model, theta, size: int, box=BOUNDING_BOX):
    axis = np.linspace(box[0], box[1], size)
    gx, gy = np.meshgrid(axis, axis, indexing="xy")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    vals = np.concatenate([model.log_unnorm(pts[i : i + 4000], theta) for i in range(0, pts.shape[0], 4000)])
    return pts, vals


def evaluate_density(model, theta, heldout, init, ev, rng, bandwidth):
    samples = generate_samples(model, theta, int(ev["n_eval"]), init, ev, rng)
    mmd = mmd2(samples, heldout, MmdConfig(bandwidth=bandwidth))
    fd = frechet2(summarize(samples), summarize(heldout))
    return samples, mmd, fd


def run_density2d(config: ExperimentConfig, write: bool = True) -> list[RunRecord]:
    s = config.settings
    out = _prepare(config) if write else None
    ds, ev = s["dataset"], s["eval"]
    mcfg = s.get("model", {})
    model = MlpEnergyModel(2, tuple(mcfg.get("hidden", (300, 300, 300))), mcfg.get("activation", "swish"))
    bandwidth = reference_bandwidth(ds, int(ev.get("bandwidth_points", 1000)))
    budget = config.budget
    records = []
    for seed in config.seeds:
        train = generate(DatasetSpec(ds["name"], int(ds.get("n", 10_000)), seed, ds.get("params", {}), TRAIN_STREAM))
        heldout = generate(DatasetSpec(ds["name"], int(ev["n_eval"]), seed, ds.get("params", {}), HELDOUT_STREAM))
        init_dist = fit_gaussian(train)
        theta0 = model.init_params(RngStream(seed, stream_id("init")))
        for spec in config.methods:
            name = spec["name"]
            cell = f"{ds['name']}_{name}_s{seed}"
            rng = RngStream(seed, stream_id(name))
            q = noise_from_config(spec.get("noise", s["noise"]), train)
            rec = RunRecord(cell, name, seed, config.hash, "loss")
            trainer = make_trainer(spec, model, theta0, train, q, rng)
            try:
                _train_loop(trainer, rec, budget, int(s.get("log_every", 50)),
                            lambda tr: tr.loss_proxy())
                samples, mmd, fd = evaluate_density(model, trainer.theta, heldout, init_dist, ev,
                                                    RngStream(seed, stream_id(f"eval:{name}")), bandwidth)
                rec.finalize(mmd=mmd, frechet=fd, bandwidth=bandwidth, dataset=ds["name"])
            except (TrainingDiverged, FloatingPointError) as exc:
                if not rec.rows:
                    rec.log(0, math.nan)
                rec.finalize(status="failed", error=str(exc), dataset=ds["name"])
                samples = None
            records.append(rec)
            if write:
                rec.write(out)
                if samples is not None:
                    write_points_csv(out / f"samples_{cell}.csv", samples)
                    pts, vals = density_grid(model, trainer.theta, int(ev.get("grid", 200)))
                    write_csv(out / f"grid_{cell}.csv", ["x", "y", "f0", "config_hash"],
                              [(p[0], p[1], v, config.hash) for p, v in zip(pts, vals)])
                    save_checkpoint(out / f"params_{cell}.bin", trainer.theta, {"cell": cell, "config_hash": config.hash})
    if write:
        write_summary(out, config.to_dict(), config.hash, {
            "cells": [r.summary for r in records],
            "methods_mmd": _aggregate(records, "mmd"),
            "methods_frechet": _aggregate(records, "frechet"),
        })
    return records


RUNNERS = {
    "gaussian1d": run_gaussian1d,
    "landscape": run_landscape,
    "variance": run_variance,
    "density2d": run_density2d,
}
