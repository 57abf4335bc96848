"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Tolerances and budgets are pinned as module constants.  The density
benchmark takes about an hour per dataset on one core and is marked ``slow``.
"""

import math
import time

import numpy as np
import pytest

from meco.data import DatasetSpec, generate
from meco.harness.cli import main
from meco.harness.config import make_config
from meco.harness.runners import nce_landscape_values, run_density2d, run_gaussian1d, run_landscape, run_variance
from meco.harness.trainers import make_trainer
from meco.metrics import GaussianSummary, MmdConfig, frechet2, mmd2
from meco.models import GaussianMeanModel, MlpEnergyModel, log_partition_gaussian, mle_gap_gaussian
from meco.noise import FittedGaussian, fit_gaussian
from meco.numerics import RngStream
from meco.objectives import NceParams, ence_loss_and_grad, nce_loss_and_grad, score_matching_loss_and_grad
from meco.optim import meco_direction, meco_init, meco_update
from meco.sampling import LangevinConfig, langevin_chain
from tests.conftest import central_diff, record_criterion, rel_err
from tests.test_metrics import _brute_mmd, _frechet_2x2_closed_form

THETA_STAR = 16.0
GAUSS = GaussianMeanModel()

# 1: race
RACE_STEPS = 5000
RACE_SEEDS = list(range(10))
RACE_MECO_TARGET = 0.1
RACE_NCE_FLOOR = 10.0
# 2, 3: landscape
GAP_TOL = 1e-10
FLAT_NMC = 1_000_000
FLAT_SE_MULT = 3.0
# 4: variance
VAR_TOL = 1e-20
VAR_NMC = 100_000
# 5: rate
RATE_SLOPE_MAX = -0.8
RATE_T = np.unique(np.round(np.logspace(2, 4, 9)).astype(int))
RATE_SCHEDULE = {"kind": "pl", "mu": 1.0, "eta0": 1.0, "c": 100.0}
RATE_BATCH = 16
# 6: density benchmark; learning rates picked per dataset on seed 99 (not an evaluation seed)
DENSITY_DATASETS = ("8gaussians", "circles")
DENSITY_LR = {
    "8gaussians": {"meco": 0.01, "nce_sgd": 0.1, "nce_ngd": 0.01, "ence_ngd": 0.01, "cd_sgd": 0.1},
    "circles": {"meco": 0.01, "nce_sgd": 0.01, "nce_ngd": 0.001, "ence_ngd": 0.001, "cd_sgd": 0.1},
}
DENSITY_BUDGET = {"max_steps": 200_000, "wall_secs": 90.0, "clock": "cpu"}
# 7: gradients
FD_INSTANCES = 100
FD_TOL = 1e-4
# 8: contraction
CONTRACTION_THETA = 15.5
CONTRACTION_STEPS = 2000
CONTRACTION_SEEDS = 20
CONTRACTION_BATCH = 16
CONTRACTION_TOL = 0.05
# 9: metric oracles
MMD_INSTANCES = 50
MMD_TOL = 1e-12
FRECHET_TOL = 1e-10
LANGEVIN_EPS = 0.05
LANGEVIN_REL_TOL = 0.05


def test_criterion_01_gaussian_race():
    t0 = time.perf_counter()
    cfg = make_config("gaussian1d", {
        "methods": [m for m in make_config("gaussian1d").settings["methods"]
                    if m["method"] in ("meco", "nce", "ence")],
        "budget": {"max_steps": RACE_STEPS},
        "seeds": RACE_SEEDS,
        "log_every": 100,
    })
    assert cfg.budget["max_steps"] >= 2000
    records = run_gaussian1d(cfg, write=False)
    final = {(r.method, r.seed): r.summary["final_mse"] for r in records}
    assert all(r.summary["steps"] == RACE_STEPS for r in records)
    meco = np.array([final["meco", s] for s in RACE_SEEDS])
    wins = {m: int(sum(final["meco", s] < final[m, s] for s in RACE_SEEDS)) for m in ("nce_sgd", "nce_ngd", "ence_ngd")}
    nce_sgd = np.array([final["nce_sgd", s] for s in RACE_SEEDS])
    ok = (wins["nce_sgd"] >= 9 and wins["nce_ngd"] >= 7 and wins["ence_ngd"] >= 7
          and np.all(meco <= RACE_MECO_TARGET) and np.all(nce_sgd >= RACE_NCE_FLOOR))
    record_criterion(1, ok, f"wins vs {wins}; meco max mse {meco.max():.3g}, nce_sgd min mse {nce_sgd.min():.3g};"
                            f" {time.perf_counter() - t0:.0f}s")
    assert ok


def test_criterion_02_mle_gap_exact():
    grid = np.linspace(-4.0, 36.0, 400)
    err = max(abs(mle_gap_gaussian(t, THETA_STAR) - 0.5 * (t - THETA_STAR) ** 2) for t in grid)
    ok = err < GAP_TOL
    record_criterion(2, ok, f"max |gap - (theta-16)^2/2| = {err:.3g}")
    assert ok


def test_criterion_03_nce_flatness():
    t0 = time.perf_counter()
    rng = RngStream(0, 303)
    x = THETA_STAR + rng.normal(size=FLAT_NMC)
    y = rng.normal(size=FLAT_NMC)
    (n15, n16), _ = nce_landscape_values([15.0, 16.0], x, y, 0.0)
    diff = n15 - n16
    gap = float(np.mean(diff))
    se = float(np.std(diff, ddof=1) / math.sqrt(FLAT_NMC))
    dtau2 = 1.0 + (0.5 * 15.0**2 - 0.5 * 16.0**2) ** 2
    r = abs(THETA_STAR - 0.0)
    bound = r * math.exp(-r * r / 8) * dtau2
    rows = run_landscape(make_config("landscape", {"theta_grid": {"lo": 15.0, "hi": 16.0, "points": 2},
                                                   "n_mc": 1000}), write=False)
    mle_gap = rows[1]["mle"] - rows[0]["mle"]
    ok = gap <= bound + FLAT_SE_MULT * se and abs(rows[0]["mle_gap"] - 0.5) < GAP_TOL and abs(-mle_gap - 0.5) < GAP_TOL
    record_criterion(3, ok, f"NCE gap {gap:.3g} (se {se:.2g}) vs bound {bound:.3g}; MLE gap {rows[0]['mle_gap']:.12g};"
                            f" {time.perf_counter() - t0:.1f}s")
    assert ok


def test_criterion_04_exact_noise_variance():
    t0 = time.perf_counter()
    report = run_variance(make_config("variance", {"n_mc": VAR_NMC, "seeds": [0]}), write=False, convergence=False)
    exact = report["cases"][0]
    sweep = [c["sigma_g2"] for c in report["cases"][1:]]
    ok = (exact["sigma_g2"] <= VAR_TOL and exact["zeta_g2"] <= VAR_TOL
          and all(a < b for a, b in zip(sweep, sweep[1:])))
    record_criterion(4, ok, f"exact sigma^2 {exact['sigma_g2']:.3g}, zeta^2 {exact['zeta_g2']:.3g};"
                            f" offsets {[f'{v:.3g}' for v in sweep]}; {time.perf_counter() - t0:.1f}s")
    assert ok


def test_criterion_05_pl_rate():
    t0 = time.perf_counter()
    gaps = []
    for seed in range(10):
        data = generate(DatasetSpec("gaussian1d", 10_000, seed, {"theta_star": THETA_STAR}))
        xbar = float(data.mean())  # minimizer of the empirical objective
        spec = {"method": "meco", "schedule": RATE_SCHEDULE, "batch_data": RATE_BATCH, "batch_noise": RATE_BATCH}
        tr = make_trainer(spec, GAUSS, GAUSS.params(0.0), data, fit_gaussian(data), RngStream(seed, 505))
        row = []
        for t in range(1, int(RATE_T[-1]) + 1):
            tr.step()
            if t in RATE_T:
                row.append(0.5 * (tr.theta.values[0] - xbar) ** 2)
        gaps.append(row)
    med = np.median(np.array(gaps), axis=0)
    slope = float(np.polyfit(np.log(RATE_T), np.log(med), 1)[0])
    ok = slope <= RATE_SLOPE_MAX
    record_criterion(5, ok, f"log-log slope {slope:.3f} (median gap {med[0]:.2g} -> {med[-1]:.2g});"
                            f" {time.perf_counter() - t0:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_06_density_ordering(tmp_path):
    t0 = time.perf_counter()
    means = {}
    for name in DENSITY_DATASETS:
        base = make_config("density2d")
        methods = [{**m, "lr": DENSITY_LR[name][m["name"]]} for m in base.methods]
        cfg = make_config("density2d", {"dataset": {"name": name}, "methods": methods, "budget": DENSITY_BUDGET},
                          tmp_path / name)
        assert cfg.settings["seeds"] == [0, 1, 2, 3, 4] and cfg.settings["eval"]["n_eval"] == 10_000
        records = run_density2d(cfg)
        by_method = {}
        for r in records:
            if r.summary["status"] == "ok":
                by_method.setdefault(r.method, []).append(r.summary["mmd"])
        means[name] = {m: float(np.mean(v)) for m, v in by_method.items()}
        failed = [r.cell for r in records if r.summary["status"] != "ok"]
        print(name, means[name], "failed:", failed)
    # a method with no surviving seed ranks last
    baselines = [m for m in DENSITY_LR[DENSITY_DATASETS[0]] if m != "meco"]
    means = {d: {m: means[d].get(m, math.inf) for m in DENSITY_LR[d]} for d in DENSITY_DATASETS}
    best_on = [d for d in DENSITY_DATASETS if all(means[d]["meco"] <= means[d][b] for b in baselines)]
    never_worst = all(means[d]["meco"] <= max(means[d][b] for b in baselines) for d in DENSITY_DATASETS)
    ok = bool(best_on) and never_worst
    detail = "; ".join(f"{d}: " + ", ".join(f"{m} {v:.3g}" for m, v in sorted(means[d].items(), key=lambda kv: kv[1]))
                       for d in DENSITY_DATASETS)
    record_criterion(6, ok, f"{detail}; {time.perf_counter() - t0:.0f}s")
    assert ok


def _random_instance(k, max_dim=3):
    r = RngStream(k, 707)
    dim = int(r.integers(1, max_dim + 1))
    widths = tuple(int(w) for w in r.integers(2, 6, size=int(r.integers(1, 3))))
    act = ("swish", "softplus", "tanh")[int(r.integers(0, 3))]
    model = MlpEnergyModel(dim, widths, act)
    theta = model.init_params(r)
    theta = theta.with_values(theta.values + 0.1 * r.normal(size=len(theta)))
    q = FittedGaussian(np.zeros(dim), np.eye(dim) * 1.5)
    x = r.normal(size=(int(r.integers(2, 6)), dim))
    z = q.sample(r, int(r.integers(2, 6)))
    return model, theta, q, x, z, r


def test_criterion_07_gradient_integrity():
    t0 = time.perf_counter()
    worst = {"meco": 0.0, "nce": 0.0, "ence": 0.0, "score_matching": 0.0}
    for k in range(FD_INSTANCES):
        model, theta, q, x, z, r = _random_instance(k)
        log_q = q.log_density(z)
        log_u = float(r.normal())

        def meco_surrogate(v):
            # objective whose gradient is the MECO direction at fixed u
            th = theta.with_values(v)
            return float(-np.mean(model.log_unnorm(x, th))
                         + np.mean(np.exp(model.log_unnorm(z, th) - log_q - log_u)))

        log_r = model.log_unnorm(z, theta) - log_q
        g = meco_direction(model, theta, x, z, log_r, log_u)
        worst["meco"] = max(worst["meco"], rel_err(g, central_diff(meco_surrogate, theta.values)))

        tau = NceParams(theta, float(r.normal()))
        _, g = nce_loss_and_grad(model, tau, q, x, z)
        fd = central_diff(lambda v: nce_loss_and_grad(model, tau.with_flat(v), q, x, z)[0], tau.flat())
        worst["nce"] = max(worst["nce"], rel_err(g.flat(), fd))

        _, g = ence_loss_and_grad(model, tau, q, x, z)
        fd = central_diff(lambda v: ence_loss_and_grad(model, tau.with_flat(v), q, x, z)[0], tau.flat())
        worst["ence"] = max(worst["ence"], rel_err(g.flat(), fd))

        _, g = score_matching_loss_and_grad(model, theta, x)
        fd = central_diff(lambda v: score_matching_loss_and_grad(model, theta.with_values(v), x)[0], theta.values)
        worst["score_matching"] = max(worst["score_matching"], rel_err(g, fd))
    ok = all(v < FD_TOL for v in worst.values())
    record_criterion(7, ok, f"{FD_INSTANCES} instances each, worst rel err "
                            + ", ".join(f"{k} {v:.2g}" for k, v in worst.items())
                            + f"; {time.perf_counter() - t0:.0f}s")
    assert ok


def test_criterion_08_estimator_contraction():
    t0 = time.perf_counter()
    data = generate(DatasetSpec("gaussian1d", 10_000, 0, {"theta_star": THETA_STAR}))
    q = fit_gaussian(data)
    theta = GAUSS.params(CONTRACTION_THETA)
    z_true = math.exp(log_partition_gaussian(CONTRACTION_THETA))
    errs = []
    for seed in range(CONTRACTION_SEEDS):
        r = RngStream(seed, 808)
        x = data[r.integers(0, len(data), size=CONTRACTION_BATCH)]
        state = meco_init(GAUSS, theta, q, x, q.sample(r, CONTRACTION_BATCH))
        for _ in range(CONTRACTION_STEPS - 1):
            x = data[r.integers(0, len(data), size=CONTRACTION_BATCH)]
            state = meco_update(state, GAUSS, theta, q, x, q.sample(r, CONTRACTION_BATCH), 0.1, 0.9)
        errs.append(abs(math.exp(state.log_u) - z_true) / z_true)
    avg = float(np.mean(errs))
    ok = avg < CONTRACTION_TOL
    record_criterion(8, ok, f"mean |u_T - Z|/Z = {avg:.4f} over {CONTRACTION_SEEDS} seeds;"
                            f" {time.perf_counter() - t0:.1f}s")
    assert ok


def test_criterion_09_metric_oracles():
    t0 = time.perf_counter()
    mmd_err = 0.0
    for k in range(MMD_INSTANCES):
        r = RngStream(k, 909)
        n, m = int(r.integers(2, 25)), int(r.integers(2, 25))
        x, y = r.normal(size=(n, 2)), r.normal(size=(m, 2)) + r.normal(size=2)
        s = float(r.uniform(low=0.3, high=2.0))
        for est in ("biased", "unbiased"):
            got = mmd2(x, y, MmdConfig(bandwidth=s, estimator=est, chunk=int(r.integers(1, 30))))
            mmd_err = max(mmd_err, abs(got - _brute_mmd(x.tolist(), y.tolist(), s, est == "unbiased")))
    fr_err = 0.0
    r = RngStream(1, 909)
    for _ in range(MMD_INSTANCES):
        la, lb = r.normal(size=(2, 2)), r.normal(size=(2, 2))
        a = GaussianSummary(r.normal(size=2), la @ la.T + 0.05 * np.eye(2))
        b = GaussianSummary(r.normal(size=2), lb @ lb.T + 0.05 * np.eye(2))
        fr_err = max(fr_err, abs(frechet2(a, b) - _frechet_2x2_closed_form(a, b)))

    from tests.test_sampling import NO_PARAMS, STD

    x0 = 3.0 * RngStream(6, 909).normal(size=(10_000, 2))
    out = langevin_chain(STD, NO_PARAMS, x0, LangevinConfig(5000, LANGEVIN_EPS), RngStream(7, 909))
    target = LANGEVIN_EPS / (1 - (1 - LANGEVIN_EPS / 2) ** 2)
    lv_err = float(np.max(np.abs(out.var(axis=0) / target - 1)))
    ok = mmd_err < MMD_TOL and fr_err < FRECHET_TOL and lv_err < LANGEVIN_REL_TOL
    record_criterion(9, ok, f"mmd err {mmd_err:.2g}, frechet err {fr_err:.2g}, langevin var rel err {lv_err:.3f};"
                            f" {time.perf_counter() - t0:.1f}s")
    assert ok


def test_criterion_10_reproducible_traces(tmp_path):
    t0 = time.perf_counter()
    cfg_2d = tmp_path / "density.json"
    cfg_2d.write_text(
        '{"dataset": {"name": "circles", "n": 2000}, "model": {"hidden": [16, 16]},'
        ' "methods": [{"method": "meco", "batch_data": 16, "batch_noise": 16}, {"method": "nce_sgd", "batch_data": 16},'
        ' {"method": "nce_ngd", "batch_data": 16}, {"method": "ence_ngd", "batch_data": 16},'
        ' {"method": "cd", "batch_data": 16}],'
        ' "eval": {"n_eval": 200, "langevin_steps": 5, "bandwidth_points": 200}, "log_every": 5}'
    )
    runs = [
        ["gaussian1d", "--seed", "4", "--max-steps", "300"],
        ["density2d", "--config", str(cfg_2d), "--seed", "2", "--max-steps", "30"],
    ]
    compared, identical = 0, True
    for args in runs:
        a, b = tmp_path / f"{args[0]}_a", tmp_path / f"{args[0]}_b"
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        names = sorted(p.name for p in a.glob("trace_*.csv"))
        assert names and names == sorted(p.name for p in b.glob("trace_*.csv"))
        for name in names:
            compared += 1
            identical &= (a / name).read_bytes() == (b / name).read_bytes()
    record_criterion(10, identical, f"{compared} trace files compared byte-for-byte;"
                                    f" {time.perf_counter() - t0:.1f}s")
    assert identical
