"""Acceptance gate. Each test prints one ``criterion N [PASS|FAIL]`` line; the
lines are repeated in the terminal summary."""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from helpers import lambda_fixture, verdict
from myoadapt.classify import IncrementalRLSC, one_hot, rlsc_weights
from myoadapt.dataset import (generate_synthetic, load_session, preprocess_session,
                              radial_sessions, strong_shift_config)
from myoadapt.dsp import RawEmg, RmsSpec, apply_minmax, fit_extrema, rms_frames
from myoadapt.evaluation import accuracy_difference_distribution, evaluate, latency_benchmark
from myoadapt.features import build_map
from myoadapt.methods import make_model
from myoadapt.modelsel import LAMBDA_GRID, Grid, grid_search

DELTA_ENV = "MYOADAPT_DELTA"


def test_incremental_exactness():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(50):
        d = (8, 64, 500)[i % 3]
        n = int(rng.integers(1, 501))
        lam = 10 ** rng.uniform(-4, 3)
        X = rng.normal(size=(n, d))
        y = rng.integers(0, 7, n)
        model = IncrementalRLSC(lam, 7, n_inputs=d)
        for x, label in zip(X, y):
            model.update(x, label)
        W = rlsc_weights(X, one_hot(y, 7), lam)
        worst = max(worst, np.linalg.norm(model.W - W) / max(np.linalg.norm(W), 1e-300))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 60
    verdict(1, "incremental exactness", ok, f"max rel err {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_random_feature_approximation():
    t0 = time.perf_counter()
    err = {}
    for gamma in (0.05, 0.5):
        for M in (10, 500, 1000):
            vals = []
            for seed in range(20):
                rng = np.random.default_rng(seed)
                A = rng.uniform(size=(100, 64))
                B = A + rng.normal(scale=0.3 / np.sqrt(64 * gamma), size=A.shape)
                fmap = build_map(64, M, gamma, seed)
                approx = np.sum(fmap(A) * fmap(B), axis=1)
                exact = np.exp(-gamma * np.sum((A - B) ** 2, axis=1))
                vals.append(np.mean(np.abs(approx - exact)))
            err[gamma, M] = float(np.mean(vals))
    elapsed = time.perf_counter() - t0
    ok = all(err[g, 1000] < err[g, 10] and err[g, 500] <= 0.05 for g in (0.05, 0.5))
    ok = ok and elapsed < 60
    detail = ", ".join(f"g={g} M={M}: {e:.4f}" for (g, M), e in sorted(err.items()))
    verdict(2, "random-feature kernel approximation", ok, detail)
    assert ok


def test_shift_adaptation_ordering():
    t0 = time.perf_counter()
    batch, incr = [], []
    for seed in range(20):
        cfg = strong_shift_config(seed, sessions=6)
        frames = [preprocess_session(s)[0] for s in generate_synthetic(cfg)]
        runs = evaluate(frames, "rlsc", permutations=20, seed=seed)
        batch += [r.accuracy for r in runs if r.setting == "batch"]
        incr += [r.accuracy for r in runs if r.setting == "incremental"]
    elapsed = time.perf_counter() - t0
    batch, incr = np.array(batch), np.array(incr)
    drop = batch[:, 0].mean() - batch[:, 2:].mean()
    incr_gap = np.abs(incr[:, 1:].mean(0) - incr[:, 0].mean()).max()
    frac = np.mean(np.all(incr[:, 1:] >= batch[:, 1:], axis=1))
    a, b, c = drop >= 0.15, incr_gap <= 0.05, frac >= 0.9
    ok = a and b and c and elapsed < 600
    verdict(3, "shift-adaptation ordering", ok,
            f"(a) batch drop {100 * drop:.1f} pts, (b) incremental max gap "
            f"{100 * incr_gap:.2f} pts, (c) incremental >= batch in {100 * frac:.1f}% "
            f"of {len(batch)} runs, {elapsed:.0f}s")
    assert ok


def test_random_features_under_nonlinearity():
    t0 = time.perf_counter()
    rf_grid = Grid({"lam": np.logspace(-4, 3, 15), "gamma": np.logspace(-1, 2, 8), "M": (500,)})
    lin_grid = Grid({"lam": np.logspace(-4, 3, 15)})
    diffs = []
    for seed in range(20):
        frames = radial_sessions(seed=seed)
        rf = evaluate(frames, "rf-rlsc-incr", ("incremental",), permutations=2, seed=seed,
                      grid=rf_grid, n_classes=3)
        lin = evaluate(frames, "rlsc-incr", ("incremental",), permutations=2, seed=seed,
                       grid=lin_grid, n_classes=3)
        diffs.append(accuracy_difference_distribution(rf, lin).all())
    elapsed = time.perf_counter() - t0
    med = float(np.median(np.concatenate(diffs)))
    ok = med > 0 and elapsed < 300
    verdict(4, "random features under nonlinearity", ok,
            f"median per-day difference {med:+.3f}, {elapsed:.0f}s")
    assert ok


def test_latency_ordering():
    rng = np.random.default_rng(5)
    X = rng.uniform(size=(5200, 64))
    y = rng.integers(0, 7, 5200)
    models = {
        "rlsc": make_model("rlsc", {"lam": 1.0}, 64),
        "rf-rlsc": make_model("rf-rlsc", {"lam": 1.0, "gamma": 0.05, "M": 500}, 64),
        "knn": make_model("knn", {"k": 1}, 64),
    }
    for m in models.values():
        m.fit(X[:5000], y[:5000])
    stats = latency_benchmark(models, X[5000:], repeats=5)
    med = {k: v["median_s"] for k, v in stats.items()}
    ok = med["rlsc"] <= med["knn"] / 10 and med["rf-rlsc"] <= med["knn"]
    verdict(5, "prediction latency ordering", ok,
            f"knn/rlsc {med['knn'] / med['rlsc']:.1f}x, knn/rf-rlsc "
            f"{med['knn'] / med['rf-rlsc']:.1f}x")
    assert ok


def test_pipeline_fidelity():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(4000, 64))
    spec = RmsSpec(400, 100)
    frames = rms_frames(RawEmg(x), spec).values
    starts = range(0, 4000 - 400 + 1, 100)
    brute = np.array([[np.sqrt(np.mean(x[s:s + 400, c] ** 2)) for c in range(64)] for s in starts])
    rms_err = float(np.max(np.abs(frames - brute)))
    scaled = apply_minmax(frames, fit_extrema(frames))
    ext_ok = np.all(scaled.min(0) == 0.0) and np.all(scaled.max(0) == 1.0)
    ok = rms_err <= 1e-12 and len(frames) == 37 and ext_ok
    verdict(6, "pipeline numeric fidelity", ok,
            f"rms err {rms_err:.1e}, {len(frames)} frames/repetition, extrema exact={ext_ok}")
    assert ok


def test_model_selection_reproducibility():
    X, y = lambda_fixture()
    first = grid_search(X, y, "rlsc", seed=11)
    second = grid_search(X, y, "rlsc", seed=11)
    same = first.to_tsv().encode() == second.to_tsv().encode()
    lam = first.best["lam"]
    interior = LAMBDA_GRID[0] < lam < LAMBDA_GRID[-1]
    ok = same and interior
    verdict(7, "model-selection reproducibility", ok,
            f"tables identical={same}, selected lambda {lam:.3g} interior={interior}")
    assert ok


@pytest.mark.realdata
@pytest.mark.skipif(not os.environ.get(DELTA_ENV), reason=f"{DELTA_ENV} not set")
def test_real_data_tier():
    paths = sorted(Path(os.environ[DELTA_ENV]).glob("*.csv"))[:6]
    frames = [preprocess_session(load_session(p))[0] for p in paths]
    runs = evaluate(frames, "rf-rlsc", permutations=1)
    inc = np.mean([r.accuracy[1:] for r in runs if r.setting == "incremental"])
    bat = np.mean([r.accuracy[1:] for r in runs if r.setting == "batch"])
    ok = inc - bat >= 0.10
    verdict(8, "real-data tier", ok, f"incremental - batch = {100 * (inc - bat):.1f} pts")
    assert ok
