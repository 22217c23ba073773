"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly as a script.
The long training runs are shared through module-scoped fixtures; each
criterion's runtime is the sum of the runs it uses.
"""

import sys
import time

import numpy as np
import pytest

from blcdsim.blcd import run, stream
from blcdsim.cli import write_csv
from blcdsim.compression import select_coordinates, sparsify
from blcdsim.config import RunConfig
from blcdsim.diagnostics import memory_bound_check, params_from_run, theorem1_report
from blcdsim.learn import LogisticModel, MLPModel, logreg_gradient
from blcdsim.power import (
    mse_objective, scheme1_biconvex, scheme2_plan, scheme3_plan, scheme3_waterfill, scheme4_plan,
    waterfill_kkt_residuals,
)

SCHEMES = ["error_free", "scheme1", "scheme2", "scheme3", "scheme4", "receiver_centric"]
SEEDS_BOUND = [0, 1, 2]
SEEDS_ORDER = [0, 1, 2, 3, 4]
# ten-class linear model on 50 features, d = 510, so K = 64 transmits an eighth of it
ORDER_TASK = dict(model="softmax", classes=10, p=50, n=4000, margin=4.0, noise_scale=1.0, K=64)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    return emit


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def rayleigh_instance(rng, K, M):
    return rng.normal(size=(K, M)), rng.rayleigh(np.sqrt(2 / np.pi), size=(K, M))


def test_compression_contract(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    parts = []
    for d, k in [(100, 10), (7840, 64)]:
        ratios = np.empty(10_000)
        for t in range(ratios.size):
            x = rng.normal(size=d)
            r = x - sparsify(x, select_coordinates(d, k, 1, t))
            ratios[t] = (r @ r) / (x @ x)
        gap = abs(ratios.mean() - (1 - k / d))
        worst = max(worst, gap)
        parts.append(f"(d={d},k={k}) gap={gap:.2e}")
    elapsed = time.perf_counter() - t0
    ok = worst < 0.01 and elapsed < 10
    report(1, ok, f"{'; '.join(parts)}; {elapsed:.1f}s")
    assert ok


def test_flat_scaling_zero_bias(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for i in range(100):
        x, h = rayleigh_instance(rng, [1, 16, 64][i % 3], 8)
        plan = scheme2_plan(x, h, 1.0, [rng.uniform(0.1, 5.0)] * 8, zeta_rule="pooled")
        worst = max(worst, np.abs(mse_objective(plan.alpha, plan.b, x, h, 1.0).bias).max())
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-12 and elapsed < 1
    report(2, ok, f"max |bias| = {worst:.2e} over 100 instances; {elapsed:.2f}s")
    assert ok


def test_waterfilling_kkt(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = {"power": 0.0, "stationarity": 0.0, "slackness": 0.0}
    for i in range(100):
        K = [1, 4, 64][i % 3]
        x, h = rayleigh_instance(rng, K, 1)
        E = rng.uniform(0.01, 10.0)
        b, _, lam = scheme3_waterfill(x[:, 0], h[:, 0], 1.0, E)
        for key, v in waterfill_kkt_residuals(b, x[:, 0], h[:, 0], 1.0, E, lam).items():
            worst[key] = max(worst[key], v)
    b, alpha, lam = scheme3_waterfill([1.0], [1.0], 1.0, 1.0)
    exact = abs(b[0] - 1) < 1e-12 and abs(alpha[0] - 0.5) < 1e-12 and abs(lam - 0.25) < 1e-12
    elapsed = time.perf_counter() - t0
    ok = (worst["power"] < 1e-8 and worst["stationarity"] < 1e-6 and worst["slackness"] < 1e-6
          and exact and elapsed < 5)
    report(3, ok, f"power {worst['power']:.1e}, stationarity {worst['stationarity']:.1e}, "
                  f"slackness {worst['slackness']:.1e}; K=1 case (b, alpha, lambda) = "
                  f"({b[0]:.12g}, {alpha[0]:.12g}, {lam:.12g}); {elapsed:.2f}s")
    assert ok


def single_device_grid(x, h, sigma2, E, n=200_001):
    """Best MSE for one device and two coordinates by sweeping the power split.

    For fixed powers the best alpha per coordinate leaves x^2 s / (s + h^2 c^2),
    decreasing in each c, so the optimum uses the whole budget.
    """
    th = np.linspace(0, np.pi / 2, n)
    c = np.sqrt(E) * np.stack([np.cos(th), np.sin(th)])
    h2 = (h[:, 0] ** 2)[:, None]
    return float(np.min(np.sum(x[:, 0, None] ** 2 * sigma2 / (sigma2 + h2 * c ** 2), axis=0)))


def test_centralized_dominance(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    dominated = monotone = 0
    worst_slack = -np.inf
    for i in range(100):
        K, M = [(4, 2), (16, 8), (64, 8)][i % 3]
        x, h = rayleigh_instance(rng, K, M)
        E = rng.uniform(0.2, 3.0, size=M)
        plan, trace = scheme1_biconvex(x, h, 1.0, E)
        final = mse_objective(plan.alpha, plan.b, x, h, 1.0).mse
        others = min(mse_objective(p.alpha, p.b, x, h, 1.0).mse
                     for p in (scheme2_plan(x, h, 1.0, E), scheme3_plan(x, h, 1.0, E), scheme4_plan(x, h, 1.0, E)))
        worst_slack = max(worst_slack, final - others)
        dominated += final <= others and plan.feasible(x, E)
        monotone += bool(np.all(np.diff(trace) <= 1e-12))
    grid_gap = 0.0
    for _ in range(20):
        x, h = rayleigh_instance(rng, 2, 1)
        E = rng.uniform(0.2, 3.0)
        plan, _ = scheme1_biconvex(x, h, 1.0, [E])
        final = mse_objective(plan.alpha, plan.b, x, h, 1.0).mse
        grid_gap = max(grid_gap, abs(final - single_device_grid(x, h, 1.0, E)))
    elapsed = time.perf_counter() - t0
    ok = dominated == 100 and monotone == 100 and grid_gap < 1e-3 and elapsed < 60
    report(4, ok, f"dominates {dominated}/100 (worst final - best other = {worst_slack:.2e}), "
                  f"monotone {monotone}/100, grid gap {grid_gap:.1e}; {elapsed:.1f}s")
    assert ok


def _fd_relative_error(model, rng):
    X = rng.normal(size=(4, 5))
    y = rng.integers(0, 2, 4)
    w = rng.normal(size=model.dim)
    _, g = model.loss_grad(w, X, y)
    fd = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = 1e-5
        fd[i] = (model.loss_grad(w + e, X, y)[0] - model.loss_grad(w - e, X, y)[0]) / 2e-5
    return np.linalg.norm(g - fd) / max(np.linalg.norm(g) + np.linalg.norm(fd), 1e-12)


def test_gradient_correctness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    errs = {}
    for name, model in [("logreg", LogisticModel(5, l2=0.01)), ("mlp", MLPModel(5, 8, 2, l2=0.01))]:
        errs[name] = max(_fd_relative_error(model, rng) for _ in range(100))
    elapsed = time.perf_counter() - t0
    ok = max(errs.values()) < 1e-4 and elapsed < 30
    report(5, ok, f"max relative error logreg {errs['logreg']:.1e}, mlp {errs['mlp']:.1e}; {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def bound_runs():
    runs, elapsed = {}, 0.0
    for seed in SEEDS_BOUND:
        for scheme in SCHEMES:
            res, dt = timed(run, RunConfig(scheme=scheme, E_avg=0.1, seed=seed))
            runs[scheme, seed] = res
            elapsed += dt
    return runs, elapsed


def test_convergence_bound(report, bound_runs):
    runs, elapsed = bound_runs
    t0 = time.perf_counter()
    worst, failures = np.inf, []
    for (scheme, seed), res in runs.items():
        params = params_from_run(res, reference=runs["error_free", seed])
        rep = theorem1_report(res.traces, params)
        worst = min(worst, rep.rhs - rep.lhs)
        if not rep.holds:
            failures.append(f"{scheme}/seed{seed}")
    elapsed += time.perf_counter() - t0
    ok = not failures and elapsed < 300
    report(6, ok, f"{len(runs) - len(failures)}/{len(runs)} runs satisfy lhs <= rhs "
                  f"(smallest rhs - lhs = {worst:.3g}){' failing ' + ', '.join(failures) if failures else ''}; "
                  f"{elapsed:.0f}s")
    assert ok


def test_memory_bound(report, bound_runs):
    runs, _ = bound_runs
    bad, ratio = [], 0.0
    for (scheme, seed), res in runs.items():
        params = params_from_run(res, reference=runs["error_free", seed])
        ok_rounds, running, bound = memory_bound_check([t.memory_sq for t in res.traces],
                                                       params.delta, params.gamma, params.G2)
        ratio = max(ratio, running.max() / bound)
        if not ok_rounds.all():
            bad.append(f"{scheme}/seed{seed}")
    ok = not bad
    report(7, ok, f"largest running mean / bound = {ratio:.3g} over {len(runs)} runs"
                  f"{' failing ' + ', '.join(bad) if bad else ''}")
    assert ok


@pytest.fixture(scope="module")
def order_runs():
    acc, secs = {}, {}
    for scheme, E in [("error_free", 0.1), ("scheme2", 0.1), ("scheme3", 0.1), ("scheme1", 0.1),
                      ("scheme2", 10.0)]:
        vals, total = [], 0.0
        for seed in SEEDS_ORDER:
            res, dt = timed(run, RunConfig(scheme=scheme, E_avg=E, seed=seed, **ORDER_TASK))
            vals.append(res.evals[-1].test_accuracy)
            total += dt
        acc[scheme, E] = float(np.mean(vals))
        secs[scheme, E] = total
    return acc, secs


def test_scheme_ordering(report, order_runs):
    acc, secs = order_runs
    ef, s1, s2, s3 = (acc[s, 0.1] for s in ("error_free", "scheme1", "scheme2", "scheme3"))
    tol = 0.01
    checks = [ef >= s1 - tol, s1 >= s2 - tol, s1 >= s3 - tol]
    elapsed = sum(secs[s, 0.1] for s in ("error_free", "scheme1", "scheme2", "scheme3"))
    ok = all(checks) and elapsed < 600
    report(8, ok, f"mean accuracy error_free {ef:.4f}, scheme1 {s1:.4f}, scheme2 {s2:.4f}, "
                  f"scheme3 {s3:.4f}; {elapsed:.0f}s")
    assert ok


def test_snr_trend(report, order_runs):
    acc, secs = order_runs
    ef, hi, lo = acc["error_free", 0.1], acc["scheme2", 10.0], acc["scheme2", 0.1]
    elapsed = secs["error_free", 0.1] + secs["scheme2", 10.0] + secs["scheme2", 0.1]
    ok = abs(ef - hi) <= 0.01 and hi > lo and elapsed < 600
    report(9, ok, f"scheme2 at E_avg=10 {hi:.4f} vs error_free {ef:.4f} and scheme2 at 0.1 {lo:.4f}; "
                  f"{elapsed:.0f}s")
    assert ok


def test_plain_sgd_equivalence(report):
    cfg = RunConfig(scheme="error_free", K=21, T=100)
    res = run(cfg)
    state = res.state
    X = np.hstack([state.train.features, np.ones((state.train.n, 1))])
    w = res.w0.copy()
    worst = 0.0
    for t in range(cfg.T):
        grads = []
        for m, shard in enumerate(state.shards):
            idx = shard[stream(cfg.seed, "batch", t, m).integers(0, shard.size, size=cfg.batch_size)]
            grads.append(logreg_gradient(w, X[idx], state.train.labels[idx])[1])
        w = w - cfg.gamma * np.mean(grads, axis=0)
    worst = float(np.max(np.abs(res.w - w)))
    ok = worst <= 1e-12
    report(10, ok, f"max coordinate gap after 100 rounds = {worst:.1e}")
    assert ok


def test_reproducible_csv(report, tmp_path):
    same = []
    for cfg in [RunConfig(scheme="scheme1", T=200), RunConfig(scheme="receiver_centric", T=200, seed=7),
                RunConfig(model="mlp", K=32, scheme="scheme3", T=100, n=400)]:
        a = write_csv(run(cfg).evals, tmp_path / "a.csv").read_bytes()
        b = write_csv(run(cfg).evals, tmp_path / "b.csv").read_bytes()
        same.append(a == b)
    ok = all(same)
    report(11, ok, f"{sum(same)}/{len(same)} configurations byte-identical on rerun")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
