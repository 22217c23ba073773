"""Runtime checks of the convergence guarantees on recorded round traces.

All gradient-norm averages use the full-batch gradient at probe rounds only,
so they are a subsampled surrogate of the per-round average. Communication
bias and MSE are the exact conditional expectations over channel noise.
"""

from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np
from scipy.stats import norm

from .compression import compression_delta
from .errors import InvalidArgument
from .learn import estimate_bounds, full_batch_descent, smoothness_constant


def eta(L, gamma, rho):
    """Bias amplification factor ``(L - 1 + 2 gamma) / (gamma (2 - rho gamma))``."""
    return (L - 1.0 + 2.0 * gamma) / (gamma * (2.0 - rho * gamma))


@dataclass
class BoundParams:
    L: float
    G2: float
    f0_minus_fstar: float
    gamma: float
    rho: float = 1.0
    delta: float = 1.0
    T: int = 0

    def __post_init__(self):
        errs = []
        if not 0 < self.rho < 2:
            errs.append(f"rho must lie in (0, 2), got {self.rho}")
        if not 0 < self.delta <= 1:
            errs.append(f"delta must lie in (0, 1], got {self.delta}")
        if not self.gamma > 0:
            errs.append(f"gamma must be positive, got {self.gamma}")
        elif not self.gamma * self.rho < 2:
            errs.append(f"need gamma * rho < 2, got {self.gamma * self.rho}")
        if not self.L > 0:
            errs.append(f"L must be positive, got {self.L}")
        if self.G2 < 0 or self.T < 0:
            errs.append("G2 and T must be nonnegative")
        if errs:
            raise InvalidArgument("; ".join(errs))

    @property
    def eta(self):
        return eta(self.L, self.gamma, self.rho)

    @property
    def compression_factor(self):
        # the (L/rho) 2(1-delta)/delta^2 + 1/2 multiplier shared by both bounds
        return self.L / self.rho * 2.0 * (1.0 - self.delta) / self.delta ** 2 + 0.5


@dataclass
class BoundReport:
    lhs: float
    rhs: float
    holds: bool
    mse_term: float
    bias_term: float
    init_term: float
    gamma_term: float
    eta: float
    probe_rounds: int
    notes: List[str] = field(default_factory=list)

    def as_dict(self):
        return asdict(self)


def _probe_arrays(traces):
    rows = [t for t in traces if t.grad_norm is not None]
    if not rows:
        raise InvalidArgument("no trace carries a full-batch gradient norm; enable probe rounds")
    grad = np.array([t.grad_norm for t in rows])
    bias = np.array([t.bias_norm for t in rows])
    mse = np.array([t.mse for t in rows])
    return grad, bias, mse


_NOTES = [
    "gradient norms are full-batch values at probe rounds only",
    "G2 is an empirical estimate, not a certified bound",
    "f_star is the smallest loss observed, an upper bound on the true minimum",
    "the outer expectation over sampling is a single-sample estimate",
]


def theorem1_report(traces, params):
    """Evaluate both sides of the biased-error convergence bound.

    ``params.T`` is the index of the last round, so ``T + 1`` rounds enter
    the initial-gap term.
    """
    grad, bias, mse = _probe_arrays(traces)
    g, rho = params.gamma, params.rho
    e = params.eta
    denom = g * (2.0 - rho * g)
    lhs = float(np.mean((grad - e * bias) ** 2))
    mse_term = float(np.mean(params.L / denom * mse))
    bias_term = float(np.mean((1.0 + e ** 2) * bias ** 2))
    init_term = 2.0 * params.f0_minus_fstar / ((params.T + 1) * denom)
    gamma_term = params.compression_factor * 2.0 * params.L * g * params.G2 / (2.0 - rho * g)
    rhs = mse_term + bias_term + init_term + gamma_term
    return BoundReport(lhs, rhs, bool(lhs <= rhs), mse_term, bias_term, init_term, gamma_term,
                       e, int(grad.size), list(_NOTES))


def corollary1_report(traces, params, bias_tol=1e-10):
    """Unbiased-error bound with ``gamma = 1/sqrt(T+1)``.

    Refuses runs whose analytic bias exceeds ``bias_tol`` on any round.
    """
    n = params.T + 1
    if abs(params.gamma * np.sqrt(n) - 1.0) > 1e-9:
        raise InvalidArgument(f"corollary needs gamma = 1/sqrt(T+1) = {1 / np.sqrt(n):.6g}, got {params.gamma}")
    worst = max((t.bias_norm for t in traces), default=0.0)
    if worst > bias_tol:
        raise InvalidArgument(f"run is biased: max bias norm {worst:.3g} exceeds {bias_tol:.3g}")
    grad, _, _ = _probe_arrays(traces)
    all_mse = np.array([t.mse for t in traces])
    rho = params.rho
    root = np.sqrt(n)
    init_term = 2.0 * params.f0_minus_fstar / root
    gamma_term = 2.0 * params.L * params.G2 / root * params.compression_factor
    mse_term = params.L * float(np.mean(all_mse)) if all_mse.size else 0.0
    scale = 1.0 / (2.0 - rho / root)
    lhs = float(np.mean(grad ** 2))
    rhs = scale * (init_term + gamma_term + mse_term)
    return BoundReport(lhs, rhs, bool(lhs <= rhs), scale * mse_term, 0.0, scale * init_term,
                       scale * gamma_term, params.eta, int(grad.size), list(_NOTES))


def memory_bound(delta, gamma, G2):
    return 4.0 * (1.0 - delta) / delta ** 2 * gamma ** 2 * G2


def memory_bound_check(memory_sq, delta, gamma, G2):
    """Compare the running mean of squared memory norms with the error-feedback bound.

    ``memory_sq`` holds one value per round (the device-averaged
    ``||r||^2``). Returns ``(ok, running_mean, bound)`` with ``ok`` per round.
    """
    m = np.asarray(memory_sq, dtype=float)
    bound = memory_bound(delta, gamma, G2)
    running = np.cumsum(m) / np.arange(1, m.size + 1) if m.size else m
    # with delta = 1 the bound is exactly zero, so no slack is allowed
    ok = running <= bound * (1.0 + 1e-12)
    return ok, running, bound


def contraction_region(traces, eta_value, Delta, window=0.1):
    """Round indices where the gradient norm is within ``(eta + Delta) * eps_bar``.

    ``eps_bar`` stands in for the limit superior of the bias norm: the
    maximum over the trailing ``window`` fraction of rounds. Only probe
    rounds (with a gradient norm) can be visits. Returns ``(visits, eps_bar)``.
    """
    if not traces:
        return [], 0.0
    n_tail = max(1, int(np.ceil(window * len(traces))))
    eps_bar = max(t.bias_norm for t in traces[-n_tail:])
    radius = np.inf if np.isinf(Delta) else (eta_value + Delta) * eps_bar
    visits = [t.round for t in traces if t.grad_norm is not None and t.grad_norm <= radius]
    return visits, eps_bar


def noise_resample_check(trace, sigma2, rng, draws=10_000, z=3.0):
    """Re-draw only the channel noise at a frozen round and compare with the analytic error.

    Needs a trace recorded with ``keep_plans``. Returns a dict with the
    per-coordinate mean error, its standard error, the analytic bias, the
    mean squared error with its standard error, and the pass flags.

    The per-coordinate bias comparison widens ``z`` by a Bonferroni factor
    so that the whole vector has the false-alarm rate of a single ``z``
    standard-error test.
    """
    if trace.plan is None or trace.x is None or trace.h is None:
        raise InvalidArgument("trace does not carry its plan and channel; run with keep_plans")
    plan, x, h = trace.plan, trace.x, trace.h
    clean = plan.alpha * np.sum(h * plan.b * x, axis=1)
    noise = rng.normal(0.0, np.sqrt(sigma2), size=(draws, clean.size))
    eps = clean + plan.alpha * noise - trace.G_true
    mean = eps.mean(axis=0)
    se = eps.std(axis=0, ddof=1) / np.sqrt(draws)
    sq = np.sum(eps ** 2, axis=1)
    mse_mc, mse_se = float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(draws))
    # a zero standard error means a deterministic coordinate; compare with a rounding slack
    slack = 1e-12 * (1.0 + np.abs(trace.bias))
    z_vec = norm.isf(norm.sf(z) / clean.size)
    bias_ok = bool(np.all(np.abs(mean - trace.bias) <= z_vec * se + slack))
    mse_ok = bool(abs(mse_mc - trace.mse) <= z * mse_se + 1e-12 * (1.0 + trace.mse))
    return {"mean_error": mean, "mean_error_se": se, "bias": trace.bias,
            "mse_mc": mse_mc, "mse_se": mse_se, "mse": trace.mse,
            "bias_ok": bias_ok, "mse_ok": mse_ok}


def params_from_run(result, reference=None, safety=1.5, descent_steps=2000):
    """Bound constants for a logistic-regression run.

    ``L`` is analytic from the training design matrix. ``G2`` is ``safety``
    times the largest squared stochastic gradient seen in ``result`` and the
    optional ``reference`` (error-free) run. ``f_star`` is the least loss
    among the recorded probes and a long full-batch descent from the start.
    """
    state = result.state
    model = state.model
    if model.name != "logreg":
        raise InvalidArgument("analytic smoothness is only available for logistic regression")
    cfg = result.config
    L = smoothness_constant(model.design(state.train.features), model.l2)
    runs = [result] if reference is None else [result, reference]
    grads = [t.max_grad_sq for r in runs for t in r.traces]
    losses = [t.loss for r in runs for t in r.traces if t.loss is not None]
    losses += [r.evals[-1].train_loss for r in runs]
    f0 = model.loss_grad(result.w0, state.train.features, state.train.labels)[0]
    descent, _ = full_batch_descent(model, result.w0, state.train, 1.0 / L, descent_steps)
    G2, f_star = estimate_bounds(grads, np.concatenate([losses, descent]), safety)
    return BoundParams(L=L, G2=G2, f0_minus_fstar=f0 - f_star, gamma=cfg.gamma, rho=cfg.rho,
                       delta=compression_delta(model.dim, cfg.K), T=max(cfg.T - 1, 0))


def full_report(result, params=None, resample_rounds=5, draws=10_000, Delta=1.0):
    """Everything the CLI writes next to the CSV, as plain JSON-ready values.

    Without ``params`` the constants come from :func:`params_from_run`;
    models without an analytic smoothness constant get only the checks
    that need no ``L``.
    """
    cfg = result.config
    if not result.traces:
        return {"skipped": "no rounds were run"}
    out = {}
    if params is None and result.state.model.name == "logreg":
        params = params_from_run(result, safety=cfg.safety)
    if params is not None:
        out["params"] = asdict(params)
        out["eta"] = params.eta
        try:
            out["theorem1"] = theorem1_report(result.traces, params).as_dict()
        except InvalidArgument as exc:
            out["theorem1"] = {"skipped": str(exc)}
        try:
            out["corollary1"] = corollary1_report(result.traces, params).as_dict()
        except InvalidArgument as exc:
            out["corollary1"] = {"skipped": str(exc)}
        G2, delta = params.G2, params.delta
        visits, eps_bar = contraction_region(result.traces, params.eta, Delta)
        out["contraction"] = {"Delta": Delta, "eps_bar": eps_bar, "visits": len(visits)}
    else:
        reason = f"no analytic smoothness constant for model {result.state.model.name!r}"
        out["theorem1"] = {"skipped": reason}
        out["corollary1"] = {"skipped": reason}
        grads = [t.max_grad_sq for t in result.traces] or [0.0]
        G2 = cfg.safety * max(grads)
        delta = compression_delta(result.state.model.dim, cfg.K)
    ok, running, bound = memory_bound_check([t.memory_sq for t in result.traces], delta, cfg.gamma, G2)
    out["memory_bound"] = {"bound": bound, "G2": G2,
                           "max_running_mean": float(running.max()) if running.size else 0.0,
                           "violations": int(np.sum(~ok))}
    kept = [t for t in result.traces if t.plan is not None]
    if kept and resample_rounds:
        picks = np.linspace(0, len(kept) - 1, min(resample_rounds, len(kept))).astype(int)
        rng = np.random.default_rng(cfg.seed)
        checks = []
        for i in picks:
            c = noise_resample_check(kept[i], cfg.sigma2, rng, draws)
            checks.append({"round": kept[i].round, "mse": c["mse"], "mse_mc": c["mse_mc"],
                           "mse_se": c["mse_se"], "bias_ok": c["bias_ok"], "mse_ok": c["mse_ok"]})
        out["noise_resample"] = checks
    return out
