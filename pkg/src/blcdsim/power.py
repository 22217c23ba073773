"""Power allocation and receiver coefficients for over-the-air aggregation.

All routines work on one round. ``x`` is the K x M matrix of transmitted
coordinates (column m belongs to device m), ``h`` the matching fading gains,
``budgets`` the M per-device energy limits. Coordinates with ``x == 0`` never
receive power.

Schemes
-------
scheme1
    Centralized alternating minimization of the analytic MSE (benchmark).
scheme2
    Per-device flat scaling ``b * h = zeta`` plus receiver ``alpha = 1/sum(zeta)``.
scheme3
    Per-device single-user water-filling.
scheme4
    Equal power over the device's coordinates.
receiver_centric
    Fixed receiver ``alpha = 1/(M p)``; devices track ``b = p/h`` under budget.
"""

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.optimize import brentq

from .channel import check_power
from .errors import InvalidArgument, NumericError

SCHEMES = ("error_free", "scheme1", "scheme2", "scheme3", "scheme4", "receiver_centric")
FEAS_TOL = 1e-8


@dataclass
class PowerPlan:
    b: np.ndarray
    alpha: np.ndarray
    zeta: Optional[np.ndarray] = None
    scheme: str = ""
    info: dict = field(default_factory=dict)

    def feasible(self, x, budgets, tol=FEAS_TOL):
        return all(check_power(self.b[:, m], x[:, m], budgets[m], tol)[0] for m in range(x.shape[1]))


@dataclass(frozen=True)
class ErrorDecomposition:
    bias: np.ndarray
    variance: np.ndarray

    @property
    def mse(self):
        return float(np.sum(self.bias ** 2) + np.sum(self.variance))

    @property
    def bias_norm(self):
        return float(np.linalg.norm(self.bias))


class DeviceAllocation(NamedTuple):
    zeta: float
    b: np.ndarray
    degenerate: bool


class WaterfillSolution(NamedTuple):
    b: np.ndarray
    alpha: np.ndarray
    lam: float


class LargeKSolution(NamedTuple):
    lam: float
    b_rule: Callable
    predicted_variance: float


def _shapes(x, h):
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    if x.shape != h.shape or x.ndim != 2:
        raise InvalidArgument(f"x {x.shape} and h {h.shape} must be matching K x M matrices")
    return x, h


def _budgets(budgets, M):
    E = np.broadcast_to(np.asarray(budgets, dtype=float), (M,)).copy()
    if np.any(E < 0):
        raise InvalidArgument("power budgets must be nonnegative")
    return E


def mse_objective(alpha, b, x, h, sigma2):
    """Analytic bias/variance of the receiver estimate over channel noise."""
    x, h = _shapes(x, h)
    b = np.asarray(b, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if b.shape != x.shape or alpha.shape != (x.shape[0],):
        raise InvalidArgument("alpha must be length K and b must be K x M")
    M = x.shape[1]
    bias = alpha * np.sum(b * h * x, axis=1) - np.sum(x, axis=1) / M
    return ErrorDecomposition(bias, sigma2 * alpha ** 2)


def monte_carlo_mse(alpha, b, x, h, sigma2, rng, draws=100_000):
    """Sampled estimate of the estimator error, used only to check ``mse_objective``.

    Returns ``(mean_error, mean_sq_norm, se_sq_norm)``.
    """
    x, h = _shapes(x, h)
    G = x.mean(axis=1)
    signal = np.sum(b * h * x, axis=1)
    noise = rng.normal(0.0, np.sqrt(sigma2), size=(draws, x.shape[0]))
    eps = alpha * (signal + noise) - G
    sq = np.sum(eps ** 2, axis=1)
    return eps.mean(axis=0), float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(draws))


# --- Scheme 1 -------------------------------------------------------------


def scheme1_alpha_step(b, x, h, sigma2):
    """Exact minimizer over alpha >= 0 of the MSE for fixed b."""
    x, h = _shapes(x, h)
    M = x.shape[1]
    beta = np.sum(b * h * x, axis=1)
    num = np.sum(x, axis=1) * beta
    den = M * (sigma2 + beta ** 2)
    alpha = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return np.maximum(alpha, 0.0)


def _project_columns(c, radius):
    c = np.maximum(c, 0.0)
    norms = np.sqrt((c * c).sum(axis=0))
    over = norms > radius
    if over.any():
        c[:, over] *= radius[over] / norms[over]
    return c


def _norm(v):
    with np.errstate(over="ignore", invalid="ignore"):
        n2 = float(v @ v)
    if np.isfinite(n2):
        return np.sqrt(n2)
    # rescale so that huge entries do not overflow when squared
    m = float(np.abs(v).max())
    if not np.isfinite(m):
        return m
    v = v / m
    return m * np.sqrt(v @ v)


def _ball_block(a, s, radius2):
    """Exact minimizer of ``||a * c - s||^2`` over ``c >= 0, ||c||^2 <= radius2``.

    Separable except for the ball; when the ball binds, the multiplier is
    found by Newton on ``1/||c(mu)|| - 1/radius``, which is concave and
    increasing in mu, so the iterates climb to the root without overshoot.
    """
    num = np.maximum(a * s, 0.0)
    a2 = np.where(num > 0, a * a, 1.0)
    if radius2 <= 0.0:
        return np.zeros_like(num)
    radius = np.sqrt(radius2)
    with np.errstate(over="ignore", divide="ignore"):
        c = num / a2
    if _norm(c) <= radius:
        return c
    # ||c(mu)|| is at least ||num|| / (max a2 + mu) and at least each
    # num_i / (a2_i + mu), so both give starts left of the root
    mu = max(0.0, _norm(num) / radius - a2.max(), float((num / radius - a2).max()))
    for _ in range(100):
        q = num / (a2 + mu)
        norm = _norm(q)
        if norm <= radius * (1.0 + 1e-13):
            break
        qn = q / norm
        with np.errstate(over="ignore"):
            step = (norm / radius - 1.0) / float(qn @ (qn / (a2 + mu)))
        if not step > 1e-16 * mu:
            break
        mu += step
    c = num / (a2 + mu)
    # land exactly on the sphere so the budget is never exceeded by rounding
    n = _norm(c)
    return c * (radius / n) if n > radius else c


def scheme1_b_step(alpha, x, h, sigma2, budgets, b0=None, iters=500, tol=1e-8):
    """Minimize the bias term over b for fixed alpha.

    Works in ``c = b |x|`` where each device's budget is a Euclidean ball
    and runs cyclic block descent over devices, each block solved exactly.
    Every block update is a minimization, so the objective never exceeds
    that of ``b0``. Stops when a sweep lowers the objective by less than
    ``tol`` relative. Returns ``(b, info)``; ``info["kkt_residual"]`` is the
    projected-gradient residual relative to the starting one.
    """
    x, h = _shapes(x, h)
    K, M = x.shape
    E = _budgets(budgets, M)
    alpha = np.asarray(alpha, dtype=float)
    absx = np.abs(x)
    active = absx > 0
    safe_absx = np.where(active, absx, 1.0)
    A = np.where(active, h * np.sign(x), 0.0) * alpha[:, None]
    target = x.sum(axis=1) / M
    radius = np.sqrt(E)

    if b0 is None:
        c = np.zeros_like(x)
    else:
        c = _project_columns(np.where(active, np.asarray(b0, dtype=float) * absx, 0.0), radius)
    contrib = A * c
    total = contrib.sum(axis=1)
    e = total - target
    f = float(e @ e)
    info = {"iterations": 0, "kkt_residual": 0.0, "converged": True}
    lip = 2.0 * float((A * A).sum(axis=1).max())

    def pg_residual(c, e):
        step = 1.0 / lip
        return float(np.abs(c - _project_columns(c - (2.0 * step) * e[:, None] * A, radius)).max())

    if lip == 0.0 or f == 0.0:
        return np.where(active, c / safe_absx, 0.0), info
    res0 = pg_residual(c, e)
    info["converged"] = False
    for it in range(1, iters + 1):
        f_old = f
        for m in range(M):
            rest = total - contrib[:, m]
            cm = _ball_block(A[:, m], target - rest, E[m])
            contrib[:, m] = A[:, m] * cm
            c[:, m] = cm
            total = rest + contrib[:, m]
        e = total - target
        f = float(e @ e)
        info["iterations"] = it
        if f_old - f <= tol * f_old or f == 0.0:
            info["converged"] = True
            break
    info["kkt_residual"] = pg_residual(c, e) / res0 if res0 > 0 else 0.0
    return np.where(active, c / safe_absx, 0.0), info


def scheme1_biconvex(x, h, sigma2, budgets, init=None, outer_iters=50, tol=1e-8,
                     inner_iters=500, inner_tol=1e-8):
    """Alternate the exact alpha step and the b step from a feasible start.

    ``init`` defaults to the best of schemes 2, 3 and 4 by analytic MSE.
    Returns ``(plan, mse_trace)``; the trace starts at the initial plan and is
    non-increasing.
    """
    x, h = _shapes(x, h)
    E = _budgets(budgets, x.shape[1])
    if init is None:
        candidates = [scheme2_plan(x, h, sigma2, E), scheme3_plan(x, h, sigma2, E),
                      scheme4_plan(x, h, sigma2, E)]
        init = min(candidates, key=lambda p: mse_objective(p.alpha, p.b, x, h, sigma2).mse)
    elif not init.feasible(x, E):
        raise InvalidArgument("initial plan violates a device power budget")
    b, alpha = np.asarray(init.b, dtype=float), np.asarray(init.alpha, dtype=float)
    current = mse_objective(alpha, b, x, h, sigma2).mse
    trace = [current]
    inner_ok = True
    escapes = 0
    S = x.sum(axis=1)
    for _ in range(outer_iters):
        start = current
        alpha_new = scheme1_alpha_step(b, x, h, sigma2)
        m_alpha = mse_objective(alpha_new, b, x, h, sigma2).mse
        if m_alpha <= current:
            alpha, current = alpha_new, m_alpha
        trace.append(current)
        b_new, info = scheme1_b_step(alpha, x, h, sigma2, E, b0=b, iters=inner_iters, tol=inner_tol)
        inner_ok &= info["converged"]
        m_b = mse_objective(alpha, b_new, x, h, sigma2).mse
        if m_b <= current:
            b, current = b_new, m_b
        trace.append(current)
        if start - current > tol * max(start, np.finfo(float).tiny):
            continue
        # A coordinate with alpha = 0 passes no gradient to b, so alternation
        # stalls there. Try once more with a positive trial alpha on it.
        dead = (alpha == 0) & (S != 0)
        if not dead.any() or escapes >= 3:
            break
        escapes += 1
        trial = alpha.copy()
        live = alpha[alpha > 0]
        trial[dead] = np.median(live) if live.size else 1.0 / x.shape[1]
        b_try, _ = scheme1_b_step(trial, x, h, sigma2, E, b0=b, iters=inner_iters, tol=inner_tol)
        a_try = scheme1_alpha_step(b_try, x, h, sigma2)
        m_try = mse_objective(a_try, b_try, x, h, sigma2).mse
        if not m_try < current:
            break
        b, alpha, current = b_try, a_try, m_try
        trace.append(current)
    plan = PowerPlan(b, alpha, scheme="scheme1",
                     info={"init": init.scheme, "inner_converged": bool(inner_ok), "escapes": escapes})
    return plan, trace


# --- Scheme 2 -------------------------------------------------------------


def scheme2_device(x_m, h_m, E_m, second_moment=None):
    """Flat-scaling allocation ``b_k = zeta / h_k`` for one device.

    With ``second_moment=None`` zeta uses the device's own
    ``sum_k x_k^2 / h_k^2`` and meets the budget with equality. Passing a
    population value of that sum gives the large-K rule shared by all
    devices, which meets the budget only on average.
    """
    x_m = np.asarray(x_m, dtype=float)
    h_m = np.asarray(h_m, dtype=float)
    if np.any(h_m <= 0):
        raise InvalidArgument("fading gains must be positive")
    if E_m < 0:
        raise InvalidArgument("budget must be nonnegative")
    active = x_m != 0
    s = float(np.sum((x_m / h_m) ** 2)) if second_moment is None else float(second_moment)
    if s <= 0 or not active.any():
        return DeviceAllocation(0.0, np.zeros_like(x_m), True)
    zeta = np.sqrt(E_m / s)
    b = np.where(active, zeta / h_m, 0.0)
    return DeviceAllocation(float(zeta), b, False)


def scheme2_receiver(zeta_sum, K=1):
    if not zeta_sum > 0:
        raise InvalidArgument(f"sum of device scales must be positive, got {zeta_sum}")
    return np.full(K, 1.0 / zeta_sum)


def scheme2_plan(x, h, sigma2, budgets, zeta_rule="exact"):
    """``zeta_rule="pooled"`` shares one large-K second moment across devices."""
    x, h = _shapes(x, h)
    K, M = x.shape
    E = _budgets(budgets, M)
    if zeta_rule == "exact":
        moments = [None] * M
    elif zeta_rule == "pooled":
        moments = [float(np.mean(np.sum((x / h) ** 2, axis=0)))] * M
    else:
        raise InvalidArgument(f"unknown zeta rule {zeta_rule!r}")
    b = np.zeros_like(x)
    zeta = np.zeros(M)
    for m in range(M):
        zeta[m], b[:, m], _ = scheme2_device(x[:, m], h[:, m], E[m], moments[m])
    zsum = float(zeta.sum())
    alpha = scheme2_receiver(zsum, K) if zsum > 0 else np.zeros(K)
    return PowerPlan(b, alpha, zeta, "scheme2", {"zeta_rule": zeta_rule})


def scheme2_asymptotic_zeta(E_m, K, x_second_moment, inv_h_second_moment):
    """Large-K limit ``sqrt(E_m / (K E[x^2] E[1/h^2]))``."""
    return np.sqrt(E_m / (K * x_second_moment * inv_h_second_moment))


# --- Scheme 3 -------------------------------------------------------------


def _waterlevel(slopes, offsets, target, tol):
    """Solve ``sum_k [t * slopes_k - offsets_k]^+ = target`` for t > 0.

    Bisection on a geometrically grown bracket, then an exact solve on the
    active set the bisection settled on.
    """

    def power(t):
        return float(np.sum(np.maximum(t * slopes - offsets, 0.0)))

    lo, hi = 0.0, 1.0
    grow = 0
    while power(hi) < target:
        lo, hi = hi, 2.0 * hi
        grow += 1
        if grow > 2000 or not np.isfinite(hi):
            raise NumericError("water level bracket did not close", target=target, hi=hi)
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if power(mid) < target:
            lo = mid
        else:
            hi = mid
    t = hi
    act = t * slopes > offsets
    if act.any():
        t_exact = (target + offsets[act].sum()) / slopes[act].sum()
        if abs(power(t_exact) - target) <= abs(power(t) - target):
            t = t_exact
    return t


def scheme3_waterfill(x_m, h_m, sigma2, E_m, tol=1e-10):
    """Single-user optimum of power split and per-coordinate estimator.

    ``b_k^2 = [sigma / (sqrt(lam) |x_k| h_k) - sigma^2 / (h_k^2 x_k^2)]^+``
    with the water level ``lam`` set so the budget binds.
    """
    x_m = np.asarray(x_m, dtype=float)
    h_m = np.asarray(h_m, dtype=float)
    if not E_m > 0:
        raise InvalidArgument(f"budget must be positive, got {E_m}")
    active = x_m != 0
    if not active.any():
        raise InvalidArgument("all coordinates are zero")
    sigma = np.sqrt(sigma2)
    ax, ha = np.abs(x_m[active]), h_m[active]
    t = _waterlevel(sigma * ax / ha, sigma2 / ha ** 2, E_m, tol)
    b2 = np.maximum(t * sigma / (ax * ha) - sigma2 / (ha * ax) ** 2, 0.0)
    b = np.zeros_like(x_m)
    b[active] = np.sqrt(b2)
    alpha = b * h_m * x_m ** 2 / (sigma2 + (b * h_m * x_m) ** 2)
    return WaterfillSolution(b, alpha, 1.0 / t ** 2)


def waterfill_kkt_residuals(b, x_m, h_m, sigma2, E_m, lam):
    """Certificate for a water-filling output in the squared-power variables.

    Returns relative power mismatch, the worst relative stationarity gap
    over active coordinates, and the most negative inactive multiplier
    (relative to lam; 0 when complementary slackness holds).
    """
    b = np.asarray(b, dtype=float)
    x_m = np.asarray(x_m, dtype=float)
    h_m = np.asarray(h_m, dtype=float)
    nz = x_m != 0
    bt = b[nz] ** 2
    ht = h_m[nz] ** 2 / sigma2
    xt = 1.0 / x_m[nz] ** 2
    power = float(np.sum(bt / xt))
    on = bt > 0
    marginal = ht / (bt * ht + xt) ** 2 * xt
    stat = np.abs(marginal[on] - lam) / lam if on.any() else np.zeros(0)
    mu = (lam - ht[~on] / xt[~on]) / lam
    return {
        "power": abs(power - E_m) / E_m,
        "stationarity": float(stat.max(initial=0.0)),
        "slackness": float(max(0.0, -mu.min(initial=0.0))),
    }


def scheme3_plan(x, h, sigma2, budgets):
    """Each device water-fills alone; the receiver averages their estimators."""
    x, h = _shapes(x, h)
    K, M = x.shape
    E = _budgets(budgets, M)
    b = np.zeros_like(x)
    alphas = np.zeros_like(x)
    lams = np.full(M, np.inf)
    for m in range(M):
        if E[m] > 0 and np.any(x[:, m] != 0):
            b[:, m], alphas[:, m], lams[m] = scheme3_waterfill(x[:, m], h[:, m], sigma2, E[m])
    return PowerPlan(b, alphas.mean(axis=1) / M, None, "scheme3", {"lambda": lams})


def scheme3_largeK(x_samples, h_samples, sigma2, E_bar, tol=1e-10, M=1):
    """Water level from sample averages when the budget holds per subcarrier on average."""
    x = np.ravel(np.asarray(x_samples, dtype=float))
    h = np.ravel(np.asarray(h_samples, dtype=float))
    if x.size == 0 or x.size != h.size:
        raise InvalidArgument("need matching, nonempty x and h samples")
    if not E_bar > 0:
        raise InvalidArgument("E_bar must be positive")
    nz = x != 0
    if not nz.any():
        raise InvalidArgument("all samples are zero")
    sigma = np.sqrt(sigma2)
    n = x.size
    # sum form scaled by n so the mean power equals E_bar
    t = _waterlevel(sigma * np.abs(x[nz]) / h[nz], sigma2 / h[nz] ** 2, E_bar * n, tol)
    lam = 1.0 / t ** 2

    def b_rule(xq, hq):
        xq = np.asarray(xq, dtype=float)
        hq = np.asarray(hq, dtype=float)
        ax = np.abs(xq)
        with np.errstate(divide="ignore", invalid="ignore"):
            b2 = sigma / (hq * ax * np.sqrt(lam)) - sigma2 / (ax * hq) ** 2
        return np.where(ax > 0, np.sqrt(np.maximum(np.nan_to_num(b2, nan=0.0, neginf=0.0), 0.0)), 0.0)

    return LargeKSolution(lam, b_rule, sigma2 / M ** 2)


# --- Scheme 4 and receiver-centric ----------------------------------------


def scheme4_equal(x_m, E_m):
    """One amplitude for every coordinate, spending the whole budget."""
    x_m = np.asarray(x_m, dtype=float)
    s = float(np.sum(x_m ** 2))
    if s <= 0:
        return DeviceAllocation(0.0, np.zeros_like(x_m), True)
    level = np.sqrt(E_m / s)
    return DeviceAllocation(float(level), np.where(x_m != 0, level, 0.0), False)


def scheme4_plan(x, h, sigma2, budgets):
    """The receiver inverts the summed amplitudes, using E[h] = 1."""
    x, h = _shapes(x, h)
    K, M = x.shape
    E = _budgets(budgets, M)
    b = np.zeros_like(x)
    levels = np.zeros(M)
    for m in range(M):
        levels[m], b[:, m], _ = scheme4_equal(x[:, m], E[m])
    total = levels.sum()
    alpha = np.full(K, 1.0 / total) if total > 0 else np.zeros(K)
    return PowerPlan(b, alpha, None, "scheme4")


def receiver_centric(x_m, h_m, E_m, p, M):
    """Track ``b_k h_k = p`` so each device's share is exact when power allows.

    When ``p / h`` overdraws the budget, ``b_k = h_k p / (h_k^2 + lam M^2 p^2)``
    with ``lam > 0`` chosen so the budget binds.
    """
    x_m = np.asarray(x_m, dtype=float)
    h_m = np.asarray(h_m, dtype=float)
    if not p > 0:
        raise InvalidArgument(f"p must be positive, got {p}")
    active = x_m != 0
    x2 = x_m ** 2

    def b_of(lam):
        return np.where(active, h_m * p / (h_m ** 2 + lam * M ** 2 * p ** 2), 0.0)

    def excess(lam):
        return float(np.sum(b_of(lam) ** 2 * x2)) - E_m

    if excess(0.0) <= 0:
        return b_of(0.0)
    if E_m <= 0:
        return np.zeros_like(x_m)
    hi = 1.0
    while excess(hi) > 0:
        hi *= 4.0
        if not np.isfinite(hi) or hi > 1e300:
            raise NumericError("receiver-centric multiplier not bracketed", E_m=E_m, p=p)
    lam = brentq(excess, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    b = b_of(lam)
    used = float(np.sum(b ** 2 * x2))
    if used > E_m:
        b *= np.sqrt(E_m / used)
    return b


def receiver_centric_plan(x, h, sigma2, budgets, p=None):
    """``p`` defaults to the median over devices of the scheme-2 scale."""
    x, h = _shapes(x, h)
    K, M = x.shape
    E = _budgets(budgets, M)
    if p is None:
        zetas = [scheme2_device(x[:, m], h[:, m], E[m]).zeta for m in range(M)]
        p = float(np.median(zetas))
    if p <= 0:
        return PowerPlan(np.zeros_like(x), np.zeros(K), None, "receiver_centric", {"p": p})
    b = np.column_stack([receiver_centric(x[:, m], h[:, m], E[m], p, M) for m in range(M)])
    return PowerPlan(b, np.full(K, 1.0 / (M * p)), None, "receiver_centric", {"p": p})


def allocate(scheme, x, h, sigma2, budgets, **opts):
    """Build the round's PowerPlan for one of the noisy schemes."""
    if scheme == "scheme1":
        plan, trace = scheme1_biconvex(x, h, sigma2, budgets, **opts)
        plan.info["mse_trace"] = trace
        return plan
    if scheme == "scheme2":
        return scheme2_plan(x, h, sigma2, budgets, **opts)
    if scheme == "scheme3":
        return scheme3_plan(x, h, sigma2, budgets)
    if scheme == "scheme4":
        return scheme4_plan(x, h, sigma2, budgets)
    if scheme == "receiver_centric":
        return receiver_centric_plan(x, h, sigma2, budgets, **opts)
    raise InvalidArgument(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
