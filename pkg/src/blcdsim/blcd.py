"""Band-limited coordinate descent over a simulated multiple-access channel.

One round: pick the common coordinate set, let every device form
``u = gamma * g + r`` and split it into the transmitted part and the new
memory, allocate power, superimpose the payloads over the channel, scale the
received signal by the receiver coefficients and apply
``w <- w - G_hat``. The learning rate already sits inside ``u``.
"""

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from . import compression, power
from .channel import draw_fading, mac_transmit
from .errors import RunAbort
from .learn import LogisticModel, MLPModel, SoftmaxModel, accuracy, load_dataset, make_synthetic
from .rng import stream


class LocalUpdate(NamedTuple):
    u: np.ndarray
    transmitted: np.ndarray
    memory: np.ndarray
    grad: np.ndarray
    loss: float


@dataclass
class RoundTrace:
    round: int
    coords: compression.CoordinateSet
    G_true: np.ndarray
    G_hat: np.ndarray
    bias: np.ndarray
    variance: np.ndarray
    memory_sq: float
    max_grad_sq: float
    grad_norm: Optional[float] = None
    loss: Optional[float] = None
    plan: Optional[power.PowerPlan] = None
    x: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None

    @property
    def eps(self):
        return self.G_hat - self.G_true

    @property
    def bias_norm(self):
        return float(np.linalg.norm(self.bias))

    @property
    def mse(self):
        return float(np.sum(self.bias ** 2) + np.sum(self.variance))


@dataclass
class TrainerState:
    config: object
    model: object
    train: object
    test: object
    shards: List[np.ndarray]
    w: np.ndarray
    memories: List[compression.DeviceMemory]
    budgets: np.ndarray
    round: int = 0


@dataclass
class EvalRow:
    round: int
    train_loss: float
    test_loss: float
    test_accuracy: float
    grad_norm: float
    bias_norm: Optional[float]
    comm_mse: Optional[float]
    scheme: str


@dataclass
class RunResult:
    config: object
    traces: List[RoundTrace]
    evals: List[EvalRow]
    w: np.ndarray
    w0: np.ndarray
    state: TrainerState = field(repr=False)


def build_model(cfg, p, classes):
    if cfg.model == "logreg":
        return LogisticModel(p, cfg.l2)
    if cfg.model == "softmax":
        return SoftmaxModel(p, classes, cfg.l2)
    return MLPModel(p, cfg.hidden, classes, cfg.l2)


def init_state(cfg):
    """Data, shards, model and zero memories, all drawn from the master seed."""
    if cfg.dataset == "synthetic":
        data = make_synthetic(cfg.n, cfg.p, cfg.margin, stream(cfg.seed, "data"), cfg.noise_scale,
                              cfg.classes)
    else:
        data = load_dataset(cfg.dataset)
    train, test = data.split(cfg.test_fraction, stream(cfg.seed, "data", 1))
    model = build_model(cfg, data.p, data.num_classes)
    perm = stream(cfg.seed, "shard").permutation(train.n)
    shards = [np.sort(s) for s in np.array_split(perm, cfg.M)]
    w = model.init(stream(cfg.seed, "init"))
    memories = [compression.DeviceMemory.zeros(m, model.dim) for m in range(cfg.M)]
    return TrainerState(cfg, model, train, test, shards, w, memories, np.array(cfg.budgets()))


def device_batch(state, m, t):
    shard = state.shards[m]
    rng = stream(state.config.seed, "batch", t, m)
    idx = shard[rng.integers(0, shard.size, size=state.config.batch_size)]
    return state.train.features[idx], state.train.labels[idx]


def local_step(memory, w, batch, gamma, model, coords):
    """Stochastic gradient, error-corrected update and memory split for one device."""
    X, y = batch
    loss, g = model.loss_grad(w, X, y)
    if not np.all(np.isfinite(g)):
        raise RunAbort(f"non-finite gradient on device {memory.device_id}")
    u = gamma * g + memory.r
    transmitted, new_memory = compression.update_memory(u, coords)
    return LocalUpdate(u, transmitted, new_memory, g, loss)


def _receiver_plan(cfg, x, h, sigma2, budgets):
    opts = {}
    if cfg.scheme == "scheme1":
        opts = dict(outer_iters=cfg.s1_outer, inner_iters=cfg.s1_inner, tol=1e-6)
    elif cfg.scheme == "scheme2":
        opts = dict(zeta_rule=cfg.zeta_rule)
    elif cfg.scheme == "receiver_centric":
        opts = dict(p=cfg.rc_p)
    if cfg.fixed_alpha is not None and cfg.scheme == "scheme1":
        # with alpha pinned only the power split is optimized
        start = power.allocate("scheme2", x, h, sigma2, budgets)
        alpha = np.full(x.shape[0], cfg.fixed_alpha)
        b, _ = power.scheme1_b_step(alpha, x, h, sigma2, budgets, b0=start.b, iters=500, tol=1e-6)
        return power.PowerPlan(b, alpha, None, "scheme1", {"fixed_alpha": True})
    plan = power.allocate(cfg.scheme, x, h, sigma2, budgets, **opts)
    if cfg.fixed_alpha is not None:
        plan.alpha = np.full(x.shape[0], cfg.fixed_alpha)
    return plan


def step(state, probe=False, keep_plan=False):
    """Run one round in place and return its trace."""
    cfg = state.config
    t = state.round
    d = state.model.dim
    grad_norm = loss = None
    if probe:
        loss, g_full = state.model.loss_grad(state.w, state.train.features, state.train.labels)
        grad_norm = float(np.linalg.norm(g_full))

    memory_sq = float(np.mean([m.r @ m.r for m in state.memories]))
    batches = [device_batch(state, m, t) for m in range(cfg.M)]
    if cfg.selection == "topk":
        # reference hook: oracle scores from the aggregate corrected update
        scores = np.zeros(d)
        for m, mem in enumerate(state.memories):
            scores += cfg.gamma * state.model.loss_grad(state.w, *batches[m])[1] + mem.r
        coords = compression.select_coordinates(d, cfg.K, cfg.seed, t, "topk", scores)
    else:
        coords = compression.select_coordinates(d, cfg.K, cfg.seed, t)

    updates = [local_step(mem, state.w, batches[m], cfg.gamma, state.model, coords)
               for m, mem in enumerate(state.memories)]
    x = np.column_stack([up.transmitted[coords.indices] for up in updates])
    G_true = np.sum(x, axis=1) / cfg.M
    plan = h = None
    if cfg.scheme == "error_free":
        G_hat = G_true.copy()
        bias = np.zeros(cfg.K)
        variance = np.zeros(cfg.K)
    else:
        channel = draw_fading(cfg.K, cfg.M, stream(cfg.seed, "fading", t), cfg.sigma2, t)
        plan = _receiver_plan(cfg, x, channel.h, cfg.sigma2, state.budgets)
        y = mac_transmit(plan.b * x, channel, stream(cfg.seed, "noise", t))
        G_hat = plan.alpha * y
        h = channel.h
        err = power.mse_objective(plan.alpha, plan.b, x, h, cfg.sigma2)
        bias, variance = err.bias, err.variance

    w_next = state.w.copy()
    w_next[coords.indices] -= G_hat
    if not np.all(np.isfinite(w_next)):
        raise RunAbort(f"model became non-finite at round {t}")
    state.w = w_next
    for mem, up in zip(state.memories, updates):
        mem.r = up.memory
    state.round += 1
    return RoundTrace(
        round=t, coords=coords, G_true=G_true, G_hat=G_hat, bias=bias, variance=variance,
        memory_sq=memory_sq, max_grad_sq=max(float(up.grad @ up.grad) for up in updates),
        grad_norm=grad_norm, loss=loss, plan=plan if keep_plan else None,
        x=x if keep_plan else None, h=h if keep_plan else None,
    )


def evaluate(state, trace=None):
    model = state.model
    train_loss, g = model.loss_grad(state.w, state.train.features, state.train.labels)
    if state.test.n:
        test_loss = model.loss_grad(state.w, state.test.features, state.test.labels)[0]
        acc = accuracy(model, state.w, state.test)
    else:
        test_loss, acc = float("nan"), float("nan")
    return EvalRow(
        round=state.round, train_loss=train_loss, test_loss=test_loss, test_accuracy=acc,
        grad_norm=float(np.linalg.norm(g)),
        bias_norm=None if trace is None else trace.bias_norm,
        comm_mse=None if trace is None else trace.mse,
        scheme=state.config.scheme,
    )


def run(cfg, keep_plans=False, state=None):
    """Train for ``cfg.T`` rounds; evaluate every ``eval_interval`` rounds and at the end."""
    cfg.validate()
    state = init_state(cfg) if state is None else state
    w0 = state.w.copy()
    traces, evals = [], []
    for t in range(cfg.T):
        on_eval = t % cfg.eval_interval == 0
        probe = on_eval or t % cfg.probe_every == 0
        row = evaluate(state) if on_eval else None
        trace = step(state, probe=probe, keep_plan=keep_plans)
        traces.append(trace)
        if row is not None:
            row.bias_norm, row.comm_mse = trace.bias_norm, trace.mse
            evals.append(row)
    evals.append(evaluate(state))
    return RunResult(cfg, traces, evals, state.w.copy(), w0, state)
