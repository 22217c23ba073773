"""Desk-scale models with hand-written gradients, plus the datasets they train on."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, NumericError


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int = 2

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise InvalidArgument("features must be an n x p matrix with n >= 1")
        if y.shape != (X.shape[0],):
            raise InvalidArgument("need one label per row")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise InvalidArgument("labels out of range")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def p(self):
        return self.features.shape[1]

    def subset(self, idx):
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def split(self, test_fraction, rng):
        """Disjoint random train/test partition."""
        perm = rng.permutation(self.n)
        n_test = int(round(test_fraction * self.n))
        return self.subset(np.sort(perm[n_test:])), self.subset(np.sort(perm[:n_test]))


def make_synthetic(n, p, margin, seed, noise_scale=1.0, classes=2):
    """Gaussian blobs with controllable separation.

    Two classes sit at ``+-margin/2`` along a random unit direction. With
    more classes each center is ``margin/2`` times an independent random
    unit vector. Labels cycle 0, 1, ... before shuffling so classes stay
    balanced.
    """
    if n < 1 or p < 1:
        raise InvalidArgument(f"need n, p >= 1, got n={n}, p={p}")
    if classes < 2:
        raise InvalidArgument(f"need at least two classes, got {classes}")
    rng = np.random.default_rng(seed)
    if classes == 2:
        direction = rng.normal(size=p)
        direction /= np.linalg.norm(direction)
        labels = rng.permutation(np.arange(n) % 2)
        signs = 2.0 * labels - 1.0
        X = noise_scale * rng.normal(size=(n, p)) + 0.5 * margin * signs[:, None] * direction
        return Dataset(X, labels, 2)
    centers = rng.normal(size=(classes, p))
    centers *= 0.5 * margin / np.linalg.norm(centers, axis=1, keepdims=True)
    labels = rng.permutation(np.arange(n) % classes)
    X = noise_scale * rng.normal(size=(n, p)) + centers[labels]
    return Dataset(X, labels, classes)


def load_dataset(path):
    """Read the plain-text format: header ``n p num_classes`` then rows of p floats and a label."""
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    n, p, c = (int(v) for v in lines[0].split())
    rows = np.array([[float(v) for v in line.split()] for line in lines[1:] if line.strip()])
    if rows.shape != (n, p + 1):
        raise InvalidArgument(f"{path}: expected {n} rows of {p + 1} values, got {rows.shape}")
    return Dataset(rows[:, :p], rows[:, p].astype(np.int64), c)


def save_dataset(dataset, path):
    out = [f"{dataset.n} {dataset.p} {dataset.num_classes}"]
    for row, label in zip(dataset.features, dataset.labels):
        out.append(" ".join(repr(float(v)) for v in row) + f" {int(label)}")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def logreg_gradient(w, X, y, l2=0.0):
    """Binary cross-entropy and its gradient.

    ``X`` already carries the intercept column if one is wanted. The L2
    penalty is ``l2/2 * ||w||^2``.
    """
    z = X @ w
    # log(1 + e^z) - y z, written stably
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * float(w @ w)
    g = X.T @ (_sigmoid(z) - y) / X.shape[0] + l2 * w
    return loss, g


def _unpack(w, p, hidden, classes):
    i = 0
    W1 = w[i:i + p * hidden].reshape(p, hidden); i += p * hidden
    b1 = w[i:i + hidden]; i += hidden
    W2 = w[i:i + hidden * classes].reshape(hidden, classes); i += hidden * classes
    b2 = w[i:i + classes]
    return W1, b1, W2, b2


def mlp_forward(w, X, arch):
    p, hidden, classes = arch
    W1, b1, W2, b2 = _unpack(w, p, hidden, classes)
    a = np.tanh(X @ W1 + b1)
    return a, a @ W2 + b2


def mlp_gradient(w, X, y, arch, l2=0.0):
    """Softmax cross-entropy for a one-hidden-layer tanh network, by backprop."""
    p, hidden, classes = arch
    W1, b1, W2, b2 = _unpack(w, p, hidden, classes)
    n = X.shape[0]
    a, logits = mlp_forward(w, X, arch)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(n), y])) + 0.5 * l2 * float(w @ w)

    delta2 = np.exp(shifted - logz[:, None])
    delta2[np.arange(n), y] -= 1.0
    delta2 /= n
    delta1 = (delta2 @ W2.T) * (1.0 - a ** 2)
    g = np.concatenate([
        (X.T @ delta1).ravel(), delta1.sum(axis=0), (a.T @ delta2).ravel(), delta2.sum(axis=0),
    ])
    return loss, g + l2 * w


def softmax_gradient(w, X, y, classes, l2=0.0):
    """Multinomial logistic loss for a linear model; weights packed as W (p x c) then bias (c)."""
    n, p = X.shape
    W = w[:p * classes].reshape(p, classes)
    logits = X @ W + w[p * classes:]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(n), y])) + 0.5 * l2 * float(w @ w)
    delta = np.exp(shifted - logz[:, None])
    delta[np.arange(n), y] -= 1.0
    delta /= n
    g = np.concatenate([(X.T @ delta).ravel(), delta.sum(axis=0)])
    return loss, g + l2 * w


class LogisticModel:
    """Logistic regression with an appended intercept; d = p + 1."""

    name = "logreg"

    def __init__(self, p, l2=0.0):
        self.p = p
        self.l2 = l2
        self.dim = p + 1

    def design(self, X):
        return np.hstack([X, np.ones((X.shape[0], 1))])

    def init(self, rng):
        return np.zeros(self.dim)

    def loss_grad(self, w, X, y):
        return logreg_gradient(w, self.design(X), y, self.l2)

    def predict(self, w, X):
        return (self.design(X) @ w > 0).astype(np.int64)


class SoftmaxModel:
    """Linear multi-class classifier; d = p * classes + classes."""

    name = "softmax"

    def __init__(self, p, classes, l2=0.0):
        self.p = p
        self.classes = classes
        self.l2 = l2
        self.dim = p * classes + classes

    def init(self, rng):
        return np.zeros(self.dim)

    def loss_grad(self, w, X, y):
        return softmax_gradient(w, X, y, self.classes, self.l2)

    def predict(self, w, X):
        W = w[:self.p * self.classes].reshape(self.p, self.classes)
        return np.argmax(X @ W + w[self.p * self.classes:], axis=1)


class MLPModel:
    name = "mlp"

    def __init__(self, p, hidden, classes, l2=0.0):
        self.arch = (p, hidden, classes)
        self.l2 = l2
        self.dim = p * hidden + hidden + hidden * classes + classes

    def init(self, rng):
        p, hidden, classes = self.arch
        w = np.zeros(self.dim)
        w[:p * hidden] = rng.normal(0.0, 1.0 / np.sqrt(p), size=p * hidden)
        start = p * hidden + hidden
        w[start:start + hidden * classes] = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden * classes)
        return w

    def loss_grad(self, w, X, y):
        return mlp_gradient(w, X, y, self.arch, self.l2)

    def predict(self, w, X):
        return np.argmax(mlp_forward(w, X, self.arch)[1], axis=1)


def accuracy(model, w, data):
    return float(np.mean(model.predict(w, data.features) == data.labels))


def smoothness_constant(features, l2=0.0, tol=1e-8, max_iter=100_000, seed=0):
    """Gradient Lipschitz constant of mean logistic loss: ``lambda_max(X^T X)/(4n) + l2``.

    ``features`` is the design matrix the model sees (intercept included).
    Power iteration on ``X^T X / n``.
    """
    X = np.asarray(features, dtype=float)
    n = X.shape[0]
    v = np.random.default_rng(seed).normal(size=X.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = X.T @ (X @ v) / n
        lam_new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return l2
        v = w / norm
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new / 4.0 + l2
        lam = lam_new
    raise NumericError("power iteration did not converge", last=lam)


@dataclass
class SmoothnessInfo:
    L: float
    G2: float
    f_star: float


def estimate_bounds(grad_sq_norms, losses, safety=1.5):
    """Empirical second-moment bound and reference minimum from long runs.

    ``grad_sq_norms`` are observed squared stochastic-gradient norms;
    ``losses`` full-batch losses. ``f_star`` is the smallest loss seen, so it
    only upper-bounds the true minimum.
    """
    g = np.asarray(grad_sq_norms, dtype=float)
    f = np.asarray(losses, dtype=float)
    if g.size == 0 or f.size == 0:
        raise InvalidArgument("need nonempty gradient and loss traces")
    return safety * float(g.max()), float(f.min())


def full_batch_descent(model, w0, data, lr, steps):
    """Plain gradient descent on the whole training set; returns the loss trace and final weights."""
    w = np.array(w0, dtype=float)
    losses = []
    for _ in range(steps):
        loss, g = model.loss_grad(w, data.features, data.labels)
        losses.append(loss)
        w -= lr * g
    losses.append(model.loss_grad(w, data.features, data.labels)[0])
    return np.array(losses), w
