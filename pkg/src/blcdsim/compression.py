"""Coordinate selection, the sparsification operator and error-feedback memory."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .rng import stream


@dataclass(frozen=True)
class CoordinateSet:
    """Sorted indices of the K coordinates sent in one round.

    Subcarrier ``k`` carries coordinate ``indices[k]``.
    """

    indices: np.ndarray
    d: int
    round: int = 0

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise InvalidArgument("indices must be one-dimensional")
        if idx.size > self.d:
            raise InvalidArgument(f"{idx.size} indices exceed dimension {self.d}")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.d or np.any(np.diff(idx) <= 0)):
            raise InvalidArgument("indices must be strictly increasing and lie in [0, d)")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return int(self.indices.size)

    @property
    def k(self):
        return len(self)


@dataclass
class DeviceMemory:
    """Residual of un-transmitted update mass held by one device."""

    device_id: int
    r: np.ndarray

    @classmethod
    def zeros(cls, device_id, d):
        return cls(device_id, np.zeros(d))


def _partial_fisher_yates(d, k, rng):
    pool = np.arange(d)
    offsets = rng.integers(0, d - np.arange(k))
    for i, off in enumerate(offsets):
        j = i + off
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]


def select_coordinates(d, k, master_seed, round_, strategy="uniform", scores=None):
    """Pick the round's K coordinates.

    The uniform strategy is a pure function of ``(d, k, master_seed, round_)``,
    so every device and the receiver reproduce it without communicating.
    ``strategy="topk"`` keeps the k largest ``|scores|`` (ties broken by index)
    and is only a comparison hook.
    """
    if not 1 <= k <= d:
        raise InvalidArgument(f"need 1 <= k <= d, got k={k}, d={d}")
    if strategy == "uniform":
        chosen = _partial_fisher_yates(d, k, stream(master_seed, "selection", round_))
    elif strategy == "topk":
        if scores is None or np.shape(scores) != (d,):
            raise InvalidArgument("topk selection needs a length-d score vector")
        chosen = np.argsort(-np.abs(np.asarray(scores)), kind="stable")[:k]
    else:
        raise InvalidArgument(f"unknown selection strategy {strategy!r}")
    return CoordinateSet(np.sort(chosen), d, round_)


def _check(x, coords):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != coords.d:
        raise InvalidArgument(f"vector of length {x.size} does not match dimension {coords.d}")
    return x


def sparsify(x, coords):
    """Keep the coordinates in ``coords`` and zero the rest."""
    x = _check(x, coords)
    out = np.zeros_like(x)
    out[coords.indices] = x[coords.indices]
    return out


def compression_delta(d, k):
    if not 1 <= k <= d:
        raise InvalidArgument(f"need 1 <= k <= d, got k={k}, d={d}")
    return k / d


def update_memory(u, coords):
    """Split ``u`` into the transmitted part and the residual kept on device.

    The two parts have disjoint support, so their sum reproduces ``u`` bitwise.
    """
    u = _check(u, coords)
    transmitted = sparsify(u, coords)
    residual = u.copy()
    residual[coords.indices] = 0.0
    return transmitted, residual
