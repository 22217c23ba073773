"""Rayleigh fading, over-the-air superposition and power bookkeeping."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

# Rayleigh scale giving E[h] = 1; then E[h^2] = 2 * scale^2 = 4/pi.
RAYLEIGH_SCALE = np.sqrt(2.0 / np.pi)
RAYLEIGH_SECOND_MOMENT = 4.0 / np.pi


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray
    sigma2: float
    round: int = 0

    def __post_init__(self):
        h = np.array(self.h, dtype=float)
        if h.ndim != 2:
            raise InvalidArgument("fading gains must be a K x M matrix")
        if np.any(h <= 0):
            raise InvalidArgument("fading gains must be strictly positive")
        if not self.sigma2 > 0:
            raise InvalidArgument("noise variance must be positive")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def shape(self):
        return self.h.shape


def draw_fading(K, M, rng, sigma2=1.0, round_=0):
    """Draw i.i.d. mean-one Rayleigh gains for K subcarriers and M devices."""
    if K < 1 or M < 1:
        raise InvalidArgument(f"need K, M >= 1, got K={K}, M={M}")
    h = rng.rayleigh(RAYLEIGH_SCALE, size=(K, M))
    h = np.maximum(h, np.finfo(float).tiny)
    return ChannelRealization(h, sigma2, round_)


def mac_transmit(payloads, channel, rng=None):
    """Superimpose device payloads over the multiple-access channel.

    ``payloads`` is K x M with column m holding device m's ``b_m * x_m``.
    Only the per-subcarrier sum reaches the receiver. Passing ``rng=None``
    suppresses the noise term.
    """
    payloads = np.asarray(payloads, dtype=float)
    h = channel.h if isinstance(channel, ChannelRealization) else np.asarray(channel, dtype=float)
    if payloads.shape != h.shape:
        raise InvalidArgument(f"payload shape {payloads.shape} does not match channel {h.shape}")
    y = np.zeros(h.shape[0])
    # fixed ascending device order for bitwise reproducibility
    for m in range(h.shape[1]):
        y += h[:, m] * payloads[:, m]
    if rng is not None:
        sigma2 = channel.sigma2 if isinstance(channel, ChannelRealization) else 1.0
        y += rng.normal(0.0, np.sqrt(sigma2), size=y.shape)
    return y


def energy_from_eavg(E_avg, M, K, sigma2=1.0, Eh2=RAYLEIGH_SECOND_MOMENT):
    """Per-device energy budget for a normalized per-dimension SNR ``E_avg``.

    Inverts ``E_avg = E * M * E[h^2] / (K * sigma2)``.
    """
    for name, v in (("E_avg", E_avg), ("M", M), ("K", K), ("sigma2", sigma2), ("Eh2", Eh2)):
        if not v > 0:
            raise InvalidArgument(f"{name} must be positive, got {v}")
    return E_avg * K * sigma2 / (M * Eh2)


def check_power(b_m, x_m, E_m, tol=1e-8):
    """Return ``(ok, slack)`` for one device's transmit-power constraint.

    ``tol`` is relative to ``max(E_m, 1)``.
    """
    b_m = np.asarray(b_m, dtype=float)
    x_m = np.asarray(x_m, dtype=float)
    if b_m.shape != x_m.shape:
        raise InvalidArgument("b and x must have matching lengths")
    used = float(np.sum((b_m * x_m) ** 2))
    slack = E_m - used
    return bool(slack >= -tol * max(E_m, 1.0)), slack
