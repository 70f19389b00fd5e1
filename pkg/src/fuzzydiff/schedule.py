"""Variance schedule for the diffusion process and derived per-step tables.

Index convention used across the package: diffusion steps are t in {1..T}
and every table carries a slot for t=0 so that alpha_bar[0] == 1 holds by
construction. beta[0], alpha[0] and beta_tilde[0] are padding (set to the
values a zero-step would have: beta 0, alpha 1, beta_tilde 0) and are never
read by samplers.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import ValidationError

__all__ = ["NoiseSchedule", "linear_schedule", "posterior_mean_coeffs"]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances beta_t and everything derived from them.

    All arrays have length T+1 and are indexed by t directly. Derived tables:

    - ``alpha[t] = 1 - beta[t]``
    - ``alpha_bar[t]`` = cumulative product of alpha, with ``alpha_bar[0] = 1``
    - ``beta_tilde[t]`` = posterior variance
      ``(1 - alpha_bar[t-1]) / (1 - alpha_bar[t]) * beta[t]``, which is 0
      exactly at t=1
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)
    beta_tilde: np.ndarray = field(init=False)
    sqrt_alpha_bar: np.ndarray = field(init=False)
    sqrt_one_minus_alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        T = self.T
        if T < 1:
            raise ValidationError(f"T must be >= 1, got {T}")
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.shape != (T + 1,):
            raise ValidationError(f"beta must have shape ({T + 1},) with padding slot 0")
        if beta[0] != 0.0:
            raise ValidationError("beta[0] is a padding slot and must be 0")
        body = beta[1:]
        if not np.all((body > 0.0) & (body < 1.0)):
            raise ValidationError("every beta_t must lie in (0, 1)")

        alpha = 1.0 - beta
        alpha[0] = 1.0
        alpha_bar = np.cumprod(alpha)
        if alpha_bar[T] <= 0.0:
            raise ValidationError("alpha_bar underflowed to 0; schedule too aggressive for T")
        if not np.all(np.diff(alpha_bar[0:]) < 0.0):
            # alpha_bar[0]=1 > alpha_bar[1] since beta_1 > 0; strict decrease after.
            raise ValidationError("alpha_bar must be strictly decreasing")

        beta_tilde = np.zeros(T + 1)
        beta_tilde[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
        beta_tilde[1] = 0.0  # exact: 1 - alpha_bar[0] == 0

        object.__setattr__(self, "beta", _frozen(beta))
        object.__setattr__(self, "alpha", _frozen(alpha))
        object.__setattr__(self, "alpha_bar", _frozen(alpha_bar))
        object.__setattr__(self, "beta_tilde", _frozen(beta_tilde))
        object.__setattr__(self, "sqrt_alpha_bar", _frozen(np.sqrt(alpha_bar)))
        object.__setattr__(
            self, "sqrt_one_minus_alpha_bar", _frozen(np.sqrt(1.0 - alpha_bar))
        )

    def check_step(self, t: int, lowest: int = 1) -> int:
        """Validate ``lowest <= t <= T`` and return t as int."""
        t = int(t)
        if not lowest <= t <= self.T:
            raise IndexError(f"step t={t} outside [{lowest}, {self.T}]")
        return t

    def fingerprint(self) -> str:
        """Content hash used to detect stale cached statistics."""
        digest = hashlib.sha256()
        digest.update(b"schedule/v1")
        digest.update(struct.pack("<Q", self.T))
        digest.update(np.ascontiguousarray(self.beta[1:], dtype="<f8").tobytes())
        return digest.hexdigest()


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Schedule with beta interpolated linearly from beta_start (t=1) to beta_end (t=T).

    The defaults follow the common convention of 1e-4 to 0.02 over T=1000
    steps. When running at reduced T, scale the endpoints accordingly or
    alpha_bar[T] will not come close to 0.
    """
    T = int(T)
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    beta_start = float(beta_start)
    beta_end = float(beta_end)
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValidationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.zeros(T + 1)
    beta[1:] = np.linspace(beta_start, beta_end, T)
    return NoiseSchedule(T=T, beta=beta)


def posterior_mean_coeffs(s: NoiseSchedule, t: int) -> tuple[float, float]:
    """Coefficients (c0, ct) of the posterior mean  mu = c0*x0 + ct*xt.

    c0 = sqrt(alpha_bar[t-1]) * beta_t / (1 - alpha_bar[t])
    ct = sqrt(alpha[t]) * (1 - alpha_bar[t-1]) / (1 - alpha_bar[t])

    At t=1 this collapses onto x0: (c0, ct) = (1, 0).
    """
    t = s.check_step(t)
    denom = 1.0 - s.alpha_bar[t]
    c0 = s.sqrt_alpha_bar[t - 1] * s.beta[t] / denom
    ct = np.sqrt(s.alpha[t]) * (1.0 - s.alpha_bar[t - 1]) / denom
    return float(c0), float(ct)
