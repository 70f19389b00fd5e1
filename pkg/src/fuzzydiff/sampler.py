"""Ancestral diffusion sampling and fuzzy per-pixel conditioning.

The public operations take and return :class:`~fuzzydiff.core.Grid` values.
Internally everything runs on (n, D) float64 arrays so batches share one
vectorized trajectory; the Grid entry points are the n=1 case of the same
code path, so draw order is identical either way.

Draw order per trajectory is part of the determinism contract:

1. the start state x_T (n*D normals),
2. then per step t = T..1 and inner iteration j = 1..J, in order:
   the reprojection noise (t > 1 only), the reverse-step noise (t > 1 only),
   the renoise draw (only when j < J and t > 1).

Unconditional sampling is the J=1, m=0 special case of the same loop shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Grid, RngStream, ValidationError
from .denoiser import EpsilonModel
from .schedule import NoiseSchedule

__all__ = [
    "WeightMap",
    "FuzzySamplerConfig",
    "forward_sample",
    "forward_mean",
    "reverse_step",
    "reverse_mean",
    "ancestral_sample",
    "ancestral_sample_array",
    "fuzzy_fuse",
    "renoise",
    "fuzzy_sample",
    "fuzzy_sample_array",
]


class WeightMap:
    """Per-pixel conditioning strength m with every entry in [0, 1].

    A single-channel map broadcasts across the channels of the image it
    conditions; a per-channel map must match exactly.
    """

    __slots__ = ("grid",)

    def __init__(self, grid: Grid) -> None:
        vals = grid.values
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise ValidationError(
                f"weight map values must lie in [0, 1], got range "
                f"[{vals.min():.6g}, {vals.max():.6g}]"
            )
        self.grid = grid

    @classmethod
    def uniform(cls, value: float, height: int, width: int, channels: int = 1) -> "WeightMap":
        return cls(Grid.full(height, width, channels, value))

    def broadcast_to(self, shape: tuple[int, int, int]) -> np.ndarray:
        h, w, c = shape
        gh, gw, gc = self.grid.shape
        if (gh, gw) != (h, w):
            raise ValidationError(
                f"weight map spatial dims {(gh, gw)} != image dims {(h, w)}"
            )
        if gc not in (1, c):
            raise ValidationError(f"weight map has {gc} channels, image has {c}")
        return np.broadcast_to(self.grid.values, shape)


@dataclass(frozen=True)
class FuzzySamplerConfig:
    """Knobs for :func:`fuzzy_sample`.

    J is the number of harmonization iterations per step; J=1 disables
    harmonization. record_trajectory makes fuzzy_sample also return the
    carried state after every step, for debugging.
    """

    J: int = 5
    record_trajectory: bool = False

    def __post_init__(self) -> None:
        if int(self.J) < 1:
            raise ValidationError(f"J must be >= 1, got {self.J}")
        object.__setattr__(self, "J", int(self.J))


def _coerce_map(m, shape: tuple[int, int, int]) -> np.ndarray:
    if isinstance(m, (int, float)):
        m = WeightMap.uniform(float(m), shape[0], shape[1], 1)
    if not isinstance(m, WeightMap):
        raise ValidationError(f"expected WeightMap or scalar, got {type(m).__name__}")
    return m.broadcast_to(shape).reshape(-1)


def _check_same_shape(*grids: Grid) -> tuple[int, int, int]:
    shape = grids[0].shape
    for g in grids[1:]:
        if g.shape != shape:
            raise ValidationError(f"grid shapes differ: {g.shape} vs {shape}")
    return shape


# ---------------------------------------------------------------------------
# forward process


def forward_sample(x0: Grid, t: int, s: NoiseSchedule, rng: RngStream) -> Grid:
    """One draw of the noised state at step t given clean data x0.

    t=0 returns x0 itself (alpha_bar[0] = 1) and consumes no randomness.
    """
    t = s.check_step(t, lowest=0)
    if t == 0:
        return x0
    eps = rng.normals(x0.size).reshape(x0.shape)
    return Grid(s.sqrt_alpha_bar[t] * x0.values + s.sqrt_one_minus_alpha_bar[t] * eps)


def forward_mean(x0: Grid, t: int, s: NoiseSchedule) -> Grid:
    """The zero-noise forward point sqrt(alpha_bar[t]) * x0."""
    t = s.check_step(t, lowest=0)
    if t == 0:
        return x0
    return Grid(s.sqrt_alpha_bar[t] * x0.values)


def renoise(x: Grid, t: int, s: NoiseSchedule, rng: RngStream) -> Grid:
    """One forward Markov step onto level t: sqrt(1-beta_t)*x + sqrt(beta_t)*eps."""
    t = s.check_step(t)
    eps = rng.normals(x.size).reshape(x.shape)
    return Grid(np.sqrt(s.alpha[t]) * x.values + np.sqrt(s.beta[t]) * eps)


# ---------------------------------------------------------------------------
# reverse process


def _reverse_mean_array(
    model: EpsilonModel, x: np.ndarray, t: int, s: NoiseSchedule
) -> np.ndarray:
    eps_hat = model.predict_array(x, t, s)
    scale = (1.0 - s.alpha[t]) / s.sqrt_one_minus_alpha_bar[t]
    return (x - scale * eps_hat) / np.sqrt(s.alpha[t])


def _reverse_step_array(
    model: EpsilonModel, x: np.ndarray, t: int, s: NoiseSchedule, rng: RngStream
) -> np.ndarray:
    mean = _reverse_mean_array(model, x, t, s)
    if t == 1:
        return mean
    eps2 = rng.normals(x.size).reshape(x.shape)
    return mean + np.sqrt(s.beta_tilde[t]) * eps2


def reverse_mean(model: EpsilonModel, x_t: Grid, t: int, s: NoiseSchedule) -> Grid:
    """Mean of the reverse kernel at step t (no noise term)."""
    t = s.check_step(t)
    row = x_t.flat()[None, :]
    if x_t.shape != model.shape:
        raise ValidationError(f"grid shape {x_t.shape} != model shape {model.shape}")
    return Grid(_reverse_mean_array(model, row, t, s).reshape(x_t.shape))


def reverse_step(
    model: EpsilonModel, x_t: Grid, t: int, s: NoiseSchedule, rng: RngStream
) -> Grid:
    """One ancestral step t -> t-1; deterministic at t=1 (beta_tilde[1] = 0)."""
    t = s.check_step(t)
    if x_t.shape != model.shape:
        raise ValidationError(f"grid shape {x_t.shape} != model shape {model.shape}")
    row = x_t.flat()[None, :]
    out = _reverse_step_array(model, row, t, s, rng)
    return Grid(out.reshape(x_t.shape))


def ancestral_sample_array(
    model: EpsilonModel, s: NoiseSchedule, n: int, rng: RngStream
) -> np.ndarray:
    """n unconditional draws as (n, D) rows, iterating the reverse chain from noise."""
    if n < 1:
        raise ValidationError(f"sample count must be >= 1, got {n}")
    D = model.dim
    x = rng.normals(n * D).reshape(n, D)
    for t in range(s.T, 0, -1):
        x = _reverse_step_array(model, x, t, s, rng)
    return x


def ancestral_sample(
    model: EpsilonModel, s: NoiseSchedule, shape: tuple[int, int, int], rng: RngStream
) -> Grid:
    """One unconditional sample from the model's learned-data surrogate."""
    if tuple(shape) != model.shape:
        raise ValidationError(f"requested shape {tuple(shape)} != model shape {model.shape}")
    return Grid(ancestral_sample_array(model, s, 1, rng)[0].reshape(model.shape))


# ---------------------------------------------------------------------------
# fuzzy conditioning


def _fuse_array(
    x_synth: np.ndarray,
    x_reproj: np.ndarray,
    x_cond: np.ndarray,
    m: np.ndarray,
    t: int,
    s: NoiseSchedule,
) -> np.ndarray:
    base = s.sqrt_alpha_bar[t - 1] * x_cond
    blend = m * x_reproj + (1.0 - m) * x_synth
    fused = base + (blend - base) / np.sqrt(1.0 - 2.0 * m + 2.0 * m * m)
    # The algebra is the identity at the endpoints, but float blending is not
    # bit-exact there; the boundary contract is, so select explicitly.
    fused = np.where(m == 0.0, x_synth, fused)
    fused = np.where(m == 1.0, x_reproj, fused)
    return fused


def fuzzy_fuse(
    x_synth: Grid,
    x_reproj: Grid,
    x_cond: Grid,
    m,
    t: int,
    s: NoiseSchedule,
) -> Grid:
    """Blend the synthetic and reprojected branches at per-pixel strength m.

    Computes, per pixel,

        base + (m * x_reproj + (1 - m) * x_synth - base) / sqrt(1 - 2m + 2m^2)

    with base = sqrt(alpha_bar[t-1]) * x_cond. The divisor restores the
    variance both branches carry at level t-1, so the fused pixel stays on the
    diffusion marginal. m=0 returns x_synth and m=1 returns x_reproj, bit-exact.
    """
    t = s.check_step(t)
    shape = _check_same_shape(x_synth, x_reproj, x_cond)
    m_flat = _coerce_map(m, shape)
    out = _fuse_array(
        x_synth.flat(), x_reproj.flat(), x_cond.flat(), m_flat, t, s
    )
    return Grid(out.reshape(shape))


def fuzzy_sample_array(
    model: EpsilonModel,
    s: NoiseSchedule,
    x_cond: np.ndarray,
    m: np.ndarray,
    J: int,
    n: int,
    rng: RngStream,
    record: list | None = None,
) -> np.ndarray:
    """Batched fuzzy-conditioned sampler core on (n, D) rows.

    Per step t, the inner loop runs J times: draw the reprojected branch at
    level t-1, take one reverse step from the current level-t state, fuse, and
    (except on the last iteration) renoise the fused result back to level t.
    The final fusion is carried as the level t-1 state. At t=1 the loop is
    draw-free and idempotent, so it runs once.
    """
    if n < 1:
        raise ValidationError(f"sample count must be >= 1, got {n}")
    D = model.dim
    x_cond = np.asarray(x_cond, dtype=np.float64).reshape(D)
    m = np.asarray(m, dtype=np.float64).reshape(D)

    x = rng.normals(n * D).reshape(n, D)
    for t in range(s.T, 0, -1):
        sq_prev = s.sqrt_alpha_bar[t - 1]
        sig_prev = s.sqrt_one_minus_alpha_bar[t - 1]
        inner = J if t > 1 else 1
        x_t = x
        x_m = x_t  # overwritten below; J >= 1
        for j in range(1, inner + 1):
            if t > 1:
                eps_r = rng.normals(n * D).reshape(n, D)
                x_reproj = sq_prev * x_cond + sig_prev * eps_r
            else:
                x_reproj = np.broadcast_to(x_cond, (n, D))
            x_synth = _reverse_step_array(model, x_t, t, s, rng)
            x_m = _fuse_array(x_synth, x_reproj, x_cond, m, t, s)
            if j < inner:
                eps3 = rng.normals(n * D).reshape(n, D)
                x_t = np.sqrt(s.alpha[t]) * x_m + np.sqrt(s.beta[t]) * eps3
        x = x_m
        if record is not None:
            record.append(x.copy())
    return x


def fuzzy_sample(
    model: EpsilonModel,
    s: NoiseSchedule,
    x_cond: Grid,
    m,
    cfg: FuzzySamplerConfig,
    rng: RngStream,
):
    """Sample conditioned on x_cond at per-pixel strength m.

    m=1 pixels reproduce x_cond exactly; m=0 pixels are unconditional. With
    cfg.record_trajectory the return value is (sample, states) where states
    holds the carried grid after each step t = T..1.
    """
    if x_cond.shape != model.shape:
        raise ValidationError(f"grid shape {x_cond.shape} != model shape {model.shape}")
    m_flat = _coerce_map(m, x_cond.shape)
    record: list | None = [] if cfg.record_trajectory else None
    out = fuzzy_sample_array(
        model, s, x_cond.flat(), m_flat, cfg.J, 1, rng, record=record
    )
    result = Grid(out[0].reshape(x_cond.shape))
    if record is None:
        return result
    states = tuple(Grid(r[0].reshape(x_cond.shape)) for r in record)
    return result, states
