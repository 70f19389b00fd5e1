"""Projection attention: reconstruct through partial diffusion, normalize the
discrepancy against validation statistics, and turn the result into a
conditioning weight map.

The anomaly score of a pixel is how unusual its reconstruction error is,
measured in validation standard deviations and truncated into [1, 6]. Scores
are averaged over a set of projection depths PS. The guidance map inverts
that: score 1 (within one sigma of normal) maps to weight 1, score 6 maps to
weight 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Grid, RngStream, ValidationError
from .denoiser import EpsilonModel
from .gridio import read_grid, write_grid
from .sampler import WeightMap, _reverse_step_array
from .schedule import NoiseSchedule

__all__ = [
    "ValidationStats",
    "AttentionMap",
    "project_reconstruct",
    "project_reconstruct_array",
    "discrepancy",
    "validation_stats",
    "attention_map",
    "attention_from_discrepancies",
    "weight_from_attention",
]

SCORE_MIN = 1.0
SCORE_MAX = 6.0
SIGMA_FLOOR_SCALE = 1e-6

_MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class AttentionMap:
    """Single-channel anomaly map with every value in [1, 6]."""

    grid: Grid

    def __post_init__(self) -> None:
        if self.grid.channels != 1:
            raise ValidationError("attention map must be single-channel")
        vals = self.grid.values
        if vals.min() < SCORE_MIN or vals.max() > SCORE_MAX:
            raise ValidationError(
                f"attention values must lie in [{SCORE_MIN}, {SCORE_MAX}], got "
                f"[{vals.min():.6g}, {vals.max():.6g}]"
            )


@dataclass(frozen=True)
class ValidationStats:
    """Pixel-wise discrepancy statistics of in-distribution reconstructions.

    For each depth t, mu[t] and sigma[t] are the mean and standard deviation
    of the reconstruction discrepancy over the validation set, with sigma
    floored at sigma_floor so near-deterministic pixels cannot blow up the
    normalized score. Fingerprints tie the statistics to the exact model and
    schedule they were computed under.
    """

    depths: tuple[int, ...]
    mu: dict[int, Grid]
    sigma: dict[int, Grid]
    v_count: int
    reps: int
    sigma_floor: float
    model_fingerprint: str
    schedule_fingerprint: str

    def __post_init__(self) -> None:
        if not self.depths:
            raise ValidationError("stats need at least one depth")
        for t in self.depths:
            if t not in self.mu or t not in self.sigma:
                raise ValidationError(f"stats missing grids for depth {t}")
            if self.mu[t].values.min() < 0.0:
                raise ValidationError(f"mu at depth {t} has negative entries")
            if self.sigma[t].values.min() < self.sigma_floor:
                raise ValidationError(f"sigma at depth {t} below the floor")

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "schema_version": 1,
            "depths": list(self.depths),
            "v_count": self.v_count,
            "reps": self.reps,
            "sigma_floor": self.sigma_floor,
            "model_fingerprint": self.model_fingerprint,
            "schedule_fingerprint": self.schedule_fingerprint,
        }
        (directory / _MANIFEST_NAME).write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n"
        )
        for t in self.depths:
            write_grid(directory / f"mu_{t:05d}.fdg", self.mu[t])
            write_grid(directory / f"sigma_{t:05d}.fdg", self.sigma[t])

    @classmethod
    def load(cls, directory) -> "ValidationStats":
        directory = Path(directory)
        manifest_path = directory / _MANIFEST_NAME
        if not manifest_path.is_file():
            raise FileNotFoundError(f"no stats manifest at {manifest_path}")
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("schema_version") != 1:
            raise ValidationError(f"unsupported stats schema: {manifest.get('schema_version')!r}")
        depths = tuple(int(t) for t in manifest["depths"])
        mu = {t: read_grid(directory / f"mu_{t:05d}.fdg") for t in depths}
        sigma = {t: read_grid(directory / f"sigma_{t:05d}.fdg") for t in depths}
        return cls(
            depths=depths,
            mu=mu,
            sigma=sigma,
            v_count=int(manifest["v_count"]),
            reps=int(manifest["reps"]),
            sigma_floor=float(manifest["sigma_floor"]),
            model_fingerprint=str(manifest["model_fingerprint"]),
            schedule_fingerprint=str(manifest["schedule_fingerprint"]),
        )

    def check_compatible(self, model: EpsilonModel, s: NoiseSchedule) -> None:
        if self.model_fingerprint != model.fingerprint():
            raise ValidationError("stats were computed under a different model (stale cache?)")
        if self.schedule_fingerprint != s.fingerprint():
            raise ValidationError("stats were computed under a different schedule (stale cache?)")


# ---------------------------------------------------------------------------
# reconstruction and discrepancy


def project_reconstruct_array(
    model: EpsilonModel, s: NoiseSchedule, x: np.ndarray, t: int, rng: RngStream
) -> np.ndarray:
    """Noise rows to level t, then run the reverse chain back down to 0."""
    t = s.check_step(t, lowest=0)
    if t == 0:
        return np.array(x, dtype=np.float64, copy=True)
    eps = rng.normals(x.size).reshape(x.shape)
    xt = s.sqrt_alpha_bar[t] * x + s.sqrt_one_minus_alpha_bar[t] * eps
    for step in range(t, 0, -1):
        xt = _reverse_step_array(model, xt, step, s, rng)
    return xt


def project_reconstruct(
    model: EpsilonModel, s: NoiseSchedule, x: Grid, t: int, rng: RngStream
) -> Grid:
    """Stochastic reconstruction of x through projection depth t; t=0 is exact."""
    if x.shape != model.shape:
        raise ValidationError(f"grid shape {x.shape} != model shape {model.shape}")
    if s.check_step(t, lowest=0) == 0:
        return x
    out = project_reconstruct_array(model, s, x.flat()[None, :], t, rng)
    return Grid(out.reshape(x.shape))


def _discrepancy_rows(a: np.ndarray, b: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Per-pixel Euclidean distance across channels; rows (n, D) -> (n, h*w)."""
    h, w, c = shape
    diff = (a - b).reshape(-1, h * w, c)
    return np.sqrt(np.sum(diff * diff, axis=2))


def discrepancy(x: Grid, xhat: Grid) -> Grid:
    """Pixel-wise distance between x and xhat: L2 across channels, c=1 output."""
    shape = x.shape
    if xhat.shape != shape:
        raise ValidationError(f"grid shapes differ: {x.shape} vs {xhat.shape}")
    rows = _discrepancy_rows(x.flat()[None, :], xhat.flat()[None, :], shape)
    return Grid(rows.reshape(shape[0], shape[1], 1))


# ---------------------------------------------------------------------------
# validation statistics


def validation_stats(
    model: EpsilonModel,
    s: NoiseSchedule,
    V: list[Grid],
    PS: list[int],
    reps: int = 1,
    rng: RngStream | None = None,
) -> ValidationStats:
    """Mean and std of reconstruction discrepancy per pixel and depth.

    Each depth consumes draws only from its own child stream, so the set of
    depths can be processed in any execution order with identical results;
    accumulation follows the order of PS. Each member's discrepancy sample is
    the average over ``reps`` independent reconstructions, mirroring exactly
    what :func:`attention_map` computes for the probe image.

    Depth 0 is allowed and gives the degenerate exact reconstruction (mu = 0,
    sigma at the floor): useful as a fixed-point check of the whole pipeline.
    """
    if rng is None:
        raise ValidationError("validation_stats requires an RngStream")
    if not V:
        raise ValidationError("validation set must be non-empty")
    depths = [s.check_step(t, lowest=0) for t in PS]
    if len(set(depths)) != len(depths):
        raise ValidationError(f"duplicate depths in PS: {PS}")
    reps = int(reps)
    if reps < 1:
        raise ValidationError(f"reps must be >= 1, got {reps}")

    shape = model.shape
    for g in V:
        if g.shape != shape:
            raise ValidationError(f"validation grid shape {g.shape} != model shape {shape}")
    X = np.stack([g.flat() for g in V])  # (n, D)
    n = X.shape[0]
    floor = SIGMA_FLOOR_SCALE * model.marginal_std()

    h, w, _ = shape
    mu: dict[int, Grid] = {}
    sigma: dict[int, Grid] = {}
    for k, t in enumerate(depths):
        stream = rng.child(k)
        acc = np.zeros((n, h * w))
        for _ in range(reps):
            xhat = project_reconstruct_array(model, s, X, t, stream)
            acc += _discrepancy_rows(X, xhat, shape)
        d = acc / reps
        mu[t] = Grid(d.mean(axis=0).reshape(h, w, 1))
        sig = np.maximum(d.std(axis=0), floor)
        sigma[t] = Grid(sig.reshape(h, w, 1))

    return ValidationStats(
        depths=tuple(depths),
        mu=mu,
        sigma=sigma,
        v_count=n,
        reps=reps,
        sigma_floor=floor,
        model_fingerprint=model.fingerprint(),
        schedule_fingerprint=s.fingerprint(),
    )


# ---------------------------------------------------------------------------
# attention


def attention_from_discrepancies(
    dmaps: dict[int, Grid], stats: ValidationStats
) -> AttentionMap:
    """Normalize per-depth discrepancy maps against stats and average.

    Pure function of its inputs: score_t = clip((d_t - mu_t) / sigma_t, 1, 6)
    per pixel, averaged over stats.depths.
    """
    acc = None
    for t in stats.depths:
        if t not in dmaps:
            raise ValidationError(f"missing discrepancy map for depth {t}")
        score = (dmaps[t].values - stats.mu[t].values) / stats.sigma[t].values
        score = np.clip(score, SCORE_MIN, SCORE_MAX)
        acc = score if acc is None else acc + score
    assert acc is not None
    return AttentionMap(Grid(acc / len(stats.depths)))


def attention_map(
    x: Grid,
    stats: ValidationStats,
    model: EpsilonModel,
    s: NoiseSchedule,
    reps: int = 1,
    rng: RngStream | None = None,
) -> AttentionMap:
    """Anomaly map of x: normalized reconstruction discrepancy over stats.depths.

    Refuses statistics whose fingerprints do not match the live model and
    schedule. Depth k uses draws from rng.child(k), the same stream layout
    validation_stats uses, and averages ``reps`` reconstructions per depth
    before normalizing.
    """
    if rng is None:
        raise ValidationError("attention_map requires an RngStream")
    stats.check_compatible(model, s)
    if x.shape != model.shape:
        raise ValidationError(f"grid shape {x.shape} != model shape {model.shape}")
    reps = int(reps)
    if reps < 1:
        raise ValidationError(f"reps must be >= 1, got {reps}")

    h, w, _ = x.shape
    row = x.flat()[None, :]
    dmaps: dict[int, Grid] = {}
    for k, t in enumerate(stats.depths):
        stream = rng.child(k)
        acc = np.zeros((1, h * w))
        for _ in range(reps):
            xhat = project_reconstruct_array(model, s, row, t, stream)
            acc += _discrepancy_rows(row, xhat, x.shape)
        dmaps[t] = Grid((acc / reps).reshape(h, w, 1))
    return attention_from_discrepancies(dmaps, stats)


def weight_from_attention(a: AttentionMap) -> WeightMap:
    """Map attention scores onto conditioning weights.

    The score range [1, 6] is first rescaled to [0, 1]; the weight is the
    square of the remaining headroom: m = (1 - (A - 1)/5)^2. A pixel within
    one sigma of normal keeps full conditioning (m=1); a 6-sigma pixel is
    fully regenerated (m=0).
    """
    scaled = (a.grid.values - SCORE_MIN) / (SCORE_MAX - SCORE_MIN)
    return WeightMap(Grid((1.0 - scaled) ** 2))
