"""Synthetic degradations, statistical metrics, and the end-to-end
correction experiment: degrade an oracle draw, locate the damage with the
attention map, and repair it with fuzzy-conditioned sampling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Grid, RngStream, ValidationError
from .denoiser import EpsilonModel
from .gridio import write_grid
from .projection import (
    attention_map,
    project_reconstruct,
    validation_stats,
    weight_from_attention,
)
from .sampler import FuzzySamplerConfig, fuzzy_sample
from .schedule import NoiseSchedule

__all__ = [
    "DegradeParams",
    "DegradationRecord",
    "degrade",
    "ks_two_sample",
    "ks_critical",
    "moment_error",
    "pixel_auc",
    "masked_mse",
    "ExperimentConfig",
    "ExperimentReport",
    "run_correction_experiment",
]


# ---------------------------------------------------------------------------
# degradation


@dataclass(frozen=True)
class DegradeParams:
    """Rectangle-degradation parameters.

    Side lengths are drawn uniformly from [side_min, side_max] (inclusive,
    per axis); the replacement threshold uniformly from
    [threshold_low, threshold_high]. Use :meth:`for_model` to derive the
    conventional defaults: sides in [h/4, h/2], threshold between 4 and 8
    marginal standard deviations above the data mean.
    """

    side_min: int
    side_max: int
    threshold_low: float
    threshold_high: float

    def __post_init__(self) -> None:
        if self.side_min < 0 or self.side_max < self.side_min:
            raise ValidationError(
                f"need 0 <= side_min <= side_max, got [{self.side_min}, {self.side_max}]"
            )
        if self.threshold_high < self.threshold_low:
            raise ValidationError("threshold_high must be >= threshold_low")

    @classmethod
    def for_model(
        cls,
        model: EpsilonModel,
        sigma_low: float = 4.0,
        sigma_high: float = 8.0,
    ) -> "DegradeParams":
        h = model.shape[0]
        mean = float(np.mean(model.moments()[0]))
        std = model.marginal_std()
        return cls(
            side_min=max(1, h // 4),
            side_max=max(1, h // 2),
            threshold_low=mean + sigma_low * std,
            threshold_high=mean + sigma_high * std,
        )


@dataclass(frozen=True)
class DegradationRecord:
    """Ground truth of one synthetic degradation.

    rect is (x0, y0, x1, y1) with half-open bounds: columns [x0, x1) and rows
    [y0, y1). mask is 1 inside the rectangle and 0 outside, single-channel.
    """

    rect: tuple[int, int, int, int]
    threshold: float
    mask: Grid

    @property
    def area(self) -> int:
        x0, y0, x1, y1 = self.rect
        return max(0, x1 - x0) * max(0, y1 - y0)

    def to_dict(self) -> dict:
        return {"rect": list(self.rect), "threshold": self.threshold, "area": self.area}


def _uniform_int(rng: RngStream, low: int, high: int) -> int:
    """Uniform integer in [low, high] inclusive; consumes exactly one draw."""
    span = high - low + 1
    u = float(rng.uniforms(1)[0])  # u in (0, 1]
    return low + min(int(u * span), span - 1)


def degrade(x: Grid, params: DegradeParams, rng: RngStream) -> tuple[Grid, DegradationRecord]:
    """Replace a random rectangle of x with a random out-of-range threshold.

    Every pixel inside the rectangle is set to the sampled threshold on all
    channels; everything outside is untouched bit-exactly. Draw order is
    pinned (side_h, side_w, y0, x0, threshold) so records are reproducible.
    A zero-area configuration (side_min = side_max = 0) returns x unchanged.
    """
    h, w, c = x.shape
    if params.side_max > min(h, w):
        raise ValidationError(
            f"side_max {params.side_max} exceeds image dims {(h, w)}"
        )
    side_h = _uniform_int(rng, params.side_min, params.side_max)
    side_w = _uniform_int(rng, params.side_min, params.side_max)
    y0 = _uniform_int(rng, 0, h - side_h)
    x0 = _uniform_int(rng, 0, w - side_w)
    u = float(rng.uniforms(1)[0])
    threshold = params.threshold_low + u * (params.threshold_high - params.threshold_low)

    mask = np.zeros((h, w, 1))
    mask[y0 : y0 + side_h, x0 : x0 + side_w, :] = 1.0
    record = DegradationRecord(
        rect=(x0, y0, x0 + side_w, y0 + side_h),
        threshold=threshold,
        mask=Grid(mask),
    )
    if record.area == 0:
        return x, record
    vals = np.array(x.values, copy=True)
    vals[y0 : y0 + side_h, x0 : x0 + side_w, :] = threshold
    return Grid(vals), record


# ---------------------------------------------------------------------------
# metrics


def ks_two_sample(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic: sup |F_a - F_b|."""
    a = np.sort(np.asarray(a, dtype=np.float64).reshape(-1))
    b = np.sort(np.asarray(b, dtype=np.float64).reshape(-1))
    if a.size == 0 or b.size == 0:
        raise ValidationError("ks_two_sample needs non-empty samples")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.abs(cdf_a - cdf_b).max())


def ks_critical(n: int, m: int, alpha: float = 0.01) -> float:
    """Asymptotic two-sample KS critical value at level alpha."""
    if n < 1 or m < 1:
        raise ValidationError("sample sizes must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    c = math.sqrt(-0.5 * math.log(alpha / 2.0))
    return c * math.sqrt((n + m) / (n * m))


def _as_rows(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        rows = np.asarray(samples, dtype=np.float64)
        if rows.ndim != 2:
            raise ValidationError(f"sample array must be (n, D), got {rows.shape}")
        return rows
    return np.stack([g.flat() for g in samples])


def moment_error(samples, model: EpsilonModel) -> tuple[float, float]:
    """Gap between sample moments and the model's analytic ones.

    Returns (max per-pixel |mean difference|, relative Frobenius error of the
    sample covariance). Accepts a list of Grids or an (n, D) array; needs at
    least two samples.
    """
    rows = _as_rows(samples)
    if rows.shape[0] < 2:
        raise ValidationError("moment_error needs at least 2 samples")
    mean, cov = model.moments()
    if rows.shape[1] != mean.size:
        raise ValidationError(f"sample dim {rows.shape[1]} != model dim {mean.size}")
    mean_err = float(np.abs(rows.mean(axis=0) - mean).max())
    sample_cov = np.cov(rows, rowvar=False)
    cov_err = float(np.linalg.norm(sample_cov - cov) / np.linalg.norm(cov))
    return mean_err, cov_err


def pixel_auc(score: Grid, mask: Grid) -> float:
    """ROC AUC of per-pixel scores against a binary mask, midrank ties."""
    if score.shape[:2] != mask.shape[:2]:
        raise ValidationError(f"score dims {score.shape} != mask dims {mask.shape}")
    sc = score.flat() if score.channels == 1 else score.values.mean(axis=2).reshape(-1)
    mk = mask.flat() if mask.channels == 1 else mask.values[:, :, 0].reshape(-1)
    pos = mk == 1.0
    neg = mk == 0.0
    if not np.all(pos | neg):
        raise ValidationError("mask must be binary (0/1)")
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("mask must contain both classes")
    _, inverse, counts = np.unique(sc, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    midranks = (ends - counts + 1 + ends) / 2.0
    ranks = midranks[inverse]
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def masked_mse(a: Grid, b: Grid, mask: Grid, inside: bool = True) -> float | None:
    """Mean squared difference over pixels selected by the mask.

    Returns None when the selected region is empty.
    """
    if a.shape != b.shape:
        raise ValidationError(f"grid shapes differ: {a.shape} vs {b.shape}")
    sel = mask.values[:, :, 0] == (1.0 if inside else 0.0)
    if not sel.any():
        return None
    diff = a.values[sel] - b.values[sel]
    return float(np.mean(diff * diff))


# ---------------------------------------------------------------------------
# end-to-end correction experiment


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything run_correction_experiment needs besides the RngStream.

    depths defaults to the conventional projection set
    {0.3T, 0.4T, 0.5T, 0.6T} (rounded); baseline_depth to 0.4T. Disabling
    degradation turns the run into a fixed-point check: the map should stay
    near 1 and the output near the input.
    """

    model: EpsilonModel
    schedule: NoiseSchedule
    trials: int = 20
    J: int = 2
    depths: tuple[int, ...] | None = None
    reps: int = 1
    v_count: int = 200
    baseline_depth: int | None = None
    degrade_enabled: bool = True
    sigma_low: float = 4.0
    sigma_high: float = 8.0
    side_min: int | None = None
    side_max: int | None = None
    record_artifacts: bool = False
    artifacts_dir: str | None = None

    def resolved_depths(self) -> tuple[int, ...]:
        if self.depths is not None:
            return tuple(int(t) for t in self.depths)
        T = self.schedule.T
        # Deduplicate for tiny T where the rounded fractions collide.
        out: list[int] = []
        for frac in (0.3, 0.4, 0.5, 0.6):
            t = max(1, round(frac * T))
            if t not in out:
                out.append(t)
        return tuple(out)

    def resolved_baseline_depth(self) -> int:
        if self.baseline_depth is not None:
            return int(self.baseline_depth)
        return max(1, round(0.4 * self.schedule.T))

    def degrade_params(self) -> DegradeParams:
        base = DegradeParams.for_model(self.model, self.sigma_low, self.sigma_high)
        side_min = base.side_min if self.side_min is None else int(self.side_min)
        side_max = base.side_max if self.side_max is None else int(self.side_max)
        return DegradeParams(
            side_min=side_min,
            side_max=side_max,
            threshold_low=base.threshold_low,
            threshold_high=base.threshold_high,
        )

    def describe(self) -> dict:
        """JSON-able echo of the configuration, for the report."""
        return {
            "model_fingerprint": self.model.fingerprint(),
            "schedule_fingerprint": self.schedule.fingerprint(),
            "schedule_T": self.schedule.T,
            "trials": self.trials,
            "J": self.J,
            "depths": list(self.resolved_depths()),
            "reps": self.reps,
            "v_count": self.v_count,
            "baseline_depth": self.resolved_baseline_depth(),
            "degrade_enabled": self.degrade_enabled,
            "sigma_low": self.sigma_low,
            "sigma_high": self.sigma_high,
            "side_min": self.side_min,
            "side_max": self.side_max,
        }


@dataclass(frozen=True)
class ExperimentReport:
    """Per-trial metrics plus aggregates; everything recomputable from
    (config, seed)."""

    schema_version: int
    config: dict
    seed: int
    stream_id: int
    trials: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "seed": self.seed,
            "stream_id": self.stream_id,
            "trials": self.trials,
            "aggregates": self.aggregates,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")


def _median(values: list[float]) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else None


def run_correction_experiment(config: ExperimentConfig, rng: RngStream) -> ExperimentReport:
    """Draw clean oracle images, degrade, detect, and repair them.

    Stream layout: child 0 draws the validation set, child 1 feeds
    validation_stats, and trial i uses child (2 + i) with sub-children for
    its clean draw, degradation, attention, fuzzy repair, and the projection
    baseline. Trials are therefore independent and order-insensitive.
    """
    model = config.model
    s = config.schedule
    depths = config.resolved_depths()
    params = config.degrade_params() if config.degrade_enabled else None
    baseline_t = config.resolved_baseline_depth()

    v_rows = model.sample_x0(config.v_count, rng.child(0))
    V = [Grid(row.reshape(model.shape)) for row in v_rows]
    stats = validation_stats(model, s, V, list(depths), reps=config.reps, rng=rng.child(1))

    art_dir: Path | None = None
    if config.record_artifacts:
        if config.artifacts_dir is None:
            raise ValidationError("record_artifacts requires artifacts_dir")
        art_dir = Path(config.artifacts_dir)
        art_dir.mkdir(parents=True, exist_ok=True)

    fuzzy_cfg = FuzzySamplerConfig(J=config.J)
    marginal_var = model.marginal_std() ** 2
    trials: list[dict] = []
    for i in range(config.trials):
        tr = rng.child(2 + i)
        clean = Grid(model.sample_x0(1, tr.child(0))[0].reshape(model.shape))
        if params is not None:
            degraded, record = degrade(clean, params, tr.child(1))
        else:
            degraded = clean
            record = DegradationRecord(
                rect=(0, 0, 0, 0),
                threshold=0.0,
                mask=Grid.zeros(model.shape[0], model.shape[1], 1),
            )
        amap = attention_map(degraded, stats, model, s, reps=config.reps, rng=tr.child(2))
        weights = weight_from_attention(amap)
        corrected = fuzzy_sample(model, s, degraded, weights, fuzzy_cfg, tr.child(3))
        baseline = project_reconstruct(model, s, degraded, baseline_t, tr.child(4))

        has_region = record.area > 0
        trial = {
            "trial": i,
            "degradation": record.to_dict() if params is not None else None,
            "auc": pixel_auc(amap.grid, record.mask) if has_region else None,
            "mse_in_degraded": masked_mse(degraded, clean, record.mask, inside=True),
            "mse_in_corrected": masked_mse(corrected, clean, record.mask, inside=True),
            "mse_in_baseline": masked_mse(baseline, clean, record.mask, inside=True),
            "mse_out_corrected": masked_mse(corrected, clean, record.mask, inside=False),
            "mse_out_baseline": masked_mse(baseline, clean, record.mask, inside=False),
            "mse_total_corrected": masked_mse(
                corrected, clean, Grid.zeros(model.shape[0], model.shape[1], 1), inside=False
            ),
            "mean_weight": float(weights.grid.values.mean()),
        }
        trials.append(trial)

        if art_dir is not None:
            for name, g in (
                ("clean", clean),
                ("degraded", degraded),
                ("attention", amap.grid),
                ("weights", weights.grid),
                ("corrected", corrected),
                ("baseline", baseline),
            ):
                write_grid(art_dir / f"trial_{i:03d}_{name}.fdg", g)

    reductions = []
    baseline_wins = 0
    comparable = 0
    for trial in trials:
        before = trial["mse_in_degraded"]
        after = trial["mse_in_corrected"]
        if before is not None and after is not None and before > 0:
            reductions.append(1.0 - after / before)
        out_c = trial["mse_out_corrected"]
        out_b = trial["mse_out_baseline"]
        if out_c is not None and out_b is not None:
            comparable += 1
            if out_c < out_b:
                baseline_wins += 1

    aggregates = {
        "median_auc": _median([t["auc"] for t in trials]),
        "median_masked_reduction": _median(reductions) if reductions else None,
        "median_mse_in_corrected": _median([t["mse_in_corrected"] for t in trials]),
        "median_mse_in_degraded": _median([t["mse_in_degraded"] for t in trials]),
        "median_mse_out_corrected": _median([t["mse_out_corrected"] for t in trials]),
        "median_mse_out_baseline": _median([t["mse_out_baseline"] for t in trials]),
        "median_mse_total_corrected": _median([t["mse_total_corrected"] for t in trials]),
        "unmasked_wins_vs_baseline": baseline_wins,
        "unmasked_comparisons": comparable,
        "oracle_marginal_variance": marginal_var,
    }
    return ExperimentReport(
        schema_version=1,
        config=config.describe(),
        seed=rng.seed,
        stream_id=rng.stream_id,
        trials=trials,
        aggregates=aggregates,
    )
