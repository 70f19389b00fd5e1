"""Analytic noise-prediction oracles.

Both models below know their data distribution q(x_0) in closed form, so the
optimal noise predictor is available exactly:

    eps_hat(x_t, t) = (x_t - sqrt(abar_t) * E[x_0 | x_t]) / sqrt(1 - abar_t)

with E[x_0 | x_t] the posterior mean under the noised marginal
q(x_t) = integral q(x_t | x_0) q(x_0) dx_0. This replaces a trained network
end to end: every sampler property downstream can then be checked against
closed-form truth instead of eyeballed.
"""

from __future__ import annotations

import abc
import hashlib
import math
import struct

import numpy as np

from .core import Grid, RngStream, ValidationError
from .schedule import NoiseSchedule

__all__ = [
    "EpsilonModel",
    "GaussianFieldModel",
    "GmmPixelModel",
    "gaussian_predict",
    "gmm_predict",
    "log_marginal",
]

_LOG_2PI = math.log(2.0 * math.pi)


def _hash_parts(*parts: bytes) -> str:
    digest = hashlib.sha256()
    for p in parts:
        digest.update(p)
    return digest.hexdigest()


def _f8(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


class EpsilonModel(abc.ABC):
    """Contract for noise predictors operating on flattened pixel vectors.

    ``shape`` is the (h, w, c) grid shape the model is defined over and
    D = h*w*c its flattened dimension. ``predict`` is the Grid-facing entry
    point; ``predict_array`` is the batched core that samplers drive, taking
    and returning arrays of shape (n, D).
    """

    shape: tuple[int, int, int]

    @property
    def dim(self) -> int:
        h, w, c = self.shape
        return h * w * c

    def _check_grid(self, x: Grid) -> np.ndarray:
        if x.shape != self.shape:
            raise ValidationError(f"grid shape {x.shape} != model shape {self.shape}")
        return x.flat()[None, :]

    def predict(self, x_t: Grid, t: int, s: NoiseSchedule) -> Grid:
        """Noise estimate for a single grid at step t."""
        row = self._check_grid(x_t)
        out = self.predict_array(row, t, s)
        return Grid(out.reshape(self.shape))

    @abc.abstractmethod
    def predict_array(self, x: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
        """Noise estimates for a batch; x has shape (n, D), 1 <= t <= T."""

    @abc.abstractmethod
    def log_marginal_array(self, x: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
        """log q(x_t) per batch row at step t (t=0 gives the data density)."""

    def log_marginal(self, x_t: Grid, t: int, s: NoiseSchedule) -> float:
        row = self._check_grid(x_t)
        return float(self.log_marginal_array(row, t, s)[0])

    @abc.abstractmethod
    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        """(mean (D,), covariance (D, D)) of q(x_0)."""

    @abc.abstractmethod
    def sample_x0(self, n: int, rng: RngStream) -> np.ndarray:
        """n exact draws from q(x_0), shape (n, D)."""

    def sample_x0_grid(self, rng: RngStream) -> Grid:
        return Grid(self.sample_x0(1, rng)[0].reshape(self.shape))

    def mean_grid(self) -> Grid:
        return Grid(self.moments()[0].reshape(self.shape))

    def marginal_std(self) -> float:
        """Scalar spread of a typical pixel (root mean marginal variance)."""
        _, cov = self.moments()
        return float(np.sqrt(np.mean(np.diag(cov))))

    @abc.abstractmethod
    def fingerprint(self) -> str:
        """Content hash of the model definition, for cache staleness checks."""


class GaussianFieldModel(EpsilonModel):
    """q(x_0) = N(mu, Sigma) over the flattened D-dimensional pixel space.

    Sigma is eigendecomposed once at construction; all per-step conditioning
    happens in the eigenbasis, where the posterior gain along eigendirection i
    at noise level abar is

        g_i = sqrt(abar) * lam_i / (abar * lam_i + 1 - abar).
    """

    def __init__(self, shape: tuple[int, int, int], mean, cov: np.ndarray) -> None:
        h, w, c = (int(d) for d in shape)
        if min(h, w, c) < 1:
            raise ValidationError(f"bad model shape {(h, w, c)}")
        self.shape = (h, w, c)
        D = self.dim

        mu = np.asarray(mean, dtype=np.float64)
        if mu.ndim == 0:
            mu = np.full(D, float(mu))
        mu = mu.reshape(-1)
        if mu.shape != (D,):
            raise ValidationError(f"mean has {mu.size} entries, model needs {D}")

        cov = np.asarray(cov, dtype=np.float64)
        if cov.shape != (D, D):
            raise ValidationError(f"covariance must be ({D}, {D}), got {cov.shape}")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValidationError("covariance must be symmetric")

        lam, vecs = np.linalg.eigh(cov)
        if lam.min() < -1e-10:
            raise ValidationError(f"covariance not PSD (min eigenvalue {lam.min():.3e})")
        lam = np.clip(lam, 0.0, None)
        ortho_err = np.abs(vecs.T @ vecs - np.eye(D)).max()
        if ortho_err > 1e-10:
            raise ValidationError(f"eigenvectors not orthonormal (err {ortho_err:.3e})")

        self.mu = mu
        self.cov_eigvals = lam
        self.cov_eigvecs = vecs
        self._cov = cov
        self._sqrt_lam = np.sqrt(lam)

    @classmethod
    def exponential(
        cls,
        height: int = 8,
        width: int = 8,
        channels: int = 1,
        mean: float = 0.5,
        marginal_variance: float = 0.04,
        correlation_length: float = 2.0,
    ) -> "GaussianFieldModel":
        """Stationary field: cov(p, q) = var * exp(-dist(p, q) / length).

        Distance is Euclidean over pixel coordinates; distinct channels are
        independent (block-diagonal covariance).
        """
        if marginal_variance <= 0 or correlation_length <= 0:
            raise ValidationError("marginal_variance and correlation_length must be > 0")
        yy, xx = np.mgrid[0:height, 0:width]
        pts = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64)
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        block = marginal_variance * np.exp(-dist / correlation_length)
        D = height * width * channels
        cov = np.zeros((D, D))
        # Pixel vectors are channel-interleaved: flat index = (y*w + x)*c + ch.
        for ch in range(channels):
            idx = np.arange(height * width) * channels + ch
            cov[np.ix_(idx, idx)] = block
        return cls((height, width, channels), mean, cov)

    def _project(self, x: np.ndarray, t: int, s: NoiseSchedule):
        abar = s.alpha_bar[t]
        centered = x - np.sqrt(abar) * self.mu
        return abar, centered @ self.cov_eigvecs

    def predict_array(self, x: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
        t = s.check_step(t)
        abar, y = self._project(x, t, s)
        root = np.sqrt(abar)
        denom = abar * self.cov_eigvals + (1.0 - abar)
        post = self.mu + root * ((y * (self.cov_eigvals / denom)) @ self.cov_eigvecs.T)
        return (x - root * post) / np.sqrt(1.0 - abar)

    def log_marginal_array(self, x: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
        t = s.check_step(t, lowest=0)
        abar, y = self._project(x, t, s)
        d = abar * self.cov_eigvals + (1.0 - abar)
        if d.min() <= 0.0:
            raise ValidationError("marginal covariance is singular at this step")
        quad = np.sum(y * y / d, axis=1)
        return -0.5 * (self.dim * _LOG_2PI + np.sum(np.log(d)) + quad)

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mu.copy(), self._cov.copy()

    def sample_x0(self, n: int, rng: RngStream) -> np.ndarray:
        z = rng.normals(n * self.dim).reshape(n, self.dim)
        return self.mu + (z * self._sqrt_lam) @ self.cov_eigvecs.T

    def fingerprint(self) -> str:
        return _hash_parts(
            b"gaussian_field/v1",
            struct.pack("<III", *self.shape),
            _f8(self.mu),
            _f8(self._cov),
        )


class GmmPixelModel(EpsilonModel):
    """Every pixel i.i.d. from a K-component 1-d Gaussian mixture.

    Responsibilities are computed in log space with a log-sum-exp reduction;
    with abar near 1 the per-component likelihoods underflow otherwise.
    """

    def __init__(self, shape: tuple[int, int, int], weights, means, variances) -> None:
        h, w, c = (int(d) for d in shape)
        if min(h, w, c) < 1:
            raise ValidationError(f"bad model shape {(h, w, c)}")
        self.shape = (h, w, c)

        wts = np.asarray(weights, dtype=np.float64).reshape(-1)
        mus = np.asarray(means, dtype=np.float64).reshape(-1)
        sig2 = np.asarray(variances, dtype=np.float64).reshape(-1)
        if not (wts.size == mus.size == sig2.size) or wts.size < 1:
            raise ValidationError("weights, means, variances must have equal nonzero length")
        if np.any(wts <= 0.0):
            raise ValidationError("component weights must be positive")
        if abs(wts.sum() - 1.0) > 1e-12:
            raise ValidationError(f"weights must sum to 1, got {wts.sum()!r}")
        if np.any(sig2 <= 0.0):
            raise ValidationError("component variances must be positive")

        self.weights = wts
        self.means = mus
        self.variances = sig2
        self._logw = np.log(wts)
        self._cumw = np.cumsum(wts)

    @classmethod
    def two_mode(
        cls, height: int = 8, width: int = 8, channels: int = 1
    ) -> "GmmPixelModel":
        """The pinned bimodal test distribution: modes 0.25/0.75, var 0.005."""
        return cls((height, width, channels), [0.5, 0.5], [0.25, 0.75], [0.005, 0.005])

    @property
    def K(self) -> int:
        return self.weights.size

    def _component_loglik(self, x: np.ndarray, t: int, s: NoiseSchedule):
        abar = s.alpha_bar[t]
        root = np.sqrt(abar)
        var_k = abar * self.variances + (1.0 - abar)  # (K,)
        diff = x[..., None] - root * self.means  # (..., K)
        loglik = self._logw - 0.5 * (np.log(2.0 * math.pi * var_k) + diff * diff / var_k)
        return abar, root, var_k, diff, loglik

    def predict_array(self, x: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
        t = s.check_step(t)
        abar, root, var_k, diff, loglik = self._component_loglik(x, t, s)
        peak = loglik.max(axis=-1, keepdims=True)
        resp = np.exp(loglik - peak)
        resp /= resp.sum(axis=-1, keepdims=True)
        comp_mean = self.means + (root * self.variances / var_k) * diff
        post = np.sum(resp * comp_mean, axis=-1)
        return (x - root * post) / np.sqrt(1.0 - abar)

    def log_marginal_array(self, x: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
        t = s.check_step(t, lowest=0)
        _, _, _, _, loglik = self._component_loglik(x, t, s)
        peak = loglik.max(axis=-1)
        pixel_ll = peak + np.log(np.sum(np.exp(loglik - peak[..., None]), axis=-1))
        return np.sum(pixel_ll, axis=-1)

    def moments(self) -> tuple[np.ndarray, np.ndarray]:
        m1 = float(np.sum(self.weights * self.means))
        m2 = float(np.sum(self.weights * (self.variances + self.means**2)))
        var = m2 - m1 * m1
        D = self.dim
        return np.full(D, m1), np.eye(D) * var

    def sample_x0(self, n: int, rng: RngStream) -> np.ndarray:
        D = self.dim
        # Draw order is pinned: component picks first, then the normals.
        u = rng.uniforms(n * D)
        comp = np.searchsorted(self._cumw, u, side="left")
        comp = np.minimum(comp, self.K - 1)
        z = rng.normals(n * D)
        x = self.means[comp] + np.sqrt(self.variances[comp]) * z
        return x.reshape(n, D)

    def fingerprint(self) -> str:
        return _hash_parts(
            b"gmm_pixel/v1",
            struct.pack("<III", *self.shape),
            _f8(self.weights),
            _f8(self.means),
            _f8(self.variances),
        )


def gaussian_predict(model: GaussianFieldModel, x_t: Grid, t: int, s: NoiseSchedule) -> Grid:
    """Exact conditional-mean noise prediction under a Gaussian field."""
    if not isinstance(model, GaussianFieldModel):
        raise ValidationError("gaussian_predict requires a GaussianFieldModel")
    return model.predict(x_t, t, s)


def gmm_predict(model: GmmPixelModel, x_t: Grid, t: int, s: NoiseSchedule) -> Grid:
    """Exact per-pixel conditional-mean noise prediction under a pixel GMM."""
    if not isinstance(model, GmmPixelModel):
        raise ValidationError("gmm_predict requires a GmmPixelModel")
    return model.predict(x_t, t, s)


def log_marginal(model: EpsilonModel, x_t: Grid, t: int, s: NoiseSchedule) -> float:
    """log q(x_t) of the exact noised marginal at step t."""
    return model.log_marginal(x_t, t, s)
