"""Type II OOD samples: decode latents on each class's boundary ellipsoid.

Per class, the encoder means of the training points are summarised by a
Gaussian. The Mahalanobis radius that covers 95% of those codes defines an
ellipsoid; decoding points on its surface gives samples that stay on the
data manifold but trace the edge of the class.

Surface points are ``mu + r * L u`` with ``u`` uniform on the unit sphere
and ``L`` the Cholesky factor of the covariance. That is uniform in the
spherical pre-image, not in surface area on the ellipsoid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .batch import OodBatch
from .cvae import CvaeModel, decode, encode
from .nn import ContractError

COVERAGE = 0.95
POOLED = -1


@dataclass
class LatentClassStats:
    label: int
    mu_hat: np.ndarray
    sigma_hat: np.ndarray
    chol: np.ndarray  # lower triangular, chol @ chol.T == sigma_hat
    radius_r: float
    n_codes: int
    eps_reg: float

    @property
    def latent_dim(self):
        return len(self.mu_hat)


def fit_gaussian_codes(codes, label=POOLED, coverage=COVERAGE) -> LatentClassStats:
    """Mean, regularised covariance and coverage radius of a set of latent codes."""
    codes = np.asarray(codes, dtype=np.float64)
    n, d = codes.shape
    if n < d + 1:
        raise ContractError(f"need at least {d + 1} codes to fit a {d}-d Gaussian, got {n}")
    # shifting by one code first keeps a collapsed cluster exactly collapsed
    shift = codes[0]
    offset = (codes - shift).mean(axis=0)
    mu = shift + offset
    centred = (codes - shift) - offset
    sigma = centred.T @ centred / n
    # relative ridge; the absolute floor only matters for a collapsed cluster
    eps_reg = max(1e-6 * np.trace(sigma) / d, 1e-12)
    sigma = sigma + eps_reg * np.eye(d)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(f"class {label}: covariance is not positive definite") from exc
    # same arithmetic as mahalanobis() so the coverage count is reproducible
    dist = _distances(codes, mu, chol)
    k = math.ceil(coverage * n)
    radius = float(np.sort(dist)[k - 1])
    return LatentClassStats(int(label), mu, sigma, chol, radius, n, eps_reg)


def fit_latent_gaussian(model: CvaeModel, dataset, label, coverage=COVERAGE) -> LatentClassStats:
    """Gaussian fit to the encoder means of one class's training samples."""
    idx = np.flatnonzero(dataset.labels == label)
    if len(idx) == 0:
        raise ContractError(f"no samples of class {label}")
    mu, _ = encode(model, dataset.samples[idx], label)
    return fit_gaussian_codes(mu, label, coverage)


def fit_class_stats(model: CvaeModel, dataset, pooled=False, coverage=COVERAGE) -> dict:
    """Stats for every class, keyed by label.

    With ``pooled`` one Gaussian is fitted to all classes' codes together and
    shared by every class.
    """
    classes = [int(c) for c in dataset.classes]
    if not pooled:
        return {c: fit_latent_gaussian(model, dataset, c, coverage) for c in classes}
    mu, _ = encode(model, dataset.samples, dataset.labels)
    shared = fit_gaussian_codes(mu, POOLED, coverage)
    return {c: shared for c in classes}


def _distances(z2d, mu, chol):
    return np.linalg.norm(solve_triangular(chol, (z2d - mu).T, lower=True), axis=0)


def mahalanobis(z, stats: LatentClassStats):
    """Mahalanobis distance of ``z`` (one point or rows of points) from the class mean."""
    z = np.asarray(z, dtype=np.float64)
    dist = _distances(np.atleast_2d(z), stats.mu_hat, stats.chol)
    return float(dist[0]) if z.ndim == 1 else dist


def sample_ellipsoid_surface(stats: LatentClassStats, count, rng) -> np.ndarray:
    rng = np.random.default_rng(rng)
    if stats.radius_r <= 0.0:
        warnings.warn(f"class {stats.label}: zero radius, returning the mean", stacklevel=2)
        return np.tile(stats.mu_hat, (count, 1))
    u = rng.standard_normal((count, stats.latent_dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return stats.mu_hat + stats.radius_r * (u @ stats.chol.T)


def generate_type2(model: CvaeModel, stats_per_class: dict, count_per_class, rng, classes=None) -> OodBatch:
    """Decode ``count_per_class`` ellipsoid-surface latents under each class's conditioning."""
    classes = range(model.n_classes) if classes is None else classes
    missing = [c for c in classes if c not in stats_per_class]
    if missing:
        raise ContractError(f"no latent statistics for classes {missing}")
    if count_per_class == 0:
        batch = OodBatch.empty(model.input_dim)
        batch.latents = np.zeros((0, model.latent_dim))
        return batch
    seq = np.random.SeedSequence(rng.integers(2**63) if isinstance(rng, np.random.Generator) else rng)
    streams = [np.random.default_rng(s) for s in seq.spawn(len(classes))]
    parts = []
    for c, stream in zip(classes, streams):
        stats = stats_per_class[c]
        z = sample_ellipsoid_surface(stats, count_per_class, stream)
        n = len(z)
        parts.append(
            OodBatch(
                decode(model, z, c),
                ["II"] * n,
                np.full(n, c),
                np.full(n, np.nan),
                np.full(n, -1),
                np.full(n, stats.radius_r),
                latents=z,
            )
        )
    return OodBatch.merge(*parts)
