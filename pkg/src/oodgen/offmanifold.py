"""Type I OOD samples: push training points off the decoder manifold.

The decoder ``g(z, y)`` of a trained CVAE spans a ``latent_dim``-dimensional
surface in input space. At ``z = mean(h(x))`` the Jacobian columns span its
tangent space; the left nullspace of the Jacobian is the normal space. A
training point moved a distance beta along a random unit normal becomes an
off-manifold outlier.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .batch import OodBatch
from .cvae import CvaeModel, encode, one_hot
from .nn import ContractError

log = logging.getLogger(__name__)

DEFAULT_SV_THRESHOLD = 1e-6


class NoNormalDirectionError(ContractError):
    """The tangent space fills the input space; there is nothing normal to it."""


@dataclass
class JacobianMatrix:
    matrix: np.ndarray  # (input_dim, latent_dim)
    base_point: np.ndarray
    label: int
    z: np.ndarray


@dataclass
class NullspaceBasis:
    basis: np.ndarray  # (input_dim, k), orthonormal columns
    rank_used: int
    sv_threshold: float
    singular_values: np.ndarray

    @property
    def dim(self):
        return self.basis.shape[1]


def decoder_jacobian_at(model: CvaeModel, z, label) -> np.ndarray:
    """d decode(z, label) / dz, one exact forward-mode sweep per latent axis."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    d, k = model.latent_dim, model.n_classes
    point = np.concatenate([z, one_hot(label, k)[0]])
    tangents = np.vstack([np.eye(d), np.zeros((k, d))])
    _, jac = model.decoder.jvp(point, tangents)
    return jac


def decoder_jacobian_from_z(model, z, label):
    jac = decoder_jacobian_at(model, z, label)
    if not np.all(np.isfinite(jac)):
        raise FloatingPointError("decoder Jacobian is not finite; check the model parameters")
    return jac


def decoder_jacobian(model: CvaeModel, x, label) -> JacobianMatrix:
    """Jacobian of the decoder at the posterior mean of ``x``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    mu, _ = encode(model, x, label)
    return JacobianMatrix(decoder_jacobian_from_z(model, mu[0], label), x, int(label), mu[0])


def _rank(s, threshold_rel):
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > threshold_rel * s[0]))


def left_nullspace_basis(jac, sv_threshold_rel=DEFAULT_SV_THRESHOLD) -> NullspaceBasis:
    """Orthonormal basis of ``{v : J^T v = 0}`` from the full SVD of ``J``."""
    J = jac.matrix if isinstance(jac, JacobianMatrix) else np.asarray(jac, dtype=np.float64)
    if not np.all(np.isfinite(J)):
        raise FloatingPointError("Jacobian contains non-finite entries")
    U, s, _ = np.linalg.svd(J, full_matrices=True)
    rank = _rank(s, sv_threshold_rel)
    if rank == 0:
        warnings.warn("Jacobian is numerically zero; every direction counts as normal", stacklevel=2)
    return NullspaceBasis(U[:, rank:], rank, sv_threshold_rel, s)


def sample_normal_direction(basis: NullspaceBasis, rng) -> np.ndarray:
    """Uniform random unit vector in the span of ``basis``."""
    if basis.dim == 0:
        raise NoNormalDirectionError("nullspace is empty")
    rng = np.random.default_rng(rng)
    v = basis.basis @ rng.standard_normal(basis.dim)
    return v / np.linalg.norm(v)


def _tangent_basis(J, sv_threshold_rel):
    U, s, _ = np.linalg.svd(J, full_matrices=False)
    rank = _rank(s, sv_threshold_rel)
    if rank >= J.shape[0]:
        raise NoNormalDirectionError("nullspace is empty")
    return U[:, :rank]


def _projected_normal(Ur, rng):
    # Same law as sample_normal_direction on the full basis: an isotropic
    # Gaussian projected onto the normal space is isotropic there. Needs only
    # the thin SVD.
    g = rng.standard_normal(Ur.shape[0])
    v = g - Ur @ (Ur.T @ g)
    # one re-orthogonalisation pass keeps J^T v at rounding level
    v -= Ur @ (Ur.T @ v)
    return v / np.linalg.norm(v)


def sample_streams(seed, count):
    """Independent generators, one per dataset index, derived from one master seed."""
    seq = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in seq.spawn(count)]


def _master_seed(rng):
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2**63))
    return rng


def generate_type1(
    model: CvaeModel,
    dataset,
    beta_min=0.1,
    beta_max=1.0,
    per_sample=1,
    rng=None,
    indices=None,
    clamp=False,
    sv_threshold_rel=DEFAULT_SV_THRESHOLD,
    method="projection",
) -> OodBatch:
    """Perturb each selected training point along random manifold normals.

    For every source row ``x`` and each of ``per_sample`` repetitions, draws
    ``beta ~ U[beta_min, beta_max]`` and a unit normal ``v``, and emits
    ``x + beta * v``. Each source index owns its own RNG stream so the
    output does not depend on evaluation order.

    ``method="basis"`` materialises the full nullspace basis per point;
    ``"projection"`` draws from the same distribution using the thin SVD.
    ``clamp`` clips the result to [0, 1], which shortens the displacement.
    """
    if len(dataset) == 0:
        raise ContractError("cannot perturb an empty dataset")
    if beta_min > beta_max:
        raise ContractError("beta_min must not exceed beta_max")
    if beta_max == 0.0:
        warnings.warn("beta range is {0}: Type I samples equal their sources", stacklevel=2)
    if method not in ("projection", "basis"):
        raise ContractError(f"unknown method {method!r}")
    indices = np.arange(len(dataset)) if indices is None else np.asarray(indices, dtype=np.int64)
    streams = sample_streams(_master_seed(rng), len(dataset))
    x_all, y_all = dataset.samples, dataset.labels
    mu_all, _ = encode(model, x_all[indices], y_all[indices])

    rows, betas, src, cls = [], [], [], []
    for j, i in enumerate(indices):
        r = streams[i]
        J = decoder_jacobian_from_z(model, mu_all[j], y_all[i])
        if method == "basis":
            basis = left_nullspace_basis(J, sv_threshold_rel)
        else:
            Ur = _tangent_basis(J, sv_threshold_rel)
        for _ in range(per_sample):
            beta = r.uniform(beta_min, beta_max) if beta_max > beta_min else float(beta_min)
            if method == "basis":
                v = sample_normal_direction(basis, r)
            else:
                v = _projected_normal(Ur, r)
            rows.append(x_all[i] + beta * v)
            betas.append(beta)
            src.append(i)
            cls.append(y_all[i])
    samples = np.array(rows)
    if clamp:
        np.clip(samples, 0.0, 1.0, out=samples)
    n = len(samples)
    return OodBatch(samples, ["I"] * n, cls, betas, src, np.full(n, np.nan))


def tangent_energy_fraction(J, delta, sv_threshold_rel=DEFAULT_SV_THRESHOLD) -> float:
    """Share of ``|delta|^2`` that lies in the column space of ``J``."""
    Ur = _tangent_basis(np.asarray(J), sv_threshold_rel)
    proj = Ur.T @ delta
    return float(proj @ proj / (delta @ delta))
