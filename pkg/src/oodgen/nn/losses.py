"""Loss functions returning scalar tensors."""

from __future__ import annotations

import numpy as np

from .tensor import ContractError, Tensor, as_tensor


def weighted_cross_entropy(probs: Tensor, labels, class_weights=None) -> Tensor:
    """Batch mean of ``w[y] * -log p[y]`` over softmax outputs ``probs``."""
    probs = as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = probs.shape
    if labels.shape[0] != n:
        raise ContractError(f"{labels.shape[0]} labels for a batch of {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"label out of range for {k} classes")
    weights = np.ones(k) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if weights.shape != (k,):
        raise ContractError(f"expected {k} class weights, got {weights.shape}")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = weights[labels]
    return -(probs.log() * onehot).sum() * (1.0 / n)


def binary_cross_entropy(target, pred: Tensor, reduction="sum") -> Tensor:
    """Per-sample BCE, summed (or averaged) over features, then batch-averaged."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if target.size and (target.min() < 0.0 or target.max() > 1.0):
        raise ContractError("binary cross-entropy needs targets in [0, 1]")
    pred = as_tensor(pred)
    per = -(target * pred.log() + (1.0 - target) * (1.0 - pred).log())
    return _reduce(per, reduction)


def squared_error(target, pred: Tensor, reduction="sum") -> Tensor:
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    diff = as_tensor(pred) - target
    return _reduce(diff * diff, reduction)


def _reduce(per: Tensor, reduction):
    n = per.shape[0]
    if reduction == "sum":
        return per.sum() * (1.0 / n)
    if reduction == "mean":
        return per.mean()
    raise ContractError(f"unknown reduction {reduction!r}")


def kl_standard_normal(mu: Tensor, logvar: Tensor) -> Tensor:
    """Batch mean of KL(N(mu, exp(logvar)) || N(0, I)), summed over latent axes."""
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ContractError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    per = 1.0 + logvar - mu * mu - logvar.exp()
    return per.sum() * (-0.5 / mu.shape[0])


def vae_loss(x, x_hat: Tensor, mu: Tensor, logvar: Tensor, beta_kl=1.0, recon="bce", reduction="sum"):
    """Negative ELBO: reconstruction term plus ``beta_kl`` times the KL term.

    Returns ``(total, reconstruction, kl)`` so callers can log the parts.
    """
    x_arr = np.asarray(x.data if isinstance(x, Tensor) else x)
    if x_arr.shape != x_hat.shape:
        raise ContractError(f"x {x_arr.shape} and x_hat {x_hat.shape} differ")
    if recon == "bce":
        rec = binary_cross_entropy(x_arr, x_hat, reduction)
    elif recon == "mse":
        rec = squared_error(x_arr, x_hat, reduction)
    else:
        raise ContractError(f"unknown reconstruction loss {recon!r}")
    kl = kl_standard_normal(mu, logvar)
    return rec + kl * beta_kl, rec, kl
