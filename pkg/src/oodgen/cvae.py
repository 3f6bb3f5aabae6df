"""Conditional variational auto-encoder over dense networks.

The class label is fed to both halves as a one-hot vector concatenated to
the input: the encoder sees ``[x, onehot(y)]`` and the decoder sees
``[z, onehot(y)]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .nn import ContractError, DenseNet, Optimizer, Tensor, concat

log = logging.getLogger(__name__)


@dataclass
class CvaeModel:
    encoder: DenseNet
    decoder: DenseNet
    latent_dim: int
    n_classes: int
    recon: str = "bce"  # "bce" pairs with a sigmoid decoder, "mse" with a linear one
    beta_kl: float = 1.0

    def __post_init__(self):
        if self.encoder.output_dim != 2 * self.latent_dim:
            raise ContractError(
                f"encoder emits {self.encoder.output_dim} values, need 2 * {self.latent_dim}"
            )
        if self.decoder.input_dim != self.latent_dim + self.n_classes:
            raise ContractError("decoder input width must be latent_dim + n_classes")
        if self.encoder.input_dim != self.input_dim + self.n_classes:
            raise ContractError("encoder input width must be input_dim + n_classes")

    @property
    def input_dim(self):
        return self.decoder.output_dim

    def parameters(self):
        yield from self.encoder.parameters()
        yield from self.decoder.parameters()

    @classmethod
    def build(cls, input_dim, n_classes, latent_dim, hidden=(256, 128), recon="bce", beta_kl=1.0, rng=None):
        """Mirror-image MLPs: ``enc = in+k -> hidden -> 2d``, ``dec = d+k -> reversed(hidden) -> in``."""
        rng = np.random.default_rng(rng)
        hidden = list(hidden)
        encoder = DenseNet.build([input_dim + n_classes, *hidden, 2 * latent_dim], rng=rng)
        out_act = "sigmoid" if recon == "bce" else "linear"
        decoder = DenseNet.build(
            [latent_dim + n_classes, *reversed(hidden), input_dim], output=out_act, rng=rng
        )
        return cls(encoder, decoder, latent_dim, n_classes, recon, beta_kl)


def one_hot(labels, n_classes, n=None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if n is not None and labels.size == 1:
        labels = np.repeat(labels, n)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractError(f"label out of range for {n_classes} classes")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _rows(a, width):
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(-1, width)


def encode(model: CvaeModel, x, label):
    """Posterior mean and log-variance for each row of ``x``."""
    x = _rows(x, model.input_dim)
    out = model.encoder.predict(np.hstack([x, one_hot(label, model.n_classes, len(x))]))
    return out[:, : model.latent_dim], out[:, model.latent_dim :]


def reparameterize(mu, logvar, rng) -> np.ndarray:
    rng = np.random.default_rng(rng)
    mu, logvar = np.asarray(mu, dtype=np.float64), np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ContractError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    return mu + np.exp(0.5 * logvar) * rng.standard_normal(mu.shape)


def decode(model: CvaeModel, z, label) -> np.ndarray:
    z = _rows(z, model.latent_dim)
    return model.decoder.predict(np.hstack([z, one_hot(label, model.n_classes, len(z))]))


def elbo_terms(model: CvaeModel, x, labels, eps):
    """Graph-recording forward pass; returns ``(loss, reconstruction, kl)`` tensors."""
    cond = one_hot(labels, model.n_classes)
    stats = model.encoder(np.hstack([x, cond]))
    mu = stats[:, : model.latent_dim]
    logvar = stats[:, model.latent_dim :]
    z = mu + (logvar * 0.5).exp() * eps
    x_hat = model.decoder(concat([z, Tensor(cond)], axis=1))
    return nn.vae_loss(x, x_hat, mu, logvar, beta_kl=model.beta_kl, recon=model.recon)


@dataclass
class TrainingLog:
    epoch_loss: list = field(default_factory=list)
    epoch_recon: list = field(default_factory=list)
    epoch_kl: list = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.epoch_loss)


def train_cvae(
    model: CvaeModel,
    dataset,
    epochs,
    batch_size,
    opt: Optimizer,
    rng,
    until_converged=False,
    tol=1e-3,
    patience=10,
) -> TrainingLog:
    """Minibatch training on the negative ELBO.

    With ``until_converged`` training stops early once the epoch-mean loss
    improves by less than ``tol`` (relative) for ``patience`` epochs in a row;
    ``epochs`` is then the cap.
    """
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    x_all, y_all = dataset.samples, dataset.labels
    if y_all.min() < 0 or y_all.max() >= model.n_classes:
        raise ContractError(f"labels must lie in [0, {model.n_classes})")
    if model.recon == "bce" and (x_all.min() < 0 or x_all.max() > 1):
        raise ContractError("bce reconstruction needs inputs in [0, 1]")
    rng = np.random.default_rng(rng)
    params = list(model.parameters())
    history = TrainingLog()
    best, stale = np.inf, 0
    n = len(x_all)
    for epoch in range(epochs):
        order = rng.permutation(n)
        tot = rec_tot = kl_tot = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            eps = rng.standard_normal((len(idx), model.latent_dim))
            loss, rec, kl = elbo_terms(model, x_all[idx], y_all[idx], eps)
            loss.backward()
            opt.step(params)
            tot += loss.item() * len(idx)
            rec_tot += rec.item() * len(idx)
            kl_tot += kl.item() * len(idx)
        history.epoch_loss.append(tot / n)
        history.epoch_recon.append(rec_tot / n)
        history.epoch_kl.append(kl_tot / n)
        log.debug("cvae epoch %d loss %.5f", epoch, tot / n)
        if not model.encoder.is_finite() or not model.decoder.is_finite():
            raise FloatingPointError(f"non-finite CVAE parameters after epoch {epoch}")
        if until_converged:
            current = history.epoch_loss[-1]
            improved = not np.isfinite(best) or best - current > tol * abs(best)
            stale = 0 if improved else stale + 1
            best = min(best, current)
            if stale >= patience:
                history.converged = True
                break
    return history


def reconstruction_bce(model: CvaeModel, dataset) -> float:
    """Mean per-pixel BCE of decoding each sample's posterior mean."""
    mu, _ = encode(model, dataset.samples, dataset.labels)
    x_hat = np.clip(decode(model, mu, dataset.labels), 1e-12, 1 - 1e-12)
    x = dataset.samples
    return float(np.mean(-(x * np.log(x_hat) + (1 - x) * np.log(1 - x_hat))))


def save(model: CvaeModel, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    nn.save(model.encoder, directory / "encoder.bin")
    nn.save(model.decoder, directory / "decoder.bin")
    meta = {
        "latent_dim": model.latent_dim,
        "n_classes": model.n_classes,
        "input_dim": model.input_dim,
        "recon": model.recon,
        "beta_kl": repr(model.beta_kl),
    }
    (directory / "cvae.meta").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))


def load(directory) -> CvaeModel:
    directory = Path(directory)
    meta = dict(
        line.split("=", 1) for line in (directory / "cvae.meta").read_text().splitlines() if line
    )
    model = CvaeModel(
        nn.load(directory / "encoder.bin"),
        nn.load(directory / "decoder.bin"),
        int(meta["latent_dim"]),
        int(meta["n_classes"]),
        meta.get("recon", "bce"),
        float(meta.get("beta_kl", 1.0)),
    )
    if model.input_dim != int(meta["input_dim"]):
        raise ContractError("metadata input_dim disagrees with the decoder weights")
    return model
