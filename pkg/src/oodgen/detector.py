"""The (n+1)-class OOD detector and the softmax baselines it is compared with."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .batch import OodBatch
from .nn import ContractError, DenseNet, Optimizer, Tensor, softmax, weighted_cross_entropy

log = logging.getLogger(__name__)

NPLUS1 = "nplus1"
PLAIN = "plain_n"


@dataclass
class DetectorModel:
    net: DenseNet
    n_inlier_classes: int
    ood_class_weight: float = 0.1
    variant: str = NPLUS1
    epoch_loss: list = field(default_factory=list)
    heldout_accuracy: float | None = None

    def __post_init__(self):
        want = self.n_inlier_classes + (1 if self.variant == NPLUS1 else 0)
        if self.variant not in (NPLUS1, PLAIN):
            raise ContractError(f"unknown variant {self.variant!r}")
        if self.net.output_dim != want:
            raise ContractError(f"{self.variant} detector needs {want} outputs, net has {self.net.output_dim}")
        if self.net.layers[-1].activation != "softmax":
            raise ContractError("detector networks must end in softmax")

    @property
    def ood_index(self):
        return self.n_inlier_classes


def build_classifier(input_dim, n_outputs, hidden=(256, 128), rng=None) -> DenseNet:
    return DenseNet.build([input_dim, *hidden, n_outputs], output="softmax", rng=rng)


def _fit(net, x, y, weights, opt, epochs, batch_size, rng):
    rng = np.random.default_rng(rng)
    params = list(net.parameters())
    losses = []
    n = len(x)
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss = weighted_cross_entropy(net(x[idx]), y[idx], weights)
            loss.backward()
            opt.step(params)
            total += loss.item() * len(idx)
        losses.append(total / n)
        if not net.is_finite():
            raise FloatingPointError("non-finite classifier parameters")
    return losses


def train_detector(
    net: DenseNet,
    inliers,
    ood: OodBatch | None,
    ood_weight=0.1,
    opt: Optimizer | None = None,
    epochs=20,
    rng=None,
    batch_size=64,
    held_out=None,
) -> DetectorModel:
    """Train the (n+1)-way softmax with generated OOD rows labeled ``n``.

    Inlier classes carry loss weight 1 and the OOD class ``ood_weight``.
    """
    n = net.output_dim - 1
    if inliers.labels.min() < 0 or inliers.labels.max() >= n:
        raise ContractError(f"inlier labels must lie in [0, {n})")
    opt = opt or Optimizer("adadelta", 1.0)
    x, y = inliers.samples, inliers.labels
    if ood is None or len(ood) == 0:
        warnings.warn("no OOD samples; training on inliers only", stacklevel=2)
    else:
        x = np.concatenate([x, ood.samples])
        y = np.concatenate([y, np.full(len(ood), n)])
    weights = np.ones(n + 1)
    weights[n] = ood_weight
    model = DetectorModel(net, n, ood_weight, NPLUS1)
    model.epoch_loss = _fit(net, x, y, weights, opt, epochs, batch_size, rng)
    if held_out is not None:
        model.heldout_accuracy = accuracy(model, held_out)
        log.info("n+1 detector held-out inlier accuracy %.4f", model.heldout_accuracy)
    return model


def train_plain(net: DenseNet, inliers, opt=None, epochs=20, rng=None, batch_size=64, held_out=None):
    """Ordinary n-way classifier for the max-softmax and ODIN baselines."""
    n = net.output_dim
    opt = opt or Optimizer("adadelta", 1.0)
    model = DetectorModel(net, n, 0.0, PLAIN)
    model.epoch_loss = _fit(net, inliers.samples, inliers.labels, None, opt, epochs, batch_size, rng)
    if held_out is not None:
        model.heldout_accuracy = accuracy(model, held_out)
    return model


def predict_proba(model: DetectorModel, x) -> np.ndarray:
    return model.net.predict(x)


def accuracy(model: DetectorModel, dataset) -> float:
    """Inlier accuracy, with predictions restricted to the n inlier classes."""
    p = predict_proba(model, dataset.samples)[:, : model.n_inlier_classes]
    return float(np.mean(p.argmax(axis=1) == dataset.labels))


# -- scoring rules: larger score = more OOD -------------------------------


def score_ood_class_prob(model: DetectorModel, x) -> np.ndarray:
    if model.variant != NPLUS1:
        raise ContractError("OOD-class probability needs an n+1 detector")
    return predict_proba(model, x)[:, model.ood_index]


def score_max_inlier_prob(model: DetectorModel, x) -> np.ndarray:
    return -predict_proba(model, x)[:, : model.n_inlier_classes].max(axis=1)


def score_max_softmax_baseline(model: DetectorModel, x) -> np.ndarray:
    return -predict_proba(model, x).max(axis=1)


def score_odin_baseline(model: DetectorModel, x, temperature=1000.0, perturb_eps=0.0014, batch_size=1024):
    """ODIN: nudge the input against the loss gradient, then read the temperature-scaled max softmax.

    The gradient is that of the cross-entropy of the temperature-scaled
    softmax at the predicted label.
    """
    if temperature <= 0:
        raise ContractError("temperature must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = []
    for start in range(0, len(x), batch_size):
        xb = x[start : start + batch_size]
        if perturb_eps != 0.0:
            xt = Tensor(xb, requires_grad=True)
            logits = model.net.forward(xt, logits=True)
            probs = (logits * (1.0 / temperature)).softmax()
            pred = probs.data.argmax(axis=1)
            # summed, not averaged, so each row's input gradient is its own loss gradient
            loss = weighted_cross_entropy(probs, pred) * float(len(xb))
            loss.backward()
            xb = xb - perturb_eps * np.sign(xt.grad)
        logits = model.net.predict(xb, logits=True)
        out.append(-softmax(logits / temperature).max(axis=1))
    return np.concatenate(out)


RULES = {
    "ood_class_prob": score_ood_class_prob,
    "neg_max_inlier_prob": score_max_inlier_prob,
    "neg_max_softmax": score_max_softmax_baseline,
    "neg_odin": score_odin_baseline,
}


@dataclass
class ScoreVector:
    ids: np.ndarray
    scores: np.ndarray
    rule: str

    def __post_init__(self):
        self.ids = np.asarray(self.ids)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.ids.shape != self.scores.shape:
            raise ContractError("one score per sample id")
        if not np.all(np.isfinite(self.scores)):
            raise ContractError("scores must be finite")

    def save(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("id", "score", "rule"))
            for i, s in zip(self.ids, self.scores):
                w.writerow((i, repr(float(s)), self.rule))

    @classmethod
    def load(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        rules = {r["rule"] for r in rows}
        if len(rules) > 1:
            raise ContractError(f"mixed rules in one score file: {sorted(rules)}")
        return cls(
            np.array([r["id"] for r in rows]),
            np.array([float(r["score"]) for r in rows]),
            rules.pop() if rules else "",
        )


def score(model: DetectorModel, x, rule, ids=None, **kwargs) -> ScoreVector:
    values = RULES[rule](model, x, **kwargs)
    ids = np.arange(len(values)) if ids is None else ids
    return ScoreVector(ids, values, rule)
