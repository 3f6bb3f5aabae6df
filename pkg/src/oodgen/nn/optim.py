"""First-order optimizers that update tensors in place."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError

KINDS = ("adadelta", "sgd", "adam")


@dataclass
class Optimizer:
    """Optimizer state.

    ``rho``/``eps`` drive Adadelta (Zeiler 2012); ``beta1``/``beta2``/``eps``
    drive Adam. Accumulators are created lazily with the parameter shapes.
    """

    kind: str = "adadelta"
    learning_rate: float = 1.0
    rho: float = 0.95
    eps: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    t: int = 0
    slots: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown optimizer {self.kind!r}")
        if self.learning_rate <= 0:
            raise ContractError("learning rate must be positive")
        if self.eps is None:
            self.eps = 1e-8 if self.kind == "adam" else 1e-6

    def _slot(self, name, param):
        key = (name, param.node_id)
        if key not in self.slots:
            self.slots[key] = np.zeros_like(param.data)
        return self.slots[key]

    def step(self, params):
        params = list(params)
        missing = [p for p in params if p.grad is None]
        if missing:
            raise ContractError(f"{len(missing)} parameter(s) have no gradient; call backward first")
        self.t += 1
        for p in params:
            g = p.grad
            if self.kind == "sgd":
                p.data -= self.learning_rate * g
            elif self.kind == "adadelta":
                sq_grad = self._slot("sq_grad", p)
                sq_delta = self._slot("sq_delta", p)
                sq_grad *= self.rho
                sq_grad += (1.0 - self.rho) * g * g
                delta = np.sqrt(sq_delta + self.eps) / np.sqrt(sq_grad + self.eps) * g
                sq_delta *= self.rho
                sq_delta += (1.0 - self.rho) * delta * delta
                p.data -= self.learning_rate * delta
            else:
                m = self._slot("m", p)
                v = self._slot("v", p)
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                m_hat = m / (1.0 - self.beta1**self.t)
                v_hat = v / (1.0 - self.beta2**self.t)
                p.data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
            p.grad = None
