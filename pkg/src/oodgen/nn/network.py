"""Fully connected networks built on :mod:`oodgen.nn.tensor`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ContractError, DimensionError, Tensor, as_tensor, sigmoid, softmax

ACTIVATIONS = ("linear", "relu", "sigmoid", "softmax")


@dataclass
class Dense:
    weight: Tensor  # (fan_in, fan_out); rows are inputs
    bias: Tensor  # (fan_out,)
    activation: str = "linear"

    @property
    def fan_in(self):
        return self.weight.shape[0]

    @property
    def fan_out(self):
        return self.weight.shape[1]


def _activate(a: Tensor, activation: str) -> Tensor:
    if activation == "linear":
        return a
    if activation == "relu":
        return a.relu()
    if activation == "sigmoid":
        return a.sigmoid()
    return a.softmax()


class DenseNet:
    """A stack of affine layers, each followed by an elementwise activation.

    Inputs are batched along the leading axis: ``forward`` takes an
    ``(batch, input_dim)`` array and returns ``(batch, output_dim)``.
    """

    def __init__(self, layers):
        if not layers:
            raise ContractError("a network needs at least one layer")
        for k, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ContractError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.activation == "softmax" and k != len(layers) - 1:
                raise ContractError(f"layer {k}: softmax is only allowed on the final layer")
            if layer.bias.shape != (layer.fan_out,):
                raise DimensionError(f"layer {k}: bias shape {layer.bias.shape} != ({layer.fan_out},)")
            if k and layers[k - 1].fan_out != layer.fan_in:
                raise DimensionError(
                    f"layer {k}: expects width {layer.fan_in}, previous layer gives {layers[k - 1].fan_out}"
                )
        self.layers = list(layers)

    @classmethod
    def build(cls, widths, hidden="relu", output="linear", rng=None):
        """Glorot-uniform weights and zero biases for the given layer widths."""
        rng = np.random.default_rng(rng)
        layers = []
        for k, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            act = output if k == len(widths) - 2 else hidden
            layers.append(
                Dense(Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True), act)
            )
        return cls(layers)

    @property
    def input_dim(self):
        return self.layers[0].fan_in

    @property
    def output_dim(self):
        return self.layers[-1].fan_out

    @property
    def widths(self):
        return [self.input_dim] + [layer.fan_out for layer in self.layers]

    def parameters(self):
        for layer in self.layers:
            yield layer.weight
            yield layer.bias

    def n_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def _check_input(self, x):
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(f"layer 0: expects input width {self.input_dim}, got shape {x.shape}")

    def forward(self, x, logits=False) -> Tensor:
        """Run the network, recording the graph.

        With ``logits=True`` the final activation is skipped, which the
        temperature-scaled scorers need.
        """
        x = as_tensor(x)
        self._check_input(x)
        h = x
        last = len(self.layers) - 1
        for k, layer in enumerate(self.layers):
            h = h @ layer.weight + layer.bias
            if not (logits and k == last):
                h = _activate(h, layer.activation)
        return h

    __call__ = forward

    def predict(self, x, logits=False, batch_size=4096) -> np.ndarray:
        """Graph-free forward pass on a plain array."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.input_dim:
            raise DimensionError(f"layer 0: expects input width {self.input_dim}, got shape {x.shape}")
        outs = []
        for start in range(0, max(len(x), 1), batch_size):
            h = x[start : start + batch_size]
            for k, layer in enumerate(self.layers):
                h = h @ layer.weight.data + layer.bias.data
                if logits and k == len(self.layers) - 1:
                    break
                h = _apply_np(h, layer.activation)
            outs.append(h)
        return np.concatenate(outs, axis=0)

    def jvp(self, x, tangents) -> tuple[np.ndarray, np.ndarray]:
        """Forward-mode directional derivatives at a single input point.

        ``tangents`` is ``(input_dim, m)``: m input-space directions. Returns
        the output ``(output_dim,)`` and the matching output-space directional
        derivatives ``(output_dim, m)``. One column per direction, all pushed
        through the network in a single sweep.
        """
        h = np.asarray(x, dtype=np.float64).reshape(-1)
        t = np.asarray(tangents, dtype=np.float64)
        if h.shape[0] != self.input_dim or t.shape[0] != self.input_dim:
            raise DimensionError(f"layer 0: expects input width {self.input_dim}")
        for layer in self.layers:
            a = h @ layer.weight.data + layer.bias.data
            t = layer.weight.data.T @ t
            if layer.activation == "relu":
                t = t * (a > 0)[:, None]
                h = np.maximum(a, 0.0)
            elif layer.activation == "sigmoid":
                h = sigmoid(a)
                t = t * (h * (1.0 - h))[:, None]
            elif layer.activation == "softmax":
                h = softmax(a)
                t = h[:, None] * (t - h @ t)
            else:
                h = a
        return h, t

    def copy(self):
        return DenseNet(
            [
                Dense(
                    Tensor(layer.weight.data.copy(), requires_grad=True),
                    Tensor(layer.bias.data.copy(), requires_grad=True),
                    layer.activation,
                )
                for layer in self.layers
            ]
        )

    def state(self):
        return [(layer.weight.data, layer.bias.data, layer.activation) for layer in self.layers]

    def is_finite(self):
        return all(np.all(np.isfinite(p.data)) for p in self.parameters())


def _apply_np(a, activation):
    if activation == "relu":
        return np.maximum(a, 0.0)
    if activation == "sigmoid":
        return sigmoid(a)
    if activation == "softmax":
        return softmax(a)
    return a
