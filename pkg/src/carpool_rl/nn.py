"""Minimal fully-connected network with explicit forward and backward passes.

Parameters are plain numpy arrays: layer ``k`` holds a weight matrix shaped
``(fan_out, fan_in)`` and a bias vector shaped ``(fan_out,)``. Hidden layers
apply the configured activation; the output layer is always linear.

The loss convention used by :meth:`Mlp.sgd_step` and
:meth:`Mlp.gradient_check` is half mean squared error over the batch,
``L = sum_i ||pred_i - target_i||^2 / (2N)``.

Checkpoint format (version ``mlp/1``): a JSON object with keys ``format``,
``layer_sizes``, ``activation``, ``weights`` (list of row-major 2-D arrays,
one per layer, each row one output unit) and ``biases``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

_ACTIVATIONS = ("relu", "tanh", "identity")
CHECKPOINT_FORMAT = "mlp/1"


@dataclass(frozen=True)
class TrainConfig:
    """Knobs shared by the SGD training loops."""

    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    weight_init_scale: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("batch_size must be positive, epochs non-negative")
        if self.weight_init_scale <= 0:
            raise ValueError("weight_init_scale must be positive")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


class Mlp:
    """Feed-forward network with a fixed layer stack.

    ``layer_sizes`` lists the input width followed by every layer's output
    width; weights are drawn uniformly from ``[-s, s]`` with
    ``s = scale * sqrt(6 / (fan_in + fan_out))`` and biases start at zero.
    """

    def __init__(self, layer_sizes, activation: str = "relu",
                 rng: np.random.Generator | None = None,
                 init_scale: float = 1.0):
        layer_sizes = [int(n) for n in layer_sizes]
        if len(layer_sizes) < 2 or any(n <= 0 for n in layer_sizes):
            raise ValueError(f"bad layer sizes: {layer_sizes}")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.layer_sizes = layer_sizes
        self.activation = activation
        if rng is None:
            rng = np.random.default_rng(0)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            s = init_scale * np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_width(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_width(self) -> int:
        return self.layer_sizes[-1]

    def forward(self, x):
        """Run the network on ``x`` (shape ``(in,)`` or ``(N, in)``).

        Returns ``(output, cache)``; the cache holds every layer input and
        pre-activation and is what :meth:`backward` consumes.
        """
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.input_width:
            raise ValueError(
                f"input width {x.shape[1]} != expected {self.input_width}")
        inputs = [x]  # post-activation input to each layer
        zs = []
        a = x
        for k in range(self.n_layers):
            z = a @ self.weights[k].T + self.biases[k]
            zs.append(z)
            a = _act(self.activation, z) if k < self.n_layers - 1 else z
            if k < self.n_layers - 1:
                inputs.append(a)
        cache = {"inputs": inputs, "zs": zs, "squeeze": squeeze}
        return (a[0] if squeeze else a), cache

    def backward(self, cache, grad_output):
        """Backpropagate ``dL/d(output)`` through the cached forward pass.

        Returns ``(grads, grad_input)`` where ``grads`` is a list of
        ``(dW, db)`` pairs aligned with the layers and ``grad_input`` is
        ``dL/d(input)`` with the same leading shape as the forward input.
        """
        g = np.asarray(grad_output, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        grads = [None] * self.n_layers
        for k in range(self.n_layers - 1, -1, -1):
            if k < self.n_layers - 1:
                g = g * _act_grad(self.activation, cache["zs"][k])
            a_in = cache["inputs"][k]
            dw = g.T @ a_in
            db = g.sum(axis=0)
            grads[k] = (dw, db)
            g = g @ self.weights[k]
        return grads, (g[0] if cache["squeeze"] else g)

    def apply_gradients(self, grads, lr: float) -> None:
        for k, (dw, db) in enumerate(grads):
            self.weights[k] -= lr * dw
            self.biases[k] -= lr * db

    def loss_and_grad_output(self, outputs, targets):
        """Half-MSE loss over a batch and its gradient w.r.t. the outputs."""
        t = np.asarray(targets, dtype=float)
        if t.ndim == 1:
            t = t[None, :]
        y = outputs if outputs.ndim == 2 else outputs[None, :]
        n = y.shape[0]
        diff = y - t
        loss = float(np.sum(diff * diff) / (2.0 * n))
        return loss, diff / n

    def sgd_step(self, inputs, targets, lr: float) -> float:
        """One plain SGD step on a batch; returns the pre-update loss."""
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        if inputs.shape[0] == 0:
            raise ValueError("empty batch")
        out, cache = self.forward(inputs)
        loss, gout = self.loss_and_grad_output(out, targets)
        if not np.isfinite(loss):
            raise RuntimeError(f"non-finite training loss: {loss}")
        grads, _ = self.backward(cache, gout)
        for dw, db in grads:
            if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
                raise RuntimeError("non-finite gradient during SGD step")
        self.apply_gradients(grads, lr)
        return loss

    def gradient_check(self, x, y, step: float = 1e-5) -> float:
        """Max relative error of backprop vs. central finite differences.

        Relative error per parameter is
        ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))

        def loss_at():
            out, _ = self.forward(x)
            loss, _ = self.loss_and_grad_output(out, y)
            return loss

        out, cache = self.forward(x)
        _, gout = self.loss_and_grad_output(out, y)
        grads, _ = self.backward(cache, gout)

        worst = 0.0
        for k in range(self.n_layers):
            for arr, g in ((self.weights[k], grads[k][0]),
                           (self.biases[k], grads[k][1])):
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = arr[idx]
                    arr[idx] = orig + step
                    lp = loss_at()
                    arr[idx] = orig - step
                    lm = loss_at()
                    arr[idx] = orig
                    numeric = (lp - lm) / (2.0 * step)
                    analytic = g[idx]
                    denom = max(1e-8, abs(analytic) + abs(numeric))
                    worst = max(worst, abs(analytic - numeric) / denom)
        return worst

    def save(self, path) -> None:
        payload = {
            "format": CHECKPOINT_FORMAT,
            "layer_sizes": self.layer_sizes,
            "activation": self.activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format: {payload.get('format')!r}")
        net = cls(payload["layer_sizes"], activation=payload["activation"])
        net.weights = [np.asarray(w, dtype=float) for w in payload["weights"]]
        net.biases = [np.asarray(b, dtype=float) for b in payload["biases"]]
        return net


def copy_weights(src: Mlp, dst: Mlp) -> None:
    """Copy all parameters from ``src`` into ``dst`` (architectures must match)."""
    if src.layer_sizes != dst.layer_sizes or src.activation != dst.activation:
        raise ValueError(
            f"architecture mismatch: {src.layer_sizes}/{src.activation} vs "
            f"{dst.layer_sizes}/{dst.activation}")
    dst.weights = [w.copy() for w in src.weights]
    dst.biases = [b.copy() for b in src.biases]
