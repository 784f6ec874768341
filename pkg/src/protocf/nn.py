"""Minimal dense feedforward engine: forward, exact backward, Adam/SGD.

Covers everything the search and evaluation need from a model: softmax
classifiers, autoencoders, and encoder halves extracted from trained
autoencoders.  No convolutions, no GPU.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

RELU = "relu"
LINEAR = "linear"
SOFTMAX = "softmax"
SIGMOID = "sigmoid"
_ACTIVATIONS = (RELU, LINEAR, SOFTMAX, SIGMOID)


class NetError(Exception):
    """Structural problems: bad dimensions, unknown activations."""


class TrainingError(Exception):
    """Training aborted (non-finite loss, empty data)."""


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == RELU:
        return np.maximum(z, 0.0)
    if kind == LINEAR:
        return z
    if kind == SIGMOID:
        return 1.0 / (1.0 + np.exp(-z))
    if kind == SOFTMAX:
        return _softmax(z)
    raise NetError(f"unknown activation {kind!r}")


def _activation_backward(upstream: np.ndarray, z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    """Map gradient w.r.t. activations to gradient w.r.t. pre-activations."""
    if kind == RELU:
        return upstream * (z > 0)
    if kind == LINEAR:
        return upstream
    if kind == SIGMOID:
        return upstream * a * (1.0 - a)
    if kind == SOFTMAX:
        # J^T u with J = diag(p) - p p^T, row-wise over the batch
        dot = np.sum(a * upstream, axis=-1, keepdims=True)
        return a * (upstream - dot)
    raise NetError(f"unknown activation {kind!r}")


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise NetError(f"layer shape mismatch: W{w.shape} b{b.shape}")
        if self.activation not in _ACTIVATIONS:
            raise NetError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class DenseNet:
    layers: tuple[Layer, ...]
    kind: str = "model"  # classifier | autoencoder | encoder | model
    encoder_depth: int | None = None  # autoencoders: layers forming the encoder

    def __post_init__(self):
        if not self.layers:
            raise NetError("network needs at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))
        for k in range(1, len(self.layers)):
            if self.layers[k].n_in != self.layers[k - 1].n_out:
                raise NetError(
                    f"layer {k} input dim {self.layers[k].n_in} != "
                    f"layer {k - 1} output dim {self.layers[k - 1].n_out}"
                )
        for k, layer in enumerate(self.layers[:-1]):
            if layer.activation == SOFTMAX:
                raise NetError(f"softmax only allowed as final activation (layer {k})")
        if self.encoder_depth is not None and not 0 < self.encoder_depth <= len(self.layers):
            raise NetError("encoder_depth out of range")

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out


def init_dense(
    sizes: list[int],
    activations: list[str],
    seed: int,
    kind: str = "model",
    encoder_depth: int | None = None,
) -> DenseNet:
    """Glorot-uniform initialization: U(+-sqrt(6/(fan_in+fan_out)))."""
    if len(sizes) < 2 or len(activations) != len(sizes) - 1:
        raise NetError("need sizes [d0..dL] and one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        layers.append(Layer(w, np.zeros(n_out), act))
    return DenseNet(tuple(layers), kind=kind, encoder_depth=encoder_depth)


def _check_input(net: DenseNet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.n_in:
        raise NetError(f"input dim {x.shape[-1]} != network input dim {net.n_in}")
    return x


def forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a single instance (1-D input)."""
    a = _check_input(net, x)
    for layer in net.layers:
        a = _activate(a @ layer.weights.T + layer.bias, layer.activation)
    return a


def forward_batch(net: DenseNet, xs: np.ndarray) -> np.ndarray:
    """Evaluate on an (n, d) matrix of instances."""
    a = _check_input(net, np.atleast_2d(xs))
    for layer in net.layers:
        a = _activate(a @ layer.weights.T + layer.bias, layer.activation)
    return a


def _forward_trace(net: DenseNet, a0: np.ndarray):
    zs, activations = [], [a0]
    a = a0
    for layer in net.layers:
        z = a @ layer.weights.T + layer.bias
        a = _activate(z, layer.activation)
        zs.append(z)
        activations.append(a)
    return zs, activations


def backward(net: DenseNet, x: np.ndarray, upstream: np.ndarray):
    """Gradient of upstream . f(x) w.r.t. x and w.r.t. parameters.

    Returns (grad_x, [(dW, db), ...]) with one entry per layer.
    """
    x = _check_input(net, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (net.n_out,):
        raise NetError(f"upstream dim {upstream.shape} != output dim {net.n_out}")
    zs, activations = _forward_trace(net, x)
    grad = upstream
    param_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        gz = _activation_backward(grad, zs[k], activations[k + 1], layer.activation)
        param_grads[k] = (np.outer(gz, activations[k]), gz)
        grad = gz @ layer.weights
    return grad, param_grads


def input_gradient(net: DenseNet, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Just the input-space part of backward (the common case in search)."""
    x = _check_input(net, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    zs, activations = _forward_trace(net, x)
    grad = upstream
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        grad = _activation_backward(grad, zs[k], activations[k + 1], layer.activation)
        grad = grad @ layer.weights
    return grad


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    optimizer: str = "adam"  # adam | sgd
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: str = "mse"  # mse | cross_entropy
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainingError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise TrainingError("learning rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise TrainingError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("mse", "cross_entropy"):
            raise TrainingError(f"unknown loss {self.loss!r}")


def _loss_and_output_grad(pred: np.ndarray, target: np.ndarray, loss: str):
    """Batch loss value and gradient w.r.t. final pre-activations."""
    b = pred.shape[0]
    if loss == "mse":
        diff = pred - target
        value = float(np.mean(diff * diff))
        grad_a = 2.0 * diff / diff.size
        return value, grad_a, False
    # cross-entropy with one-hot targets; fused softmax gradient
    p = np.clip(pred, 1e-12, 1.0)
    value = float(-np.sum(target * np.log(p)) / b)
    grad_z = (pred - target) / b
    return value, grad_z, True


def train(net: DenseNet, inputs: np.ndarray, targets: np.ndarray, cfg: TrainConfig):
    """Mini-batch training; returns (trained net, per-epoch mean loss)."""
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise TrainingError("inputs and targets must be 2-D matrices")
    if x.shape[0] == 0:
        raise TrainingError("no training rows")
    if x.shape[0] != y.shape[0]:
        raise TrainingError("input/target row counts differ")
    if cfg.loss == "cross_entropy" and net.layers[-1].activation != SOFTMAX:
        raise TrainingError("cross_entropy training requires a softmax head")

    weights = [layer.weights.copy() for layer in net.layers]
    biases = [layer.bias.copy() for layer in net.layers]
    acts = [layer.activation for layer in net.layers]
    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    steps = 0

    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x[idx], y[idx]

            zs, activations = [], [xb]
            a = xb
            for w, b, act in zip(weights, biases, acts):
                z = a @ w.T + b
                a = _activate(z, act)
                zs.append(z)
                activations.append(a)

            value, grad, fused = _loss_and_output_grad(a, yb, cfg.loss)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            epoch_loss += value * len(idx)

            if not fused:
                grad = _activation_backward(grad, zs[-1], activations[-1], acts[-1])
            steps += 1
            for k in range(len(weights) - 1, -1, -1):
                gw = grad.T @ activations[k]
                gb = grad.sum(axis=0)
                if k > 0:
                    grad = (grad @ weights[k])
                    grad = _activation_backward(grad, zs[k - 1], activations[k], acts[k - 1])
                if cfg.optimizer == "sgd":
                    weights[k] -= cfg.learning_rate * gw
                    biases[k] -= cfg.learning_rate * gb
                else:
                    for g, p, m, v in ((gw, weights[k], m_w[k], v_w[k]),
                                       (gb, biases[k], m_b[k], v_b[k])):
                        m *= cfg.beta1
                        m += (1 - cfg.beta1) * g
                        v *= cfg.beta2
                        v += (1 - cfg.beta2) * g * g
                        mhat = m / (1 - cfg.beta1**steps)
                        vhat = v / (1 - cfg.beta2**steps)
                        p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
        history.append(epoch_loss / n)

    trained = DenseNet(
        tuple(Layer(w, b, act) for w, b, act in zip(weights, biases, acts)),
        kind=net.kind,
        encoder_depth=net.encoder_depth,
    )
    return trained, history


def encoder_part(net: DenseNet) -> DenseNet:
    """Extract the encoder half of an autoencoder as its own network."""
    if net.encoder_depth is None:
        raise NetError("network has no recorded encoder depth")
    return DenseNet(net.layers[: net.encoder_depth], kind="encoder")


def net_to_dict(net: DenseNet) -> dict:
    return {
        "kind": net.kind,
        "input_dim": net.n_in,
        "encoder_depth": net.encoder_depth,
        "layers": [
            {
                "rows": layer.n_out,
                "cols": layer.n_in,
                "weights": [float(v) for v in layer.weights.ravel()],
                "bias": [float(v) for v in layer.bias],
                "activation": layer.activation,
            }
            for layer in net.layers
        ],
    }


def net_from_dict(d: dict) -> DenseNet:
    layers = []
    for rec in d["layers"]:
        w = np.array(rec["weights"], dtype=np.float64).reshape(rec["rows"], rec["cols"])
        layers.append(Layer(w, np.array(rec["bias"], dtype=np.float64), rec["activation"]))
    return DenseNet(tuple(layers), kind=d.get("kind", "model"),
                    encoder_depth=d.get("encoder_depth"))


def save_net(net: DenseNet, path) -> None:
    """JSON serialization; float repr round-trips weights bit-exactly."""
    with open(path, "w") as fh:
        json.dump(net_to_dict(net), fh)
        fh.write("\n")


def load_net(path) -> DenseNet:
    with open(path) as fh:
        return net_from_dict(json.load(fh))
