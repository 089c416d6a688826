"""Differentiable classifier oracle, reference MLP and the attack loss.

The attack only needs logits and vector-Jacobian products of the logits with
respect to the input; anything implementing :class:`ClassifierOracle` can be
attacked.  :class:`ReferenceNet` is a small fully connected ReLU network with
hand-written backpropagation, trained with plain SGD.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .data import Dataset
from .errors import DataError, DimensionError, FormatError, ParamError
from .grouping import Dims

ACTIVATIONS = ("identity", "relu")
WEIGHTS_MAGIC = b"SAW1"


class ClassifierOracle(Protocol):
    dims: Dims
    num_classes: int

    def logits(self, x: np.ndarray) -> np.ndarray: ...

    def logits_vjp(self, x: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        """Return ``J(x)^T cotangent`` where ``J`` is the logit Jacobian, shaped like x."""
        ...


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"layer weight {self.weight.shape} and bias {self.bias.shape} do not match"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


class ReferenceNet:
    """Fully connected network; the last layer must be linear (logits)."""

    def __init__(self, layers: list[Layer], dims: Dims | None = None):
        if not layers:
            raise DimensionError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise DimensionError("consecutive layer shapes do not chain")
        if layers[-1].activation != "identity":
            raise DimensionError("final layer must use the identity activation")
        n_in = layers[0].weight.shape[1]
        if dims is None:
            dims = _default_dims(n_in)
        if dims.n != n_in:
            raise DimensionError(f"first layer expects {n_in} inputs, dims give {dims.n}")
        self.layers = layers
        self.dims = dims

    @property
    def num_classes(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def layout(self) -> list[int]:
        return [self.layers[0].weight.shape[1]] + [L.weight.shape[0] for L in self.layers]

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.dims.shape and x.shape != (self.dims.n,):
            raise DimensionError(f"input shape {x.shape} does not match {self.dims.shape}")
        return x.reshape(-1)

    def forward(self, batch: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Logits for a ``(N, n)`` batch plus the per-layer inputs needed by backprop."""
        acts = [batch]
        h = batch
        for layer in self.layers:
            h = h @ layer.weight.T + layer.bias
            if layer.activation == "relu":
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out: np.ndarray, need_params: bool = True):
        """Backpropagate ``grad_out`` (N, K); returns input grads and parameter grads."""
        g = grad_out
        param_grads = []
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if layer.activation == "relu":
                g = g * (acts[i + 1] > 0)
            if need_params:
                param_grads.append((g.T @ acts[i], g.sum(axis=0)))
            g = g @ layer.weight
        param_grads.reverse()
        return g, param_grads

    def logits(self, x) -> np.ndarray:
        out, _ = self.forward(self._check(x)[None, :])
        return out[0]

    def logits_vjp(self, x, cotangent) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        shape = x.shape
        _, acts = self.forward(self._check(x)[None, :])
        g, _ = self.backward(acts, np.asarray(cotangent, dtype=np.float64)[None, :], False)
        return g[0].reshape(shape)

    def logits_and_vjp(self, x, make_cotangent):
        """One forward pass, then backprop of ``make_cotangent(logits)``.

        ``make_cotangent`` may return None to skip the backward pass; the
        gradient is then None as well.
        """
        x = np.asarray(x, dtype=np.float64)
        out, acts = self.forward(self._check(x)[None, :])
        z = out[0]
        cot = make_cotangent(z)
        if cot is None:
            return z, None
        g, _ = self.backward(acts, cot[None, :], False)
        return z, g[0].reshape(x.shape)


def _default_dims(n: int) -> Dims:
    side = int(round(np.sqrt(n)))
    if side * side == n:
        return Dims(side, side, 1)
    return Dims(n, 1, 1)


def logits(model: ClassifierOracle, x) -> np.ndarray:
    return model.logits(x)


def classify(model: ClassifierOracle, x) -> int:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return int(np.argmax(model.logits(x)))


@dataclass(frozen=True)
class LossParams:
    target: int
    kappa: float = 0.0
    c: float = 1.0

    def validate(self, num_classes: int) -> None:
        if not 0 <= self.target < num_classes:
            raise ParamError(f"target {self.target} outside [0, {num_classes})")
        if self.kappa < 0:
            raise ParamError("kappa must be nonnegative")
        if self.c <= 0:
            raise ParamError("c must be positive")


def _margin(z: np.ndarray, target: int) -> tuple[float, int]:
    others = z.copy()
    others[target] = -np.inf
    j = int(np.argmax(others))
    return float(z[j] - z[target]), j


def _check_pair(model, x0, delta):
    x0 = np.asarray(x0, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if x0.shape != delta.shape or x0.shape != model.dims.shape:
        raise DimensionError(
            f"x0 {x0.shape} and delta {delta.shape} must both have shape {model.dims.shape}"
        )
    return x0 + delta


def attack_loss(model: ClassifierOracle, x0, delta, params: LossParams) -> float:
    """``c * max(max_{j != t} Z_j - Z_t, -kappa)`` evaluated at ``x0 + delta``."""
    params.validate(model.num_classes)
    margin, _ = _margin(model.logits(_check_pair(model, x0, delta)), params.target)
    return params.c * max(margin, -params.kappa)


def attack_loss_and_grad(model: ClassifierOracle, x0, delta, params: LossParams):
    """Loss value and its gradient with respect to ``delta``.

    The gradient is exactly zero where the clamp at ``-kappa`` is strictly
    active.  At the kink the margin branch is used, and ties between competing
    logits resolve to the lowest class index.
    """
    params.validate(model.num_classes)
    x = _check_pair(model, x0, delta)
    state = {}

    def cotangent(z):
        margin, j = _margin(z, params.target)
        state["margin"] = margin
        if margin < -params.kappa:
            return None
        cot = np.zeros_like(z)
        cot[j] = params.c
        cot[params.target] = -params.c
        return cot

    if hasattr(model, "logits_and_vjp"):
        _, grad = model.logits_and_vjp(x, cotangent)
    else:
        cot = cotangent(model.logits(x))
        grad = None if cot is None else model.logits_vjp(x, cot)
    loss = params.c * max(state["margin"], -params.kappa)
    if grad is None:
        grad = np.zeros_like(x)
    return loss, grad


def attack_loss_grad(model: ClassifierOracle, x0, delta, params: LossParams) -> np.ndarray:
    return attack_loss_and_grad(model, x0, delta, params)[1]


# --- weights file -----------------------------------------------------------


def save_weights(net: ReferenceNet, path) -> None:
    """Write ``SAW1`` + u32 layer count + per-layer (u32 out, u32 in, u8 act, f64 W, f64 b)."""
    chunks = [WEIGHTS_MAGIC, struct.pack("<I", len(net.layers))]
    for layer in net.layers:
        out_dim, in_dim = layer.weight.shape
        chunks.append(struct.pack("<IIB", out_dim, in_dim, ACTIVATIONS.index(layer.activation)))
        chunks.append(layer.weight.astype("<f8").tobytes())
        chunks.append(layer.bias.astype("<f8").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load_weights(path, dims: Dims | None = None) -> ReferenceNet:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    pos = 4

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(raw):
            raise FormatError(f"{path}: truncated at byte {pos}")
        chunk = raw[pos : pos + nbytes]
        pos += nbytes
        return chunk

    (count,) = struct.unpack("<I", take(4))
    layers = []
    for _ in range(count):
        out_dim, in_dim, code = struct.unpack("<IIB", take(9))
        if code >= len(ACTIVATIONS):
            raise FormatError(f"{path}: unknown activation code {code}")
        weight = np.frombuffer(take(8 * out_dim * in_dim), dtype="<f8").reshape(out_dim, in_dim)
        bias = np.frombuffer(take(8 * out_dim), dtype="<f8")
        layers.append(Layer(weight.copy(), bias.copy(), ACTIVATIONS[code]))
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes after payload")
    try:
        return ReferenceNet(layers, dims)
    except DimensionError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# --- training ---------------------------------------------------------------


@dataclass
class TrainReport:
    train_accuracy: float
    test_accuracy: float | None
    epoch_losses: list[float]


def init_net(layout: list[int], dims: Dims | None = None, seed: int = 0) -> ReferenceNet:
    """He-initialised ReLU network with the given layer widths."""
    if len(layout) < 2 or min(layout) < 1:
        raise DataError(f"invalid layout {layout}")
    rng = np.random.default_rng(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(layout, layout[1:])):
        act = "identity" if i == len(layout) - 2 else "relu"
        weight = rng.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in)
        layers.append(Layer(weight, np.zeros(n_out), act))
    return ReferenceNet(layers, dims)


def scale_logits(net: ReferenceNet, factor: float) -> ReferenceNet:
    """Copy of ``net`` whose logits are multiplied by ``factor``.

    Predictions are unchanged; margins and input gradients scale linearly,
    as with a network distilled at temperature ``factor``.
    """
    if not factor > 0:
        raise ParamError("logit scale must be positive")
    layers = [Layer(L.weight.copy(), L.bias.copy(), L.activation) for L in net.layers]
    layers[-1].weight *= factor
    layers[-1].bias *= factor
    return ReferenceNet(layers, net.dims)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def accuracy(net: ReferenceNet, data: Dataset, batch: int = 1000) -> float:
    hits = 0
    flat = data.flat
    for start in range(0, len(data), batch):
        out, _ = net.forward(flat[start : start + batch])
        hits += int(np.sum(np.argmax(out, axis=1) == data.labels[start : start + batch]))
    return hits / len(data)


def random_shift(images: np.ndarray, max_shift: int, rng) -> np.ndarray:
    """Translate each ``(H, W, C)`` image by up to ``max_shift`` pixels, zero filled."""
    n, H, W, _ = images.shape
    pad = np.pad(images, ((0, 0), (max_shift, max_shift), (max_shift, max_shift), (0, 0)))
    dy = rng.integers(0, 2 * max_shift + 1, n)
    dx = rng.integers(0, 2 * max_shift + 1, n)
    out = np.empty_like(images)
    for i in range(n):
        out[i] = pad[i, dy[i] : dy[i] + H, dx[i] : dx[i] + W]
    return out


def train_reference(
    dataset: Dataset,
    layout: list[int],
    epochs: int = 5,
    learning_rate: float = 0.1,
    seed: int = 0,
    batch_size: int = 32,
    test: Dataset | None = None,
    max_shift: int = 0,
    cosine: bool = False,
    logit_scale: float = 1.0,
) -> tuple[ReferenceNet, TrainReport]:
    """Minibatch SGD on softmax cross-entropy; deterministic for a fixed seed.

    ``max_shift > 0`` re-draws random translations of the training images
    every epoch; ``cosine`` anneals the step size to zero over the run.  The
    returned network has its logits multiplied by ``logit_scale`` (see
    :func:`scale_logits`); accuracies are unaffected.
    """
    if len(dataset) == 0:
        raise DataError("empty dataset")
    if layout[0] != dataset.dims.n:
        raise DataError(f"layout input {layout[0]} != image size {dataset.dims.n}")
    if dataset.labels.min() < 0 or dataset.labels.max() >= layout[-1]:
        raise DataError("labels fall outside the output layer")
    if epochs < 1 or learning_rate <= 0 or max_shift < 0:
        raise ParamError("epochs and learning_rate must be positive, max_shift nonnegative")

    net = init_net(layout, dataset.dims, seed)
    rng = np.random.default_rng(seed + 1)
    labels = dataset.labels
    eye = np.eye(layout[-1])
    losses = []
    for epoch in range(epochs):
        lr = learning_rate
        if cosine:
            lr *= 0.5 * (1.0 + np.cos(np.pi * epoch / epochs))
        images = random_shift(dataset.images, max_shift, rng) if max_shift else dataset.images
        flat = images.reshape(len(dataset), -1)
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            out, acts = net.forward(flat[idx])
            prob = softmax(out)
            total += float(-np.sum(np.log(prob[np.arange(len(idx)), labels[idx]] + 1e-300)))
            _, grads = net.backward(acts, (prob - eye[labels[idx]]) / len(idx))
            for layer, (gw, gb) in zip(net.layers, grads):
                layer.weight -= lr * gw
                layer.bias -= lr * gb
        losses.append(total / len(dataset))

    if logit_scale != 1.0:
        net = scale_logits(net, logit_scale)
    report = TrainReport(
        train_accuracy=accuracy(net, dataset),
        test_accuracy=None if test is None else accuracy(net, test),
        epoch_losses=losses,
    )
    return net, report
