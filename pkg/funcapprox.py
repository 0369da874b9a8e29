#!/usr/bin/env python3
"""
Function Approximators

Exact tabular tables and small ReLU feed-forward networks with analytic
backpropagation, an Adam optimizer (with a plain-gradient mode for exact
hand-computed tests), Polyak target mixing, and a plain-text-header binary
checkpoint format.

All approximators map a (B, input_dim) batch to a (B, output_dim) batch of
"heads". Heads listed in `pinned_heads` always output 0 and are never trained.
"""

import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ApproximatorError

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN_LAYERS = (200, 200, 200)
COORDINATE_SCALE = 1.0 / 18.0

CHECKPOINT_MAGIC = "ADAMVE-CHECKPOINT v1"
END_OF_HEADER = "end_header"


class OptimizerState:
    """
    Adam moments for a list of parameter arrays.

    mode="adam" applies the usual bias-corrected Adam update; mode="sgd" applies
    p -= lr * g, which keeps hand-computed expectations exact in tests.
    """

    def __init__(self, params: Sequence[np.ndarray], lr: float, mode: str = "adam",
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ApproximatorError(f"Learning rate must be positive, got {lr}")
        if mode not in ("adam", "sgd"):
            raise ApproximatorError(f"Unknown optimizer mode '{mode}'", ["Must be 'adam' or 'sgd'"])
        self.lr = lr
        self.mode = mode
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def apply(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        """Update params in place"""
        if len(params) != len(self.m):
            raise ApproximatorError("Optimizer state does not match parameter list")
        self.step_count += 1

        if self.mode == "sgd":
            for p, g in zip(params, grads):
                p -= self.lr * g
            return

        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


class Approximator(ABC):
    """Common interface of tabular and network approximators"""

    variant: str = "abstract"

    def __init__(self, output_dim: int, pinned_heads: Sequence[int] = ()):
        if output_dim < 1:
            raise ApproximatorError(f"output_dim must be positive, got {output_dim}")
        self.output_dim = output_dim
        self.pinned = np.zeros(output_dim, dtype=bool)
        for head in pinned_heads:
            if not 0 <= head < output_dim:
                raise ApproximatorError(f"Pinned head {head} out of range [0, {output_dim})")
            self.pinned[head] = True

    @property
    def pinned_heads(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.pinned)]

    @abstractmethod
    def params(self) -> List[np.ndarray]:
        """Live parameter arrays (mutated in place by optimizers)"""

    @abstractmethod
    def _forward(self, inputs: np.ndarray):
        """Returns (raw outputs, cache for backward)"""

    @abstractmethod
    def _backward(self, cache, grad_out: np.ndarray) -> List[np.ndarray]:
        """Gradients of the loss w.r.t. params given dLoss/dOutput"""

    @abstractmethod
    def copy(self) -> "Approximator":
        """Deep copy with identical parameters"""

    def eval(self, inputs: np.ndarray) -> np.ndarray:
        """Deterministic forward pass; pinned heads read as exactly 0"""
        out, _ = self._forward(inputs)
        if self.pinned.any():
            out = out.copy()
            out[:, self.pinned] = 0.0
        return out

    def loss_and_gradients(self, inputs: np.ndarray, heads: np.ndarray,
                           targets: np.ndarray) -> Tuple[float, List[np.ndarray]]:
        """Half mean squared error on the selected heads and its gradients"""
        heads = np.asarray(heads, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.float64)
        batch = len(targets)
        if batch == 0:
            raise ApproximatorError("Cannot take a gradient step on an empty batch")
        if heads.shape != targets.shape:
            raise ApproximatorError(f"heads shape {heads.shape} does not match targets shape {targets.shape}")
        if heads.min() < 0 or heads.max() >= self.output_dim:
            raise ApproximatorError(f"Head index out of range [0, {self.output_dim})")
        if not np.all(np.isfinite(targets)):
            bad = int(np.flatnonzero(~np.isfinite(targets))[0])
            raise ApproximatorError(
                "Non-finite regression target",
                [f"target[{bad}] = {targets[bad]!r} for head {int(heads[bad])}"],
            )

        out, cache = self._forward(inputs)
        rows = np.arange(batch)
        diff = (out[rows, heads] - targets) * ~self.pinned[heads]
        loss = 0.5 * float(np.mean(diff ** 2))
        grad_out = np.zeros_like(out)
        grad_out[rows, heads] = diff / batch
        return loss, self._backward(cache, grad_out)

    def grad_step(self, opt: OptimizerState, inputs: np.ndarray, heads: np.ndarray,
                  targets: np.ndarray) -> float:
        """One optimizer step toward the targets; returns the pre-step loss"""
        loss, grads = self.loss_and_gradients(inputs, heads, targets)
        opt.apply(self.params(), grads)
        return loss

    def make_optimizer(self, lr: float, mode: str = "adam") -> OptimizerState:
        return OptimizerState(self.params(), lr, mode=mode)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params()))


class TabularApproximator(Approximator):
    """Dense table over grid cells; real-valued inputs snap to the nearest cell"""

    variant = "tabular"

    def __init__(self, output_dim: int, width: int = 19, height: int = 19,
                 pinned_heads: Sequence[int] = ()):
        super().__init__(output_dim, pinned_heads)
        self.width = width
        self.height = height
        self.table = np.zeros((width * height, output_dim), dtype=np.float64)

    def params(self) -> List[np.ndarray]:
        return [self.table]

    def cell_indices(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[1] != 2:
            raise ApproximatorError(f"Tabular input must have shape (B, 2), got {inputs.shape}")
        cells = np.rint(inputs).astype(np.int64)
        xs = np.clip(cells[:, 0], 0, self.width - 1)
        ys = np.clip(cells[:, 1], 0, self.height - 1)
        return ys * self.width + xs

    def _forward(self, inputs):
        idx = self.cell_indices(inputs)
        return self.table[idx], idx

    def _backward(self, cache, grad_out):
        grad = np.zeros_like(self.table)
        np.add.at(grad, cache, grad_out)
        return [grad]

    def copy(self) -> "TabularApproximator":
        clone = TabularApproximator(self.output_dim, self.width, self.height, self.pinned_heads)
        clone.table = self.table.copy()
        return clone


class MLPApproximator(Approximator):
    """
    Fully connected ReLU network with a linear output layer.

    Weights are initialised uniformly in +-1/sqrt(fan_in) unless zero_init is
    set. `input_scale` multiplies raw inputs before the first layer (grid
    coordinates are divided by 18).
    """

    variant = "mlp"

    def __init__(self, input_dim: int, output_dim: int,
                 hidden: Sequence[int] = DEFAULT_HIDDEN_LAYERS,
                 rng: Optional[np.random.Generator] = None,
                 input_scale: float = 1.0, bias: bool = True, zero_init: bool = False,
                 pinned_heads: Sequence[int] = ()):
        super().__init__(output_dim, pinned_heads)
        if input_dim < 1:
            raise ApproximatorError(f"input_dim must be positive, got {input_dim}")
        if rng is None and not zero_init:
            raise ApproximatorError("A random generator is required unless zero_init is set")
        self.input_dim = input_dim
        self.hidden = tuple(int(h) for h in hidden)
        self.input_scale = float(input_scale)
        self.bias = bias

        sizes = [input_dim, *self.hidden, output_dim]
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if zero_init:
                w = np.zeros((fan_in, fan_out))
                b = np.zeros(fan_out)
            else:
                bound = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
                b = rng.uniform(-bound, bound, size=fan_out) if bias else np.zeros(fan_out)
            self.weights.append(w)
            self.biases.append(b)

    def params(self) -> List[np.ndarray]:
        if self.bias:
            return [p for pair in zip(self.weights, self.biases) for p in pair]
        return list(self.weights)

    def _forward(self, inputs):
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ApproximatorError(f"Network input must have shape (B, {self.input_dim}), got {x.shape}")
        activations = [x * self.input_scale]
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = activations[-1] @ w + b
            if layer < len(self.weights) - 1:
                z = np.maximum(z, 0.0)
            activations.append(z)
        return activations[-1], activations

    def _backward(self, activations, grad_out):
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        delta = grad_out
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = activations[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (activations[layer] > 0)
        if self.bias:
            return [g for pair in zip(grads_w, grads_b) for g in pair]
        return grads_w

    def copy(self) -> "MLPApproximator":
        clone = MLPApproximator(self.input_dim, self.output_dim, self.hidden, input_scale=self.input_scale,
                                bias=self.bias, zero_init=True, pinned_heads=self.pinned_heads)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone


def build_approximator(variant: str, output_dim: int, rng: Optional[np.random.Generator] = None,
                       hidden: Sequence[int] = DEFAULT_HIDDEN_LAYERS, pinned_heads: Sequence[int] = (),
                       width: int = 19, height: int = 19) -> Approximator:
    """Approximator over grid-state inputs (x, y)"""
    if variant == "tabular":
        return TabularApproximator(output_dim, width, height, pinned_heads)
    if variant == "mlp":
        return MLPApproximator(2, output_dim, hidden, rng=rng, input_scale=COORDINATE_SCALE,
                               pinned_heads=pinned_heads)
    raise ApproximatorError(f"Unknown approximator variant '{variant}'", ["Must be 'tabular' or 'mlp'"])


def polyak_update(target: Approximator, online: Approximator, mix: float) -> Approximator:
    """target <- (1 - mix) * target + mix * online, in place"""
    target_params = target.params()
    online_params = online.params()
    if len(target_params) != len(online_params) or any(
        t.shape != o.shape for t, o in zip(target_params, online_params)
    ):
        raise ApproximatorError("Target and online approximators have different shapes")
    if not 0.0 <= mix <= 1.0:
        raise ApproximatorError(f"Mixing coefficient must lie in [0, 1], got {mix}")
    for t, o in zip(target_params, online_params):
        t *= (1.0 - mix)
        t += mix * o
    return target


# Checkpoints

def save_checkpoint(path: Union[str, Path], approximator: Approximator,
                    metadata: Optional[Dict[str, str]] = None) -> Path:
    """
    Write an approximator as a plain-text header followed by little-endian
    float64 parameter blocks, in params() order.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = approximator.params()

    header = [CHECKPOINT_MAGIC, f"variant={approximator.variant}", f"output_dim={approximator.output_dim}",
              f"pinned={','.join(str(h) for h in approximator.pinned_heads)}"]
    if isinstance(approximator, TabularApproximator):
        header += [f"width={approximator.width}", f"height={approximator.height}"]
    elif isinstance(approximator, MLPApproximator):
        header += [f"input_dim={approximator.input_dim}",
                   f"hidden={','.join(str(h) for h in approximator.hidden)}",
                   f"input_scale={approximator.input_scale!r}",
                   f"bias={int(approximator.bias)}"]
    for key, value in sorted((metadata or {}).items()):
        if "\n" in str(value) or "=" in str(key):
            raise ApproximatorError(f"Checkpoint metadata entry '{key}' is not a single-line key=value")
        header.append(f"meta.{key}={value}")
    header.append(f"blocks={';'.join('x'.join(str(d) for d in p.shape) for p in params)}")
    header.append(END_OF_HEADER)

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("utf-8"))
        for p in params:
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())

    logger.info(f"Saved {approximator.variant} checkpoint ({approximator.parameter_count()} parameters) to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[Approximator, Dict[str, str]]:
    """Inverse of save_checkpoint; returns the approximator and its metadata"""
    path = Path(path)
    if not path.exists():
        raise ApproximatorError(f"Checkpoint not found: {path}")

    with open(path, "rb") as f:
        header: Dict[str, str] = {}
        metadata: Dict[str, str] = {}
        first = f.readline().decode("utf-8").rstrip("\n")
        if first != CHECKPOINT_MAGIC:
            raise ApproximatorError(f"Not an AdaMVE checkpoint: {path}")
        while True:
            line = f.readline()
            if not line:
                raise ApproximatorError(f"Checkpoint header is truncated: {path}")
            text = line.decode("utf-8").rstrip("\n")
            if text == END_OF_HEADER:
                break
            key, _, value = text.partition("=")
            if key.startswith("meta."):
                metadata[key[len("meta."):]] = value
            else:
                header[key] = value
        payload = f.read()

    def ints(value: str) -> List[int]:
        return [int(v) for v in value.split(",") if v]

    try:
        output_dim = int(header["output_dim"])
        pinned = ints(header.get("pinned", ""))
        if header["variant"] == "tabular":
            approximator: Approximator = TabularApproximator(
                output_dim, int(header["width"]), int(header["height"]), pinned)
        elif header["variant"] == "mlp":
            approximator = MLPApproximator(
                int(header["input_dim"]), output_dim, ints(header["hidden"]),
                input_scale=float(header["input_scale"]), bias=bool(int(header["bias"])),
                zero_init=True, pinned_heads=pinned)
        else:
            raise ApproximatorError(f"Unknown checkpoint variant '{header['variant']}'")
        shapes = [tuple(int(d) for d in block.split("x")) for block in header["blocks"].split(";") if block]
    except KeyError as e:
        raise ApproximatorError(f"Checkpoint header is missing key {e}")

    params = approximator.params()
    if [p.shape for p in params] != shapes:
        raise ApproximatorError("Checkpoint block shapes do not match the declared architecture")
    expected = sum(int(np.prod(s)) for s in shapes) * 8
    if len(payload) != expected:
        raise ApproximatorError(f"Checkpoint payload has {len(payload)} bytes, expected {expected}")

    offset = 0
    for p in params:
        n = p.size
        p[...] = np.frombuffer(payload, dtype="<f8", count=n, offset=offset * 8).reshape(p.shape)
        offset += n

    logger.info(f"Loaded {approximator.variant} checkpoint from {path}")
    return approximator, metadata
