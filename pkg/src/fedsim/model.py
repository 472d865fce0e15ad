"""Two-hidden-layer MLP survival classifier, trained from scratch.

Parameters live in a flat float64 vector (the unit exchanged between server
and clients); fedsim.kernels does the batched math.  Everything here is
double precision so equality-based determinism tests are exact.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from fedsim import kernels
from fedsim.kernels import param_count, param_views

__all__ = [
    "MlpParams",
    "AdamState",
    "init_params",
    "flatten",
    "unflatten",
    "forward",
    "bce_loss",
    "backward",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]

BCE_CLIP = 1e-12

_CHECKPOINT_MAGIC = b"FEDSIMCP"


def _check_layer_sizes(layer_sizes) -> tuple[int, int, int, int]:
    sizes = tuple(int(v) for v in layer_sizes)
    if len(sizes) != 4:
        raise ValueError(f"expected [input, hidden1, hidden2, 1], got {sizes}")
    if sizes[-1] != 1:
        raise ValueError(f"output width must be 1, got {sizes[-1]}")
    if any(v < 1 for v in sizes):
        raise ValueError(f"layer sizes must be >= 1, got {sizes}")
    return sizes


@dataclass(eq=False)
class MlpParams:
    """Flat parameter vector plus its layer geometry."""

    layer_sizes: tuple[int, int, int, int]
    theta: np.ndarray

    def __post_init__(self):
        self.layer_sizes = _check_layer_sizes(self.layer_sizes)
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        expected = param_count(self.layer_sizes)
        if self.theta.shape != (expected,):
            raise ValueError(
                f"theta has shape {self.theta.shape}, expected ({expected},)"
            )

    @property
    def size(self) -> int:
        return self.theta.size

    def views(self):
        """(W1, b1, W2, b2, W3, b3) views into theta."""
        return param_views(self.theta, self.layer_sizes)

    def copy(self) -> "MlpParams":
        return MlpParams(self.layer_sizes, self.theta.copy())


@dataclass
class AdamState:
    """Per-optimizer-instance moments; never share one across clients."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def fresh(cls, n_params: int, learning_rate: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(learning_rate, beta1, beta2, eps, 0,
                   np.zeros(n_params), np.zeros(n_params))


def init_params(layer_sizes, seed: int) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    sizes = _check_layer_sizes(layer_sizes)
    rng = np.random.default_rng(seed)
    theta = np.zeros(param_count(sizes))
    w1, b1, w2, b2, w3, b3 = param_views(theta, sizes)
    for w in (w1, w2, w3):
        fan_in = w.shape[1]
        scale = 1.0 / math.sqrt(fan_in)
        w[:] = rng.uniform(-scale, scale, size=w.shape)
    return MlpParams(sizes, theta)


def flatten(params: MlpParams) -> np.ndarray:
    return params.theta.copy()


def unflatten(layer_sizes, vec: np.ndarray) -> MlpParams:
    return MlpParams(tuple(layer_sizes), np.array(vec, dtype=np.float64))


def forward(params: MlpParams, x) -> float:
    """Predicted survival probability for one feature vector, in (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.layer_sizes[0],):
        raise ValueError(
            f"input has shape {x.shape}, expected ({params.layer_sizes[0]},)"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    p = kernels.predict_proba(params.theta, params.layer_sizes, x[None, :])
    return float(p[0])


def bce_loss(p: float, y: int) -> float:
    """Binary cross-entropy with the probability clamped away from {0, 1}."""
    p = min(max(float(p), BCE_CLIP), 1.0 - BCE_CLIP)
    if y == 1:
        return -math.log(p)
    if y == 0:
        return -math.log(1.0 - p)
    raise ValueError(f"label must be 0 or 1, got {y!r}")


def _as_batch(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple) and len(batch) == 2 and np.ndim(batch[0]) == 2:
        X, y = batch
    else:
        X = np.stack([np.asarray(x, dtype=np.float64) for x, _ in batch])
        y = np.array([label for _, label in batch], dtype=np.float64)
    return np.ascontiguousarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64)


def backward(params: MlpParams, batch) -> np.ndarray:
    """Mean BCE gradient over a batch of (x, y) pairs (or an (X, y) pair)."""
    X, y = _as_batch(batch)
    if X.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    return kernels.batch_gradient(params.theta, params.layer_sizes, X, y)


def adam_step(params: MlpParams, grad: np.ndarray, state: AdamState) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update; returns the new params and state."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.theta.shape:
        raise ValueError(f"gradient shape {grad.shape} != params shape {params.theta.shape}")
    if state.m.size == 0:
        state = AdamState.fresh(params.size, state.learning_rate,
                                state.beta1, state.beta2, state.eps)
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = m / (1.0 - state.beta1 ** t)
    vhat = v / (1.0 - state.beta2 ** t)
    theta = params.theta - state.learning_rate * mhat / (np.sqrt(vhat) + state.eps)
    new_state = AdamState(state.learning_rate, state.beta1, state.beta2,
                          state.eps, t, m, v)
    return MlpParams(params.layer_sizes, theta), new_state


def save_checkpoint(path, params: MlpParams, fmt: str = "binary") -> None:
    """Persist params as little-endian binary (magic FEDSIMCP) or JSON."""
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(_CHECKPOINT_MAGIC)
            fh.write(struct.pack("<BI", 1, len(params.layer_sizes)))
            fh.write(struct.pack(f"<{len(params.layer_sizes)}I", *params.layer_sizes))
            fh.write(params.theta.astype("<f8").tobytes())
    elif fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"layer_sizes": list(params.layer_sizes),
                       "theta": params.theta.tolist()}, fh)
    else:
        raise ValueError(f"unknown checkpoint format {fmt!r}")


def load_checkpoint(path) -> MlpParams:
    """Read either checkpoint format, sniffing the binary magic."""
    with open(path, "rb") as fh:
        head = fh.read(len(_CHECKPOINT_MAGIC))
        if head == _CHECKPOINT_MAGIC:
            version, n_layers = struct.unpack("<BI", fh.read(5))
            if version != 1:
                raise ValueError(f"unsupported checkpoint version {version}")
            sizes = struct.unpack(f"<{n_layers}I", fh.read(4 * n_layers))
            theta = np.frombuffer(fh.read(), dtype="<f8")
            return MlpParams(sizes, theta.copy())
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return MlpParams(tuple(payload["layer_sizes"]),
                     np.array(payload["theta"], dtype=np.float64))
