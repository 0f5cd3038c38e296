"""Small deterministic softmax classifier with analytic gradients.

Parameters live in one flat float64 vector ordered W1 (row-major), b1, W2
(row-major), b2. A linear model (``H == 0``) has only W1 of shape ``(D, K)``
and b1 of length ``K``.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

LOSS_EPS = 1e-12

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation."""
    return [t for t in re.split(r"\W+", text.lower()) if t]


def featurize(text: str, D: int = 4096, salt: int = 0) -> dict[int, float]:
    """Hashed bag-of-words vector.

    Each token is hashed with 64-bit FNV-1a over ``salt`` (8 bytes, little
    endian) followed by the UTF-8 token, bucketed modulo ``D``, and counted.
    Counts are scaled by ``1/sqrt(n_tokens)``.
    """
    if D < 2 or D & (D - 1):
        raise ValueError(f"D must be a power of two >= 2, got {D}")
    tokens = tokenize(text)
    if not tokens:
        return {}
    prefix = struct.pack("<Q", salt & _MASK64)
    acc: dict[int, float] = {}
    for tok in tokens:
        idx = fnv1a_64(prefix + tok.encode("utf-8")) % D
        acc[idx] = acc.get(idx, 0.0) + 1.0
    scale = 1.0 / math.sqrt(len(tokens))
    return {i: c * scale for i, c in sorted(acc.items())}


@dataclass(frozen=True)
class Layout:
    D: int
    H: int
    K: int

    def __post_init__(self):
        if self.D < 1 or self.K < 2 or self.H < 0:
            raise ValueError(f"invalid layout {self}")

    @property
    def size(self) -> int:
        if self.H == 0:
            return self.D * self.K + self.K
        return self.D * self.H + self.H + self.H * self.K + self.K


@dataclass
class ModelParams:
    layout: Layout
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.layout.size,):
            raise ValueError(
                f"expected {self.layout.size} values for {self.layout}, got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameters must be finite")

    def unpack(self):
        """Views ``(W1, b1, W2, b2)``; W2 and b2 are None for a linear model."""
        return _unpack(self.layout, self.values)

    def copy(self) -> "ModelParams":
        return ModelParams(self.layout, self.values.copy())


def _unpack(layout: Layout, v: np.ndarray):
    D, H, K = layout.D, layout.H, layout.K
    if H == 0:
        W1 = v[: D * K].reshape(D, K)
        b1 = v[D * K :]
        return W1, b1, None, None
    o = 0
    W1 = v[o : o + D * H].reshape(D, H)
    o += D * H
    b1 = v[o : o + H]
    o += H
    W2 = v[o : o + H * K].reshape(H, K)
    o += H * K
    b2 = v[o:]
    return W1, b1, W2, b2


def init_params(layout: Layout, rng: np.random.Generator) -> ModelParams:
    """Weights uniform in +-1/sqrt(fan_in), biases zero."""
    v = np.zeros(layout.size)
    W1, _, W2, _ = _unpack(layout, v)
    bound = 1.0 / math.sqrt(layout.D)
    W1[...] = rng.uniform(-bound, bound, size=W1.shape)
    if W2 is not None:
        bound = 1.0 / math.sqrt(layout.H)
        W2[...] = rng.uniform(-bound, bound, size=W2.shape)
    return ModelParams(layout, v)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_rows(features, D: int):
    """Coerce a sparse dict, dense vector or matrix into a 2-D operand."""
    if isinstance(features, dict):
        if any(i < 0 or i >= D for i in features):
            raise ValueError(f"feature index out of range for D={D}")
        idx = np.fromiter(features.keys(), dtype=np.int64, count=len(features))
        val = np.fromiter(features.values(), dtype=np.float64, count=len(features))
        return sp.csr_matrix((val, (np.zeros_like(idx), idx)), shape=(1, D))
    if sp.issparse(features):
        X = features.tocsr() if features.ndim == 2 else features
    else:
        X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != D:
        raise ValueError(f"feature dimension {X.shape[1]} != D={D}")
    return X


def forward_batch(params: ModelParams, X) -> tuple[np.ndarray, np.ndarray]:
    """Logits and probabilities for every row of ``X``."""
    W1, b1, W2, b2 = params.unpack()
    X = _as_rows(X, params.layout.D)
    with np.errstate(over="ignore", invalid="ignore"):
        if W2 is None:
            z = np.asarray(X @ W1) + b1
        else:
            z = np.tanh(np.asarray(X @ W1) + b1) @ W2 + b2
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("numeric overflow")
    p = softmax(z)
    if not np.all(np.isfinite(p)):
        raise FloatingPointError("numeric overflow")
    return z, p


def forward(params: ModelParams, features) -> tuple[np.ndarray, np.ndarray]:
    z, p = forward_batch(params, features)
    return z[0], p[0]


def xent_soft(probs, target) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if probs.shape != target.shape:
        raise ValueError("probs and target must have the same shape")
    return float(-np.sum(target * np.log(np.maximum(probs, LOSS_EPS))))


def mean_xent(probs: np.ndarray, targets: np.ndarray) -> float:
    return float(-np.sum(targets * np.log(np.maximum(probs, LOSS_EPS))) / probs.shape[0])


def batch_gradient(params: ModelParams, X, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean soft cross-entropy over the rows of ``X`` and its gradient."""
    layout = params.layout
    W1, b1, W2, b2 = params.unpack()
    X = _as_rows(X, layout.D)
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    n = X.shape[0]
    grad = np.empty(layout.size)
    gW1, gb1, gW2, gb2 = _unpack(layout, grad)
    if W2 is None:
        z = np.asarray(X @ W1) + b1
        p = softmax(z)
        dz = (p - targets) / n
        gW1[...] = X.T @ dz
        gb1[...] = dz.sum(axis=0)
    else:
        a = np.tanh(np.asarray(X @ W1) + b1)
        z = a @ W2 + b2
        p = softmax(z)
        dz = (p - targets) / n
        gW2[...] = a.T @ dz
        gb2[...] = dz.sum(axis=0)
        dh = (dz @ W2.T) * (1.0 - a * a)
        gW1[...] = X.T @ dh
        gb1[...] = dh.sum(axis=0)
    if not np.all(np.isfinite(p)):
        raise FloatingPointError("numeric overflow")
    return mean_xent(p, targets), grad


def backward(params: ModelParams, features, target) -> np.ndarray:
    """Gradient of ``xent_soft(forward(params, features), target)``."""
    return batch_gradient(params, features, target)[1]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **hyper)


def adam_step(state: AdamState, params: ModelParams, grad: np.ndarray) -> tuple[ModelParams, AdamState]:
    """One Adam update with bias correction and decoupled weight decay."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape or state.m.shape != grad.shape:
        raise ValueError("gradient, parameters and optimizer state must have equal length")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    w = params.values
    if state.weight_decay > 0:
        w = w - state.lr * state.weight_decay * w
    w = w - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return ModelParams(params.layout, w), replace(state, m=m, v=v, t=t)


def average_params(models: Sequence[ModelParams]) -> ModelParams:
    """Uniform elementwise mean of parameter vectors with one shared layout."""
    if not models:
        raise ValueError("need at least one parameter set to average")
    layout = models[0].layout
    if any(m.layout != layout for m in models):
        raise ValueError("cannot average parameters with different layouts")
    if len(models) == 1:
        return models[0].copy()
    # fixed summation order keeps the result independent of caller tricks
    total = np.sum(np.stack([m.values for m in models]), axis=0)
    return ModelParams(layout, total / len(models))


# -- checkpoint files -------------------------------------------------------

CHECKPOINT_MAGIC = b"CHRN"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sHIII")


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    L = params.layout
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, L.D, L.H, L.K))
        fh.write(params.values.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> ModelParams:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint")
    magic, version, D, H, K = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    layout = Layout(D, H, K)
    body = raw[_HEADER.size :]
    if len(body) != 8 * layout.size:
        raise ValueError(f"{path}: expected {layout.size} values, found {len(body) / 8:g}")
    return ModelParams(layout, np.frombuffer(body, dtype="<f8").astype(np.float64))
