"""Differentiable classifiers: softmax regression and a 1-hidden-layer tanh MLP.

Parameters live in one flat float64 vector per model so the optimizer and
checkpoint code never care about architecture.  Layouts (row-major):

  softmax_reg: [W (d*k), b (k)]
  mlp1:        [W1 (d*h), b1 (h), W2 (h*k), b2 (k)]

Gradients are written out by hand (no autodiff); ``grad_check`` verifies
them against central finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import MagicMismatch, TruncatedFile
from .rng import Xoshiro256StarStar

ARCH_SOFTMAX = "softmax_reg"
ARCH_MLP1 = "mlp1"
_ARCH_CODES = {ARCH_SOFTMAX: 0, ARCH_MLP1: 1}
_ARCH_NAMES = {v: k for k, v in _ARCH_CODES.items()}


class DimMismatch(Exception):
    pass


@dataclass
class Model:
    arch: str
    d: int
    k: int
    h: int
    params: np.ndarray  # flat float64

    @property
    def n_params(self) -> int:
        return self.params.size


def param_count(arch: str, d: int, k: int, h: int = 0) -> int:
    if arch == ARCH_SOFTMAX:
        return d * k + k
    if arch == ARCH_MLP1:
        return d * h + h + h * k + k
    raise ValueError(f"unknown arch {arch!r}")


def init_model(arch: str, d: int, k: int, h: int = 0,
               rng: Xoshiro256StarStar | None = None) -> Model:
    """Create a model with its documented initialization.

    softmax_reg starts at exactly zero (draws nothing from ``rng``).  mlp1
    draws W1 ~ U(-1/sqrt(d), 1/sqrt(d)) row-major, then W2 ~ U(-1/sqrt(h),
    1/sqrt(h)) row-major, from ``rng``; biases start at zero.  That draw
    order is part of the reproducibility contract.
    """
    if d < 1 or k < 2:
        raise ValueError(f"need d >= 1 and k >= 2 (got d={d}, k={k})")
    if arch == ARCH_SOFTMAX:
        return Model(arch, d, k, 0, np.zeros(param_count(arch, d, k), dtype=np.float64))
    if arch == ARCH_MLP1:
        if h < 1:
            raise ValueError("mlp1 needs hidden width h >= 1")
        if rng is None:
            raise ValueError("mlp1 init needs an rng")
        params = np.zeros(param_count(arch, d, k, h), dtype=np.float64)
        bound1 = 1.0 / np.sqrt(d)
        w1 = np.array([rng.uniform(-bound1, bound1) for _ in range(d * h)])
        bound2 = 1.0 / np.sqrt(h)
        w2 = np.array([rng.uniform(-bound2, bound2) for _ in range(h * k)])
        params[: d * h] = w1
        params[d * h + h : d * h + h + h * k] = w2
        return Model(arch, d, k, h, params)
    raise ValueError(f"unknown arch {arch!r}")


def _views(model: Model):
    p, d, k, h = model.params, model.d, model.k, model.h
    if model.arch == ARCH_SOFTMAX:
        return p[: d * k].reshape(d, k), p[d * k :]
    o = 0
    w1 = p[o : o + d * h].reshape(d, h); o += d * h
    b1 = p[o : o + h]; o += h
    w2 = p[o : o + h * k].reshape(h, k); o += h * k
    b2 = p[o : o + k]
    return w1, b1, w2, b2


@dataclass
class ForwardOutput:
    logits: np.ndarray  # (B, k)
    loss: np.ndarray    # (B,) per-sample cross-entropy
    pa: np.ndarray      # (B,) bool, argmax == label (ties -> lowest class)
    pc: np.ndarray      # (B,) max softmax probability


def _check_batch(model: Model, x: np.ndarray, y: np.ndarray):
    if x.ndim != 2 or x.shape[1] != model.d:
        raise DimMismatch(f"x shape {x.shape} incompatible with d={model.d}")
    if y.shape != (x.shape[0],):
        raise DimMismatch(f"y shape {y.shape} incompatible with batch {x.shape[0]}")
    if y.size and (y.min() < 0 or y.max() >= model.k):
        raise ValueError("labels outside [0, k)")


def _logits_cached(model: Model, x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if model.arch == ARCH_SOFTMAX:
        w, b = _views(model)
        return x @ w + b, None
    w1, b1, w2, b2 = _views(model)
    a1 = np.tanh(x @ w1 + b1)
    return a1 @ w2 + b2, a1


def forward(model: Model, x: np.ndarray, y: np.ndarray) -> ForwardOutput:
    """Per-sample cross-entropy loss and prediction statistics.

    Softmax is computed with max subtraction; the per-sample loss is
    logsumexp(z) - z_y, so it is exact for all-equal logits.
    """
    x = np.asarray(x)
    y = np.asarray(y, dtype=np.int64)
    _check_batch(model, x, y)
    z, _ = _logits_cached(model, x)
    m = z.max(axis=1)
    e = np.exp(z - m[:, None])
    s = e.sum(axis=1)
    p = e / s[:, None]
    rows = np.arange(z.shape[0])
    loss = np.log(s) + m - z[rows, y]
    pa = np.argmax(z, axis=1) == y
    pc = p.max(axis=1)
    return ForwardOutput(logits=z, loss=loss, pa=pa, pc=pc)


def forward_backward(model: Model, x: np.ndarray, y: np.ndarray):
    """Forward output plus the gradient of the batch-mean loss.

    One fused pass so training loops do not pay for a second forward.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_batch(model, x, y)
    b = x.shape[0]
    weights = np.full(b, 1.0 / b)

    z, a1 = _logits_cached(model, x)
    m = z.max(axis=1)
    e = np.exp(z - m[:, None])
    s = e.sum(axis=1)
    p = e / s[:, None]
    rows = np.arange(b)
    loss = np.log(s) + m - z[rows, y]
    out = ForwardOutput(logits=z, loss=loss,
                        pa=np.argmax(z, axis=1) == y, pc=p.max(axis=1))

    dz = p.copy()
    dz[rows, y] -= 1.0
    dz *= weights[:, None]

    grad = np.empty_like(model.params)
    if model.arch == ARCH_SOFTMAX:
        d, k = model.d, model.k
        grad[: d * k] = (x.T @ dz).ravel()
        grad[d * k :] = dz.sum(axis=0)
        return out, grad

    w1, b1, w2, b2 = _views(model)
    d, k, h = model.d, model.k, model.h
    da1 = dz @ w2.T
    dz1 = da1 * (1.0 - a1 * a1)
    o = 0
    grad[o : o + d * h] = (x.T @ dz1).ravel(); o += d * h
    grad[o : o + h] = dz1.sum(axis=0); o += h
    grad[o : o + h * k] = (a1.T @ dz).ravel(); o += h * k
    grad[o : o + k] = dz.sum(axis=0)
    return out, grad


def backward(model: Model, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the batch-mean cross-entropy."""
    return forward_backward(model, x, y)[1]


def per_sample_grad_norms(model: Model, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """L2 norm of each sample's own loss gradient, without forming them.

    Uses the rank-1 structure of the layer gradients: for an outer product
    ||a b^T||_F = ||a|| ||b||, so each sample's squared norm decomposes into
    per-layer products of activation and backprop-signal norms.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_batch(model, x, y)
    z, a1 = _logits_cached(model, x)
    m = z.max(axis=1)
    e = np.exp(z - m[:, None])
    p = e / e.sum(axis=1)[:, None]
    dz = p
    dz[np.arange(x.shape[0]), y] -= 1.0
    xsq = (x * x).sum(axis=1)
    if model.arch == ARCH_SOFTMAX:
        return np.sqrt((dz * dz).sum(axis=1) * (xsq + 1.0))
    _, _, w2, _ = _views(model)
    da1 = dz @ w2.T
    dz1 = da1 * (1.0 - a1 * a1)
    sq = (dz * dz).sum(axis=1) * ((a1 * a1).sum(axis=1) + 1.0)
    sq += (dz1 * dz1).sum(axis=1) * (xsq + 1.0)
    return np.sqrt(sq)


def grad_check(model: Model, x: np.ndarray, y: np.ndarray, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is |a - n| / max(1, |a|, |n|).  Only meant
    for small models (caps at 5000 parameters).
    """
    if model.n_params > 5000:
        raise ValueError("grad_check is O(params * forward); cap is 5000 params")
    analytic = backward(model, x, y)
    worst = 0.0
    p = model.params
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + eps
        hi = float(forward(model, x, y).loss.mean())
        p[i] = orig - eps
        lo = float(forward(model, x, y).loss.mean())
        p[i] = orig
        num = (hi - lo) / (2.0 * eps)
        err = abs(analytic[i] - num) / max(1.0, abs(analytic[i]), abs(num))
        worst = max(worst, err)
    return worst


# ======================================================================
# Checkpoint format
# ======================================================================
#
#   bytes 0..3   magic b"KCKP"
#   u16          version (1)
#   u8           arch code (0 = softmax_reg, 1 = mlp1)
#   u32, u32, u32  d, h, k
#   u64          parameter count
#   f64 * count  parameters
#
# all integers and floats little-endian

CKPT_MAGIC = b"KCKP"
_CKPT_HEADER = struct.Struct("<4sHBIIIQ")


def save_checkpoint(model: Model, path: str) -> None:
    header = _CKPT_HEADER.pack(
        CKPT_MAGIC, 1, _ARCH_CODES[model.arch],
        model.d, model.h, model.k, model.n_params,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(model.params.astype("<f8").tobytes())


def load_checkpoint(path: str) -> Model:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < _CKPT_HEADER.size:
        raise TruncatedFile(f"{path}: shorter than checkpoint header")
    magic, version, code, d, h, k, count = _CKPT_HEADER.unpack_from(buf, 0)
    if magic != CKPT_MAGIC:
        raise MagicMismatch(f"{path}: magic {magic!r}, expected {CKPT_MAGIC!r}")
    if version != 1:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if code not in _ARCH_NAMES:
        raise ValueError(f"{path}: unknown arch code {code}")
    arch = _ARCH_NAMES[code]
    if count != param_count(arch, d, k, h):
        raise DimMismatch(
            f"{path}: header says {count} params, arch dims imply "
            f"{param_count(arch, d, k, h)}"
        )
    body = buf[_CKPT_HEADER.size :]
    if len(body) < count * 8:
        raise TruncatedFile(f"{path}: expected {count * 8} payload bytes, found {len(body)}")
    params = np.frombuffer(body[: count * 8], dtype="<f8").astype(np.float64)
    return Model(arch, d, k, h, params)
