"""Datasets and per-sample bookkeeping.

Three dataset sources: the IDX image/label pair format, headed CSV with a
named label column, and three synthetic families (gaussian blobs, two moons,
margin-separated linear).  All loaders return a :class:`Dataset` with float32
features and int64 labels.

:class:`SampleStore` holds the per-sample lagging statistics (loss,
argmax-correct flag, top softmax probability, last refresh epoch) that the
hiding logic reads.  "Lagging" means: whatever the most recent forward pass
of that sample produced, which may be several epochs old for samples that
were hidden in between.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np


class DataError(Exception):
    """Base class for dataset parsing/construction failures."""


class MagicMismatch(DataError):
    pass


class CountMismatch(DataError):
    pass


class TruncatedFile(DataError):
    pass


class RaggedRow(DataError):
    pass


class NonNumericCell(DataError):
    pass


class UnknownLabelColumn(DataError):
    pass


class UnsupportedCombination(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


# ======================================================================
# Dataset container
# ======================================================================


@dataclass
class Dataset:
    """Feature matrix (n, d) float32, labels (n,) int64 in [0, k)."""

    features: np.ndarray
    labels: np.ndarray
    k: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        self.validate()

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def validate(self) -> None:
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be a vector aligned with features rows")
        if self.n < 1 or self.d < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got n={self.n} d={self.d}")
        if self.k < 2:
            raise ValueError(f"need k >= 2 classes, got k={self.k}")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite values")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise ValueError("labels outside [0, k)")


# ======================================================================
# IDX loader (big-endian image/label pair)
# ======================================================================

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_exact(buf: bytes, offset: int, count: int, path: str) -> bytes:
    if offset + count > len(buf):
        raise TruncatedFile(
            f"{path}: expected {offset + count} bytes, file has {len(buf)}"
        )
    return buf[offset : offset + count]


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Load an images/labels pair of IDX files.

    Pixels are scaled to [0, 1] by dividing by 255.  The class count is
    inferred as max(label) + 1.
    """
    with open(images_path, "rb") as f:
        img_buf = f.read()
    with open(labels_path, "rb") as f:
        lab_buf = f.read()

    header = _read_exact(img_buf, 0, 16, images_path)
    magic, n_img, rows, cols = struct.unpack(">IIII", header)
    if magic != IDX_IMAGES_MAGIC:
        raise MagicMismatch(
            f"{images_path}: magic 0x{magic:08X}, expected 0x{IDX_IMAGES_MAGIC:08X}"
        )
    pixels = _read_exact(img_buf, 16, n_img * rows * cols, images_path)

    header = _read_exact(lab_buf, 0, 8, labels_path)
    magic, n_lab = struct.unpack(">II", header)
    if magic != IDX_LABELS_MAGIC:
        raise MagicMismatch(
            f"{labels_path}: magic 0x{magic:08X}, expected 0x{IDX_LABELS_MAGIC:08X}"
        )
    raw_labels = _read_exact(lab_buf, 8, n_lab, labels_path)

    if n_img != n_lab:
        raise CountMismatch(
            f"{images_path} holds {n_img} images but {labels_path} holds "
            f"{n_lab} labels")

    feats = np.frombuffer(pixels, dtype=np.uint8).astype(np.float32) / 255.0
    feats = feats.reshape(n_img, rows * cols)
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return Dataset(feats, labels, k=int(labels.max()) + 1)


# ======================================================================
# CSV loader
# ======================================================================


def load_csv(path: str, label_column: str) -> Dataset:
    """Load a headed CSV; features are z-scored per column.

    The label column must hold integer values; distinct labels are remapped
    to dense indices 0..k-1 in sorted order.  Constant feature columns
    z-score to all zeros.
    """
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise TruncatedFile(f"{path}: empty file") from None
        rows = list(reader)

    if label_column not in header:
        raise UnknownLabelColumn(
            f"label column {label_column!r} not in header {header}"
        )
    label_idx = header.index(label_column)
    width = len(header)

    values = np.empty((len(rows), width), dtype=np.float64)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise RaggedRow(
                f"{path}: data row {r + 1} has {len(row)} cells, header has {width}"
            )
        for c, cell in enumerate(row):
            try:
                values[r, c] = float(cell)
            except ValueError:
                raise NonNumericCell(
                    f"{path}: data row {r + 1}, column {header[c]!r}: {cell!r}"
                ) from None

    raw_labels = values[:, label_idx]
    if not np.all(raw_labels == np.floor(raw_labels)):
        bad = int(np.argmin(raw_labels == np.floor(raw_labels)))
        raise NonNumericCell(
            f"{path}: label column {label_column!r} must be integer-valued, "
            f"data row {bad + 1} is {raw_labels[bad]!r}"
        )
    uniq = np.unique(raw_labels.astype(np.int64))
    remap = {v: i for i, v in enumerate(uniq.tolist())}
    labels = np.array([remap[int(v)] for v in raw_labels], dtype=np.int64)

    feat_cols = [c for c in range(width) if c != label_idx]
    feats = values[:, feat_cols]
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    scaled = np.where(std > 0, (feats - mean) / np.where(std > 0, std, 1.0), 0.0)
    return Dataset(scaled.astype(np.float32), labels, k=len(uniq))


# ======================================================================
# Synthetic generators
# ======================================================================

_BLOB_SPREAD = 4.0  # center scale, divided by sqrt(d); sets class overlap
_MOON_NOISE = 0.1
_LINEAR_MARGIN = 0.1  # top-2 logit gap floor, times sqrt(d)
_LINEAR_CHUNK = 4096


def gen_synthetic(kind: str, n: int, d: int, k: int, seed: int) -> Dataset:
    """Deterministic synthetic dataset.

    kinds: "blobs" (k gaussian clusters, labels assigned round-robin),
    "moons" (two interleaved half-circles, requires d=2 and k=2),
    "linear" (separable by a random linear map, with an enforced margin
    so softmax regression can fit it exactly).
    """
    if kind not in ("blobs", "moons", "linear"):
        raise UnsupportedCombination(f"unknown synthetic kind {kind!r}")
    if kind == "moons" and (d != 2 or k != 2):
        raise UnsupportedCombination(
            f"moons is only defined for d=2, k=2 (got d={d}, k={k})"
        )
    if n < k:
        raise ValueError(f"need n >= k so every class appears (n={n}, k={k})")
    if d < 1 or k < 2:
        raise ValueError(f"need d >= 1 and k >= 2 (got d={d}, k={k})")

    g = np.random.default_rng(seed)

    if kind == "blobs":
        centers = g.normal(0.0, 1.0, size=(k, d)) * (_BLOB_SPREAD / math.sqrt(d))
        labels = np.arange(n, dtype=np.int64) % k
        feats = centers[labels] + g.normal(0.0, 1.0, size=(n, d))
        return Dataset(feats.astype(np.float32), labels, k=k)

    if kind == "moons":
        t = g.uniform(0.0, math.pi, size=n)
        arc = np.arange(n, dtype=np.int64) % 2
        x = np.where(arc == 0, np.cos(t), 1.0 - np.cos(t))
        y = np.where(arc == 0, np.sin(t), 0.5 - np.sin(t))
        feats = np.stack([x, y], axis=1) + g.normal(0.0, _MOON_NOISE, size=(n, 2))
        return Dataset(feats.astype(np.float32), arc, k=2)

    # linear: rejection-sample points whose top-2 logit gap clears the margin
    w_true = g.normal(0.0, 1.0, size=(d, k))
    margin = _LINEAR_MARGIN * math.sqrt(d)
    feat_parts, label_parts, have = [], [], 0
    while have < n:
        x = g.normal(0.0, 1.0, size=(_LINEAR_CHUNK, d))
        z = x @ w_true
        part = np.partition(z, k - 2, axis=1)
        gap = part[:, k - 1] - part[:, k - 2]
        keep = gap >= margin
        feat_parts.append(x[keep])
        label_parts.append(np.argmax(z[keep], axis=1))
        have += int(keep.sum())
    feats = np.concatenate(feat_parts)[:n]
    labels = np.concatenate(label_parts)[:n].astype(np.int64)
    return Dataset(feats.astype(np.float32), labels, k=k)


# ======================================================================
# Per-sample lagging statistics
# ======================================================================

# bootstrap sentinel: "never seen" sorts after every real loss
LOSS_SENTINEL = float(np.finfo(np.float64).max)


@dataclass
class SampleState:
    lagging_loss: float
    pa: bool
    pc: float
    refreshed_at: int
    hidden_now: bool


class SampleStore:
    """Per-sample lagging loss / prediction bookkeeping.

    All arrays are index-aligned with the training set.  Until a sample's
    first forward pass it carries bootstrap values: loss = LOSS_SENTINEL,
    pa = False, pc = 0.0, refreshed_at = -1.  Writing the same index twice
    in one batch keeps the last write.
    """

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("store needs n >= 1")
        self.n = n
        self.lagging_loss = np.full(n, LOSS_SENTINEL, dtype=np.float64)
        self.pa = np.zeros(n, dtype=bool)
        self.pc = np.zeros(n, dtype=np.float64)
        self.refreshed_at = np.full(n, -1, dtype=np.int64)
        self.hidden_now = np.zeros(n, dtype=bool)
        self.forwards_this_epoch = 0

    def begin_epoch(self) -> None:
        self.forwards_this_epoch = 0

    def record_forward(self, idx: int, loss: float, pa: bool, pc: float, epoch: int) -> None:
        if not 0 <= idx < self.n:
            raise IndexOutOfRange(f"sample index {idx} outside [0, {self.n})")
        if loss < 0.0 or not 0.0 <= pc <= 1.0:
            raise ValueError(f"bad record: loss={loss}, pc={pc}")
        self.lagging_loss[idx] = loss
        self.pa[idx] = pa
        self.pc[idx] = pc
        self.refreshed_at[idx] = epoch
        self.forwards_this_epoch += 1

    def record_batch(self, idxs, losses, pas, pcs, epoch: int) -> None:
        """Vectorized record_forward; counts one forward per element."""
        idxs = np.asarray(idxs, dtype=np.int64)
        if idxs.size == 0:
            return
        if idxs.min() < 0 or idxs.max() >= self.n:
            raise IndexOutOfRange(f"sample index outside [0, {self.n})")
        losses = np.asarray(losses, dtype=np.float64)
        pcs = np.asarray(pcs, dtype=np.float64)
        if losses.min() < 0.0 or pcs.min() < 0.0 or pcs.max() > 1.0:
            raise ValueError("bad record batch: negative loss or pc outside [0, 1]")
        self.lagging_loss[idxs] = losses
        self.pa[idxs] = np.asarray(pas, dtype=bool)
        self.pc[idxs] = pcs
        self.refreshed_at[idxs] = epoch
        self.forwards_this_epoch += int(idxs.size)

    def state(self, idx: int) -> SampleState:
        if not 0 <= idx < self.n:
            raise IndexOutOfRange(f"sample index {idx} outside [0, {self.n})")
        return SampleState(
            lagging_loss=float(self.lagging_loss[idx]),
            pa=bool(self.pa[idx]),
            pc=float(self.pc[idx]),
            refreshed_at=int(self.refreshed_at[idx]),
            hidden_now=bool(self.hidden_now[idx]),
        )

    def is_bootstrap(self) -> bool:
        return bool((self.refreshed_at < 0).all())

    def fully_populated(self) -> bool:
        return bool((self.refreshed_at >= 0).all())

    def set_hidden(self, hidden_idxs) -> None:
        self.hidden_now[:] = False
        self.hidden_now[np.asarray(hidden_idxs, dtype=np.int64)] = True
