"""Adaptive sample hiding: per-epoch selection, move-back, and refresh.

Each epoch the samples are ranked by lagging loss (ascending, ties broken by
index) and the lowest-loss fraction F_e become hiding candidates.  A
candidate is actually hidden only if its lagging prediction was correct with
confidence pc >= tau; the rest are "moved back" into the training list.
Optionally the very highest-loss tail is dropped too (noisy-label guard).
Hidden and dropped samples still get a forward-only refresh at the end of
the epoch so their lagging statistics never go stale by more than the
epochs they spent hidden.

The training list is built in ascending index order and then Fisher-Yates
shuffled with the run stream.  With F = 0 and no drop this consumes exactly
the same draws as shuffling 0..N-1, which keeps the degenerate configuration
bit-identical to plain training.
"""

from __future__ import annotations

import bisect
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, MagicMismatch, SampleStore, TruncatedFile
from .model import Model, forward, per_sample_grad_norms
from .optim import adjusted_lr
from .rng import Xoshiro256StarStar


class StoreNotPopulated(Exception):
    pass


@dataclass
class HidingConfig:
    max_fraction: float = 0.3  # F: upper bound on the hidden fraction
    tau: float = 0.7           # confidence gate for actually hiding
    decay_factors: tuple = (1.0,)
    decay_milestones: tuple = (0,)
    drop_top_rate: float = 0.0

    def validate(self) -> None:
        if not 0.0 <= self.max_fraction < 1.0:
            raise ValueError("max_fraction must be in [0, 1)")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if not 0.0 <= self.drop_top_rate <= 0.1:
            raise ValueError("drop_top_rate must be in [0, 0.1]")
        fac = list(self.decay_factors)
        ms = list(self.decay_milestones)
        if len(fac) != len(ms) or not fac:
            raise ValueError("decay_factors and decay_milestones must align, len >= 1")
        if ms[0] != 0:
            raise ValueError("decay_milestones must start at epoch 0")
        if ms != sorted(set(ms)):
            raise ValueError("decay_milestones must be strictly increasing")
        if fac[0] != 1.0:
            raise ValueError("decay_factors must start at 1 (full fraction at epoch 0)")
        if any(not 0.0 < f <= 1.0 for f in fac):
            raise ValueError("decay_factors must be in (0, 1]")
        if any(b > a for a, b in zip(fac, fac[1:])):
            raise ValueError("decay_factors must be non-increasing")


@dataclass
class EpochPlan:
    """Partition of sample indices for one epoch.

    training_list is in trained (shuffled) order; hidden_list and
    dropped_top_list are sorted ascending.  The three lists partition
    0..n-1.  moved_back counts candidates returned to training by the
    confidence gate.
    """

    epoch: int
    training_list: np.ndarray
    hidden_list: np.ndarray
    dropped_top_list: np.ndarray
    f_e: float
    f_star: float
    eta_e: float
    moved_back: int

    @property
    def n(self) -> int:
        return self.training_list.size + self.hidden_list.size + self.dropped_top_list.size


def fraction_at(cfg: HidingConfig, epoch: int) -> float:
    """Scheduled hiding fraction F_e = F * decay_factor(epoch)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    i = bisect.bisect_right(cfg.decay_milestones, epoch) - 1
    return cfg.max_fraction * cfg.decay_factors[i]


def select_hidden(store: SampleStore, cfg: HidingConfig, epoch: int,
                  eta_base: float, rng: Xoshiro256StarStar) -> EpochPlan:
    """Build the epoch plan from lagging statistics.

    Candidates are the floor(F_e * n) lowest lagging losses (stable sort, so
    ties keep index order).  A candidate stays hidden iff its lagging
    prediction was correct and pc >= tau; pc exactly at tau hides.  At epoch
    0 every sample carries bootstrap sentinels, so nothing passes the gate
    and the plan trains everything.
    """
    n = store.n
    if not (store.is_bootstrap() or store.fully_populated()):
        raise StoreNotPopulated(
            "store mixes refreshed and never-seen samples; every sample "
            "needs a recorded forward before hiding can rank them"
        )
    f_e = fraction_at(cfg, epoch)
    eta_e = adjusted_lr(eta_base, f_e)

    order = np.argsort(store.lagging_loss, kind="stable")
    n_cand = math.floor(f_e * n)
    cand = order[:n_cand]
    gate = store.pa[cand] & (store.pc[cand] >= cfg.tau)
    hidden = np.sort(cand[gate])

    n_drop = min(math.floor(cfg.drop_top_rate * n), n - n_cand)
    dropped = np.sort(order[n - n_drop :]) if n_drop > 0 else np.empty(0, dtype=np.int64)

    mask = np.ones(n, dtype=bool)
    mask[hidden] = False
    mask[dropped] = False
    training = np.nonzero(mask)[0].astype(np.int64)  # ascending before shuffle
    rng.shuffle(training)

    return EpochPlan(
        epoch=epoch,
        training_list=training,
        hidden_list=hidden.astype(np.int64),
        dropped_top_list=dropped.astype(np.int64),
        f_e=f_e,
        f_star=hidden.size / n,
        eta_e=eta_e,
        moved_back=n_cand - int(hidden.size),
    )


_REFRESH_CHUNK = 2048


def refresh_hidden(model: Model, ds: Dataset, plan: EpochPlan,
                   store: SampleStore) -> int:
    """Forward-only refresh of hidden and dropped samples, in index order.

    Updates the store's lagging statistics for those samples at the plan's
    epoch; never touches parameters.  Returns the number refreshed.
    """
    idxs = np.sort(np.concatenate([plan.hidden_list, plan.dropped_top_list]))
    for lo in range(0, idxs.size, _REFRESH_CHUNK):
        part = idxs[lo : lo + _REFRESH_CHUNK]
        out = forward(model, ds.features[part], ds.labels[part])
        store.record_batch(part, out.loss, out.pa, out.pc, plan.epoch)
    return int(idxs.size)


def steps_per_epoch(n: int, hidden: int, batch_size: int) -> int:
    """Optimizer steps for an epoch with `hidden` samples removed.

    Full batches plus one partial batch if a remainder is left.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not 0 <= hidden <= n:
        raise ValueError("hidden count must be in [0, n]")
    remain = n - hidden
    return remain // batch_size + (1 if remain % batch_size else 0)


def grad_norm_ratio(model: Model, ds: Dataset, plan: EpochPlan) -> float:
    """Diagnostic: share of total per-sample gradient norm that is hidden.

    Cheap rank-1 norm computation, chunked over the dataset.  Returns 0.0
    when nothing is hidden.
    """
    if plan.hidden_list.size == 0:
        return 0.0
    total = 0.0
    hidden_total = 0.0
    hidden_mask = np.zeros(ds.n, dtype=bool)
    hidden_mask[plan.hidden_list] = True
    for lo in range(0, ds.n, _REFRESH_CHUNK):
        hi = min(lo + _REFRESH_CHUNK, ds.n)
        norms = per_sample_grad_norms(model, ds.features[lo:hi], ds.labels[lo:hi])
        total += float(norms.sum())
        hidden_total += float(norms[hidden_mask[lo:hi]].sum())
    return hidden_total / total if total > 0 else 0.0


# ======================================================================
# Plan dump format
# ======================================================================
#
#   bytes 0..3  magic b"KPLN"
#   u16         version (1)
#   u32         epoch
#   u64         n (total samples)
#   f64 * 3     f_e, f_star, eta_e
#   u64         moved_back
#   3 sections, each: u64 count, then count u64 sample indices sorted
#   ascending (training, hidden, dropped_top)
#
# all little-endian

PLAN_MAGIC = b"KPLN"
_PLAN_HEADER = struct.Struct("<4sHIQdddQ")


def dump_plan(plan: EpochPlan, dir_path: str) -> str:
    """Write one epoch plan to dir_path/plan_epoch_NNNN.bin; returns the path."""
    os.makedirs(dir_path, exist_ok=True)
    path = os.path.join(dir_path, f"plan_epoch_{plan.epoch:04d}.bin")
    with open(path, "wb") as f:
        f.write(_PLAN_HEADER.pack(PLAN_MAGIC, 1, plan.epoch, plan.n,
                                  plan.f_e, plan.f_star, plan.eta_e,
                                  plan.moved_back))
        for section in (plan.training_list, plan.hidden_list, plan.dropped_top_list):
            idx = np.sort(np.asarray(section, dtype=np.int64))
            f.write(struct.pack("<Q", idx.size))
            f.write(idx.astype("<u8").tobytes())
    return path


def load_plan(path: str) -> EpochPlan:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < _PLAN_HEADER.size:
        raise TruncatedFile(f"{path}: shorter than plan header")
    magic, version, epoch, n, f_e, f_star, eta_e, moved_back = _PLAN_HEADER.unpack_from(buf, 0)
    if magic != PLAN_MAGIC:
        raise MagicMismatch(f"{path}: magic {magic!r}, expected {PLAN_MAGIC!r}")
    if version != 1:
        raise ValueError(f"{path}: unsupported plan version {version}")
    off = _PLAN_HEADER.size
    sections = []
    for _ in range(3):
        if off + 8 > len(buf):
            raise TruncatedFile(f"{path}: truncated section header")
        (count,) = struct.unpack_from("<Q", buf, off)
        off += 8
        nbytes = count * 8
        if off + nbytes > len(buf):
            raise TruncatedFile(f"{path}: truncated index section")
        sections.append(np.frombuffer(buf, dtype="<u8", count=count, offset=off).astype(np.int64))
        off += nbytes
    training, hidden, dropped = sections
    if training.size + hidden.size + dropped.size != n:
        raise ValueError(f"{path}: sections do not partition {n} samples")
    return EpochPlan(epoch=epoch, training_list=training, hidden_list=hidden,
                     dropped_top_list=dropped, f_e=f_e, f_star=f_star,
                     eta_e=eta_e, moved_back=moved_back)
