"""Comparator sample-selection strategies.

Three reduced-effort baselines the hiding pipeline is measured against:

* ISWR: importance sampling with replacement, each sample drawn with
  probability proportional to its last observed loss.
* SB (selective backprop): forward everything, backpropagate a sample with
  probability given by its loss's rank among recent losses, raised to beta.
* FORGET: count forgetting events (correct -> incorrect transitions) for a
  fixed number of epochs, then permanently prune the least-forgotten
  fraction and restart training on the remainder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import Xoshiro256StarStar


class PhaseError(Exception):
    pass


# ======================================================================
# Importance sampling with replacement
# ======================================================================

# relative floor keeps zero-loss samples drawable
ISWR_FLOOR_REL = 1e-6


@dataclass
class IswrState:
    """Per-sample sampling weights; start uniform, become lagging losses."""

    weights: np.ndarray

    @classmethod
    def for_n(cls, n: int) -> "IswrState":
        return cls(weights=np.ones(n, dtype=np.float64))

    def update(self, idxs: np.ndarray, losses: np.ndarray) -> None:
        # duplicate indices in one batch: the last write wins
        self.weights[np.asarray(idxs, dtype=np.int64)] = np.asarray(losses, dtype=np.float64)


def iswr_draw(state: IswrState, batch_size: int, rng: Xoshiro256StarStar) -> np.ndarray:
    """Draw batch_size indices with replacement, P(i) = w_i / sum(w).

    Weights are floored at ISWR_FLOOR_REL times their mean before building
    the cdf; an all-zero weight vector falls back to uniform.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    w = state.weights
    floor = ISWR_FLOOR_REL * float(w.mean())
    w = np.maximum(w, floor)
    cdf = np.cumsum(w)
    if cdf[-1] <= 0.0:
        cdf = np.cumsum(np.ones_like(w))
    u = np.array(rng.randoms(batch_size)) * cdf[-1]
    return np.searchsorted(cdf, u, side="right").astype(np.int64)


# ======================================================================
# Selective backprop
# ======================================================================


@dataclass
class SbState:
    """Ring buffer of recent training losses plus the selection exponent."""

    beta: float = 1.0
    capacity: int = 1024
    history: np.ndarray = field(default=None)
    size: int = 0
    pos: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.history is None:
            self.history = np.zeros(self.capacity, dtype=np.float64)

    def push(self, losses: np.ndarray) -> None:
        for v in np.asarray(losses, dtype=np.float64):
            self.history[self.pos] = v
            self.pos = (self.pos + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)


def sb_select(state: SbState, batch_losses: np.ndarray,
              rng: Xoshiro256StarStar) -> np.ndarray:
    """Positions within the batch selected for backprop; updates history.

    Selection probability is the mid-rank empirical CDF of the loss among
    the buffered history, raised to beta:

        P = ((#less + 0.5 * #equal) / size) ** beta

    so a loss equal to the history median is kept with probability exactly
    0.5 at beta = 1, and beta = 0 keeps everything.  While the history is
    empty (very first batch) everything is selected and no randomness is
    consumed.  The batch's own losses are pushed after selection.
    """
    losses = np.asarray(batch_losses, dtype=np.float64)
    if state.size == 0:
        sel = np.arange(losses.size, dtype=np.int64)
    else:
        hist = np.sort(state.history[: state.size])
        less = np.searchsorted(hist, losses, side="left")
        upto = np.searchsorted(hist, losses, side="right")
        cdf_mid = (less + 0.5 * (upto - less)) / state.size
        p = cdf_mid**state.beta
        u = np.array(rng.randoms(losses.size))
        sel = np.nonzero(u < p)[0].astype(np.int64)
    state.push(losses)
    return sel


# ======================================================================
# Forgetting-count pruning
# ======================================================================

# samples never seen correct sort after every real count and are never pruned
FORGET_NEVER = np.iinfo(np.int64).max


@dataclass
class ForgetState:
    prev_correct: np.ndarray
    events: np.ndarray
    ever_correct: np.ndarray
    phase: str = "counting"

    @classmethod
    def for_n(cls, n: int) -> "ForgetState":
        return cls(
            prev_correct=np.zeros(n, dtype=bool),
            events=np.zeros(n, dtype=np.int64),
            ever_correct=np.zeros(n, dtype=bool),
        )


def forget_update(state: ForgetState, idxs: np.ndarray, correct_now: np.ndarray) -> None:
    """Record one observation per listed sample (indices must be unique).

    A forgetting event is a transition from correct at the previous
    observation to incorrect now.
    """
    if state.phase != "counting":
        raise PhaseError("forget counts are frozen after pruning")
    idxs = np.asarray(idxs, dtype=np.int64)
    correct = np.asarray(correct_now, dtype=bool)
    forgot = state.prev_correct[idxs] & ~correct
    state.events[idxs] += forgot
    state.ever_correct[idxs] |= correct
    state.prev_correct[idxs] = correct


def forget_prune(state: ForgetState, fraction: float) -> np.ndarray:
    """Choose floor(fraction * n) samples to prune; freezes the state.

    Sort key is (event count ascending, index ascending); samples that were
    never correct count as infinitely forgettable-proof (sentinel max) and
    are excluded from pruning no matter the fraction.  Returns the pruned
    indices sorted ascending.
    """
    if state.phase != "counting":
        raise PhaseError("already pruned")
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must be in [0, 1)")
    n = state.events.size
    k = int(fraction * n)
    eff = np.where(state.ever_correct, state.events, FORGET_NEVER)
    order = np.argsort(eff, kind="stable")
    take = order[:k]
    pruned = np.sort(take[eff[take] != FORGET_NEVER]).astype(np.int64)
    state.phase = "pruned"
    return pruned
