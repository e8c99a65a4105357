"""ISWR draws, selective-backprop selection, forgetting-count pruning."""

import numpy as np
import pytest
from scipy import stats

from kakurenbo.comparators import (
    FORGET_NEVER,
    ForgetState,
    IswrState,
    PhaseError,
    SbState,
    forget_prune,
    forget_update,
    iswr_draw,
    sb_select,
)
from kakurenbo.rng import Xoshiro256StarStar


# ----------------------------------------------------------------------
# ISWR
# ----------------------------------------------------------------------


def test_iswr_proportional_to_loss():
    state = IswrState(weights=np.array([1.0, 1.0, 2.0]))
    rng = Xoshiro256StarStar(1)
    draws = iswr_draw(state, 100_000, rng)
    freq = np.bincount(draws, minlength=3) / draws.size
    target = np.array([0.25, 0.25, 0.5])
    assert 0.5 * np.abs(freq - target).sum() < 0.02  # total variation
    chi2 = stats.chisquare(np.bincount(draws, minlength=3),
                           target * draws.size)
    assert chi2.pvalue > 0.001


def test_iswr_uniform_when_equal():
    state = IswrState.for_n(8)
    rng = Xoshiro256StarStar(2)
    draws = iswr_draw(state, 100_000, rng)
    freq = np.bincount(draws, minlength=8) / draws.size
    assert 0.5 * np.abs(freq - 1.0 / 8).sum() < 0.02


def test_iswr_dominant_weight():
    # one weight 1e6 times the rest: expect ~8 hits of it per batch of 8
    w = np.ones(16)
    w[3] = 1e6
    state = IswrState(weights=w)
    rng = Xoshiro256StarStar(3)
    hits = 0
    for _ in range(10_000):
        hits += int((iswr_draw(state, 8, rng) == 3).sum())
    mean = hits / 10_000
    assert 7.9 <= mean <= 8.0


class _LowUniforms:
    # stand-in rng whose draws land inside the floored first cdf bin
    def randoms(self, n):
        return [1e-9] * n


def test_iswr_floor_keeps_zero_weights_drawable():
    state = IswrState(weights=np.array([0.0, 1.0]))
    draws = iswr_draw(state, 4, _LowUniforms())
    assert (draws == 0).all()  # floored, not starved


def test_iswr_all_zero_falls_back_to_uniform():
    state = IswrState(weights=np.zeros(4))
    rng = Xoshiro256StarStar(5)
    draws = iswr_draw(state, 40_000, rng)
    freq = np.bincount(draws, minlength=4) / draws.size
    assert 0.5 * np.abs(freq - 0.25).sum() < 0.02


def test_iswr_update_last_write_wins():
    state = IswrState.for_n(3)
    state.update(np.array([1, 1]), np.array([5.0, 7.0]))
    assert state.weights[1] == 7.0
    assert state.weights[0] == 1.0  # untouched stays at the uniform init


def test_iswr_determinism():
    state = IswrState(weights=np.array([1.0, 2.0, 3.0]))
    a = iswr_draw(state, 64, Xoshiro256StarStar(9))
    b = iswr_draw(state, 64, Xoshiro256StarStar(9))
    assert np.array_equal(a, b)


# ----------------------------------------------------------------------
# Selective backprop
# ----------------------------------------------------------------------


def test_sb_first_batch_selects_all_no_draws():
    state = SbState(beta=1.0, capacity=16)
    rng = Xoshiro256StarStar(1)
    before = rng.getstate()
    sel = sb_select(state, np.array([0.5, 2.0, 0.1]), rng)
    assert np.array_equal(sel, [0, 1, 2])
    assert rng.getstate() == before  # no randomness consumed
    assert state.size == 3


def test_sb_median_loss_kept_half_the_time():
    # 9-value history, batch loss equal to the median -> P = 0.5 at beta=1
    hits = 0
    trials = 20_000
    for t in range(trials):
        state = SbState(beta=1.0, capacity=16)
        state.push(np.arange(1.0, 10.0))
        sel = sb_select(state, np.array([5.0]), Xoshiro256StarStar(t))
        hits += sel.size
    assert hits / trials == pytest.approx(0.5, abs=0.02)


def test_sb_beta_zero_selects_everything():
    state = SbState(beta=0.0, capacity=8)
    state.push(np.array([1.0, 2.0, 3.0]))
    sel = sb_select(state, np.array([0.01, 99.0]), Xoshiro256StarStar(2))
    assert np.array_equal(sel, [0, 1])


def test_sb_extreme_losses():
    state = SbState(beta=1.0, capacity=8)
    state.push(np.linspace(1.0, 2.0, 8))
    # above the whole history: rank 1.0, always kept
    sel = sb_select(state, np.array([10.0]), Xoshiro256StarStar(3))
    assert sel.size == 1
    # far below: rank 0, never kept
    state2 = SbState(beta=1.0, capacity=8)
    state2.push(np.linspace(1.0, 2.0, 8))
    sel2 = sb_select(state2, np.array([0.0]), Xoshiro256StarStar(3))
    assert sel2.size == 0


def test_sb_ring_buffer_wraps():
    state = SbState(beta=1.0, capacity=4)
    state.push(np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]))
    assert state.size == 4
    assert sorted(state.history.tolist()) == [3.0, 4.0, 5.0, 6.0]


def test_sb_kept_fraction_stationary_stream():
    # uniform stationary losses at beta=1: kept fraction -> E[U] = 1/2
    state = SbState(beta=1.0, capacity=1024)
    rng = Xoshiro256StarStar(11)
    g = np.random.default_rng(11)
    kept = total = 0
    for _ in range(100):
        batch = g.random(100)
        sel = sb_select(state, batch, rng)
        kept += sel.size
        total += batch.size
    assert 0.48 <= kept / total <= 0.52


# ----------------------------------------------------------------------
# FORGET
# ----------------------------------------------------------------------


def run_sequence(seq):
    state = ForgetState.for_n(1)
    for c in seq:
        forget_update(state, np.array([0]), np.array([bool(c)]))
    return state


def test_forget_event_sequences():
    assert run_sequence([1, 1, 1, 1]).events[0] == 0
    assert run_sequence([1, 0, 1, 0]).events[0] == 2
    s = run_sequence([0, 0, 0, 0])
    assert s.events[0] == 0 and not s.ever_correct[0]


def test_forget_prune_always_correct_first():
    # two always-correct samples are the least forgettable
    state = ForgetState.for_n(10)
    for epoch_correct in ([1] * 10, [1, 1, 0, 1, 0, 1, 1, 1, 1, 1],
                          [1] * 10, [1, 1, 1, 0, 1, 0, 1, 1, 1, 1]):
        forget_update(state, np.arange(10), np.array(epoch_correct, dtype=bool))
    pruned = forget_prune(state, 0.2)
    assert np.array_equal(pruned, [0, 1])


def test_forget_prune_skips_never_correct():
    state = ForgetState.for_n(4)
    forget_update(state, np.arange(4), np.array([False, True, True, False]))
    forget_update(state, np.arange(4), np.array([False, True, True, False]))
    pruned = forget_prune(state, 0.75)
    # only the two ever-correct samples are eligible
    assert set(pruned) <= {1, 2}
    assert len(pruned) == 2


def test_forget_prune_all_never_correct():
    state = ForgetState.for_n(5)
    forget_update(state, np.arange(5), np.zeros(5, dtype=bool))
    assert forget_prune(state, 0.8).size == 0


def test_forget_zero_fraction():
    state = ForgetState.for_n(6)
    forget_update(state, np.arange(6), np.ones(6, dtype=bool))
    assert forget_prune(state, 0.0).size == 0


def test_forget_phase_error():
    state = ForgetState.for_n(3)
    forget_update(state, np.arange(3), np.ones(3, dtype=bool))
    forget_prune(state, 0.3)
    with pytest.raises(PhaseError):
        forget_update(state, np.arange(3), np.ones(3, dtype=bool))
    with pytest.raises(PhaseError):
        forget_prune(state, 0.3)


def test_forget_events_monotone():
    state = ForgetState.for_n(2)
    g = np.random.default_rng(6)
    prev = state.events.copy()
    for _ in range(50):
        forget_update(state, np.arange(2), g.random(2) < 0.5)
        assert (state.events >= prev).all()
        prev = state.events.copy()


def test_forget_sentinel_constant():
    assert FORGET_NEVER == np.iinfo(np.int64).max
