"""Expectation-maximization for the chain parameters from an observable path.

The E-step needs, per inter-jump segment, the integral of
exp(block * (t - y)) @ weight @ exp(block * y) over the segment.  That
integral is the upper-right corner of the exponential of a doubled block
matrix, and the survival factor needed for the jump statistics is the
upper-left corner of the same exponential, so each segment costs exactly one
small matrix exponential on top of the forward-backward pass.

The M-step is closed form: each rate is an expected jump count divided by the
expected dwell time of its source state.  Rates that start at zero stay at
zero because the expected counts carry the current rate as a factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DegenerateStateError, ValidationError
from .inference import forward_backward
from .linalg import clip_small_negatives, expm_kernel
from .model import Generator, validate

__all__ = ["SufficientStats", "EmConfig", "FitResult", "e_step", "m_step", "fit"]


@dataclass(frozen=True)
class SufficientStats:
    """Conditional expectations given one observable path.

    jumps[l, n, i, j] is the expected number of transitions from joint state
    (l, i) to (n, j); entries with (l, i) == (n, j) are zero.  dwell[l, i] is
    the expected time spent in (l, i).  Both refer to the window ending at
    the last observed jump.
    """

    jumps: np.ndarray
    dwell: np.ndarray


@dataclass(frozen=True)
class EmConfig:
    """Stopping rule and optional structural mask for the fit loop."""

    rel_tol: float = 1e-7
    max_iters: int = 500
    mask: np.ndarray | None = None

    def __post_init__(self):
        if not self.rel_tol > 0.0:
            raise ValidationError(f"relative tolerance must be positive, got {self.rel_tol}")
        if int(self.max_iters) < 1:
            raise ValidationError(f"iteration cap must be >= 1, got {self.max_iters}")


@dataclass
class FitResult:
    estimate: Generator
    loglik_trace: np.ndarray
    iterations: int
    termination: str  # "converged", "max_iters", or "degenerate"
    degenerate_states: list[tuple[int, int]] = field(default_factory=list)


@njit(cache=True)
def _estep_kernel(blocks, fwd, bwd, scale, obs_seq, dwells):
    d = blocks.shape[0]
    r = blocks.shape[2]
    n_seg = dwells.shape[0]
    wsum = np.zeros((d, d, r, r))
    doubled = np.zeros((2 * r, 2 * r))
    for k in range(n_seg):
        l = obs_seq[k]
        n = obs_seq[k + 1]
        dt = dwells[k]
        c = scale[k]
        cross = np.outer(bwd[k + 1], fwd[k])
        doubled[:r, :r] = blocks[l, l] * dt
        doubled[r:, r:] = blocks[l, l] * dt
        doubled[:r, r:] = (blocks[l, n] @ cross) * dt
        big = expm_kernel(doubled)
        ik = big[:r, r:]
        sk = big[:r, :r]
        jk = cross @ sk
        wsum[l, l] += ik.T / c
        wsum[l, n] += jk.T / c
    return wsum


def _stats_from_cache(gen, cache, path):
    obs_seq = np.concatenate(([path.x0], path.states)).astype(np.int64)
    dwells = np.ascontiguousarray(path.dwell_times())
    wsum = _estep_kernel(
        gen.blocks, cache.forward, cache.backward, cache.scale, obs_seq, dwells
    )
    jumps = gen.blocks * wsum
    for l in range(gen.d):
        np.fill_diagonal(jumps[l, l], 0.0)
    dwell = np.stack([np.diagonal(wsum[l, l]).copy() for l in range(gen.d)])
    jumps = clip_small_negatives(jumps, context="expected jump counts")
    dwell = clip_small_negatives(dwell, context="expected dwell times")
    return SufficientStats(jumps=jumps, dwell=dwell)


def e_step(gen, init, path):
    """Expected jump counts and dwell times for the window up to the last jump."""
    if path.n_jumps < 1:
        raise ValidationError("expectation step needs at least one observed jump")
    path = path.truncated()
    cache = forward_backward(gen, init, path)
    return _stats_from_cache(gen, cache, path)


def m_step(stats, mask=None, previous=None):
    """Closed-form reestimation from sufficient statistics.

    Parameters
    ----------
    stats : SufficientStats
    mask : ndarray of bool, optional
        Entries set to False are forced to zero rate.
    previous : Generator, optional
        Fallback rates for source states with zero expected dwell.  Without
        it such a state raises DegenerateStateError when it carries expected
        jump mass, or keeps a zero row when it does not.

    Returns
    -------
    Generator
        Diagonals recomputed; passes validation whenever the statistics came
        from a valid generator and a consistent path.
    """
    d, r = stats.dwell.shape
    blocks = np.zeros((d, d, r, r))
    for l in range(d):
        for i in range(r):
            dw = stats.dwell[l, i]
            if dw > 0.0:
                blocks[l, :, i, :] = stats.jumps[l, :, i, :] / dw
            elif previous is not None:
                blocks[l, :, i, :] = previous.blocks[l, :, i, :]
            elif stats.jumps[l, :, i, :].sum() > 0.0:
                raise DegenerateStateError(
                    f"state ({l},{i}) has zero expected dwell but expected jumps",
                    state=(l, i),
                )
            # else: the state was never occupied and never jumped; its rates
            # stay at zero and validation of the result will flag the row.
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != blocks.shape:
            raise ValidationError(
                f"mask shape {mask.shape} does not match parameters {blocks.shape}"
            )
        blocks = np.where(mask, blocks, 0.0)
    return Generator(blocks)


def fit(gen0, init, path, config=None):
    """Run EM from gen0 until the relative log-likelihood gain drops below
    the tolerance or the iteration cap is hit.

    The path is truncated at its last jump, so the fitted window always ends
    on an observed jump.  The log-likelihood trace is nondecreasing up to
    rounding; each entry is the log-likelihood of the parameter before the
    corresponding update, and the final entry belongs to the estimate.
    """
    config = config or EmConfig()
    validate(gen0).raise_if_failed()
    if path.n_jumps < 1:
        raise ValidationError("fitting needs at least one observed jump")
    path = path.truncated()

    gen = gen0
    trace = []
    degenerate: list[tuple[int, int]] = []
    termination = "max_iters"
    while True:
        cache = forward_backward(gen, init, path)
        trace.append(cache.loglik)
        it = len(trace) - 1
        if it >= 1:
            prev, cur = trace[-2], trace[-1]
            if abs(cur - prev) <= config.rel_tol * abs(prev):
                termination = "converged"
                break
        if degenerate:
            termination = "degenerate"
            break
        if it >= config.max_iters:
            termination = "max_iters"
            break
        stats = _stats_from_cache(gen, cache, path)
        dead = [tuple(idx) for idx in np.argwhere(stats.dwell <= 0.0)]
        if dead:
            degenerate = [(int(l), int(i)) for l, i in dead]
            gen = m_step(stats, mask=config.mask, previous=gen)
        else:
            gen = m_step(stats, mask=config.mask)
    return FitResult(
        estimate=gen,
        loglik_trace=np.array(trace),
        iterations=len(trace) - 1,
        termination=termination,
        degenerate_states=degenerate,
    )
