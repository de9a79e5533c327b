"""Likelihood evaluation for observable paths by scaled forward-backward
recursions.

Each inter-jump segment contributes a matrix density: survival inside the
current observable state times the rate block of the jump that ends the
segment.  Forward vectors are renormalized each segment and the logarithms
of the normalizers add up to the log-likelihood, so paths of any length stay
inside floating-point range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ValidationError, ZeroLikelihoodError
from .linalg import expm_kernel
from .model import InitialDistribution

__all__ = [
    "ForwardBackwardCache",
    "forward_backward",
    "log_likelihood",
    "filtered_state",
]

# Normalizers below this are treated as an impossible path rather than being
# allowed to poison later segments with infinities.
UNDERFLOW_FLOOR = 1e-300


@dataclass(frozen=True)
class ForwardBackwardCache:
    """Scaled recursion state for one (generator, path) pair.

    forward[k] is the law of the hidden state just after the k-th observable
    jump given the path so far; backward[k] the conditional density of the
    remaining path given the hidden state at that jump; scale[k] the
    normalizer of segment k.  loglik covers the whole window including the
    jump-free stretch after the last jump when the horizon extends past it.
    """

    forward: np.ndarray
    backward: np.ndarray
    scale: np.ndarray
    loglik: float

    @property
    def nbytes(self):
        return self.forward.nbytes + self.backward.nbytes + self.scale.nbytes


@njit(cache=True)
def _fb_kernel(blocks, mu, obs_seq, dwells, tail_dt):
    r = blocks.shape[2]
    n_seg = dwells.shape[0]
    fwd = np.zeros((n_seg + 1, r))
    bwd = np.zeros((n_seg + 1, r))
    scale = np.zeros(n_seg)
    fmats = np.zeros((n_seg, r, r))
    fwd[0] = mu
    for k in range(n_seg):
        l = obs_seq[k]
        n = obs_seq[k + 1]
        fk = expm_kernel(blocks[l, l] * dwells[k]) @ blocks[l, n]
        fmats[k] = fk
        v = fwd[k] @ fk
        c = v.sum()
        scale[k] = c
        if not (c > UNDERFLOW_FLOOR and np.isfinite(c)):
            return fwd, bwd, scale, k
        fwd[k + 1] = v / c
    last = obs_seq[n_seg]
    if tail_dt > 0.0:
        bwd[n_seg] = expm_kernel(blocks[last, last] * tail_dt) @ np.ones(r)
    else:
        bwd[n_seg] = np.ones(r)
    for k in range(n_seg - 1, -1, -1):
        bwd[k] = fmats[k] @ bwd[k + 1] / scale[k]
    return fwd, bwd, scale, -1


def _path_arrays(gen, init, path):
    path.validate(d=gen.d)
    if not isinstance(init, InitialDistribution):
        raise ValidationError("initial distribution required")
    if init.mu.size != gen.r:
        raise ValidationError(
            f"initial law has {init.mu.size} entries, generator expects {gen.r}"
        )
    if init.x0 != path.x0:
        raise ValidationError(
            f"initial observable state {init.x0} does not match the path start {path.x0}"
        )
    obs_seq = np.concatenate(([path.x0], path.states)).astype(np.int64)
    dwells = np.ascontiguousarray(path.dwell_times())
    tail_dt = float(path.horizon - (path.times[-1] if path.n_jumps else 0.0))
    return obs_seq, dwells, tail_dt


def forward_backward(gen, init, path):
    """Run both scaled recursions and return the cache.

    The generator is only checked structurally (shapes and state ranges), not
    for full validity, so likelihoods of rough external estimates can still
    be evaluated.

    Raises
    ------
    ZeroLikelihoodError
        If some segment has zero or underflowed probability under gen.
    """
    obs_seq, dwells, tail_dt = _path_arrays(gen, init, path)
    fwd, bwd, scale, bad = _fb_kernel(gen.blocks, init.mu, obs_seq, dwells, tail_dt)
    if bad >= 0:
        raise ZeroLikelihoodError(
            f"segment {bad} (jump into state {int(obs_seq[bad + 1])}) has zero "
            "probability under this generator",
            segment=bad,
        )
    tail_val = float(fwd[-1] @ bwd[-1])
    if not (tail_val > UNDERFLOW_FLOOR and np.isfinite(tail_val)):
        raise ZeroLikelihoodError(
            "jump-free stretch after the last jump has zero probability",
            segment=int(dwells.size),
        )
    loglik = float(np.log(scale).sum() + np.log(tail_val))
    return ForwardBackwardCache(forward=fwd, backward=bwd, scale=scale, loglik=loglik)


def log_likelihood(gen, init, path):
    """Log-likelihood of the observable path on [0, horizon]."""
    return forward_backward(gen, init, path).loglik


def filtered_state(gen, path, cache, t):
    """Law of the hidden state at time t given the path observed up to t.

    Between jumps the forward vector is propagated through the survival
    matrix of the current observable state and renormalized.
    """
    t = float(t)
    if not 0.0 <= t <= path.horizon:
        raise ValueError(f"time {t} outside the observation window [0, {path.horizon}]")
    k = int(np.searchsorted(path.times, t, side="right"))
    l = int(path.x0 if k == 0 else path.states[k - 1])
    t_k = 0.0 if k == 0 else float(path.times[k - 1])
    v = cache.forward[k] @ expm_kernel(np.ascontiguousarray(gen.blocks[l, l]) * (t - t_k))
    total = v.sum()
    if not (total > 0.0 and np.isfinite(total)):
        raise ZeroLikelihoodError(f"filter mass vanished at time {t}", segment=k)
    return v / total
