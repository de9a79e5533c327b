"""Comparison estimator that works from a time-sampled version of the path.

The observable process is read off a regular grid, the sampled sequence is
treated as the visible part of a discrete-time chain over the joint states,
and the one-step transition matrix is fitted by the classic discrete
forward-backward reestimation.  A generator estimate is then recovered from
the fitted matrix, through the principal matrix logarithm when the sample
step is fine enough and through the linear difference quotient otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import LogmError, ValidationError, ZeroLikelihoodError
from .linalg import principal_logm
from .model import Generator

__all__ = [
    "SampledPath",
    "DiscreteFitResult",
    "RecoveryReport",
    "time_sample",
    "fit_discrete",
    "recover_generator",
]


@dataclass(frozen=True)
class SampledPath:
    """Observable states read at multiples of a fixed step on [0, horizon]."""

    delta: float
    samples: np.ndarray

    @property
    def n_samples(self):
        return int(self.samples.size)


@dataclass(frozen=True)
class DiscreteFitResult:
    """Fitted one-step matrix over joint states plus the fitting trace."""

    transition: np.ndarray
    loglik_trace: np.ndarray
    iterations: int
    termination: str


@dataclass(frozen=True)
class RecoveryReport:
    """How a generator was recovered from a one-step matrix estimate."""

    branch: str  # "logm" or "difference"
    clamped_mass: float
    note: str | None = None


def time_sample(path, delta):
    """Read the observable state at times 0, delta, 2*delta, ... up to the horizon.

    The state path is right-continuous, so a sample landing exactly on a jump
    time sees the new state.  Two jumps inside one step simply alias.
    """
    delta = float(delta)
    if not np.isfinite(delta) or delta <= 0.0:
        raise ValidationError(f"sample step must be positive, got {delta}")
    path.validate()
    # Tolerant floor: horizons that are an exact multiple of delta up to
    # rounding still yield the sample at the horizon itself.
    n_steps = int(np.floor(path.horizon / delta + 1e-9))
    grid = delta * np.arange(n_steps + 1)
    seq = np.concatenate(([path.x0], path.states)).astype(np.int64)
    idx = np.searchsorted(path.times, grid, side="right")
    return SampledPath(delta=delta, samples=seq[idx])


@njit(cache=True)
def _baum_pass(rmat, init, obs, r):
    """One forward-backward sweep of the sampled chain.

    Hidden state z is consistent with observation o exactly when z // r == o.
    Returns (status, loglik, xi, gamma_from) where xi accumulates expected
    one-step transition counts and gamma_from the expected visit counts over
    all but the last sample.  status >= 0 flags the first sample with zero
    probability mass.
    """
    m_total = obs.shape[0]
    k = rmat.shape[0]
    alpha = np.zeros((m_total, k))
    scale = np.zeros(m_total)

    for z in range(k):
        if z // r == obs[0]:
            alpha[0, z] = init[z]
    c = alpha[0].sum()
    scale[0] = c
    if not (c > 1e-300):
        return 0, 0.0, np.zeros((k, k)), np.zeros(k)
    alpha[0] /= c

    for m in range(1, m_total):
        o = obs[m]
        prev = alpha[m - 1]
        for z2 in range(k):
            if z2 // r == o:
                acc = 0.0
                for z in range(k):
                    acc += prev[z] * rmat[z, z2]
                alpha[m, z2] = acc
        c = alpha[m].sum()
        scale[m] = c
        if not (c > 1e-300):
            return m, 0.0, np.zeros((k, k)), np.zeros(k)
        alpha[m] /= c

    xi = np.zeros((k, k))
    gamma_from = np.zeros(k)
    beta = np.ones(k)
    for m in range(m_total - 2, -1, -1):
        o1 = obs[m + 1]
        c1 = scale[m + 1]
        bmask = np.zeros(k)
        for z in range(k):
            if z // r == o1:
                bmask[z] = beta[z]
        newbeta = np.zeros(k)
        for z in range(k):
            az = alpha[m, z]
            acc = 0.0
            for z2 in range(k):
                w = rmat[z, z2] * bmask[z2]
                acc += w
                if az > 0.0 and w > 0.0:
                    xi[z, z2] += az * w / c1
            newbeta[z] = acc / c1
        beta = newbeta
        for z in range(k):
            gamma_from[z] += alpha[m, z] * beta[z]

    loglik = 0.0
    for m in range(m_total):
        loglik += np.log(scale[m])
    return -1, loglik, xi, gamma_from


def fit_discrete(sampled, r, r0, rel_tol=1e-7, max_iters=500):
    """Reestimate the one-step matrix of the sampled joint chain.

    Parameters
    ----------
    sampled : SampledPath
    r : int
        Number of hidden states; the joint dimension of r0 must be r times
        the number of observable states.
    r0 : array_like, shape (k, k)
        Starting row-stochastic matrix.
    rel_tol, max_iters
        Stopping rule on the relative log-likelihood gain.

    The law of the hidden state at the first sample is held fixed at the
    uniform distribution over the hidden states consistent with it.
    Rows of states the expectation never visits keep their current values.
    """
    r = int(r)
    if r < 1:
        raise ValidationError(f"hidden dimension must be >= 1, got {r}")
    rmat = np.array(r0, dtype=np.float64)
    if rmat.ndim != 2 or rmat.shape[0] != rmat.shape[1]:
        raise ValidationError(f"one-step matrix must be square, got shape {rmat.shape}")
    k = rmat.shape[0]
    if k % r != 0:
        raise ValidationError(f"joint dimension {k} is not a multiple of r={r}")
    d = k // r
    if not np.isfinite(rmat).all() or rmat.min() < 0.0:
        raise ValidationError("one-step matrix must be finite and nonnegative")
    row_sums = rmat.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-8:
        raise ValidationError("one-step matrix rows must sum to one")
    rmat /= row_sums[:, None]

    obs = np.ascontiguousarray(sampled.samples, dtype=np.int64)
    if obs.size < 2:
        raise ValidationError("need at least two samples to fit transitions")
    if obs.min() < 0 or obs.max() >= d:
        raise ValidationError(f"sampled states out of range for d={d}")

    init = np.zeros(k)
    init[obs[0] * r : (obs[0] + 1) * r] = 1.0 / r

    trace = []
    termination = "max_iters"
    for _ in range(max_iters + 1):
        bad, loglik, xi, gamma_from = _baum_pass(rmat, init, obs, r)
        if bad >= 0:
            raise ZeroLikelihoodError(
                f"sample {bad} has zero probability under the one-step matrix",
                segment=int(bad),
            )
        trace.append(loglik)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) <= rel_tol * abs(trace[-2]):
            termination = "converged"
            break
        if len(trace) > max_iters:
            termination = "max_iters"
            break
        new = rmat.copy()
        for z in range(k):
            if gamma_from[z] > 0.0:
                new[z] = xi[z] / gamma_from[z]
        rmat = new
    return DiscreteFitResult(
        transition=rmat,
        loglik_trace=np.array(trace),
        iterations=len(trace) - 1,
        termination=termination,
    )


def recover_generator(transition, delta, r):
    """Turn a one-step matrix estimate into a generator estimate.

    When every diagonal entry of the matrix exceeds one half, the principal
    matrix logarithm divided by the step is used and any negative
    off-diagonal rates it produces are clamped to zero (their total is
    reported).  Otherwise, or when the logarithm fails, the linear branch
    (transition - identity) / delta is used instead.
    """
    delta = float(delta)
    if not np.isfinite(delta) or delta <= 0.0:
        raise ValidationError(f"sample step must be positive, got {delta}")
    rmat = np.asarray(transition, dtype=np.float64)
    k = rmat.shape[0]
    note = None
    if float(np.diagonal(rmat).min()) > 0.5:
        try:
            raw = principal_logm(rmat) / delta
            branch = "logm"
        except LogmError as exc:
            raw = (rmat - np.eye(k)) / delta
            branch = "difference"
            note = f"principal logarithm rejected: {exc}"
    else:
        raw = (rmat - np.eye(k)) / delta
        branch = "difference"
        note = "diagonal of the one-step matrix not above one half"
    off = raw.copy()
    np.fill_diagonal(off, 0.0)
    clamped = float(np.abs(off[off < 0.0]).sum())
    cleaned = np.where(off < 0.0, 0.0, off)
    gen = Generator.from_full(cleaned, r)  # diagonals recomputed inside
    return gen, RecoveryReport(branch=branch, clamped_mass=clamped, note=note)
