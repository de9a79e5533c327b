"""Exact jump-by-jump simulation of the joint chain and its observable trace."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import Generator, InitialDistribution, stationary, validate

__all__ = [
    "JointPath",
    "ObservedPath",
    "simulate_joint",
    "simulate_until_jumps",
    "observe",
]


@dataclass(frozen=True)
class JointPath:
    """Full trajectory of the joint chain: every jump, both coordinates."""

    x0: int
    s0: int
    times: np.ndarray
    obs: np.ndarray
    und: np.ndarray
    horizon: float

    @property
    def n_events(self):
        return int(self.times.size)


@dataclass(frozen=True)
class ObservedPath:
    """What the experimenter sees: jump times and states of the observable
    coordinate on [0, horizon]."""

    x0: int
    times: np.ndarray
    states: np.ndarray
    horizon: float

    @property
    def n_jumps(self):
        return int(self.times.size)

    def dwell_times(self):
        """Lengths of the inter-jump segments, first one measured from zero."""
        return np.diff(self.times, prepend=0.0)

    def truncated(self):
        """Same path with the horizon pulled back to the last jump time."""
        if self.n_jumps == 0:
            raise ValidationError("cannot truncate a path with no jumps")
        return ObservedPath(
            x0=self.x0,
            times=self.times,
            states=self.states,
            horizon=float(self.times[-1]),
        )

    def validate(self, d=None):
        """Raise ValidationError unless the path is internally consistent."""
        t = self.times
        s = self.states
        if t.shape != s.shape or t.ndim != 1:
            raise ValidationError("times and states must be aligned vectors")
        if not np.isfinite(self.horizon) or self.horizon <= 0.0:
            raise ValidationError(f"horizon must be positive, got {self.horizon}")
        if t.size:
            if not np.isfinite(t).all():
                raise ValidationError("jump times must be finite")
            if t[0] <= 0.0:
                raise ValidationError(f"first jump time {t[0]!r} is not after zero")
            bad = np.nonzero(np.diff(t) <= 0.0)[0]
            if bad.size:
                k = int(bad[0])
                raise ValidationError(
                    f"jump times not strictly increasing at index {k + 1} "
                    f"({t[k]!r} then {t[k + 1]!r})"
                )
            if t[-1] > self.horizon:
                raise ValidationError(
                    f"last jump {t[-1]!r} lies beyond the horizon {self.horizon!r}"
                )
        seq = np.concatenate(([self.x0], s)).astype(np.int64)
        if seq.min(initial=0) < 0:
            raise ValidationError("observable states must be nonnegative")
        dup = np.nonzero(np.diff(seq) == 0)[0]
        if dup.size:
            raise ValidationError(
                f"consecutive observable states equal at jump index {int(dup[0])}"
            )
        if d is not None and seq.max(initial=0) >= d:
            raise ValidationError(
                f"observable state {int(seq.max())} out of range for d={d}"
            )


def _draw_initial(gen, init, rng):
    if init is None:
        pi = stationary(gen).pi
        z = int(rng.choice(pi.size, p=pi / pi.sum()))
        return z // gen.r, z % gen.r
    if isinstance(init, InitialDistribution):
        if init.x0 >= gen.d or init.mu.size != gen.r:
            raise ValidationError("initial distribution does not match the generator shape")
        return init.x0, int(rng.choice(gen.r, p=init.mu / init.mu.sum()))
    x0, s0 = init
    if not (0 <= x0 < gen.d and 0 <= s0 < gen.r):
        raise ValidationError(f"initial joint state ({x0},{s0}) out of range")
    return int(x0), int(s0)


def _jump_tables(gen):
    full = gen.full()
    rates = -np.diagonal(full).copy()
    probs = np.where(np.eye(full.shape[0], dtype=bool), 0.0, full)
    probs /= rates[:, None]
    return rates, np.cumsum(probs, axis=1)


def _run(gen, x, s, rng, horizon=None, target_jumps=None):
    r = gen.r
    rates, cum = _jump_tables(gen)
    z = x * r + s
    t = 0.0
    times, obs, und = [], [], []
    n_obs = 0
    while True:
        t_next = t + rng.exponential(1.0 / rates[z])
        if t_next <= t:
            # Extremely short holding time rounded away; move one ulp instead.
            t_next = np.nextafter(t, np.inf)
            warnings.warn(
                "holding time below time resolution, advanced by one ulp",
                RuntimeWarning,
                stacklevel=2,
            )
        if horizon is not None and t_next > horizon:
            return JointPath(
                x0=int(x),
                s0=int(s),
                times=np.array(times),
                obs=np.array(obs, dtype=np.int64),
                und=np.array(und, dtype=np.int64),
                horizon=float(horizon),
            )
        t = t_next
        z_new = int(np.searchsorted(cum[z], rng.random(), side="right"))
        if z_new // r != z // r:
            n_obs += 1
        z = z_new
        times.append(t)
        obs.append(z // r)
        und.append(z % r)
        if target_jumps is not None and n_obs == target_jumps:
            return JointPath(
                x0=int(x),
                s0=int(s),
                times=np.array(times),
                obs=np.array(obs, dtype=np.int64),
                und=np.array(und, dtype=np.int64),
                horizon=float(t),
            )


def simulate_joint(gen, init=None, horizon=1.0, seed=None):
    """Simulate the joint chain on [0, horizon].

    Parameters
    ----------
    gen : Generator
        Must pass validation.
    init : None, InitialDistribution, or (x0, s0) pair
        None draws the starting joint state from the stationary law.
    horizon : float
        Positive end time.
    seed : int or None
        Seed for a fresh PCG64 stream; runs with the same arguments and seed
        reproduce bit-identical paths.
    """
    validate(gen).raise_if_failed()
    horizon = float(horizon)
    if not np.isfinite(horizon) or horizon <= 0.0:
        raise ValidationError(f"horizon must be positive and finite, got {horizon}")
    rng = np.random.default_rng(seed)
    x, s = _draw_initial(gen, init, rng)
    return _run(gen, x, s, rng, horizon=horizon)


def simulate_until_jumps(gen, init=None, n_jumps=1, seed=None):
    """Simulate until the n-th observable jump; the horizon is its time."""
    validate(gen).raise_if_failed()
    if int(n_jumps) < 1:
        raise ValidationError(f"jump target must be >= 1, got {n_jumps}")
    rng = np.random.default_rng(seed)
    x, s = _draw_initial(gen, init, rng)
    return _run(gen, x, s, rng, target_jumps=int(n_jumps))


def observe(path):
    """Project a joint path onto its observable coordinate.

    Jumps of the hidden coordinate alone disappear; a simultaneous change of
    both coordinates shows up as a single observable jump.
    """
    seq = np.concatenate(([path.x0], path.obs)).astype(np.int64)
    keep = np.nonzero(np.diff(seq) != 0)[0]
    return ObservedPath(
        x0=int(path.x0),
        times=path.times[keep].copy(),
        states=path.obs[keep].copy(),
        horizon=path.horizon,
    )
