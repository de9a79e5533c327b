"""Parameterization of continuous-time bivariate Markov chains.

A chain moves over pairs (observable, underlying).  The observable coordinate
takes d values and is seen by the experimenter; the underlying coordinate
takes r values and is hidden.  Rates live in a (d, d, r, r) block array where
``blocks[l, n][i, j]`` is the jump rate from joint state (l, i) to (n, j).
The joint rate matrix orders states with the observable index outer, so the
flat index of (l, i) is l * r + i.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StationaryError, ValidationError
from .linalg import expm_kernel, stationary_row_vector

__all__ = [
    "Generator",
    "ValidationReport",
    "InitialDistribution",
    "StationaryAnalysis",
    "PhaseTypeDwell",
    "StructureFlags",
    "validate",
    "transition_density",
    "survival",
    "embedded_chain",
    "stationary",
    "dwell_distribution",
    "underlying_is_markov",
    "make_mmmp",
    "make_bmap",
    "detect_structure",
]

# Absolute tolerance for structural equality (block comparisons, zero tests).
STRUCTURE_ATOL = 1e-10


class Generator:
    """Rate parameters of a continuous-time bivariate Markov chain.

    Diagonal entries of the joint matrix are always recomputed from the
    off-diagonal rates so every row sums to zero exactly; diagonal values in
    the input are ignored.  Instances are immutable: the block array is
    write-locked after construction.

    Parameters
    ----------
    blocks : array_like, shape (d, d, r, r)
        ``blocks[l, n][i, j]`` is the rate from (l, i) to (n, j).
    """

    __slots__ = ("_blocks", "d", "r")

    def __init__(self, blocks):
        arr = np.array(blocks, dtype=np.float64, order="C")
        if arr.ndim != 4 or arr.shape[0] != arr.shape[1] or arr.shape[2] != arr.shape[3]:
            raise ValueError(f"blocks must have shape (d, d, r, r), got {arr.shape}")
        d, r = arr.shape[0], arr.shape[2]
        if d < 1 or r < 1:
            raise ValueError("both chain dimensions must be at least one")
        for l in range(d):
            np.fill_diagonal(arr[l, l], 0.0)
        exit_rate = arr.sum(axis=(1, 3))
        for l in range(d):
            for i in range(r):
                arr[l, l, i, i] = -exit_rate[l, i]
        arr.setflags(write=False)
        self._blocks = arr
        self.d = d
        self.r = r

    @property
    def blocks(self):
        """Read-only (d, d, r, r) block array."""
        return self._blocks

    def block(self, l, n):
        """The (r, r) rate block from observable state l to n."""
        return self._blocks[l, n]

    def full(self):
        """Assembled (d*r, d*r) joint rate matrix."""
        k = self.d * self.r
        return self._blocks.transpose(0, 2, 1, 3).reshape(k, k).copy()

    @classmethod
    def from_full(cls, matrix, r):
        """Split a (d*r, d*r) joint rate matrix back into blocks."""
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"joint matrix must be square, got shape {m.shape}")
        if r < 1 or m.shape[0] % r != 0:
            raise ValueError(
                f"joint dimension {m.shape[0]} is not a multiple of the underlying dimension {r}"
            )
        d = m.shape[0] // r
        return cls(m.reshape(d, r, d, r).transpose(0, 2, 1, 3))

    def off_diagonal_mask(self):
        """Boolean (d, d, r, r) array marking the free rate entries."""
        mask = np.ones((self.d, self.d, self.r, self.r), dtype=bool)
        for l in range(self.d):
            np.fill_diagonal(mask[l, l], False)
        return mask

    def __repr__(self):
        return f"Generator(d={self.d}, r={self.r})"


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of structural validation; empty violation list means pass."""

    violations: list[str] = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def raise_if_failed(self):
        if self.violations:
            raise ValidationError("; ".join(self.violations))


@dataclass(frozen=True)
class InitialDistribution:
    """Starting observable state together with the law of the hidden state."""

    x0: int
    mu: np.ndarray

    def __post_init__(self):
        mu = np.ascontiguousarray(self.mu, dtype=np.float64)
        if mu.ndim != 1 or mu.size < 1:
            raise ValidationError(f"initial law must be a vector, got shape {mu.shape}")
        if not np.isfinite(mu).all() or mu.min() < 0.0:
            raise ValidationError("initial law must be finite and nonnegative")
        if abs(mu.sum() - 1.0) > 1e-9:
            raise ValidationError(f"initial law sums to {mu.sum()!r}, expected 1")
        if not 0 <= int(self.x0):
            raise ValidationError(f"initial observable state must be >= 0, got {self.x0}")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "x0", int(self.x0))

    @classmethod
    def uniform(cls, x0, r):
        return cls(x0, np.full(r, 1.0 / r))


@dataclass(frozen=True)
class StationaryAnalysis:
    """Stationary law of the joint chain and of its embedded jump chain.

    pi is the continuous-time stationary law, nu the stationary law of the
    chain watched at observable jumps, embedded the one-jump transition
    matrix, block_diag the block-diagonal part of the joint rates.
    """

    pi: np.ndarray
    nu: np.ndarray
    embedded: np.ndarray
    block_diag: np.ndarray


@dataclass(frozen=True)
class PhaseTypeDwell:
    """Dwell-time law of one observable state started from stationarity.

    The density is alpha @ expm(sub_generator * t) @ exit_vector, a phase-type
    law whose phases are the hidden states.
    """

    alpha: np.ndarray
    sub_generator: np.ndarray
    exit_vector: np.ndarray

    def density(self, tau):
        tau_arr = np.asarray(tau, dtype=np.float64)
        flat = np.atleast_1d(tau_arr)
        if flat.min(initial=0.0) < 0.0:
            raise ValueError("dwell times are nonnegative")
        out = np.array(
            [self.alpha @ expm_kernel(self.sub_generator * t) @ self.exit_vector for t in flat]
        )
        return out.reshape(tau_arr.shape) if tau_arr.ndim else float(out[0])

    def moment(self, k):
        """k-th raw moment, k! * alpha @ (-sub_generator)^-k @ 1."""
        if k < 1:
            raise ValueError("moment order must be >= 1")
        v = np.ones_like(self.alpha)
        for _ in range(k):
            v = np.linalg.solve(-self.sub_generator, v)
        return float(_factorial(k) * (self.alpha @ v))

    @property
    def mean(self):
        return self.moment(1)

    @property
    def variance(self):
        m1 = self.moment(1)
        return self.moment(2) - m1 * m1


def _factorial(k):
    out = 1
    for j in range(2, k + 1):
        out *= j
    return out


@dataclass(frozen=True)
class StructureFlags:
    """Which special parameterizations a generator falls into."""

    mmmp: bool
    bmap: bool
    map: bool
    mmpp: bool

    @property
    def general(self):
        return not (self.mmmp or self.bmap)


def _reachable(adj, start):
    seen = np.zeros(adj.shape[0], dtype=bool)
    stack = [start]
    seen[start] = True
    while stack:
        u = stack.pop()
        for v in np.nonzero(adj[u])[0]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return seen


def validate(gen):
    """Check the structural axioms and return a report of violations.

    Checked: finite entries, nonnegative off-diagonal rates, zero row sums,
    a positive rate out of every joint state toward a different observable
    state (which makes each diagonal block strictly diagonally dominant and
    nonsingular), and irreducibility of the joint chain.
    """
    violations = []
    arr = gen.blocks
    d, r = gen.d, gen.r

    if not np.isfinite(arr).all():
        for l, n, i, j in zip(*np.nonzero(~np.isfinite(arr))):
            violations.append(f"non-finite rate at ({l},{i})->({n},{j})")
        return ValidationReport(violations)

    for l in range(d):
        for n in range(d):
            blk = arr[l, n]
            for i in range(r):
                for j in range(r):
                    if (l, i) != (n, j) and blk[i, j] < 0.0:
                        violations.append(
                            f"negative rate {blk[i, j]!r} from ({l},{i}) to ({n},{j})"
                        )

    full = gen.full()
    row_resid = np.abs(full.sum(axis=1)).max()
    if row_resid > 1e-10 * max(1.0, np.abs(full).max()):
        violations.append(f"row sums deviate from zero by {row_resid:.3e}")

    # cross_exit[l, i] = total rate from (l, i) into other observable states;
    # positivity makes each diagonal block strictly diagonally dominant.
    cross_exit = np.empty((d, r))
    for l in range(d):
        within = np.array(arr[l, l])
        np.fill_diagonal(within, 0.0)
        cross_exit[l] = -np.diagonal(arr[l, l]) - within.sum(axis=1)
    for l in range(d):
        for i in range(r):
            if cross_exit[l, i] <= 0.0:
                violations.append(
                    f"state ({l},{i}) has no rate into another observable state"
                )

    adj = full > 0.0
    np.fill_diagonal(adj, False)
    if not (_reachable(adj, 0).all() and _reachable(adj.T, 0).all()):
        violations.append("joint chain is reducible (not strongly connected)")

    return ValidationReport(violations)


def transition_density(gen, l, n, tau):
    """Matrix density of an observed jump l -> n after dwell tau.

    Entry (i, j) is the joint density of staying in observable state l for
    time tau while the hidden state moves from i to j', then jumping to
    observable state n with hidden state j.
    """
    if l == n:
        raise ValueError("density is defined for distinct observable states; see survival")
    _check_obs_index(gen, l)
    _check_obs_index(gen, n)
    tau = _check_time(tau)
    return expm_kernel(np.ascontiguousarray(gen.block(l, l)) * tau) @ gen.block(l, n)


def survival(gen, l, tau):
    """Probability-weighted survival matrix exp(block(l, l) * tau)."""
    _check_obs_index(gen, l)
    tau = _check_time(tau)
    return expm_kernel(np.ascontiguousarray(gen.block(l, l)) * tau)


def _check_obs_index(gen, l):
    if not 0 <= l < gen.d:
        raise ValueError(f"observable state {l} out of range [0, {gen.d})")


def _check_time(tau):
    tau = float(tau)
    if not np.isfinite(tau) or tau < 0.0:
        raise ValueError(f"time must be finite and >= 0, got {tau}")
    return tau


def embedded_chain(gen):
    """One-jump transition matrix of the chain watched at observable jumps.

    Block (l, n) is -block(l, l)^-1 @ block(l, n); the diagonal blocks are
    zero because consecutive observable states always differ.
    """
    d, r = gen.d, gen.r
    k = d * r
    out = np.zeros((k, k))
    for l in range(d):
        rows = slice(l * r, (l + 1) * r)
        diag = gen.block(l, l)
        for n in range(d):
            if n == l:
                continue
            out[rows, n * r : (n + 1) * r] = -np.linalg.solve(diag, gen.block(l, n))
    low = out.min()
    if low < -1e-12:
        raise StationaryError(f"embedded chain produced negative probability {low:.3e}")
    return np.where(out < 0.0, 0.0, out)


def stationary(gen):
    """Stationary analysis of a valid generator.

    Returns pi (joint stationary law), nu (stationary law at observable
    jumps), the embedded one-jump matrix, and the block-diagonal rate part.
    nu is computed from pi through the off-block rates; the identity
    nu @ embedded = nu then holds and is left to the caller as a check.
    """
    d, r = gen.d, gen.r
    k = d * r
    full = gen.full()
    pi = stationary_row_vector(full, mode="generator")
    emb = embedded_chain(gen)
    block_diag = np.zeros((k, k))
    for l in range(d):
        rows = slice(l * r, (l + 1) * r)
        block_diag[rows, rows] = gen.block(l, l)
    off_block = full - block_diag
    w = pi @ off_block
    total = w.sum()
    if total <= 0.0:
        raise StationaryError("no stationary flow between observable states")
    return StationaryAnalysis(pi=pi, nu=w / total, embedded=emb, block_diag=block_diag)


def dwell_distribution(gen, l, analysis=None):
    """Phase-type law of the dwell time in observable state l at stationarity."""
    _check_obs_index(gen, l)
    if analysis is None:
        analysis = stationary(gen)
    r = gen.r
    nu_block = analysis.nu[l * r : (l + 1) * r]
    mass = nu_block.sum()
    if mass <= 0.0:
        raise StationaryError(f"observable state {l} is never entered at stationarity")
    alpha = nu_block / mass
    sub = np.array(gen.block(l, l))
    exit_vec = -sub.sum(axis=1)
    return PhaseTypeDwell(alpha=alpha, sub_generator=sub, exit_vector=exit_vec)


def underlying_is_markov(gen, atol=STRUCTURE_ATOL):
    """Whether the hidden coordinate alone is a Markov chain.

    True exactly when the row sums of blocks across the observable target,
    sum_n block(l, n), do not depend on l.  Returns (flag, q) where q is the
    common (r, r) hidden-state generator when the flag is true, else None.
    """
    q_by_state = gen.blocks.sum(axis=1)
    dev = np.abs(q_by_state - q_by_state[0]).max()
    if dev > atol:
        return False, None
    return True, q_by_state.mean(axis=0)


def _check_small_generator(m, name):
    m = np.array(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValidationError(f"{name} contains non-finite entries")
    off = m.copy()
    np.fill_diagonal(off, 0.0)
    if off.min() < 0.0:
        raise ValidationError(f"{name} has a negative off-diagonal rate")
    resid = np.abs(m.sum(axis=1)).max()
    if resid > 1e-8 * max(1.0, np.abs(m).max()):
        raise ValidationError(f"{name} rows sum to {resid:.3e}, expected zero")
    return m


def make_mmmp(q, gs):
    """Chain whose observable rates switch with the hidden state.

    Parameters
    ----------
    q : array_like, shape (r, r)
        Generator of the hidden chain on its own.
    gs : sequence of r array_like, shape (d, d)
        One observable-rate generator per hidden state.

    The off-diagonal blocks of the result are diagonal: block(l, n)[i, i]
    is gs[i][l, n], and hidden jumps never coincide with observable jumps.
    """
    q = _check_small_generator(q, "hidden-state generator")
    r = q.shape[0]
    if len(gs) != r:
        raise ValidationError(f"expected {r} observable generators, got {len(gs)}")
    gmats = [_check_small_generator(g, f"observable generator {i}") for i, g in enumerate(gs)]
    d = gmats[0].shape[0]
    for i, g in enumerate(gmats):
        if g.shape != (d, d):
            raise ValidationError(
                f"observable generator {i} has shape {g.shape}, expected {(d, d)}"
            )
    blocks = np.zeros((d, d, r, r))
    for l in range(d):
        for n in range(d):
            if l == n:
                blocks[l, l] = q
            else:
                blocks[l, n] = np.diag([gmats[i][l, n] for i in range(r)])
    return Generator(blocks)


def make_bmap(ds):
    """Block-circulant chain counting batch arrivals modulo the observable size.

    ``ds[0]`` holds the no-arrival rates (nonnegative off the diagonal,
    nonpositive on it), ``ds[m]`` for m >= 1 the rates of a batch of size m.
    Block (l, n) of the result is ds[(n - l) mod d], so a batch of size m
    advances the observable counter by m.
    """
    mats = [np.array(dm, dtype=np.float64) for dm in ds]
    d = len(mats)
    if d < 2:
        raise ValidationError("batch construction needs at least two matrices")
    r = mats[0].shape[0]
    for m, mat in enumerate(mats):
        if mat.ndim != 2 or mat.shape != (r, r):
            raise ValidationError(f"batch matrix {m} must have shape {(r, r)}")
        if not np.isfinite(mat).all():
            raise ValidationError(f"batch matrix {m} contains non-finite entries")
    off0 = mats[0].copy()
    np.fill_diagonal(off0, 0.0)
    if off0.min() < 0.0:
        raise ValidationError("batch matrix 0 has a negative off-diagonal rate")
    if np.diagonal(mats[0]).max() > 0.0:
        raise ValidationError("batch matrix 0 must have nonpositive diagonal")
    for m in range(1, d):
        if mats[m].min() < 0.0:
            raise ValidationError(f"batch matrix {m} must be entrywise nonnegative")
    total = sum(mats)
    resid = np.abs(total.sum(axis=1)).max()
    if resid > 1e-8 * max(1.0, np.abs(total).max()):
        raise ValidationError(f"batch matrices sum to row residual {resid:.3e}, expected zero")
    blocks = np.zeros((d, d, r, r))
    for l in range(d):
        for n in range(d):
            blocks[l, n] = mats[(n - l) % d]
    return Generator(blocks)


def detect_structure(gen, atol=STRUCTURE_ATOL):
    """Classify a generator into the special families it belongs to."""
    d, r = gen.d, gen.r
    arr = gen.blocks

    off_blocks_diagonal = True
    for l in range(d):
        for n in range(d):
            if l == n:
                continue
            blk = arr[l, n].copy()
            np.fill_diagonal(blk, 0.0)
            if np.abs(blk).max() > atol:
                off_blocks_diagonal = False
    markov, _ = underlying_is_markov(gen, atol=atol)
    mmmp = off_blocks_diagonal and markov

    circulant = d >= 2
    if circulant:
        for shift in range(d):
            ref = arr[0, shift % d]
            for l in range(d):
                if np.abs(arr[l, (l + shift) % d] - ref).max() > atol:
                    circulant = False
                    break
            if not circulant:
                break
    bmap = circulant

    single_arrivals = bmap
    if bmap and d > 2:
        for shift in range(2, d):
            if np.abs(arr[0, shift]).max() > atol:
                single_arrivals = False
                break
    map_flag = bmap and single_arrivals

    mmpp = False
    if map_flag:
        d1 = arr[0, 1 % d].copy()
        np.fill_diagonal(d1, 0.0)
        mmpp = np.abs(d1).max() <= atol

    return StructureFlags(mmmp=mmmp, bmap=bmap, map=map_flag, mmpp=mmpp)
