"""Dense kernels for small matrices: exponential, coupled integral, logarithm,
and stationary vectors.

Everything in this module works on modest sizes (products of the two chain
dimensions), so all routines are dense float64.  The exponential is a
scaling-and-squaring Pade approximant compiled with numba: the fitting loops
evaluate it once or twice per observed jump and per-call overhead matters far
more than asymptotics.  The remaining routines are thin layers over LAPACK
through numpy and scipy.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg
from numba import njit

from .errors import LogmError, StationaryError

__all__ = [
    "expm",
    "van_loan_integral",
    "principal_logm",
    "stationary_row_vector",
    "clip_small_negatives",
]

# Degree thresholds for the Pade approximant (1-norm of the argument).
_THETA3 = 1.495585217958292e-2
_THETA5 = 2.539398330063230e-1
_THETA7 = 9.504178996162932e-1
_THETA9 = 2.097847961257068e0
_THETA13 = 5.371920351148152e0


@njit(cache=True)
def expm_kernel(a):
    """exp(a) for a square float64 matrix, no input checking."""
    n = a.shape[0]
    nrm = 0.0
    for j in range(n):
        col = 0.0
        for i in range(n):
            col += abs(a[i, j])
        if col > nrm:
            nrm = col

    ident = np.eye(n)
    if nrm <= _THETA9:
        a2 = a @ a
        if nrm <= _THETA3:
            u = a @ (a2 + 60.0 * ident)
            v = 12.0 * a2 + 120.0 * ident
        elif nrm <= _THETA5:
            a4 = a2 @ a2
            u = a @ (a4 + 420.0 * a2 + 15120.0 * ident)
            v = 30.0 * a4 + 3360.0 * a2 + 30240.0 * ident
        elif nrm <= _THETA7:
            a4 = a2 @ a2
            a6 = a4 @ a2
            u = a @ (a6 + 1512.0 * a4 + 277200.0 * a2 + 8648640.0 * ident)
            v = 56.0 * a6 + 25200.0 * a4 + 1995840.0 * a2 + 17297280.0 * ident
        else:
            a4 = a2 @ a2
            a6 = a4 @ a2
            a8 = a6 @ a2
            u = a @ (
                a8
                + 3960.0 * a6
                + 2162160.0 * a4
                + 302702400.0 * a2
                + 8821612800.0 * ident
            )
            v = (
                90.0 * a8
                + 110880.0 * a6
                + 30270240.0 * a4
                + 2075673600.0 * a2
                + 17643225600.0 * ident
            )
        return np.linalg.solve(v - u, v + u)

    # Large norm: scale down into the degree-13 region, square back up.
    s = 0
    if nrm > _THETA13:
        s = int(math.ceil(math.log2(nrm / _THETA13)))
    b = a / (2.0**s)
    b2 = b @ b
    b4 = b2 @ b2
    b6 = b4 @ b2
    u = b @ (
        b6 @ (b6 + 16380.0 * b4 + 40840800.0 * b2)
        + 33522128640.0 * b6
        + 10559470521600.0 * b4
        + 1187353796428800.0 * b2
        + 32382376266240000.0 * ident
    )
    v = (
        b6 @ (182.0 * b6 + 960960.0 * b4 + 1323241920.0 * b2)
        + 670442572800.0 * b6
        + 129060195264000.0 * b4
        + 7771770303897600.0 * b2
        + 64764752532480000.0 * ident
    )
    out = np.ascontiguousarray(np.linalg.solve(v - u, v + u))
    for _ in range(s):
        out = out @ out
    return out


def _as_square(a, name):
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def expm(a):
    """Matrix exponential of a square array.

    Parameters
    ----------
    a : array_like, shape (n, n)
        Real matrix with finite entries.

    Returns
    -------
    ndarray, shape (n, n)
    """
    return expm_kernel(_as_square(a, "expm argument"))


def van_loan_integral(a, b, c, tau):
    """Integral of exp(a (tau - y)) @ b @ exp(c y) over y in [0, tau].

    Evaluated as the upper-right block of the exponential of the stacked
    matrix [[a, b], [0, c]] scaled by tau, which is exact up to the accuracy
    of the exponential itself.

    Parameters
    ----------
    a : array_like, shape (p, p)
    b : array_like, shape (p, q)
    c : array_like, shape (q, q)
    tau : float
        Nonnegative integration length.

    Returns
    -------
    ndarray, shape (p, q)
    """
    a = _as_square(a, "left factor")
    c = _as_square(c, "right factor")
    b = np.ascontiguousarray(b, dtype=np.float64)
    p, q = a.shape[0], c.shape[0]
    if b.shape != (p, q):
        raise ValueError(f"middle factor must have shape {(p, q)}, got {b.shape}")
    if not np.isfinite(b).all():
        raise ValueError("middle factor contains non-finite entries")
    tau = float(tau)
    if not math.isfinite(tau) or tau < 0.0:
        raise ValueError(f"integration length must be finite and >= 0, got {tau}")
    stacked = np.zeros((p + q, p + q))
    stacked[:p, :p] = a
    stacked[:p, p:] = b
    stacked[p:, p:] = c
    return expm_kernel(stacked * tau)[:p, p:].copy()


def principal_logm(a, *, roundtrip_rtol=1e-6):
    """Principal matrix logarithm with failure detection.

    Uses the Schur-based method from scipy and rejects the result when the
    spectrum does not admit a real principal branch (negative real or zero
    eigenvalues) or when the reconstruction exp(log(a)) drifts from the input.

    Raises
    ------
    LogmError
        If no trustworthy real principal logarithm exists.  The message
        carries the diagnostic so callers can fall back to another branch.
    """
    a = _as_square(a, "logarithm argument")
    sv = np.linalg.svd(a, compute_uv=False)
    if a.size and sv[-1] <= a.shape[0] * np.finfo(np.float64).eps * max(sv[0], 1.0):
        raise LogmError("matrix is singular to working precision")
    with np.errstate(all="ignore"):
        out, _err = scipy.linalg.logm(a, disp=False)
    if np.iscomplexobj(out):
        imag = float(np.abs(out.imag).max()) if out.size else 0.0
        bound = 1e-8 * max(1.0, float(np.abs(out.real).max()))
        if imag > bound:
            raise LogmError(
                f"spectrum is off the principal branch (imaginary part {imag:.3e})"
            )
        out = np.ascontiguousarray(out.real)
    if not np.isfinite(out).all():
        raise LogmError("principal logarithm is singular or non-finite")
    resid = float(np.abs(expm_kernel(out) - a).max())
    if resid > roundtrip_rtol * max(1.0, float(np.abs(a).max())):
        raise LogmError(f"round-trip residual {resid:.3e} exceeds tolerance")
    return out


def stationary_row_vector(m, mode="generator"):
    """Normalized left null vector: the stationary law of a chain.

    Parameters
    ----------
    m : array_like, shape (n, n)
        Rate matrix (mode "generator", solves v m = 0) or one-step
        transition matrix (mode "stochastic", solves v m = v).
    mode : str

    Returns
    -------
    ndarray, shape (n,)
        Entrywise nonnegative, sums to one.

    Notes
    -----
    One equation of the singular system is replaced by the normalization
    sum(v) = 1 and the bordered system is solved by dense LU with a single
    step of iterative refinement.  A rank check guards against chains whose
    null space is not one-dimensional.
    """
    m = _as_square(m, "stationary argument")
    if mode not in ("generator", "stochastic"):
        raise ValueError(f"mode must be 'generator' or 'stochastic', got {mode!r}")
    n = m.shape[0]
    sys = m - np.eye(n) if mode == "stochastic" else m

    sv = np.linalg.svd(sys, compute_uv=False)
    tol = n * np.finfo(np.float64).eps * sv[0] if sv[0] > 0 else 0.0
    null_dim = int(np.sum(sv <= tol))
    if null_dim != 1:
        raise StationaryError(
            f"null space has dimension {null_dim}, expected 1 "
            "(chain reducible or matrix not a proper rate/transition matrix)"
        )

    bordered = sys.T.copy()
    bordered[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        v = np.linalg.solve(bordered, rhs)
        v += np.linalg.solve(bordered, rhs - bordered @ v)
    except np.linalg.LinAlgError as exc:
        raise StationaryError(f"bordered stationary system is singular: {exc}") from exc
    if not np.isfinite(v).all():
        raise StationaryError("stationary solve produced non-finite entries")
    low = float(v.min())
    if low < -1e-12:
        raise StationaryError(f"stationary vector has negative mass {low:.3e}")
    v = np.where(v < 0.0, 0.0, v)
    total = v.sum()
    if total <= 0.0:
        raise StationaryError("stationary vector has no positive mass")
    return v / total


def clip_small_negatives(a, *, context="array", threshold=-1e-12):
    """Zero out tiny negative round-off; raise if an entry is materially negative."""
    a = np.asarray(a, dtype=np.float64)
    low = float(a.min()) if a.size else 0.0
    if low < threshold:
        raise ValueError(
            f"{context} has a negative entry {low:.3e} below the clip threshold"
        )
    return np.where(a < 0.0, 0.0, a)
