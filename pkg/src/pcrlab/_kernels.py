"""Hot numeric kernels.

Each kernel has a numba ``@njit`` version and a pure-numpy version with the
same signature.  The numba path is used when numba imports cleanly and the
environment variable ``PCRLAB_DISABLE_NUMBA`` is unset or ``0``.
"""

import os

import numpy as np

_DISABLED = os.environ.get("PCRLAB_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by PCRLAB_DISABLE_NUMBA")
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False


def _gap_sums_numpy(values, r_lo, r_hi):
    """sum_below and sum_above for every r in [r_lo, r_hi] (1-based)."""
    p = values.shape[0]
    count = r_hi - r_lo + 1
    below = np.full(count, np.nan)
    above = np.full(count, np.nan)
    for i in range(count):
        r = r_lo + i
        lam_next = values[r]
        head = values[:r]
        gaps = head - lam_next
        if np.all(gaps > 0.0):
            below[i] = np.sum(head / gaps)
        if r < p:
            lam_r = values[r - 1]
            tail = values[r:]
            gaps = lam_r - tail
            if np.all(gaps > 0.0):
                above[i] = np.sum(tail / gaps)
    return below, above


def _block_overlap_numpy(U, lo, hi):
    """Row sums of squared coordinates of columns lo..hi-1 of U."""
    return np.einsum("ij,ij->i", U[:, lo:hi], U[:, lo:hi])


if NUMBA_AVAILABLE:

    # zero gaps give inf/nan terms that are discarded via gmin, so division
    # must follow IEEE rules instead of raising
    @njit(cache=True, error_model="numpy")
    def _gap_sums_numba(values, r_lo, r_hi):
        p = values.shape[0]
        count = r_hi - r_lo + 1
        below = np.full(count, np.nan)
        above = np.full(count, np.nan)
        for i in range(count):
            r = r_lo + i
            lam_next = values[r]
            acc = 0.0
            gmin = np.inf
            for j in range(r):
                g = values[j] - lam_next
                gmin = min(gmin, g)
                acc += values[j] / g
            if gmin > 0.0:
                below[i] = acc
            if r < p:
                lam_r = values[r - 1]
                acc = 0.0
                gmin = np.inf
                for k in range(r, p):
                    g = lam_r - values[k]
                    gmin = min(gmin, g)
                    acc += values[k] / g
                if gmin > 0.0:
                    above[i] = acc
        return below, above

    @njit(cache=True)
    def _block_overlap_numba(U, lo, hi):
        p = U.shape[0]
        out = np.zeros(p)
        for i in range(p):
            acc = 0.0
            for j in range(lo, hi):
                acc += U[i, j] * U[i, j]
            out[i] = acc
        return out


def gap_sums(values, r_lo, r_hi, use_numba=None):
    """Vectorised gap sums over an index window.

    Returns ``(sum_below, sum_above)`` arrays for ``r = r_lo..r_hi``; entries
    are NaN where a zero gap makes the sum undefined.  ``sum_above`` is NaN at
    ``r = p`` (empty tail).  Requires ``1 <= r_lo <= r_hi <= p - 1``.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    if use_numba is None:
        use_numba = NUMBA_AVAILABLE
    if use_numba and NUMBA_AVAILABLE:
        return _gap_sums_numba(values, int(r_lo), int(r_hi))
    return _gap_sums_numpy(values, int(r_lo), int(r_hi))


def block_overlap(U, lo, hi, use_numba=None):
    """Vector of ``||P_k Phat_B||_2^2`` for k = 1..p, with B = columns lo..hi-1."""
    U = np.ascontiguousarray(U, dtype=np.float64)
    if use_numba is None:
        use_numba = NUMBA_AVAILABLE
    if use_numba and NUMBA_AVAILABLE:
        return _block_overlap_numba(U, int(lo), int(hi))
    return _block_overlap_numpy(U, int(lo), int(hi))
