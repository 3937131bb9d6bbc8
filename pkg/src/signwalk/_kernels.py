"""Numerical hot loops with two interchangeable backends.

Every kernel here exists twice: a numba ``@njit`` version (default) and a
pure-numpy version. The active backend is chosen per call from the
``SIGNWALK_NO_NUMBA`` environment variable (any value other than empty/"0"
disables numba), falling back to numpy automatically when numba is not
importable. ``benchmarks/bench_backends.py`` compares the two.

The kernel pairs are written so that integer-valued outputs (shuffled sign
matrices, simulated trajectories) are bit-identical across backends given
the same pre-drawn uniforms. Floating-point reductions agree to roundoff
but not bit-for-bit, since the summation orders differ.
"""

from __future__ import annotations

import itertools
import math
import os

import numpy as np

try:
    from numba import njit

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAS_NUMBA = False

_ENV_FLAG = "SIGNWALK_NO_NUMBA"


def numba_available() -> bool:
    return _HAS_NUMBA


def active_backend() -> str:
    """Backend used by the dispatching wrappers: 'numba' or 'numpy'."""
    flag = os.environ.get(_ENV_FLAG, "").strip()
    if flag not in ("", "0"):
        return "numpy"
    return "numba" if _HAS_NUMBA else "numpy"


class ConvergenceError(RuntimeError):
    """An iterative solver exhausted its iteration budget."""


# ----------------------------------------------------------------------
# balanced-ensemble sweeps
#
# States are the C(2n, n) subsets of {0..2n-1} holding the +1 signs,
# visited in lexicographic order via the standard combination successor.
# For a subset with sum s the statistic is f = |2 s - sum(a)|.
# ----------------------------------------------------------------------

if _HAS_NUMBA:

    @njit(cache=True)
    def _power_sums_nb(a, n, ps):
        m = 2 * n
        s_tot = 0.0
        for i in range(m):
            s_tot += a[i]
        c = np.empty(n, np.int64)
        for i in range(n):
            c[i] = i
        sums = np.zeros(len(ps))
        comp = np.zeros(len(ps))  # Neumaier compensation
        while True:
            s_a = 0.0
            for i in range(n):
                s_a += a[c[i]]
            f = abs(2.0 * s_a - s_tot)
            for k in range(len(ps)):
                term = f ** ps[k]
                t = sums[k] + term
                if abs(sums[k]) >= abs(term):
                    comp[k] += (sums[k] - t) + term
                else:
                    comp[k] += (term - t) + sums[k]
                sums[k] = t
            i = n - 1
            while i >= 0 and c[i] == m - n + i:
                i -= 1
            if i < 0:
                break
            c[i] += 1
            for j in range(i + 1, n):
                c[j] = c[j - 1] + 1
        return sums + comp

    @njit(cache=True)
    def _tail_counts_nb(a, n, thresholds):
        m = 2 * n
        s_tot = 0.0
        for i in range(m):
            s_tot += a[i]
        c = np.empty(n, np.int64)
        for i in range(n):
            c[i] = i
        counts = np.zeros(len(thresholds), np.int64)
        while True:
            s_a = 0.0
            for i in range(n):
                s_a += a[c[i]]
            f = abs(2.0 * s_a - s_tot)
            for k in range(len(thresholds)):
                if f > thresholds[k]:
                    counts[k] += 1
            i = n - 1
            while i >= 0 and c[i] == m - n + i:
                i -= 1
            if i < 0:
                break
            c[i] += 1
            for j in range(i + 1, n):
                c[j] = c[j - 1] + 1
        return counts

    @njit(cache=True)
    def _f_values_nb(a, n, total):
        m = 2 * n
        s_tot = 0.0
        for i in range(m):
            s_tot += a[i]
        c = np.empty(n, np.int64)
        for i in range(n):
            c[i] = i
        out = np.empty(total)
        idx = 0
        while True:
            s_a = 0.0
            for i in range(n):
                s_a += a[c[i]]
            out[idx] = abs(2.0 * s_a - s_tot)
            idx += 1
            i = n - 1
            while i >= 0 and c[i] == m - n + i:
                i -= 1
            if i < 0:
                break
            c[i] += 1
            for j in range(i + 1, n):
                c[j] = c[j - 1] + 1
        return out


def _half_subset_sums(arr: np.ndarray, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros(1)
    idx = np.array(list(itertools.combinations(range(len(arr)), k)), dtype=np.int64)
    return arr[idx].sum(axis=1)


def _mim_blocks(a, n):
    """Meet-in-the-middle blocks of f values, yielded as flat arrays."""
    a = np.asarray(a, dtype=np.float64)
    s_tot = a.sum()
    first, second = a[:n], a[n:]
    chunk = max(1, 4_000_000 // max(1, math.comb(n, n // 2)))
    for k in range(n + 1):
        h1 = _half_subset_sums(first, k)
        h2 = _half_subset_sums(second, n - k)
        for lo in range(0, len(h1), chunk):
            block = 2.0 * (h1[lo: lo + chunk, None] + h2[None, :]) - s_tot
            yield np.abs(block).ravel()


def _power_sums_np(a, n, ps):
    sums = [[] for _ in ps]
    for f in _mim_blocks(a, n):
        for k, p in enumerate(ps):
            sums[k].append(float((f ** p).sum()))
    return np.array([math.fsum(parts) for parts in sums])


def _tail_counts_np(a, n, thresholds):
    counts = np.zeros(len(thresholds), np.int64)
    for f in _mim_blocks(a, n):
        for k, t in enumerate(thresholds):
            counts[k] += int(np.count_nonzero(f > t))
    return counts


def _f_values_np(a, n, total):
    # positions-matrix evaluation keeps global lexicographic order
    a = np.asarray(a, dtype=np.float64)
    m = 2 * n
    s_tot = a.sum()
    idx = np.array(list(itertools.combinations(range(m), n)), dtype=np.int64)
    return np.abs(2.0 * a[idx].sum(axis=1) - s_tot)


def balanced_power_sums(a, n, ps):
    """Sum of f**p over all balanced sign assignments, one entry per p."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    ps = np.ascontiguousarray(ps, dtype=np.float64)
    if active_backend() == "numba":
        return _power_sums_nb(a, n, ps)
    return _power_sums_np(a, n, ps)


def balanced_tail_counts(a, n, thresholds):
    """Number of balanced assignments with f strictly above each threshold."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    thresholds = np.ascontiguousarray(thresholds, dtype=np.float64)
    if active_backend() == "numba":
        return _tail_counts_nb(a, n, thresholds)
    return _tail_counts_np(a, n, thresholds)


def balanced_f_values(a, n):
    """All f values in lexicographic order of the +1 position subsets."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    total = math.comb(2 * n, n)
    if active_backend() == "numba":
        return _f_values_nb(a, n, total)
    return _f_values_np(a, n, total)


# ----------------------------------------------------------------------
# batch multiset shuffles
#
# Inside-out Fisher-Yates on the fixed multiset {+1 x n, -1 x n}, driven
# by pre-drawn uniforms of shape (samples, 2n-1). Identical swaps on both
# backends, so the sign matrices match bit-for-bit.
# ----------------------------------------------------------------------

if _HAS_NUMBA:

    @njit(cache=True)
    def _shuffle_signs_nb(n, uniforms):
        samples = uniforms.shape[0]
        m = 2 * n
        out = np.empty((samples, m), np.int8)
        for r in range(samples):
            for i in range(m):
                out[r, i] = 1 if i < n else -1
            for k in range(m - 1, 0, -1):
                j = int(uniforms[r, m - 1 - k] * (k + 1))
                if j > k:  # guard the measure-zero rounding edge
                    j = k
                tmp = out[r, k]
                out[r, k] = out[r, j]
                out[r, j] = tmp
        return out


def _shuffle_signs_np(n, uniforms):
    samples = uniforms.shape[0]
    m = 2 * n
    out = np.empty((samples, m), np.int8)
    out[:, :n] = 1
    out[:, n:] = -1
    rows = np.arange(samples)
    for k in range(m - 1, 0, -1):
        j = (uniforms[:, m - 1 - k] * (k + 1)).astype(np.int64)
        np.minimum(j, k, out=j)
        tmp = out[rows, k].copy()
        out[rows, k] = out[rows, j]
        out[rows, j] = tmp
    return out


def shuffle_signs(n, uniforms):
    """Uniform balanced sign rows from uniforms of shape (samples, 2n-1)."""
    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    if active_backend() == "numba":
        return _shuffle_signs_nb(n, uniforms)
    return _shuffle_signs_np(n, uniforms)


# ----------------------------------------------------------------------
# cyclic Jacobi eigensolver for symmetric matrices
# ----------------------------------------------------------------------

if _HAS_NUMBA:

    @njit(cache=True)
    def _jacobi_nb(A, V, tol, max_sweeps):
        n = A.shape[0]
        fro = 0.0
        for i in range(n):
            for j in range(n):
                fro += A[i, j] * A[i, j]
        fro = math.sqrt(fro)
        if fro == 0.0:
            return 0
        for sweep in range(max_sweeps):
            off = 0.0
            for i in range(n):
                for j in range(i + 1, n):
                    off += A[i, j] * A[i, j]
            off = math.sqrt(2.0 * off)
            if off <= tol * fro:
                return sweep
            skip = 0.02 * off / n  # rotations below this barely move the off-norm
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = A[p, q]
                    if abs(apq) <= skip:
                        continue
                    theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                    if theta >= 0.0:
                        t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                    else:
                        t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                    c = 1.0 / math.sqrt(t * t + 1.0)
                    s = t * c
                    for k in range(n):
                        akp = A[p, k]
                        akq = A[q, k]
                        A[p, k] = c * akp - s * akq
                        A[q, k] = s * akp + c * akq
                    for k in range(n):
                        akp = A[k, p]
                        akq = A[k, q]
                        A[k, p] = c * akp - s * akq
                        A[k, q] = s * akp + c * akq
                    for k in range(n):
                        vkp = V[k, p]
                        vkq = V[k, q]
                        V[k, p] = c * vkp - s * vkq
                        V[k, q] = s * vkp + c * vkq
        return -1


def _jacobi_np(A, V, tol, max_sweeps):
    n = A.shape[0]
    fro = float(np.sqrt((A * A).sum()))
    if fro == 0.0:
        return 0
    for sweep in range(max_sweeps):
        off = math.sqrt(2.0) * float(np.linalg.norm(np.triu(A, 1)))
        if off <= tol * fro:
            return sweep
        skip = 0.02 * off / n
        for p in range(n - 1):
            row = A[p, p + 1:]
            hot = np.nonzero(np.abs(row) > skip)[0]
            for q0 in hot:
                q = p + 1 + q0
                apq = A[p, q]
                if abs(apq) <= skip:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                cp = A[:, p].copy()
                cq = A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    return -1


def jacobi_eigh(B, tol=1e-13, max_sweeps=64):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with eigenvectors in columns,
    unsorted. Raises ConvergenceError if the off-diagonal norm does not
    drop below tol * ||B||_F within max_sweeps sweeps.
    """
    A = np.array(B, dtype=np.float64, order="C", copy=True)
    n = A.shape[0]
    V = np.eye(n)
    if active_backend() == "numba":
        sweeps = _jacobi_nb(A, V, tol, max_sweeps)
    else:
        sweeps = _jacobi_np(A, V, tol, max_sweeps)
    if sweeps < 0:
        raise ConvergenceError(
            f"Jacobi eigensolver did not converge within {max_sweeps} sweeps"
        )
    return np.diag(A).copy(), V


# ----------------------------------------------------------------------
# trajectory simulation by inverse-CDF sampling
# ----------------------------------------------------------------------

if _HAS_NUMBA:

    @njit(cache=True)
    def _simulate_nb(cdf_rows, start, uniforms):
        steps = uniforms.shape[0]
        nstates = cdf_rows.shape[1]
        path = np.empty(steps + 1, np.int64)
        path[0] = start
        cur = start
        for t in range(steps):
            u = uniforms[t]
            lo = 0
            hi = nstates
            while lo < hi:  # first index with cdf > u (searchsorted 'right')
                mid = (lo + hi) // 2
                if cdf_rows[cur, mid] <= u:
                    lo = mid + 1
                else:
                    hi = mid
            if lo >= nstates:
                lo = nstates - 1
            cur = lo
            path[t + 1] = cur
        return path


def _simulate_np(cdf_rows, start, uniforms):
    steps = uniforms.shape[0]
    nstates = cdf_rows.shape[1]
    path = np.empty(steps + 1, np.int64)
    path[0] = start
    cur = start
    for t in range(steps):
        nxt = int(np.searchsorted(cdf_rows[cur], uniforms[t], side="right"))
        if nxt >= nstates:
            nxt = nstates - 1
        cur = nxt
        path[t + 1] = cur
    return path


def simulate_indices(cdf_rows, start, uniforms):
    """Walk a chain with per-row CDFs; identical paths on both backends."""
    cdf_rows = np.ascontiguousarray(cdf_rows, dtype=np.float64)
    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    if active_backend() == "numba":
        return _simulate_nb(cdf_rows, start, uniforms)
    return _simulate_np(cdf_rows, start, uniforms)
