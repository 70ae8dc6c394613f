"""Numba-compiled batch kernels.

The two large contractions go through ``np.dot`` (BLAS inside nopython
mode); the elementwise work around them (distance assembly, max shift,
normalisation, moment combination) is fused into single compiled passes.
The exponential itself is left to numpy's vectorised ``exp``, which is
several times faster than the scalar libm call numba emits without SVML.
Row loops carry no cross-row reduction, so results do not depend on the
thread count.
"""
import os

import numpy as np
from numba import config, njit, prange

# the bundled TBB is too old; OpenMP avoids a warning on every import
if "NUMBA_THREADING_LAYER" not in os.environ:
    config.THREADING_LAYER = "omp"


@njit(cache=True, parallel=True)
def weighted_sq_distances(Y, X, w):
    n, f = Y.shape
    m = X.shape[0]
    Yw = Y * w
    C = np.dot(Yw, X.T)
    xx = np.dot(X * X, w)
    for i in prange(n):
        yy = 0.0
        for k in range(f):
            yy += Yw[i, k] * Y[i, k]
        for j in range(m):
            v = yy - 2.0 * C[i, j] + xx[j]
            C[i, j] = v if v > 0.0 else 0.0
    return C


@njit(cache=True, parallel=True)
def _shifted_logits(Y, X, w, beta):
    """``-beta * D`` shifted by its row maximum, plus that maximum."""
    A = weighted_sq_distances(Y, X, w)
    n, m = A.shape
    amax = np.empty(n)
    for i in prange(n):
        # max of -beta*D is -beta*min(D)
        dmin = np.inf
        for j in range(m):
            if A[i, j] < dmin:
                dmin = A[i, j]
        for j in range(m):
            A[i, j] = -beta * (A[i, j] - dmin)
        amax[i] = -beta * dmin
    return A, amax


@njit(cache=True, parallel=True)
def _normalise(E, amax):
    n, m = E.shape
    lse = np.empty(n)
    for i in prange(n):
        tot = 0.0
        for j in range(m):
            tot += E[i, j]
        inv = 1.0 / tot
        for j in range(m):
            E[i, j] *= inv
        lse[i] = amax[i] + np.log(tot)
    return lse


@njit(cache=True, parallel=True)
def _moments(Y, X, R):
    n, f = Y.shape
    M1 = np.dot(R, X)
    M2 = np.dot(R, X * X)
    for i in prange(n):
        for k in range(f):
            yk = Y[i, k]
            v = yk * yk - 2.0 * yk * M1[i, k] + M2[i, k]
            M2[i, k] = v if v > 0.0 else 0.0
    return M2


def exemplar_side(Y, X, w, beta, need_sq=True):
    A, amax = _shifted_logits(Y, X, w, beta)
    np.exp(A, out=A)
    lse = _normalise(A, amax)
    if not need_sq:
        return lse, None
    return lse, _moments(Y, X, A)
