"""Pure-numpy implementations of the batch kernels (BLAS-backed)."""
import numpy as np


def weighted_sq_distances(Y, X, w):
    """``D[i, j] = sum_k w_k (Y[i, k] - X[j, k])**2``, clipped at zero."""
    yw = Y * w
    D = (yw * Y).sum(axis=1)[:, None] - 2.0 * (yw @ X.T) + ((X * X) @ w)[None, :]
    np.maximum(D, 0.0, out=D)
    return D


def exemplar_side(Y, X, w, beta, need_sq=True):
    """Log summed similarity of each row of ``Y`` to the exemplars ``X``.

    Returns ``lse`` (n,) with ``lse[i] = log sum_j exp(-beta * D[i, j])`` and
    ``sq`` (n, f) with ``sq[i, k] = sum_j r_ij (Y[i, k] - X[j, k])**2`` where
    ``r_ij`` are the softmax responsibilities of the exemplars.  ``sq`` is
    skipped (``None``) when ``need_sq`` is false.
    """
    a = -beta * weighted_sq_distances(Y, X, w)
    amax = a.max(axis=1, keepdims=True)
    np.subtract(a, amax, out=a)
    np.exp(a, out=a)
    tot = a.sum(axis=1, keepdims=True)
    lse = amax[:, 0] + np.log(tot[:, 0])
    if not need_sq:
        return lse, None
    a /= tot
    sq = Y * Y - 2.0 * Y * (a @ X) + a @ (X * X)
    np.maximum(sq, 0.0, out=sq)
    return lse, sq
