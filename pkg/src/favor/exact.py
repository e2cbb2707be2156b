"""Exact (quadratic-cost) attention used as the reference for FAVOR.

All functions materialize the ``L x L`` attention matrix.  ``V`` may have
any number of columns; ``Q`` and ``K`` must share their shape.
"""

import math

import numpy as np

from favor.errors import DegenerateAttentionError, DomainError
from favor.featuremap import UNIT_SCALERS, scalers


def check_problem(Q, K, V=None):
    Q = np.asarray(Q, dtype=float)
    K = np.asarray(K, dtype=float)
    if Q.ndim != 2 or Q.shape != K.shape:
        raise DomainError(f"Q and K must be L x d with equal shapes, got {Q.shape} and {K.shape}")
    if Q.shape[0] < 1 or Q.shape[1] < 1:
        raise DomainError("empty attention problem")
    arrays = [Q, K]
    if V is not None:
        V = np.asarray(V, dtype=float)
        if V.ndim != 2 or V.shape[0] != Q.shape[0]:
            raise DomainError(f"V must have L={Q.shape[0]} rows, got shape {V.shape}")
        arrays.append(V)
    for a in arrays:
        if not np.isfinite(a).all():
            raise DomainError("attention inputs must be finite")
    return (Q, K, V) if V is not None else (Q, K)


def _causal_mask(L):
    """Boolean mask of the strictly upper triangle."""
    idx = np.arange(L)
    return idx[:, None] < idx[None, :]


def _stable_softmax_rows(Q, K, causal):
    S = Q @ K.T
    S *= 1.0 / math.sqrt(Q.shape[1])
    if causal:
        S[_causal_mask(S.shape[0])] = -np.inf
    S -= S.max(axis=1, keepdims=True)
    np.exp(S, out=S)
    return S


def attention_matrix(Q, K):
    """Unnormalized ``A = exp(Q K^T / sqrt(d))``."""
    Q, K = check_problem(Q, K)
    return np.exp(Q @ K.T / math.sqrt(Q.shape[1]))


def softmax_matrix(Q, K, causal=False):
    """Row-stochastic ``D^-1 A`` (``tril`` applied first when ``causal``)."""
    Q, K = check_problem(Q, K)
    E = _stable_softmax_rows(Q, K, causal)
    E /= E.sum(axis=1, keepdims=True)
    return E


def exact_bidirectional(Q, K, V):
    """``D^-1 A V`` with ``A = exp(Q K^T / sqrt(d))``.

    Each row is shifted by its maximum logit before exponentiation; the
    shift cancels in the ratio.
    """
    Q, K, V = check_problem(Q, K, V)
    E = _stable_softmax_rows(Q, K, causal=False)
    return (E @ V) / E.sum(axis=1, keepdims=True)


def exact_unidirectional(Q, K, V):
    """Causal attention: row ``i`` attends to keys ``0..i`` (diagonal included)."""
    Q, K, V = check_problem(Q, K, V)
    E = _stable_softmax_rows(Q, K, causal=True)
    return (E @ V) / E.sum(axis=1, keepdims=True)


def gaussian_kernel(X, Y, sigma):
    sq = (np.einsum("ij,ij->i", X, X)[:, None] + np.einsum("ij,ij->i", Y, Y)[None, :]
          - 2.0 * X @ Y.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-sq / (2.0 * sigma ** 2))


def linear_kernel(X, Y):
    return X @ Y.T


def kernel_matrix(kernel, Q, K, sigma=None):
    """Closed-form kernel matrix ``[K(Q_i, K_j)]``.

    ``kernel`` is ``"gaussian"`` (bandwidth ``sigma``, default ``d**0.25``),
    ``"linear"``, or a callable ``(Q, K) -> L x L`` array.
    """
    if callable(kernel):
        return np.asarray(kernel(Q, K), dtype=float)
    if kernel == "gaussian":
        return gaussian_kernel(Q, K, Q.shape[1] ** 0.25 if sigma is None else sigma)
    if kernel == "linear":
        return linear_kernel(Q, K)
    raise DomainError(f"no closed form for kernel {kernel!r}")


def generalized_matrix(Q, K, kernel="gaussian", scaler_spec=UNIT_SCALERS, causal=False,
                       sigma=None):
    """``A_ij = g(Q_i) K(Q_i, K_j) h(K_j)``, lower-triangular when ``causal``."""
    Q, K = check_problem(Q, K)
    A = kernel_matrix(kernel, Q, K, sigma)
    A *= scalers(scaler_spec, Q, "query")[:, None]
    A *= scalers(scaler_spec, K, "key")[None, :]
    if not np.isfinite(A).all():
        raise DomainError("kernel produced non-finite attention entries")
    if causal:
        A[_causal_mask(A.shape[0])] = 0.0
    return A


def exact_generalized(Q, K, V, kernel="gaussian", scaler_spec=UNIT_SCALERS, renormalize=True,
                      causal=False, sigma=None):
    """Exact Generalized Attention: ``D^-1 A V`` if ``renormalize`` else ``A V``.

    With the Gaussian kernel at ``sigma = d**0.25`` and softmax scalers this
    reproduces :func:`exact_bidirectional` (or the causal variant).
    """
    Q, K, V = check_problem(Q, K, V)
    A = generalized_matrix(Q, K, kernel, scaler_spec, causal, sigma)
    out = A @ V
    if renormalize:
        den = A.sum(axis=1)
        bad = np.flatnonzero(den == 0)
        if bad.size:
            raise DegenerateAttentionError(bad[0], den[bad[0]])
        out /= den[:, None]
    return out
