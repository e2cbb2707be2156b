"""FAVOR: linear-time attention through random feature maps.

With ``Q' = diag(g(Q)) phi(Q)`` and ``K' = diag(h(K)) phi(K)`` the
approximate attention matrix is ``A_hat = Q' K'^T``.  The functions here
return ``D_hat^-1 A_hat V`` without forming ``A_hat``:

* bidirectional: ``Q' (K'^T [V 1])``, cost ``O(L M d)``;
* unidirectional: a left-to-right scan over the running ``M x (d+1)``
  sums ``sum_{t <= i} K'_t [V_t 1]^T``, read out by ``Q'_i``.

Example
-------
>>> import numpy as np
>>> rng = np.random.default_rng(0)
>>> Q, K, V = (0.3 * rng.standard_normal((64, 8)) for _ in range(3))
>>> out = favor_bidirectional(Q, K, V, softmax_config(8, M=128, seed=1))
>>> out.shape
(64, 8)
"""

from dataclasses import dataclass, replace

import numpy as np

from favor._seeding import derive_seed
from favor.errors import DegenerateAttentionError, DomainError
from favor.exact import check_problem
from favor.featuremap import (
    SOFTMAX_SCALERS,
    UNIT_SCALERS,
    FeatureMap,
    ScalerSpec,
    embed,
    make_generalized_map,
    make_softmax_map,
    redraw,
    scalers,
)


@dataclass(frozen=True, eq=False)
class FavorConfig:
    """Everything FAVOR needs besides the inputs.

    ``stabilizer`` is added to every denominator when ``renormalize`` is on
    and ignored otherwise.  ``redraw_interval`` is the number of calls that
    share one feature draw (see :func:`config_for_call`); ``None`` disables
    redrawing.
    """

    feature_map: FeatureMap
    scalers: ScalerSpec = UNIT_SCALERS
    renormalize: bool = True
    stabilizer: float = 0.0
    redraw_interval: int = None

    def __post_init__(self):
        if not self.stabilizer >= 0:
            raise DomainError("stabilizer must be nonnegative")
        if self.redraw_interval is not None and self.redraw_interval < 1:
            raise DomainError("redraw_interval must be a positive integer")


def softmax_config(d, M=256, sampler_kind="rorf", seed=0, renormalize=True, stabilizer=1e-6,
                   redraw_interval=None, **sampler_options):
    """Approximate-softmax preset: trig features with orthogonal rows,
    renormalization on, stabilizer ``1e-6``, 256 features."""
    fm = make_softmax_map(d, M, sampler_kind, seed, **sampler_options)
    return FavorConfig(fm, SOFTMAX_SCALERS, renormalize, stabilizer, redraw_interval)


def generalized_config(d, M=256, kernel="relu", sampler_kind="iid", seed=0, epsilon=1e-3,
                       renormalize=True, stabilizer=0.0, redraw_interval=None, **sampler_options):
    """Generalized-attention preset: ReLU features, ``epsilon = 1e-3``,
    renormalization on, no stabilizer, 256 features.

    ``kernel="cosine"`` pairs the trig map with the softmax scalers so the
    result approximates softmax attention; every other kernel uses
    ``g = h = 1``.
    """
    fm = make_generalized_map(kernel, d, M, sampler_kind, seed, epsilon=epsilon, **sampler_options)
    spec = SOFTMAX_SCALERS if kernel == "cosine" else UNIT_SCALERS
    return FavorConfig(fm, spec, renormalize, stabilizer, redraw_interval)


def config_for_call(cfg, call_index):
    """Config to use for the ``call_index``-th call (0-based).

    Calls ``[k * interval, (k + 1) * interval)`` share one feature draw.
    Epoch 0 is ``cfg`` itself; later epochs redraw from a seed derived from
    the original seed and the epoch number.  A new config is returned and
    ``cfg`` is never modified, so a sequence is always processed with a
    single ``W``.
    """
    if cfg.redraw_interval is None:
        return cfg
    epoch = int(call_index) // cfg.redraw_interval
    if epoch == 0:
        return cfg
    fm = cfg.feature_map
    return replace(cfg, feature_map=redraw(fm, derive_seed(fm.seed, "redraw", epoch)))


def prime(X, cfg, side):
    """``diag(g(X)) phi(X)`` for ``side="query"`` (``h`` for ``"key"``)."""
    out = embed(cfg.feature_map, X)
    out *= scalers(cfg.scalers, X, side)[:, None]
    return out


def _primes(Q, K, cfg):
    if Q.shape[1] != cfg.feature_map.d:
        raise DomainError(f"feature map expects d={cfg.feature_map.d}, inputs have d={Q.shape[1]}")
    return prime(Q, cfg, "query"), prime(K, cfg, "key")


def _with_ones(V):
    C = np.empty((V.shape[0], V.shape[1] + 1))
    C[:, :-1] = V
    C[:, -1] = 1.0
    return C


def _finish(buf2, cfg):
    """Split ``[Buf3 | buf4]`` and apply the (stabilized) renormalization."""
    buf3 = buf2[:, :-1]
    if not cfg.renormalize:
        return np.ascontiguousarray(buf3)
    den = buf2[:, -1] + cfg.stabilizer
    bad = np.flatnonzero(~(den > 0))
    if bad.size:
        raise DegenerateAttentionError(bad[0], den[bad[0]])
    return buf3 / den[:, None]


def favor_bidirectional(Q, K, V, cfg):
    """``D_hat^-1 (Q' (K'^T V))`` with ``D_hat = diag(Q' (K'^T 1) + stabilizer)``.

    Time ``O(L M d)``; the largest intermediates are ``L x M``.

    Raises
    ------
    DegenerateAttentionError
        If renormalizing and some denominator is not strictly positive.
    """
    Q, K, V = check_problem(Q, K, V)
    Qp, Kp = _primes(Q, K, cfg)
    buf1 = Kp.T @ _with_ones(V)
    return _finish(Qp @ buf1, cfg)


class PrefixAccumulator:
    """Running sum ``S = sum_{t <= i} K'_t C_t^T`` for streaming causal FAVOR.

    ``C_t`` is the value row with a trailing 1, so ``q @ S`` yields the
    numerator and (last entry) the denominator for a query ``q``.  Updates
    are applied strictly in arrival order.

    >>> acc = PrefixAccumulator(4, 3)
    >>> acc.push(np.ones(4), np.array([1.0, 2.0]))
    >>> acc.read(np.full(4, 0.25))
    array([1., 2., 1.])
    """

    def __init__(self, M, width):
        self.S = np.zeros((M, width))
        self.position = 0

    def push(self, k_prime, v):
        c = np.append(np.asarray(v, dtype=float), 1.0)
        self.push_augmented(k_prime, c)

    def push_augmented(self, k_prime, c):
        self.S += np.multiply.outer(k_prime, c)
        self.position += 1

    def read(self, q_prime):
        return q_prime @ self.S


def favor_unidirectional(Q, K, V, cfg, scan="sequential", block_size=128):
    """Causal FAVOR via prefix sums; never forms ``tril(Q' K'^T)``.

    Parameters
    ----------
    scan : {"sequential", "blocked"}
        ``"sequential"`` streams one row at a time through a
        :class:`PrefixAccumulator` (extra space ``O(M d)``).  ``"blocked"``
        forms cumulative sums inside blocks of ``block_size`` rows and adds
        the carried total; results agree with the sequential scan up to
        floating-point reassociation (about 1e-12 relative).
    """
    Q, K, V = check_problem(Q, K, V)
    Qp, Kp = _primes(Q, K, cfg)
    C = _with_ones(V)
    L = Q.shape[0]
    buf2 = np.empty((L, C.shape[1]))
    if scan == "sequential":
        acc = PrefixAccumulator(Qp.shape[1], C.shape[1])
        for i in range(L):
            acc.push_augmented(Kp[i], C[i])
            buf2[i] = acc.read(Qp[i])
    elif scan == "blocked":
        if block_size < 1:
            raise DomainError("block_size must be positive")
        carry = np.zeros((Qp.shape[1], C.shape[1]))
        for start in range(0, L, block_size):
            stop = min(start + block_size, L)
            G = np.einsum("tm,tp->tmp", Kp[start:stop], C[start:stop])
            np.cumsum(G, axis=0, out=G)
            G += carry
            buf2[start:stop] = np.einsum("tm,tmp->tp", Qp[start:stop], G)
            carry = G[-1].copy()
    else:
        raise DomainError(f"unknown scan {scan!r}")
    return _finish(buf2, cfg)


def favor_attention(Q, K, V, cfg, causal=False, **kwargs):
    if causal:
        return favor_unidirectional(Q, K, V, cfg, **kwargs)
    return favor_bidirectional(Q, K, V, cfg)


def approx_attention_matrix(Q, K, cfg):
    """Explicit ``A_hat = Q' K'^T`` (unnormalized).  Analysis only: ``O(L^2)``."""
    Q, K = check_problem(Q, K)
    Qp, Kp = _primes(Q, K, cfg)
    return Qp @ Kp.T
