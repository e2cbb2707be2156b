import math
import tracemalloc

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from favor.attention import (
    FavorConfig,
    PrefixAccumulator,
    approx_attention_matrix,
    config_for_call,
    favor_attention,
    favor_bidirectional,
    favor_unidirectional,
    generalized_config,
    prime,
    softmax_config,
)
from favor.errors import DegenerateAttentionError, DomainError
from favor.exact import attention_matrix
from favor.featuremap import (
    SOFTMAX_SCALERS,
    UNIT_SCALERS,
    make_generalized_map,
    make_softmax_map,
    with_projection,
)
from favor.sampler import identity_projection, materialize


def rand(shape, seed, scale=1.0):
    return scale * np.random.default_rng(seed).standard_normal(shape)


def identity_cfg(d, c=1.0, renormalize=False):
    fm = with_projection(make_generalized_map("identity", d, d, epsilon=0.0, c=c),
                         identity_projection(d))
    return FavorConfig(fm, UNIT_SCALERS, renormalize=renormalize)


def tril_oracle(Q, K, V, cfg):
    """Explicitly masked product with the same Q', K'."""
    Qp, Kp = prime(Q, cfg, "query"), prime(K, cfg, "key")
    T = np.tril(Qp @ Kp.T)
    num = T @ V
    if not cfg.renormalize:
        return num
    return num / (T.sum(axis=1) + cfg.stabilizer)[:, None]


class TestBidirectional:
    def test_identity_hook_is_associativity(self):
        Q, K, V = rand((6, 3), 0), rand((6, 3), 1), rand((6, 3), 2)
        cfg = identity_cfg(3, c=1.7)
        scale = 1.7 ** 2 / 3
        np.testing.assert_allclose(favor_bidirectional(Q, K, V, cfg), (Q @ K.T) @ V * scale,
                                   atol=1e-12)

    def test_single_token(self):
        V = rand((1, 4), 3)
        cfg = softmax_config(4, M=64, seed=1)
        np.testing.assert_allclose(favor_bidirectional(rand((1, 4), 4, 0.3), rand((1, 4), 5, 0.3),
                                                       V, cfg), V, rtol=1e-6)

    def test_mean_estimate_matches_softmax_matrix(self):
        d, L = 4, 16
        rng = np.random.default_rng(3)
        Q = rng.standard_normal((L, d))
        K = rng.standard_normal((L, d))
        Q *= 2 * rng.uniform(0, 1, (L, 1)) / np.linalg.norm(Q, axis=1, keepdims=True)
        K *= 2 * rng.uniform(0, 1, (L, 1)) / np.linalg.norm(K, axis=1, keepdims=True)
        A = attention_matrix(Q, K)
        mean = np.mean([approx_attention_matrix(Q, K, softmax_config(d, 10_000, "iid", s))
                        for s in range(200)], axis=0)
        assert np.linalg.norm(mean - A) / np.linalg.norm(A) < 0.02
        assert np.abs(mean - A).max() < 0.02 * A.max()

    @pytest.mark.parametrize("kind", ["iid", "rorf", "horf", "gorf"])
    def test_equals_renormalized_matrix_product(self, kind):
        Q, K, V = rand((20, 8), 1, 0.4), rand((20, 8), 2, 0.4), rand((20, 5), 3)
        cfg = generalized_config(8, 32, "relu", kind, seed=4, stabilizer=1e-3)
        A_hat = approx_attention_matrix(Q, K, cfg)
        expected = (A_hat @ V) / (A_hat.sum(axis=1) + 1e-3)[:, None]
        np.testing.assert_allclose(favor_bidirectional(Q, K, V, cfg), expected, rtol=1e-10, atol=1e-12)

    def test_feature_dimension_mismatch(self):
        with pytest.raises(DomainError):
            favor_bidirectional(np.ones((2, 3)), np.ones((2, 3)), np.ones((2, 3)), softmax_config(4, 8))


class TestDegeneracy:
    def test_zero_relu_features_raise(self):
        cfg = generalized_config(3, 16, "relu", epsilon=0.0, stabilizer=0.0)
        Q = rand((4, 3), 0)
        Q[2] = 0.0
        with pytest.raises(DegenerateAttentionError) as info:
            favor_bidirectional(Q, rand((4, 3), 1), rand((4, 3), 2), cfg)
        assert info.value.row == 2
        with pytest.raises(DegenerateAttentionError):
            favor_unidirectional(Q, rand((4, 3), 1), rand((4, 3), 2), cfg)

    def test_stabilizer_absorbs_zero_rows(self):
        cfg = generalized_config(3, 16, "relu", epsilon=0.0, stabilizer=1e-6)
        Q = np.zeros((2, 3))
        out = favor_bidirectional(Q, rand((2, 3), 1), rand((2, 3), 2), cfg)
        assert not out.any()

    def test_no_renormalize_never_raises(self):
        cfg = generalized_config(3, 16, "relu", epsilon=0.0, renormalize=False)
        out = favor_bidirectional(np.zeros((2, 3)), rand((2, 3), 1), rand((2, 3), 2), cfg)
        assert not out.any()


class TestUnidirectional:
    def test_matches_tril_oracle(self):
        Q, K, V = rand((8, 4), 0), rand((8, 4), 1), rand((8, 4), 2)
        cfg = generalized_config(4, 16, "relu", seed=3)
        np.testing.assert_allclose(favor_unidirectional(Q, K, V, cfg), tril_oracle(Q, K, V, cfg),
                                   rtol=1e-10, atol=1e-12)

    def test_trig_features_unnormalized(self):
        Q, K, V = rand((8, 4), 0), rand((8, 4), 1), rand((8, 4), 2)
        cfg = softmax_config(4, 16, seed=2, renormalize=False)
        np.testing.assert_allclose(favor_unidirectional(Q, K, V, cfg), tril_oracle(Q, K, V, cfg),
                                   rtol=1e-10, atol=1e-12)

    def test_first_row(self):
        V = rand((5, 3), 4)
        cfg = generalized_config(3, 32, "relu", seed=1)
        out = favor_unidirectional(rand((5, 3), 5), rand((5, 3), 6), V, cfg)
        np.testing.assert_allclose(out[0], V[0], rtol=1e-12)

    @pytest.mark.parametrize("scan", ["sequential", "blocked"])
    def test_future_permutation_invariance(self, scan):
        Q, K, V = rand((10, 4), 7), rand((10, 4), 8), rand((10, 4), 9)
        cfg = generalized_config(4, 16, "relu", seed=2)
        base = favor_unidirectional(Q, K, V, cfg, scan=scan, block_size=3)
        rng = np.random.default_rng(0)
        for i in range(10):
            V2 = V.copy()
            V2[i + 1:] = V2[i + 1:][rng.permutation(9 - i)]
            out = favor_unidirectional(Q, K, V2, cfg, scan=scan, block_size=3)
            assert np.array_equal(out[: i + 1], base[: i + 1])

    @pytest.mark.parametrize("block", [1, 3, 8, 100])
    def test_blocked_matches_sequential(self, block):
        Q, K, V = rand((37, 4), 1), rand((37, 4), 2), rand((37, 3), 3)
        cfg = generalized_config(4, 24, "gelu", seed=5, epsilon=0.5)
        seq = favor_unidirectional(Q, K, V, cfg)
        blk = favor_unidirectional(Q, K, V, cfg, scan="blocked", block_size=block)
        np.testing.assert_allclose(blk, seq, rtol=1e-10, atol=1e-12)

    def test_unknown_scan(self):
        with pytest.raises(DomainError):
            favor_unidirectional(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)),
                                 generalized_config(2, 4), scan="tree")

    def test_streaming_accumulator(self):
        Q, K, V = rand((6, 3), 1), rand((6, 3), 2), rand((6, 2), 3)
        cfg = generalized_config(3, 8, "relu", seed=0)
        Qp, Kp = prime(Q, cfg, "query"), prime(K, cfg, "key")
        acc = PrefixAccumulator(8, 3)
        rows = []
        for i in range(6):
            acc.push(Kp[i], V[i])
            r = acc.read(Qp[i])
            rows.append(r[:-1] / r[-1])
        assert acc.position == 6
        np.testing.assert_allclose(np.array(rows), favor_unidirectional(Q, K, V, cfg), rtol=1e-12)

    def test_dispatch(self):
        Q, K, V = rand((5, 3), 1), rand((5, 3), 2), rand((5, 3), 3)
        cfg = generalized_config(3, 8, "relu")
        assert np.array_equal(favor_attention(Q, K, V, cfg, causal=True),
                              favor_unidirectional(Q, K, V, cfg))


class TestApproxMatrix:
    def test_rank_bound(self):
        cfg = softmax_config(4, 5, seed=1)
        A_hat = approx_attention_matrix(rand((12, 4), 1), rand((12, 4), 2), cfg)
        assert np.linalg.matrix_rank(A_hat) <= 5

    def test_identity_hook(self):
        Q, K = rand((4, 3), 1), rand((4, 3), 2)
        np.testing.assert_allclose(approx_attention_matrix(Q, K, identity_cfg(3, c=2.0)),
                                   Q @ K.T * 4.0 / 3, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    L=st.integers(1, 40),
    d=st.sampled_from([2, 4, 8]),
    M=st.integers(1, 32),
    kernel=st.sampled_from(["relu", "exponential", "sigmoid", "absolute"]),
    seed=st.integers(0, 2 ** 32 - 1),
)
def test_prefix_sum_equals_masked_product(L, d, M, kernel, seed):
    rng = np.random.default_rng(seed)
    Q, K, V = (0.5 * rng.standard_normal((L, d)) for _ in range(3))
    cfg = generalized_config(d, M, kernel, seed=seed, stabilizer=1e-6)
    got = favor_unidirectional(Q, K, V, cfg)
    want = tril_oracle(Q, K, V, cfg)
    assert np.linalg.norm(got - want) <= 1e-10 * np.linalg.norm(want)


class TestRedrawSchedule:
    def test_disabled(self):
        cfg = softmax_config(4, 8)
        assert config_for_call(cfg, 1000) is cfg

    def test_epochs(self):
        cfg = softmax_config(4, 8, seed=3, redraw_interval=2)
        assert config_for_call(cfg, 1) is cfg
        c2, c3 = config_for_call(cfg, 2), config_for_call(cfg, 3)
        np.testing.assert_array_equal(materialize(c2.feature_map.proj),
                                      materialize(c3.feature_map.proj))
        assert not np.allclose(materialize(c2.feature_map.proj), materialize(cfg.feature_map.proj))
        assert not np.allclose(materialize(config_for_call(cfg, 4).feature_map.proj),
                               materialize(c2.feature_map.proj))
        assert c2.redraw_interval == 2 and c2.stabilizer == cfg.stabilizer

    def test_validation(self):
        fm = make_softmax_map(2, 2)
        with pytest.raises(DomainError):
            FavorConfig(fm, SOFTMAX_SCALERS, stabilizer=-1.0)
        with pytest.raises(DomainError):
            FavorConfig(fm, SOFTMAX_SCALERS, redraw_interval=0)


def test_presets():
    s = softmax_config(16)
    assert (s.feature_map.M, s.renormalize, s.stabilizer, s.feature_map.sampler_kind) == (256, True, 1e-6, "rorf")
    assert s.scalers == SOFTMAX_SCALERS
    g = generalized_config(16)
    assert (g.feature_map.M, g.feature_map.f_name, g.feature_map.epsilon, g.stabilizer) == (256, "relu", 1e-3, 0.0)
    assert g.scalers == UNIT_SCALERS
    assert generalized_config(16, kernel="cosine").scalers == SOFTMAX_SCALERS


@pytest.mark.parametrize("fn", [favor_bidirectional, favor_unidirectional])
def test_peak_memory_below_quadratic(fn):
    L, d, M = 4096, 16, 64
    Q, K, V = rand((L, d), 1), rand((L, d), 2), rand((L, d), 3)
    cfg = generalized_config(d, M, seed=0)
    tracemalloc.start()
    try:
        fn(Q, K, V, cfg)
        peak = tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()
    assert peak < L * L
