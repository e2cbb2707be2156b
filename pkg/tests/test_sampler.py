import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from favor.bench import median_time_ns
from favor.errors import DomainError
from favor.sampler import (
    apply_projection,
    block_rows,
    from_matrix,
    fwht,
    gram_schmidt,
    identity_projection,
    load_projection,
    materialize,
    project_rows,
    projection_from_bytes,
    projection_to_bytes,
    sample,
    sample_gorf,
    sample_horf,
    sample_iid,
    sample_rorf,
    save_projection,
)


def naive_matmul(W, X):
    """Triple-loop W @ X.T, independent of numpy's matmul."""
    M, d = W.shape
    n = X.shape[0]
    out = np.zeros((M, n))
    for i in range(M):
        for j in range(n):
            acc = 0.0
            for k in range(d):
                acc += W[i, k] * X[j, k]
            out[i, j] = acc
    return out


def unscaled_blocks(p):
    W = materialize(p)
    norms = np.linalg.norm(W, axis=1)
    for b in range(p.n_blocks):
        lo, hi = block_rows(p, b)
        yield W[lo:hi] / norms[lo:hi, None]


class TestIID:
    def test_shape_and_moments(self):
        W = materialize(sample_iid(2, 100_000, seed=7))
        assert W.shape == (100_000, 2)
        np.testing.assert_allclose(W.mean(axis=0), 0.0, atol=0.02)
        np.testing.assert_allclose(W.var(axis=0), 1.0, atol=0.02)

    def test_deterministic(self):
        a = materialize(sample_iid(4, 8, seed=1))
        b = materialize(sample_iid(4, 8, seed=1))
        assert np.array_equal(a, b)

    def test_mean_squared_row_norm(self):
        W = materialize(sample_iid(3, 100_000, seed=3))
        assert abs((W ** 2).sum(axis=1).mean() - 3.0) < 0.05

    @pytest.mark.parametrize("d,M", [(0, 3), (3, 0), (-1, 2)])
    def test_rejects_empty(self, d, M):
        with pytest.raises(DomainError):
            sample_iid(d, M, 0)

    def test_rejects_bad_seed(self):
        with pytest.raises(DomainError):
            sample_iid(2, 2, seed=-1)


class TestRORF:
    def test_pair_orthogonal(self):
        W = materialize(sample_rorf(2, 2, seed=5))
        assert abs(W[0] @ W[1]) < 1e-10

    def test_block_structure(self):
        W = materialize(sample_rorf(4, 8, seed=2))
        for block in (W[:4], W[4:]):
            G = block @ block.T
            off = G - np.diag(np.diag(G))
            assert np.abs(off).max() < 1e-10
        assert abs(W[1] @ W[5]) > 1e-3

    def test_fixed_norms(self):
        W = materialize(sample_rorf(8, 8, seed=0, norm_mode="fixed_sqrt_d"))
        np.testing.assert_allclose(np.linalg.norm(W, axis=1), math.sqrt(8), atol=1e-12)

    def test_partial_last_block(self):
        p = sample_rorf(4, 6, seed=3)
        W = materialize(p)
        assert W.shape == (6, 4)
        for U in unscaled_blocks(p):
            np.testing.assert_allclose(U @ U.T, np.eye(U.shape[0]), atol=1e-10)

    def test_chi_marginal_norms(self):
        sq = [np.mean(np.sum(materialize(sample_rorf(8, 8, seed=s)) ** 2, axis=1))
              for s in range(10_000)]
        assert abs(np.mean(sq) - 8.0) / 8.0 < 0.02

    def test_unknown_norm_mode(self):
        with pytest.raises(DomainError):
            sample_rorf(4, 4, norm_mode="nope")

    def test_gram_schmidt_rejects_dependent_rows(self):
        G = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 0.0]])
        with pytest.raises(DomainError):
            gram_schmidt(G)

    def test_redraw_then_fail(self, monkeypatch):
        calls = []

        def always_fail(G, rtol=1e-10):
            calls.append(1)
            raise DomainError("rank deficient")

        monkeypatch.setattr("favor.sampler.gram_schmidt", always_fail)
        with pytest.raises(DomainError):
            sample_rorf(4, 4, seed=0)
        assert len(calls) == 4


class TestFWHT:
    @pytest.mark.parametrize("n", [1, 2, 8, 64])
    def test_matches_scipy_hadamard(self, n):
        x = np.random.default_rng(n).standard_normal((3, n))
        np.testing.assert_allclose(fwht(x), x @ scipy.linalg.hadamard(n).T, atol=1e-12)

    def test_rejects_non_power_of_two(self):
        with pytest.raises(DomainError):
            fwht(np.ones(6))


class TestHORF:
    def test_small_orthogonal(self):
        W = materialize(sample_horf(2, 2, seed=9))
        assert abs(W[0] @ W[1]) < 1e-12
        np.testing.assert_allclose(np.linalg.norm(W, axis=1), math.sqrt(2), atol=1e-12)

    def test_apply_basis_vector_is_column(self):
        p = sample_horf(8, 8, seed=4)
        e1 = np.zeros((1, 8))
        e1[0, 0] = 1.0
        np.testing.assert_allclose(apply_projection(p, e1)[:, 0], materialize(p)[:, 0], atol=1e-12)

    def test_blocks_orthonormal(self):
        p = sample_horf(16, 40, seed=1)
        for U in unscaled_blocks(p):
            np.testing.assert_allclose(U @ U.T, np.eye(U.shape[0]), atol=1e-10)

    def test_requires_power_of_two(self):
        with pytest.raises(DomainError):
            sample_horf(6, 6)

    def test_padding(self):
        p = sample_horf(6, 10, seed=2, pad=True)
        assert p.d_pad == 8
        X = np.random.default_rng(0).standard_normal((4, 6))
        W = materialize(p)
        assert W.shape == (10, 6)
        np.testing.assert_allclose(apply_projection(p, X), W @ X.T, atol=1e-12)

    @pytest.mark.slow
    def test_apply_cost_is_m_log_d(self):
        # cost per input vector, normalized by M log2 d, must stay within +-50% of its median
        rng = np.random.default_rng(0)
        n = 256
        ratios = []
        for k in range(6, 13):
            d = 2 ** k
            p = sample_horf(d, d, seed=0)
            X = rng.standard_normal((n, d))
            ratios.append(median_time_ns(project_rows, (p, X), repeats=7) / (n * d * k))
        ratios = np.array(ratios) / np.median(ratios)
        assert ratios.max() < 1.5 and ratios.min() > 0.5, ratios


class TestGORF:
    def test_single_rotation(self):
        p = sample_gorf(2, 2, seed=11, num_rotations=1)
        theta = p.angles[0, 0]
        c, s = math.cos(theta), math.sin(theta)
        W = materialize(p)
        n0, n1 = p.norms
        np.testing.assert_allclose(W[0], [c * n0, s * n0], atol=1e-12)
        np.testing.assert_allclose(W[1], [-s * n1, c * n1], atol=1e-12)
        assert abs(W[0] @ W[1]) < 1e-12

    def test_apply_consistency(self):
        p = sample_gorf(8, 8, seed=3)
        X = np.eye(8)
        np.testing.assert_allclose(apply_projection(p, X), materialize(p), atol=1e-12)

    def test_gram_identity(self):
        p = sample_gorf(16, 16, seed=6)
        for U in unscaled_blocks(p):
            np.testing.assert_allclose(U @ U.T, np.eye(16), atol=1e-10)

    def test_default_rotation_count(self):
        assert sample_gorf(16, 16).angles.shape == (1, 64)

    def test_rejects_d1(self):
        with pytest.raises(DomainError):
            sample_gorf(1, 4)

    def test_pairs_distinct(self):
        p = sample_gorf(5, 10, seed=1)
        assert np.all(p.pairs[..., 0] < p.pairs[..., 1])


class TestApply:
    def test_identity_hook(self):
        X = np.random.default_rng(0).standard_normal((5, 3))
        np.testing.assert_array_equal(apply_projection(identity_projection(3), X), X.T)

    def test_zero_input(self):
        for p in (sample_iid(4, 6), sample_horf(4, 6), sample_gorf(4, 6)):
            assert not apply_projection(p, np.zeros((3, 4))).any()

    def test_against_naive_matmul(self):
        rng = np.random.default_rng(12)
        p = sample_iid(4, 6, seed=12)
        X = rng.standard_normal((3, 4))
        np.testing.assert_allclose(apply_projection(p, X), naive_matmul(materialize(p), X),
                                   atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            apply_projection(sample_iid(4, 4), np.zeros((2, 3)))

    def test_from_matrix(self):
        W = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(materialize(from_matrix(W)), W)

    def test_dispatch(self):
        assert sample("gorf", 4, 4, 1).kind == "gorf"
        with pytest.raises(DomainError):
            sample("nope", 4, 4)


@settings(max_examples=100, deadline=None)
@given(
    kind=st.sampled_from(["horf", "gorf"]),
    d=st.sampled_from([8, 16, 64]),
    M=st.integers(1, 130),
    n=st.integers(1, 6),
    seed=st.integers(0, 2 ** 64 - 1),
)
def test_fast_apply_equivalence(kind, d, M, n, seed):
    p = sample(kind, d, M, seed)
    X = np.random.default_rng(seed % 2 ** 32).standard_normal((n, d))
    np.testing.assert_allclose(apply_projection(p, X), materialize(p) @ X.T, atol=1e-12, rtol=0)


@settings(max_examples=30, deadline=None)
@given(
    kind=st.sampled_from(["iid", "rorf", "horf", "gorf"]),
    d=st.sampled_from([2, 4, 8]),
    M=st.integers(1, 20),
    seed=st.integers(0, 2 ** 64 - 1),
)
def test_sampling_is_pure(kind, d, M, seed):
    a = projection_to_bytes(sample(kind, d, M, seed))
    b = projection_to_bytes(sample(kind, d, M, seed))
    assert a == b


class TestSerialization:
    @pytest.mark.parametrize("kind", ["iid", "rorf", "horf", "gorf"])
    def test_roundtrip(self, kind, tmp_path):
        p = sample(kind, 8, 12, seed=2 ** 40 + 5)
        path = tmp_path / "w.bin"
        save_projection(p, path)
        q = load_projection(path)
        assert (q.kind, q.d, q.M, q.seed) == (p.kind, p.d, p.M, p.seed)
        np.testing.assert_array_equal(materialize(q), materialize(p))

    def test_header_layout(self):
        raw = projection_to_bytes(sample_iid(2, 3, seed=(7 << 32) | 9))
        assert raw[:8] == b"FAVPROJ1"
        assert np.frombuffer(raw[8:28], dtype="<u4").tolist() == [0, 2, 3, 9, 7]
        assert len(raw) == 28 + 8 * 6

    def test_rejects_garbage(self):
        with pytest.raises(DomainError):
            projection_from_bytes(b"NOTPROJ1" + bytes(20))

    def test_immutable(self):
        p = sample_iid(2, 2)
        with pytest.raises(ValueError):
            p.matrix[0, 0] = 1.0
