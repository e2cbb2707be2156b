"""Random projection matrices for random feature maps.

Four constructions of the ``M x d`` projection ``W`` are provided:

``iid``
    Independent standard Gaussian rows.
``rorf``
    Blocks of ``d`` Gaussian rows orthonormalized by Gram-Schmidt, then
    rescaled (chi-distributed norms, or a fixed ``sqrt(d)``).
``horf``
    Products of random sign diagonals and normalized Walsh-Hadamard
    matrices.  Stored as the signs only; applied in ``O(M log d)``.
``gorf``
    Products of random Givens rotations.  Stored as the rotation schedule;
    applied in ``O(M log d)`` with the default rotation count.

The sampling distribution is always the standard Gaussian.  Kernel
bandwidth is handled by the feature map through input scaling.

Examples
--------
>>> p = sample_rorf(4, 8, seed=2)
>>> W = materialize(p)
>>> W.shape
(8, 4)
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from favor.errors import DomainError

KINDS = ("iid", "rorf", "horf", "gorf", "explicit")
_KIND_CODES = {k: i for i, k in enumerate(KINDS)}
NORM_MODES = ("chi", "fixed_sqrt_d")
MAGIC = b"FAVPROJ1"


@dataclass(frozen=True, eq=False)
class Projection:
    """A random projection ``W`` of shape ``(M, d)``.

    Explicit kinds (``iid``, ``rorf``, ``explicit``) carry ``matrix``.
    Structured kinds carry factors plus per-row ``norms``:

    * ``horf``: ``signs`` of shape ``(n_blocks, num_hd_blocks, d_pad)``.
    * ``gorf``: ``pairs`` of shape ``(n_blocks, R, 2)`` and ``angles`` of
      shape ``(n_blocks, R)``.

    Instances are immutable; all arrays are flagged read-only.
    """

    kind: str
    d: int
    M: int
    seed: int
    matrix: np.ndarray = None
    norms: np.ndarray = None
    signs: np.ndarray = None
    pairs: np.ndarray = None
    angles: np.ndarray = None
    d_pad: int = None

    def __post_init__(self):
        for name in ("matrix", "norms", "signs", "pairs", "angles"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)

    @property
    def structured(self):
        return self.kind in ("horf", "gorf")

    @property
    def n_blocks(self):
        if self.kind == "horf":
            return self.signs.shape[0]
        if self.kind == "gorf":
            return self.pairs.shape[0]
        return math.ceil(self.M / self.d)


def _check_dims(d, M):
    if int(d) != d or int(M) != M or d < 1 or M < 1:
        raise DomainError(f"need positive integer d and M, got d={d}, M={M}")
    return int(d), int(M)


def _check_seed(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise DomainError(f"seed must fit in 64 unsigned bits, got {seed}")
    return seed


def _chi_norms(rng, M, d):
    return np.linalg.norm(rng.standard_normal((M, d)), axis=1)


def _row_norms(rng, M, d, norm_mode):
    if norm_mode == "chi":
        return _chi_norms(rng, M, d)
    if norm_mode == "fixed_sqrt_d":
        return np.full(M, math.sqrt(d))
    raise DomainError(f"unknown norm_mode {norm_mode!r}; expected one of {NORM_MODES}")


def sample_iid(d, M, seed=0):
    """``M x d`` matrix of iid standard normal entries."""
    d, M = _check_dims(d, M)
    seed = _check_seed(seed)
    rng = np.random.default_rng(seed)
    return Projection("iid", d, M, seed, matrix=rng.standard_normal((M, d)))


def gram_schmidt(G, rtol=1e-10):
    """Orthonormalize the rows of ``G`` (modified Gram-Schmidt, one re-pass).

    Raises
    ------
    DomainError
        If a row loses more than ``1 - rtol`` of its norm to the
        projections, i.e. the draw is numerically rank deficient.
    """
    U = np.array(G, dtype=float)
    for i in range(U.shape[0]):
        v = U[i]
        scale = np.linalg.norm(v)
        # second pass restores orthogonality lost to cancellation
        for _ in range(2):
            for j in range(i):
                v -= (U[j] @ v) * U[j]
        n = np.linalg.norm(v)
        if not scale > 0 or n <= rtol * scale:
            raise DomainError(f"row {i} is numerically dependent on rows 0..{i - 1}")
        U[i] = v / n
    return U


def sample_rorf(d, M, seed=0, norm_mode="chi", max_redraws=3):
    """Block-orthogonal Gaussian projection.

    Each block of ``min(d, remaining)`` rows comes from an independent
    ``d x d`` Gaussian draw orthonormalized by Gram-Schmidt.  Rows are then
    rescaled: ``chi`` uses the norm of a fresh Gaussian ``d``-vector per row
    so each row keeps the marginal law of an iid Gaussian row;
    ``fixed_sqrt_d`` uses ``sqrt(d)``.
    """
    d, M = _check_dims(d, M)
    seed = _check_seed(seed)
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(math.ceil(M / d)):
        for attempt in range(max_redraws + 1):
            try:
                blocks.append(gram_schmidt(rng.standard_normal((d, d))))
                break
            except DomainError:
                if attempt == max_redraws:
                    raise
    W = np.vstack(blocks)[:M]
    W *= _row_norms(rng, M, d, norm_mode)[:, None]
    return Projection("rorf", d, M, seed, matrix=W)


def fwht(X):
    """Unnormalized Walsh-Hadamard transform along the last axis.

    Uses the natural (Sylvester) ordering, so for a 1-D input ``x`` this
    equals ``scipy.linalg.hadamard(n) @ x``.  The last axis length must be
    a power of two.
    """
    x = np.array(X, dtype=float)
    n = x.shape[-1]
    if n & (n - 1):
        raise DomainError(f"Walsh-Hadamard length must be a power of two, got {n}")
    lead = x.shape[:-1]
    h = 1
    while h < n:
        x = x.reshape(*lead, n // (2 * h), 2, h)
        a = x[..., 0, :]
        b = x[..., 1, :]
        x = np.stack((a + b, a - b), axis=-2)
        h *= 2
    return x.reshape(*lead, n)


def _next_pow2(d):
    return 1 << (d - 1).bit_length()


def sample_horf(d, M, seed=0, num_hd_blocks=3, pad=False):
    """Hadamard-structured orthogonal projection (SORF style).

    Each of the ``ceil(M / d)`` independent blocks is
    ``prod_k (H D_k) / sqrt(d)`` with ``D_k`` random sign diagonals; rows
    are scaled by ``sqrt(d)`` and the first ``M`` rows across blocks are
    kept.  With ``pad=True`` a non power-of-two ``d`` is zero-padded to the
    next power of two and the padded columns are dropped.
    """
    d, M = _check_dims(d, M)
    seed = _check_seed(seed)
    if num_hd_blocks < 1:
        raise DomainError("num_hd_blocks must be at least 1")
    d_pad = _next_pow2(d)
    if d_pad != d and not pad:
        raise DomainError(f"H-ORF needs d to be a power of two (got {d}); pass pad=True")
    rng = np.random.default_rng(seed)
    n_blocks = math.ceil(M / d_pad)
    signs = rng.choice(np.array([-1.0, 1.0]), size=(n_blocks, num_hd_blocks, d_pad))
    norms = np.full(M, math.sqrt(d_pad))
    return Projection("horf", d, M, seed, norms=norms, signs=signs, d_pad=d_pad)


def sample_gorf(d, M, seed=0, num_rotations=None, norm_mode="chi"):
    """Givens-structured orthogonal projection.

    Each block is the product of ``num_rotations`` Givens rotations, each on
    a uniformly random coordinate pair ``i < j`` with a uniform angle, applied
    to the identity.  A rotation maps rows ``(r_i, r_j)`` to
    ``(c r_i + s r_j, -s r_i + c r_j)``.  Default rotation count is
    ``ceil(d log2 d)``.
    """
    d, M = _check_dims(d, M)
    seed = _check_seed(seed)
    if d < 2:
        raise DomainError("G-ORF needs d >= 2")
    if num_rotations is None:
        num_rotations = math.ceil(d * math.log2(d))
    if num_rotations < 1:
        raise DomainError("num_rotations must be at least 1")
    rng = np.random.default_rng(seed)
    n_blocks = math.ceil(M / d)
    first = rng.integers(0, d, size=(n_blocks, num_rotations))
    second = (first + rng.integers(1, d, size=(n_blocks, num_rotations))) % d
    pairs = np.stack((np.minimum(first, second), np.maximum(first, second)), axis=-1)
    angles = rng.uniform(0.0, 2 * math.pi, size=(n_blocks, num_rotations))
    norms = _row_norms(rng, M, d, norm_mode)
    return Projection("gorf", d, M, seed, norms=norms, pairs=pairs, angles=angles)


def identity_projection(d):
    """Deterministic ``W = I_d``; a hook for exact-algebra tests."""
    d, _ = _check_dims(d, 1)
    return Projection("explicit", d, d, 0, matrix=np.eye(d))


def from_matrix(W):
    """Wrap an arbitrary explicit ``M x d`` matrix."""
    W = np.array(W, dtype=float)
    if W.ndim != 2:
        raise DomainError("projection matrix must be 2-D")
    M, d = W.shape
    _check_dims(d, M)
    return Projection("explicit", d, M, 0, matrix=W)


_SAMPLERS = {
    "iid": sample_iid,
    "rorf": sample_rorf,
    "horf": sample_horf,
    "gorf": sample_gorf,
}


def sample(kind, d, M, seed=0, **options):
    """Dispatch to the sampler named ``kind``."""
    try:
        fn = _SAMPLERS[kind]
    except KeyError:
        raise DomainError(f"unknown sampler kind {kind!r}; expected one of {sorted(_SAMPLERS)}")
    return fn(d, M, seed, **options)


def _horf_rows(p, X):
    n = X.shape[0]
    if p.d_pad != p.d:
        Xp = np.zeros((n, p.d_pad))
        Xp[:, : p.d] = X
    else:
        Xp = X
    inv_sqrt = 1.0 / math.sqrt(p.d_pad)
    out = np.empty((n, p.n_blocks * p.d_pad))
    for b in range(p.n_blocks):
        Y = Xp
        # rightmost factor acts first
        for k in reversed(range(p.signs.shape[1])):
            Y = fwht(Y * p.signs[b, k]) * inv_sqrt
        out[:, b * p.d_pad : (b + 1) * p.d_pad] = Y
    return out[:, : p.M] * p.norms


def _gorf_rows(p, X):
    n = X.shape[0]
    out = np.empty((n, p.n_blocks * p.d))
    cos = np.cos(p.angles)
    sin = np.sin(p.angles)
    for b in range(p.n_blocks):
        Y = np.array(X, dtype=float)
        for (i, j), c, s in zip(p.pairs[b], cos[b], sin[b]):
            yi = Y[:, i].copy()
            Y[:, i] = c * yi + s * Y[:, j]
            Y[:, j] = -s * yi + c * Y[:, j]
        out[:, b * p.d : (b + 1) * p.d] = Y
    return out[:, : p.M] * p.norms


def project_rows(p, X):
    """Return ``X @ W.T`` (shape ``n x M``) using the fast path when available."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != p.d:
        raise DomainError(f"expected an n x {p.d} input, got shape {X.shape}")
    if p.kind == "horf":
        return _horf_rows(p, X)
    if p.kind == "gorf":
        return _gorf_rows(p, X)
    return X @ p.matrix.T


def apply_projection(p, X):
    """Return ``W @ X.T`` (shape ``M x n``) for an ``n x d`` input ``X``."""
    return project_rows(p, X).T


def materialize(p):
    """Explicit ``M x d`` matrix of ``p`` (a copy for explicit kinds)."""
    if p.matrix is not None:
        return np.array(p.matrix)
    return np.ascontiguousarray(project_rows(p, np.eye(p.d)).T)


def block_rows(p, block):
    """Row slice ``[start, stop)`` of block ``block`` in the materialized matrix."""
    width = p.d_pad if p.kind == "horf" else p.d
    return block * width, min((block + 1) * width, p.M)


# -- binary format ------------------------------------------------------------
#
# "FAVPROJ1" | <u32 kind, d, M, seed_lo, seed_hi>
#   explicit kinds: M*d f64 row-major
#   horf: <u32 n_blocks, num_hd, d_pad> | signs f64 | norms f64[M]
#   gorf: <u32 n_blocks, R> | pairs u32[n_blocks*R*2] | angles f64 | norms f64[M]


def projection_to_bytes(p):
    seed = int(p.seed)
    parts = [MAGIC, struct.pack("<5I", _KIND_CODES[p.kind], p.d, p.M, seed & 0xFFFFFFFF, seed >> 32)]
    if p.kind == "horf":
        nb, nh, dp = p.signs.shape
        parts.append(struct.pack("<3I", nb, nh, dp))
        parts.append(p.signs.astype("<f8").tobytes())
        parts.append(p.norms.astype("<f8").tobytes())
    elif p.kind == "gorf":
        nb, r = p.angles.shape
        parts.append(struct.pack("<2I", nb, r))
        parts.append(p.pairs.astype("<u4").tobytes())
        parts.append(p.angles.astype("<f8").tobytes())
        parts.append(p.norms.astype("<f8").tobytes())
    else:
        parts.append(p.matrix.astype("<f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def unpack(self, fmt):
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += struct.calcsize(fmt)
        return vals

    def array(self, dtype, count, shape):
        dt = np.dtype(dtype)
        nbytes = dt.itemsize * count
        if self.pos + nbytes > len(self.buf):
            raise DomainError("truncated payload")
        arr = np.frombuffer(self.buf, dtype=dt, count=count, offset=self.pos).reshape(shape)
        self.pos += nbytes
        return arr.astype(dt.newbyteorder("="))


def projection_from_bytes(buf, _reader=None):
    r = _reader or _Reader(buf)
    if bytes(r.buf[r.pos : r.pos + 8]) != MAGIC:
        raise DomainError("not a FAVPROJ1 blob")
    r.pos += 8
    code, d, M, lo, hi = r.unpack("<5I")
    if code >= len(KINDS):
        raise DomainError(f"unknown projection kind code {code}")
    kind = KINDS[code]
    seed = lo | (hi << 32)
    if kind == "horf":
        nb, nh, dp = r.unpack("<3I")
        signs = r.array("<f8", nb * nh * dp, (nb, nh, dp))
        norms = r.array("<f8", M, (M,))
        return Projection(kind, d, M, seed, norms=norms, signs=signs, d_pad=dp)
    if kind == "gorf":
        nb, rot = r.unpack("<2I")
        pairs = r.array("<u4", nb * rot * 2, (nb, rot, 2)).astype(np.int64)
        angles = r.array("<f8", nb * rot, (nb, rot))
        norms = r.array("<f8", M, (M,))
        return Projection(kind, d, M, seed, norms=norms, pairs=pairs, angles=angles)
    matrix = r.array("<f8", M * d, (M, d))
    return Projection(kind, d, M, seed, matrix=matrix)


def save_projection(p, path):
    with open(path, "wb") as fh:
        fh.write(projection_to_bytes(p))


def load_projection(path):
    with open(path, "rb") as fh:
        return projection_from_bytes(fh.read())
