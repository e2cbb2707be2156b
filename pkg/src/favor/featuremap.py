"""Random feature maps ``phi(x) = c / sqrt(M) * (f(W s x + b) + eps)``.

``W`` is a :class:`~favor.sampler.Projection`, ``s`` an input pre-scale,
``b`` optional phase biases and ``eps`` an additive floor.  Two families
are built here:

* the trigonometric map for the Gaussian kernel (``f = cos``,
  ``c = sqrt(2)``, ``b ~ Unif(0, 2 pi)``, ``s = d**-0.25``), whose inner
  products estimate ``exp(-||x - y||^2 / (2 sqrt(d)))``;
* generalized maps with a named pointwise nonlinearity, which define the
  kernel ``K(x, y) = E[phi(x) . phi(y)]``.

Query/key scalers (the diagonal factors ``g`` and ``h``) live in
:class:`ScalerSpec`.
"""

import json
import math
import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erf

from favor import sampler
from favor.errors import DomainError


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _gelu(z):
    return 0.5 * z * (1.0 + erf(z / math.sqrt(2.0)))


NONLINEARITIES = {
    "sigmoid": _sigmoid,
    "exponential": np.exp,
    "relu": lambda z: np.maximum(z, 0.0),
    "absolute": np.abs,
    "gelu": _gelu,
    "cosine": np.cos,
    "tanh": np.tanh,
    "identity": lambda z: z,
}
KERNEL_NAMES = tuple(NONLINEARITIES)
MAGIC = b"FAVFMAP1"


@dataclass(frozen=True, eq=False)
class FeatureMap:
    proj: sampler.Projection
    bias: np.ndarray
    c: float
    f_name: str
    input_scale: float
    epsilon: float
    family: str
    sampler_kind: str
    sampler_options: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.bias is not None:
            if self.bias.shape != (self.proj.M,):
                raise DomainError(f"bias must have length M={self.proj.M}")
            self.bias.setflags(write=False)
        if self.epsilon < 0:
            raise DomainError("epsilon must be nonnegative")
        if not self.c > 0 or not self.input_scale > 0:
            raise DomainError("c and input_scale must be positive")

    @property
    def M(self):
        return self.proj.M

    @property
    def d(self):
        return self.proj.d

    @property
    def f(self):
        return NONLINEARITIES[self.f_name]


def _bias_rng(seed):
    # independent of the projection stream, which is default_rng(seed)
    return np.random.default_rng([seed, 0x0B1A5])


def make_softmax_map(d, M, sampler_kind="iid", seed=0, epsilon=0.0, **sampler_options):
    """Trigonometric feature map whose inner products estimate the Gaussian
    kernel with bandwidth ``d**0.25``.

    Parameters
    ----------
    d, M : int
        Input dimension and number of random features.
    sampler_kind : {"iid", "rorf", "horf", "gorf"}
    seed : int
        Drives both the projection and the phases.
    **sampler_options
        Forwarded to the sampler (e.g. ``norm_mode``, ``num_hd_blocks``).
    """
    proj = sampler.sample(sampler_kind, d, M, seed, **sampler_options)
    bias = _bias_rng(seed).uniform(0.0, 2 * math.pi, size=M)
    return FeatureMap(
        proj=proj,
        bias=bias,
        c=math.sqrt(2.0),
        f_name="cosine",
        input_scale=d ** -0.25,
        epsilon=float(epsilon),
        family="softmax",
        sampler_kind=sampler_kind,
        sampler_options=tuple(sorted(sampler_options.items())),
        seed=int(seed),
    )


def make_generalized_map(f_name, d, M, sampler_kind="iid", seed=0, epsilon=1e-3, c=1.0,
                         **sampler_options):
    """Feature map ``(c / sqrt(M)) * (f(W x) + epsilon)`` for a named ``f``.

    ``f_name="cosine"`` returns the trigonometric softmax map instead (with
    its own ``c``, phases and input scale), carrying ``epsilon`` along.
    """
    if f_name not in NONLINEARITIES:
        raise DomainError(f"unknown kernel {f_name!r}; expected one of {KERNEL_NAMES}")
    if epsilon < 0:
        raise DomainError("epsilon must be nonnegative")
    if f_name == "cosine":
        return make_softmax_map(d, M, sampler_kind, seed, epsilon=epsilon, **sampler_options)
    proj = sampler.sample(sampler_kind, d, M, seed, **sampler_options)
    return FeatureMap(
        proj=proj,
        bias=None,
        c=float(c),
        f_name=f_name,
        input_scale=1.0,
        epsilon=float(epsilon),
        family="generalized",
        sampler_kind=sampler_kind,
        sampler_options=tuple(sorted(sampler_options.items())),
        seed=int(seed),
    )


def with_projection(fm, proj):
    """Copy of ``fm`` using ``proj`` (must have the same ``M``); a test hook."""
    if proj.M != fm.M:
        raise DomainError("replacement projection must keep M")
    return replace(fm, proj=proj)


def embed(fm, X):
    """Rows ``phi(X_i)``, shape ``L x M``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != fm.d:
        raise DomainError(f"expected an L x {fm.d} input, got shape {X.shape}")
    Z = sampler.project_rows(fm.proj, X * fm.input_scale)
    if fm.bias is not None:
        Z += fm.bias
    out = fm.f(Z)
    if fm.epsilon:
        out += fm.epsilon
    out *= fm.c / math.sqrt(fm.M)
    return out


def redraw(fm, new_seed):
    """Same configuration, fresh projection and phases from ``new_seed``."""
    opts = dict(fm.sampler_options)
    if fm.family == "softmax":
        return make_softmax_map(fm.d, fm.M, fm.sampler_kind, new_seed, epsilon=fm.epsilon, **opts)
    return make_generalized_map(fm.f_name, fm.d, fm.M, fm.sampler_kind, new_seed,
                                epsilon=fm.epsilon, c=fm.c, **opts)


# -- scalers -----------------------------------------------------------------

SCALER_NAMES = ("softmax", "one")


@dataclass(frozen=True)
class ScalerSpec:
    """Names of the query-side ``g`` and key-side ``h`` scaler functions.

    ``"softmax"`` is ``x -> exp(||x||^2 / (2 sqrt(d)))``; ``"one"`` is the
    constant 1.
    """

    g_name: str = "one"
    h_name: str = "one"

    def __post_init__(self):
        for name in (self.g_name, self.h_name):
            if name not in SCALER_NAMES:
                raise DomainError(f"unknown scaler {name!r}; expected one of {SCALER_NAMES}")


SOFTMAX_SCALERS = ScalerSpec("softmax", "softmax")
UNIT_SCALERS = ScalerSpec("one", "one")


def _scaler_values(name, X):
    if name == "one":
        return np.ones(X.shape[0])
    d = X.shape[1]
    return np.exp(np.einsum("ij,ij->i", X, X) / (2.0 * math.sqrt(d)))


def scalers(spec, X, side="query"):
    """Per-row scaler values: ``g(X_i)`` for ``side="query"``, ``h(X_i)`` for keys."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DomainError("scalers expect a 2-D input")
    if side == "query":
        return _scaler_values(spec.g_name, X)
    if side == "key":
        return _scaler_values(spec.h_name, X)
    raise DomainError(f"side must be 'query' or 'key', got {side!r}")


# -- binary format -----------------------------------------------------------
#
# "FAVFMAP1" | tags (u32 length + UTF-8): f, g, h, family, sampler_kind,
# sampler_options as JSON | <f8 c, input_scale, epsilon> | <u64 seed>
# | <u32 has_bias> | <u32 nbytes> FAVPROJ1 blob | bias f64[M] if present


def _tag(s):
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def featuremap_to_bytes(fm, scaler_spec=None):
    g = scaler_spec.g_name if scaler_spec else ""
    h = scaler_spec.h_name if scaler_spec else ""
    proj_blob = sampler.projection_to_bytes(fm.proj)
    parts = [
        MAGIC,
        _tag(fm.f_name), _tag(g), _tag(h), _tag(fm.family), _tag(fm.sampler_kind),
        _tag(json.dumps(dict(fm.sampler_options), sort_keys=True)),
        struct.pack("<3dQI", fm.c, fm.input_scale, fm.epsilon, fm.seed, fm.bias is not None),
        struct.pack("<I", len(proj_blob)), proj_blob,
    ]
    if fm.bias is not None:
        parts.append(fm.bias.astype("<f8").tobytes())
    return b"".join(parts)


def featuremap_from_bytes(buf):
    """Inverse of :func:`featuremap_to_bytes`; returns ``(fm, scaler_spec_or_None)``."""
    r = sampler._Reader(buf)
    if bytes(r.buf[:8]) != MAGIC:
        raise DomainError("not a FAVFMAP1 blob")
    r.pos = 8
    tags = []
    for _ in range(6):
        (n,) = r.unpack("<I")
        tags.append(bytes(r.buf[r.pos : r.pos + n]).decode("utf-8"))
        r.pos += n
    f_name, g, h, family, kind, opts = tags
    c, input_scale, epsilon, seed, has_bias = r.unpack("<3dQI")
    (nbytes,) = r.unpack("<I")
    end = r.pos + nbytes
    proj = sampler.projection_from_bytes(None, _reader=r)
    r.pos = end
    bias = r.array("<f8", proj.M, (proj.M,)) if has_bias else None
    fm = FeatureMap(proj, bias, c, f_name, input_scale, epsilon, family, kind,
                    tuple(sorted(json.loads(opts).items())), seed)
    spec = ScalerSpec(g, h) if g else None
    return fm, spec
