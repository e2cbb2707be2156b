"""Error studies, attention-matrix extraction and a feature-count advisor."""

import csv
import io
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from favor._seeding import derive_seed
from favor.attention import FavorConfig, approx_attention_matrix, favor_bidirectional
from favor.errors import DegenerateAttentionError, DomainError
from favor.exact import attention_matrix, exact_bidirectional
from favor.featuremap import SOFTMAX_SCALERS, embed, make_softmax_map

METRICS = (
    "attn_matrix_fro_rel",
    "attn_matrix_L1",
    "attn_matrix_max_abs",
    "output_fro_rel",
    "kernel_mse",
)
CSV_HEADER = ("metric", "sampler", "M", "L", "d", "trials", "mean", "std", "seed")


@dataclass(frozen=True)
class ErrorReport:
    """Aggregate of one error metric over independent trials.

    ``values`` keeps the per-trial numbers (in trial order) so that two
    reports from the same sweep can be compared pairwise.  ``failures``
    counts trials that raised :class:`DegenerateAttentionError`; they are
    excluded from ``mean``/``std``.
    """

    metric_name: str
    sampler_kind: str
    m_features: int
    L: int
    d: int
    trials: int
    mean: float
    std: float
    seed: int
    failures: int = 0
    pair_index: int = None
    values: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if self.metric_name not in METRICS:
            raise DomainError(f"unknown metric {self.metric_name!r}")
        if self.trials < 1:
            raise DomainError("trials must be at least 1")


def _summarize(values):
    ok = np.array([v for v in values if not math.isnan(v)], dtype=float)
    if ok.size == 0:
        return math.nan, math.nan
    return float(ok.mean()), float(ok.std())


def effective_threads(threads):
    if os.environ.get("FAVOR_DETERMINISTIC") == "1":
        return 1
    return max(1, int(threads))


def _map_trials(fn, trials, threads):
    threads = effective_threads(threads)
    if threads == 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(trials)))


def attention_errors(A_hat, A):
    """Dict of matrix error metrics between an estimate and the exact matrix."""
    diff = A_hat - A
    return {
        "attn_matrix_fro_rel": float(np.linalg.norm(diff) / np.linalg.norm(A)),
        "attn_matrix_L1": float(np.abs(diff).sum()),
        "attn_matrix_max_abs": float(np.abs(diff).max()),
    }


def attn_error_sweep(L, d, M_list, sampler_kinds=("iid", "rorf"), trials=10, seed=0,
                     metrics=("attn_matrix_fro_rel",), input_std=1.0, stabilizer=1e-6,
                     threads=1):
    """Approximation error of the softmax-kernel FAVOR estimate versus ``M``.

    Every trial draws fresh ``Q, K`` (and ``V`` if ``output_fro_rel`` is
    requested) with iid ``N(0, input_std^2)`` entries.  All samplers and all
    ``M`` values see the same inputs within a trial, so per-trial values
    are paired across reports.  Feature seeds depend on
    ``(seed, trial, M, sampler)`` only.

    Returns one :class:`ErrorReport` per ``(M, sampler, metric)``, ordered
    by ``M``, then sampler, then metric.
    """
    if L < 1 or d < 1 or trials < 1 or not M_list:
        raise DomainError("L, d, trials must be positive and M_list non-empty")
    for m in metrics:
        if m not in METRICS or m == "kernel_mse":
            raise DomainError(f"metric {m!r} is not produced by the attention sweep")
    need_output = "output_fro_rel" in metrics

    def run_trial(t):
        rng = np.random.default_rng(derive_seed(seed, t, "inputs"))
        Q = input_std * rng.standard_normal((L, d))
        K = input_std * rng.standard_normal((L, d))
        A = attention_matrix(Q, K)
        if need_output:
            V = rng.standard_normal((L, d))
            exact_out = exact_bidirectional(Q, K, V)
        row = {}
        for M in M_list:
            for kind in sampler_kinds:
                fm = make_softmax_map(d, M, kind, derive_seed(seed, t, M, kind))
                cfg = FavorConfig(fm, SOFTMAX_SCALERS, True, stabilizer)
                errs = attention_errors(approx_attention_matrix(Q, K, cfg), A)
                if need_output:
                    try:
                        out = favor_bidirectional(Q, K, V, cfg)
                        errs["output_fro_rel"] = float(
                            np.linalg.norm(out - exact_out) / np.linalg.norm(exact_out))
                    except DegenerateAttentionError:
                        errs["output_fro_rel"] = math.nan
                row[M, kind] = errs
        return row

    rows = _map_trials(run_trial, trials, threads)
    reports = []
    for M in M_list:
        for kind in sampler_kinds:
            for metric in metrics:
                vals = tuple(r[M, kind][metric] for r in rows)
                mean, std = _summarize(vals)
                reports.append(ErrorReport(
                    metric, kind, M, L, d, trials, mean, std, seed,
                    failures=sum(math.isnan(v) for v in vals), values=vals))
    return reports


def extract_attention_matrix(mechanism, Q, K):
    """Recover the attention matrix of a mechanism linear in ``V``.

    Runs ``mechanism(Q, K, I_L)``: with one-hot value rows, output column
    ``j`` is the weight each query puts on position ``j``.
    """
    L = np.asarray(Q).shape[0]
    return np.asarray(mechanism(Q, K, np.eye(L)))


def recommend_num_features(d, R, delta, sigma):
    """Feature count ``ceil((d / delta^2) * log(4 sigma R / (delta d^(1/4))))``.

    An order-of-magnitude advisory (constant factor taken as 1), not a
    guarantee.  ``sigma`` is ``E[w . w]`` of the sampling law, i.e. ``d``
    for standard Gaussian rows.  When the log factor falls below 1 it is
    clipped to 1, giving ``ceil(d / delta^2)``; a :class:`UserWarning` is
    emitted in that case.  Clipping keeps the result monotone in every
    argument.

    >>> recommend_num_features(16, 1.0, 0.5, 16)
    267
    """
    if d < 1 or not R > 0 or not delta > 0 or not sigma > 0:
        raise DomainError("need d >= 1 and positive R, delta, sigma")
    log_factor = math.log(4.0 * sigma * R / (delta * d ** 0.25))
    if log_factor < 1.0:
        warnings.warn("log factor below 1; returning ceil(d / delta^2)", UserWarning, stacklevel=2)
        log_factor = 1.0
    return math.ceil(d / delta ** 2 * log_factor)


def kernel_mse_study(kernel, fm_factory, point_pairs, trials=1000, sampler_kinds=("iid", "rorf"),
                     seed=0):
    """Empirical MSE of ``phi(x) . phi(y)`` against a closed-form ``kernel(x, y)``.

    ``fm_factory(sampler_kind, seed)`` must return a fresh feature map.  The
    feature seed for trial ``t`` depends on ``(seed, t, sampler)``; each map
    is shared by all point pairs of that trial.  One report per
    ``(pair, sampler)``; ``mean`` is the MSE, ``std`` the spread of the
    squared errors.
    """
    pairs = [(np.asarray(x, dtype=float), np.asarray(y, dtype=float)) for x, y in point_pairs]
    if not pairs or trials < 1:
        raise DomainError("need at least one point pair and one trial")
    X = np.stack([p[0] for p in pairs])
    Y = np.stack([p[1] for p in pairs])
    truth = np.array([kernel(x, y) for x, y in pairs])
    reports = []
    for kind in sampler_kinds:
        sq = np.empty((trials, len(pairs)))
        M = None
        for t in range(trials):
            fm = fm_factory(kind, derive_seed(seed, t, kind))
            M = fm.M
            est = np.einsum("ij,ij->i", embed(fm, X), embed(fm, Y))
            sq[t] = (est - truth) ** 2
        for i in range(len(pairs)):
            reports.append(ErrorReport(
                "kernel_mse", kind, M, 2, X.shape[1], trials, float(sq[:, i].mean()),
                float(sq[:, i].std()), seed, pair_index=i, values=tuple(sq[:, i])))
    return reports


def sign_test(a, b):
    """Paired sign test that ``a`` tends to be smaller than ``b``.

    Returns ``(fraction of a < b, one-sided p-value)``; ties are dropped.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    wins = int(np.sum(a < b))
    losses = int(np.sum(a > b))
    n = wins + losses
    if n == 0:
        return 0.0, 1.0
    p = stats.binomtest(wins, n, 0.5, alternative="greater").pvalue
    return wins / a.size, float(p)


def loglog_slope(xs, ys):
    """Least-squares slope of ``log y`` against ``log x``; ``nan`` for < 2 points."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 2:
        return math.nan
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


# -- serialization -----------------------------------------------------------


def _fmt(x):
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return "" if x is None else str(x)


def reports_to_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in reports:
        w.writerow([_fmt(v) for v in (r.metric_name, r.sampler_kind, r.m_features, r.L, r.d,
                                      r.trials, r.mean, r.std, r.seed)])
    return buf.getvalue()


def reports_to_json(reports):
    rows = []
    for r in reports:
        row = asdict(r)
        row.pop("values")
        rows.append({k: (None if isinstance(v, float) and math.isnan(v) else v)
                     for k, v in row.items()})
    return json.dumps(rows, indent=2, sort_keys=True) + "\n"
