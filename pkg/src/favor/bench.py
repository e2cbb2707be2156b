"""Benchmark harness and command-line front end.

Subcommands (``favor-bench <cmd> --help`` for flags):

``error-sweep``   attention-matrix error versus feature count and sampler
``time-sweep``    forward wall time of exact attention and FAVOR versus L
``kernel-sweep``  output error of every generalized kernel, renormalized or not
``extract``       dump an attention matrix recovered with one-hot values

Reports go to ``--out`` (stdout by default) as CSV or JSON.  Everything is
deterministic given ``--seed`` except the timing fields.  Setting
``FAVOR_DETERMINISTIC=1`` forces single-threaded execution.
"""

import argparse
import csv
import io
import json
import math
import statistics
import sys
import time
import tracemalloc
from dataclasses import asdict, dataclass
from functools import partial

import numpy as np

from favor import analysis
from favor._seeding import derive_seed
from favor.attention import (
    favor_bidirectional,
    favor_unidirectional,
    generalized_config,
    softmax_config,
)
from favor.errors import DegenerateAttentionError, DomainError
from favor.exact import exact_bidirectional, exact_unidirectional
from favor.featuremap import KERNEL_NAMES
from favor.matfile import load_matrix, matrix_to_bytes

DIRECTIONS = ("bidirectional", "unidirectional")
TIME_HEADER = ("mode", "direction", "L", "d", "M", "sampler", "kernel", "wall_time_ns",
               "peak_aux_bytes", "seed", "status", "slope")
KERNEL_HEADER = ("kernel", "renormalize", "M", "L", "d", "trials", "mean", "std", "failures",
                 "seed")


@dataclass
class BenchRecord:
    mode: str
    directionality: str
    L: int
    d: int
    M: int
    sampler_kind: str
    kernel: str
    wall_time_ns: int
    peak_aux_bytes: int
    seed: int
    status: str = "ok"
    slope: float = math.nan


@dataclass
class KernelRecord:
    kernel: str
    renormalize: bool
    M: int
    L: int
    d: int
    trials: int
    mean: float
    std: float
    failures: int
    seed: int


def _mechanism(mode, direction, cfg=None):
    causal = direction == "unidirectional"
    if mode == "exact":
        return exact_unidirectional if causal else exact_bidirectional
    if mode == "favor":
        fn = favor_unidirectional if causal else favor_bidirectional
        return partial(fn, cfg=cfg)
    raise DomainError(f"unknown mode {mode!r}")


def _favor_cfg(d, M, kernel, sampler_kind, seed, epsilon=None, renormalize=True, stabilizer=None):
    if kernel == "softmax":
        return softmax_config(d, M, sampler_kind, seed, renormalize=renormalize,
                              stabilizer=1e-6 if stabilizer is None else stabilizer)
    if epsilon is None:
        epsilon = 0.0 if kernel == "cosine" else 1e-3
    if stabilizer is None:
        stabilizer = 1e-6 if kernel == "cosine" else 0.0
    return generalized_config(d, M, kernel, sampler_kind, seed, epsilon=epsilon,
                              renormalize=renormalize, stabilizer=stabilizer)


def measure_peak_bytes(fn, *args):
    """Peak traced allocation (bytes) while running ``fn(*args)``."""
    tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        fn(*args)
        return tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()


def median_time_ns(fn, args, repeats=5, warmup=1):
    for _ in range(warmup):
        fn(*args)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn(*args)
        samples.append(max(1, time.perf_counter_ns() - t0))
    return int(statistics.median(samples))


def exact_bytes_needed(L):
    # logits matrix plus the causal mask / reduction temporaries
    return 2 * 8 * L * L


def time_sweep(L_list, d=16, M=64, modes=("exact", "favor"), direction="bidirectional",
               sampler_kind="iid", kernel="relu", repeats=5, warmup=1, seed=0,
               max_exact_bytes=2 ** 31, measure_memory=True):
    """Median-of-``repeats`` forward wall time for each ``(mode, L)``.

    Exact runs whose estimated footprint exceeds ``max_exact_bytes`` are
    emitted with ``status="skipped"``.  Each record carries the log-log
    slope fitted over all measured lengths of its mode (``nan`` when fewer
    than two).
    """
    if direction not in DIRECTIONS:
        raise DomainError(f"direction must be one of {DIRECTIONS}")
    records = []
    for mode in modes:
        cfg = _favor_cfg(d, M, kernel, sampler_kind, seed) if mode == "favor" else None
        fn = _mechanism(mode, direction, cfg)
        for L in L_list:
            rec = BenchRecord(mode, direction, L, d, M if mode == "favor" else 0,
                              sampler_kind if mode == "favor" else "",
                              kernel if mode == "favor" else "", 0, 0, seed)
            if mode == "exact" and exact_bytes_needed(L) > max_exact_bytes:
                rec.status = "skipped"
                records.append(rec)
                continue
            rng = np.random.default_rng(derive_seed(seed, L, "time"))
            args = tuple(rng.standard_normal((L, d)) for _ in range(3))
            rec.wall_time_ns = median_time_ns(fn, args, repeats, warmup)
            if measure_memory:
                rec.peak_aux_bytes = measure_peak_bytes(fn, *args)
            records.append(rec)
        ok = [r for r in records if r.mode == mode and r.status == "ok"]
        slope = analysis.loglog_slope([r.L for r in ok], [r.wall_time_ns for r in ok])
        for r in ok:
            r.slope = slope
    return records


def kernel_sweep(L=64, d=16, M_list=(256,), kernels=KERNEL_NAMES, renormalize=(True, False),
                 trials=5, seed=0, epsilon=None, stabilizer=None, sampler_kind="iid",
                 input_std=None, Q=None, K=None, V=None):
    """Output error of generalized FAVOR against exact softmax attention.

    One record per ``(kernel, renormalize, M)``.  Inputs are drawn per trial
    with entry scale ``input_std`` (default ``d**-0.25``) unless fixture
    matrices ``Q, K, V`` are given, in which case only the features change
    between trials.  Trials that raise :class:`DegenerateAttentionError` are
    counted in ``failures`` and left out of ``mean``/``std``.
    """
    fixed = Q is not None
    if fixed:
        Q, K, V = (np.asarray(a, dtype=float) for a in (Q, K, V))
        L, d = Q.shape
    scale = d ** -0.25 if input_std is None else input_std
    inputs = []
    for t in range(trials):
        if fixed:
            q, k, v = Q, K, V
        else:
            rng = np.random.default_rng(derive_seed(seed, t, "kernel-inputs"))
            q, k, v = (scale * rng.standard_normal((L, d)) for _ in range(3))
        inputs.append((q, k, v, exact_bidirectional(q, k, v)))
    records = []
    for kernel in kernels:
        for renorm in renormalize:
            for M in M_list:
                errs = []
                for t, (q, k, v, ref) in enumerate(inputs):
                    cfg = _favor_cfg(d, M, kernel, sampler_kind, derive_seed(seed, t, M, kernel),
                                     epsilon, renorm, stabilizer)
                    try:
                        out = favor_bidirectional(q, k, v, cfg)
                        errs.append(float(np.linalg.norm(out - ref) / np.linalg.norm(ref)))
                    except DegenerateAttentionError:
                        errs.append(math.nan)
                ok = [e for e in errs if not math.isnan(e)]
                mean = float(np.mean(ok)) if ok else math.nan
                std = float(np.std(ok)) if ok else math.nan
                records.append(KernelRecord(kernel, renorm, M, L, d, trials, mean, std,
                                            len(errs) - len(ok), seed))
    return records


def extract(mode="exact", direction="bidirectional", L=32, d=16, M=64, kernel="relu",
            sampler_kind="iid", seed=0, input_std=None, Q=None, K=None, epsilon=None,
            stabilizer=None):
    """Attention matrix of ``mode`` recovered via one-hot values (``L x L``)."""
    if Q is None:
        rng = np.random.default_rng(derive_seed(seed, "extract-inputs"))
        scale = d ** -0.25 if input_std is None else input_std
        Q = scale * rng.standard_normal((L, d))
        K = scale * rng.standard_normal((L, d))
    Q = np.asarray(Q, dtype=float)
    K = np.asarray(K, dtype=float)
    d = Q.shape[1]
    cfg = _favor_cfg(d, M, kernel, sampler_kind, seed, epsilon, True, stabilizer) if mode == "favor" else None
    return analysis.extract_attention_matrix(_mechanism(mode, direction, cfg), Q, K)


# -- output ------------------------------------------------------------------


def _cell(v):
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def records_to_csv(records, header, fields=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    fields = fields or header
    for r in records:
        row = asdict(r)
        w.writerow([_cell(row[f]) for f in fields])
    return buf.getvalue()


def _json_rows(records):
    rows = []
    for r in records:
        row = asdict(r)
        rows.append({k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()})
    return json.dumps(rows, indent=2, sort_keys=True) + "\n"


def time_records_to_csv(records):
    fields = ("mode", "directionality", "L", "d", "M", "sampler_kind", "kernel", "wall_time_ns",
              "peak_aux_bytes", "seed", "status", "slope")
    out = []
    for r in records:
        row = asdict(r)
        if r.status != "ok":
            row["wall_time_ns"] = row["peak_aux_bytes"] = ""
        out.append(row)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIME_HEADER)
    for row in out:
        w.writerow([_cell(row[f]) for f in fields])
    return buf.getvalue()


def _emit(text_or_bytes, out):
    if out in (None, "-"):
        if isinstance(text_or_bytes, bytes):
            sys.stdout.buffer.write(text_or_bytes)
            sys.stdout.buffer.flush()
        else:
            sys.stdout.write(text_or_bytes)
        return
    mode = "wb" if isinstance(text_or_bytes, bytes) else "w"
    with open(out, mode, **({} if mode == "wb" else {"newline": ""})) as fh:
        fh.write(text_or_bytes)


# -- CLI ---------------------------------------------------------------------


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("expected a non-empty list of positive integers")
    return vals


def _name_list(choices):
    def parse(text):
        vals = [v.strip() for v in text.split(",") if v.strip()]
        bad = [v for v in vals if v not in choices]
        if not vals or bad:
            raise argparse.ArgumentTypeError(f"choose from {','.join(choices)}; got {text!r}")
        return vals
    return parse


def _common(p, M_default="64"):
    p.add_argument("--L", type=_int_list, default=None, help="sequence length(s)")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--M", type=_int_list, default=_int_list(M_default), help="feature counts, comma list")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-", help="output path ('-' for stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--threads", type=int, default=1)


def build_parser():
    parser = argparse.ArgumentParser(prog="favor-bench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("error-sweep", help="attention-matrix error vs M")
    _common(p, "16,64,256")
    p.add_argument("--samplers", type=_name_list(("iid", "rorf", "horf", "gorf")), default=["iid", "rorf"])
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--metrics", type=_name_list(analysis.METRICS[:4]), default=["attn_matrix_fro_rel"])
    p.add_argument("--input-std", type=float, default=1.0)
    p.add_argument("--stabilizer", type=float, default=1e-6)

    p = sub.add_parser("time-sweep", help="wall time vs L")
    _common(p)
    p.add_argument("--modes", type=_name_list(("exact", "favor")), default=["exact", "favor"])
    p.add_argument("--direction", choices=DIRECTIONS, default="bidirectional")
    p.add_argument("--samplers", type=_name_list(("iid", "rorf", "horf", "gorf")), default=["iid"])
    p.add_argument("--kernel", default="relu", choices=("softmax",) + KERNEL_NAMES)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--max-exact-bytes", type=int, default=2 ** 31)
    p.add_argument("--no-memory", action="store_true", help="skip the traced peak-memory run")

    p = sub.add_parser("kernel-sweep", help="output error of each generalized kernel")
    _common(p, "256")
    p.add_argument("--kernel", type=_name_list(KERNEL_NAMES), default=list(KERNEL_NAMES))
    p.add_argument("--renormalize", choices=("on", "off", "both"), default="both")
    p.add_argument("--samplers", type=_name_list(("iid", "rorf", "horf", "gorf")), default=["iid"])
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--stabilizer", type=float, default=None)
    p.add_argument("--input-std", type=float, default=None)
    for name in ("q", "k", "v"):
        p.add_argument(f"--{name}", default=None, help=f"FAVMAT01 fixture for {name.upper()}")

    p = sub.add_parser("extract", help="attention matrix via one-hot values")
    p.add_argument("--L", type=int, default=32)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--M", type=int, default=64)
    p.add_argument("--mode", choices=("exact", "favor"), default="exact")
    p.add_argument("--direction", choices=DIRECTIONS, default="bidirectional")
    p.add_argument("--kernel", default="relu", choices=("softmax",) + KERNEL_NAMES)
    p.add_argument("--samplers", type=_name_list(("iid", "rorf", "horf", "gorf")), default=["iid"])
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--stabilizer", type=float, default=None)
    p.add_argument("--input-std", type=float, default=None)
    p.add_argument("--q", default=None)
    p.add_argument("--k", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.add_argument("--format", choices=("favmat", "csv", "json"), default="favmat")
    return parser


def _cmd_error_sweep(a):
    L = a.L[0] if a.L else 128
    reports = analysis.attn_error_sweep(L, a.d, a.M, a.samplers, a.trials, a.seed, a.metrics,
                                        a.input_std, a.stabilizer, a.threads)
    text = analysis.reports_to_json(reports) if a.format == "json" else analysis.reports_to_csv(reports)
    _emit(text, a.out)


def _cmd_time_sweep(a):
    Ls = a.L or [512, 1024, 2048, 4096, 8192]
    records = []
    for M in a.M:
        for sampler_kind in a.samplers:
            modes = [m for m in a.modes if m == "favor" or (M == a.M[0] and sampler_kind == a.samplers[0])]
            records += time_sweep(Ls, a.d, M, modes, a.direction, sampler_kind, a.kernel, a.repeats,
                                  a.warmup, a.seed, a.max_exact_bytes, not a.no_memory)
    _emit(_json_rows(records) if a.format == "json" else time_records_to_csv(records), a.out)


def _cmd_kernel_sweep(a):
    fixtures = [a.q, a.k, a.v]
    if any(fixtures) and not all(fixtures):
        raise DomainError("--q, --k and --v must be given together")
    mats = [load_matrix(p) for p in fixtures] if all(fixtures) else [None] * 3
    renorm = {"on": (True,), "off": (False,), "both": (True, False)}[a.renormalize]
    L = a.L[0] if a.L else 64
    records = kernel_sweep(L, a.d, a.M, a.kernel, renorm, a.trials, a.seed, a.epsilon,
                           a.stabilizer, a.samplers[0], a.input_std, *mats)
    text = _json_rows(records) if a.format == "json" else records_to_csv(records, KERNEL_HEADER)
    _emit(text, a.out)


def _cmd_extract(a):
    Q = load_matrix(a.q) if a.q else None
    K = load_matrix(a.k) if a.k else None
    if (Q is None) != (K is None):
        raise DomainError("--q and --k must be given together")
    A = extract(a.mode, a.direction, a.L, a.d, a.M, a.kernel, a.samplers[0], a.seed,
                a.input_std, Q, K, a.epsilon, a.stabilizer)
    if a.format == "favmat":
        _emit(matrix_to_bytes(A), a.out)
    elif a.format == "json":
        _emit(json.dumps(A.tolist()) + "\n", a.out)
    else:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows([[repr(float(x)) for x in row] for row in A])
        _emit(buf.getvalue(), a.out)


_COMMANDS = {
    "error-sweep": _cmd_error_sweep,
    "time-sweep": _cmd_time_sweep,
    "kernel-sweep": _cmd_kernel_sweep,
    "extract": _cmd_extract,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        _COMMANDS[args.command](args)
    except (DomainError, DegenerateAttentionError, OSError) as exc:
        print(f"favor-bench: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
