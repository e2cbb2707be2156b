"""
Wall time versus sequence length
================================

Exact attention builds an L x L matrix; FAVOR never does.  Fit log-log
slopes of median forward time over a range of L.
"""

from favor.bench import time_sweep

records = time_sweep([512, 1024, 2048, 4096], d=16, M=64, repeats=3)
for r in records:
    print(f"{r.mode:5s}  L={r.L:5d}  {r.wall_time_ns / 1e6:8.2f} ms  peak {r.peak_aux_bytes / 2 ** 20:7.1f} MiB")
for mode in ("exact", "favor"):
    print(f"{mode} slope {next(r.slope for r in records if r.mode == mode):.2f}")
