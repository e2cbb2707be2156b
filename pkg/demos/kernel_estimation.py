"""
Estimating the softmax kernel with random features
==================================================

A trig feature map turns exp(q.k / sqrt(d)) into a dot product of
M-dimensional vectors.  This script checks the estimate against the closed
form and compares iid and orthogonal projections.
"""

import math

import numpy as np

from favor import embed, make_softmax_map
from favor.analysis import kernel_mse_study, sign_test

d = 8
rng = np.random.default_rng(0)


def gauss(x, y):
    return math.exp(-np.sum((x - y) ** 2) / (2 * math.sqrt(d)))


# %%
# One pair of points, growing M.  The error shrinks roughly like 1/sqrt(M).
x = 0.3 * rng.standard_normal(d)
y = 0.3 * rng.standard_normal(d)
for M in (16, 256, 4096, 65536):
    fm = make_softmax_map(d, M, "iid", seed=1)
    est = float(np.sum(embed(fm, x[None]) * embed(fm, y[None])))
    print(f"M={M:6d}  estimate {est:.4f}  exact {gauss(x, y):.4f}")

# %%
# Orthogonal rows (one block of d) versus iid rows, paired by trial.
u = rng.standard_normal(d)
pair = (x, x + 2.0 * u / np.linalg.norm(u))
iid, orf = kernel_mse_study(gauss, lambda kind, s: make_softmax_map(d, d, kind, s), [pair],
                            trials=2000, seed=3)
frac, p = sign_test(orf.values, iid.values)
print(f"MSE iid {iid.mean:.4g}  R-ORF {orf.mean:.4g}  R-ORF smaller in {frac:.0%} (p={p:.2g})")
