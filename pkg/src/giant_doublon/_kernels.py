"""Compiled sparse kernels for the two-excitation propagators.

The operator is split into a real part (hopping, on a large pattern) and a
complex part (emitter couplings, a few entries per row at most), each in CSR.
"""
from __future__ import annotations

import numba as nb


@nb.njit(cache=True)
def scale_data(base, comp, coefs, out):
    for j in range(base.size):
        out[j] = base[j] * coefs[comp[j]]


@nb.njit(cache=True, inline="always")
def _row(i, hp, hi, hd, cp, ci, cd, diag, x):
    s = diag[i] * x[i]
    for j in range(hp[i], hp[i + 1]):
        s += hd[j] * x[hi[j]]
    for j in range(cp[i], cp[i + 1]):
        s += cd[j] * x[ci[j]]
    return s


@nb.njit(cache=True)
def matvec(hp, hi, hd, cp, ci, cd, diag, x, out):
    for i in range(diag.size):
        out[i] = _row(i, hp, hi, hd, cp, ci, cd, diag, x)


@nb.njit(cache=True)
def cheb_first(hp, hi, hd, cp, ci, cd, diag, x, t1, acc, alpha, beta, c0, c1):
    # t1 = alpha*H x + beta*x ; acc = c0*x + c1*t1
    for i in range(diag.size):
        y = alpha * _row(i, hp, hi, hd, cp, ci, cd, diag, x) + beta * x[i]
        t1[i] = y
        acc[i] = c0 * x[i] + c1 * y


@nb.njit(cache=True)
def cheb_next(hp, hi, hd, cp, ci, cd, diag, cur, prev, acc, alpha, beta, ck):
    # prev <- 2 (alpha*H cur + beta*cur) - prev ; acc += ck*prev
    for i in range(diag.size):
        y = 2.0 * (alpha * _row(i, hp, hi, hd, cp, ci, cd, diag, cur) + beta * cur[i]) - prev[i]
        prev[i] = y
        acc[i] += ck * y

