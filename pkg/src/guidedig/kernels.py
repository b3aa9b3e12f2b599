"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names (``bump_value_grad``, ``bump_value_grad_batch``,
``gig_step``) dispatch on :data:`guidedig._backend.USE_NUMBA`. Both variants
are importable directly (``*_numba`` / ``*_numpy``) so they can be compared
against each other in tests and benchmarks.

The two paths perform the same arithmetic but may sum in a different order,
so results agree to rounding, not bit for bit.
"""
import math

import numpy as np

from ._backend import USE_NUMBA, njit

# gig_step status codes
GIG_OK = 0
GIG_EMPTY_SELECTION = -1
GIG_NO_PROGRESS = -2


# ---------------------------------------------------------------------------
# Gaussian bump mixture: F(x) = offset + sum_k a_k exp(-g_k |x - c_k|^2)
# ---------------------------------------------------------------------------

@njit
def bump_value_grad_numba(x, centers, amps, gammas, offset):
    n_bumps, n = centers.shape
    grad = np.zeros(n)
    value = offset
    for k in range(n_bumps):
        r2 = 0.0
        for i in range(n):
            d = x[i] - centers[k, i]
            r2 += d * d
        e = amps[k] * math.exp(-gammas[k] * r2)
        value += e
        s = -2.0 * gammas[k] * e
        for i in range(n):
            grad[i] += s * (x[i] - centers[k, i])
    return value, grad


@njit
def bump_value_grad_batch_numba(xs, centers, amps, gammas, offset):
    m = xs.shape[0]
    values = np.empty(m)
    grads = np.empty(xs.shape)
    for j in range(m):
        v, g = bump_value_grad_numba(xs[j], centers, amps, gammas, offset)
        values[j] = v
        grads[j, :] = g
    return values, grads


def bump_value_grad_numpy(x, centers, amps, gammas, offset):
    diff = x[None, :] - centers
    e = amps * np.exp(-gammas * np.einsum("kn,kn->k", diff, diff))
    return offset + e.sum(), (-2.0 * gammas * e) @ diff


def bump_value_grad_batch_numpy(xs, centers, amps, gammas, offset):
    diff = xs[:, None, :] - centers[None, :, :]
    e = amps * np.exp(-gammas * np.einsum("mkn,mkn->mk", diff, diff))
    grads = np.einsum("mk,mkn->mn", -2.0 * gammas * e, diff)
    return offset + e.sum(axis=1), grads


# ---------------------------------------------------------------------------
# One outer step of unbounded Guided IG (the repeat/until block).
#
# x, attr and incr are updated in place. grad is the gradient at x on entry
# and is reused by every inner iteration. Returns (status, inner_iterations,
# n_moved).
# ---------------------------------------------------------------------------

@njit
def gig_step_numba(x, target, grad, fraction, d_target, attr, incr):
    n = x.shape[0]
    y = grad.copy()
    moved = np.zeros(n, dtype=np.bool_)
    in_s = np.zeros(n, dtype=np.bool_)
    absbuf = np.empty(n)
    iters = 0
    while True:
        # finished features get the infinite sentinel
        m = 0
        d_current = 0.0
        for i in range(n):
            if x[i] == target[i]:
                y[i] = np.inf
            else:
                absbuf[m] = abs(y[i])
                m += 1
            d_current += abs(x[i] - target[i])
        if d_current <= d_target:
            break
        if m == 0:
            return GIG_EMPTY_SELECTION, iters, 0
        iters += 1
        if iters > n + 1:
            return GIG_NO_PROGRESS, iters, 0
        srt = np.sort(absbuf[:m])
        q = srt[int(math.floor(fraction * (m - 1)))]
        d_s = 0.0
        for i in range(n):
            in_s[i] = x[i] != target[i] and abs(y[i]) <= q
            if in_s[i]:
                d_s += abs(x[i] - target[i])
        if not d_s > 0.0:
            return GIG_NO_PROGRESS, iters, 0
        delta = (d_current - d_target) / d_s
        snap = delta > 1.0 or d_target == 0.0
        for i in range(n):
            if in_s[i]:
                old = x[i]
                if snap:
                    x[i] = target[i]
                else:
                    x[i] = (1.0 - delta) * x[i] + delta * target[i]
                if y[i] == np.inf:
                    y[i] = 0.0
                inc = (x[i] - old) * y[i]
                attr[i] += inc
                incr[i] += inc
                moved[i] = True
        if not snap:
            break
    n_moved = 0
    for i in range(n):
        if moved[i]:
            n_moved += 1
    return GIG_OK, iters, n_moved


def gig_step_numpy(x, target, grad, fraction, d_target, attr, incr):
    n = x.shape[0]
    y = grad.copy()
    moved = np.zeros(n, dtype=bool)
    iters = 0
    while True:
        unfinished = x != target
        y[~unfinished] = np.inf
        d_current = np.abs(x - target).sum()
        if d_current <= d_target:
            break
        m = int(unfinished.sum())
        if m == 0:
            return GIG_EMPTY_SELECTION, iters, 0
        iters += 1
        if iters > n + 1:
            return GIG_NO_PROGRESS, iters, 0
        absy = np.abs(y)
        k = int(math.floor(fraction * (m - 1)))
        q = np.partition(absy[unfinished], k)[k]
        in_s = unfinished & (absy <= q)
        d_s = np.abs(x[in_s] - target[in_s]).sum()
        if not d_s > 0.0:
            return GIG_NO_PROGRESS, iters, 0
        delta = (d_current - d_target) / d_s
        snap = delta > 1.0 or d_target == 0.0
        old = x[in_s]
        if snap:
            x[in_s] = target[in_s]
        else:
            x[in_s] = (1.0 - delta) * old + delta * target[in_s]
        y[np.isinf(y)] = 0.0
        inc = (x[in_s] - old) * y[in_s]
        attr[in_s] += inc
        incr[in_s] += inc
        moved |= in_s
        if not snap:
            break
    return GIG_OK, iters, int(moved.sum())


if USE_NUMBA:
    bump_value_grad = bump_value_grad_numba
    bump_value_grad_batch = bump_value_grad_batch_numba
    gig_step = gig_step_numba
else:
    bump_value_grad = bump_value_grad_numpy
    bump_value_grad_batch = bump_value_grad_batch_numpy
    gig_step = gig_step_numpy
