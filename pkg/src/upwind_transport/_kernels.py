"""Compiled flux-form update kernels.

Face ``j`` along an axis is the low face of cell ``j``.  ``fwd``/``bwd`` hold
the jump probabilities towards the high/low cell across each face; no-flux
boundary faces carry zeros.

Results below the smallest normal double are flushed to zero: the far tails
of a diffusing profile otherwise decay into subnormals, whose arithmetic is
tens of times slower.  This changes any value by less than ``2.3e-308``.
"""

import numba as nb
import numpy as np

TINY = np.finfo(np.float64).tiny

# the TBB layer shipped on some systems is too old for numba and only warns
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@nb.njit(cache=True)
def step_1d(rho, fwd, bwd, periodic, out):
    n = rho.shape[0]
    for i in range(n):
        if periodic:
            jh = i + 1 if i < n - 1 else 0
            im = i - 1 if i > 0 else n - 1
            ip = jh
        else:
            jh = i + 1
            im = i - 1 if i > 0 else 0
            ip = i + 1 if i < n - 1 else n - 1
        g_high = fwd[jh] * rho[i] - bwd[jh] * rho[ip]
        g_low = fwd[i] * rho[im] - bwd[i] * rho[i]
        v = rho[i] - g_high + g_low
        out[i] = v if abs(v) >= TINY else 0.0
    return out


@nb.njit(parallel=True, cache=True)
def step_2d(rho, fwd0, bwd0, fwd1, bwd1, periodic, out):
    n0, n1 = rho.shape
    for i in nb.prange(n0):
        if periodic:
            ip = i + 1 if i < n0 - 1 else 0
            im = i - 1 if i > 0 else n0 - 1
            ih = ip
        else:
            ih = i + 1
            im = i - 1 if i > 0 else 0
            ip = i + 1 if i < n0 - 1 else n0 - 1
        for j in range(n1):
            if periodic:
                jp = j + 1 if j < n1 - 1 else 0
                jm = j - 1 if j > 0 else n1 - 1
                jh = jp
            else:
                jh = j + 1
                jm = j - 1 if j > 0 else 0
                jp = j + 1 if j < n1 - 1 else n1 - 1
            r = rho[i, j]
            g = fwd0[ih, j] * r - bwd0[ih, j] * rho[ip, j]
            g -= fwd0[i, j] * rho[im, j] - bwd0[i, j] * r
            g += fwd1[i, jh] * r - bwd1[i, jh] * rho[i, jp]
            g -= fwd1[i, j] * rho[i, jm] - bwd1[i, j] * r
            v = r - g
            out[i, j] = v if abs(v) >= TINY else 0.0
    return out


def flux_step(rho, forward, backward, periodic):
    out = np.empty_like(rho)
    if rho.ndim == 1:
        return step_1d(rho, forward[0], backward[0], periodic, out)
    return step_2d(rho, forward[0], backward[0], forward[1], backward[1], periodic, out)
