# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernel: chunked log-space Euler-Maruyama stepping.

The pure-Python twin (`_kernel_py`) implements the identical arithmetic in
the identical order; together with libm `exp` on both sides and FP
contraction disabled at compile time, the two backends produce bit-identical
trajectories.
"""

from libc.math cimport exp

import numpy as np


def step_chunk(double[::1] a0s, double[::1] lo, double[::1] aii, double[::1] hi,
               double[::1] sig_sqdt, unsigned char[::1] active,
               double[::1] y, double[::1] xwork, double[:, ::1] xi,
               double dt, double cap,
               long g0, long k_first, long thin,
               double[:, ::1] out, long out_pos, long[::1] floor_step):
    """Advance one trajectory over the steps covered by the noise block `xi`.

    State `y` holds log-densities of the active coordinates; inactive
    coordinates are pinned at density zero.  Global step index of the state
    after local step s is g0 + s + 1.  When thin > 0, the post-step state is
    written to `out` (as densities) at every global index k >= k_first with
    (k - k_first) % thin == 0.  A coordinate whose log-density falls below
    -cap goes extinct: it is deactivated and `floor_step[i]` records the
    global step.  A log-density above +cap (or non-finite) aborts the chunk.

    Returns (steps_done, n_recorded, exit_code); exit_code is 0, or 1-based
    species index of the first overflowing coordinate.
    """
    cdef long m = xi.shape[0]
    cdef long n = y.shape[0]
    cdef long s, i, k
    cdef long rec = 0
    cdef long code = 0
    cdef long done = 0
    cdef double f, yi

    with nogil:
        for s in range(m):
            for i in range(n):
                if active[i]:
                    xwork[i] = exp(y[i])
                else:
                    xwork[i] = 0.0
            for i in range(n):
                if active[i]:
                    f = a0s[i]
                    if i > 0:
                        f = f + lo[i] * xwork[i - 1]
                    f = f - aii[i] * xwork[i]
                    if i + 1 < n:
                        f = f - hi[i] * xwork[i + 1]
                    y[i] = y[i] + f * dt + sig_sqdt[i] * xi[s, i]
            k = g0 + s + 1
            for i in range(n):
                if active[i]:
                    yi = y[i]
                    if yi != yi or yi > cap:
                        code = i + 1
                        break
                    if yi < -cap:
                        active[i] = 0
                        floor_step[i] = k
            if code != 0:
                done = s + 1
                break
            if thin > 0 and k >= k_first and (k - k_first) % thin == 0:
                for i in range(n):
                    if active[i]:
                        out[out_pos + rec, i] = exp(y[i])
                    else:
                        out[out_pos + rec, i] = 0.0
                rec += 1
            done = s + 1

    return done, rec, code
