"""Pure-Python fallback for the stepping kernel.

Mirrors `_kernel.pyx` operation for operation: same coefficient access
pattern, same evaluation order, and libm exp via `math.exp`, so a trajectory
computed here is bit-identical to the compiled one (the extension is built
with FP contraction off).  Roughly two orders of magnitude slower; see
benchmarks/backend_bench.py.
"""

from math import exp


def step_chunk(a0s, lo, aii, hi, sig_sqdt, active, y, xwork, xi, dt, cap,
               g0, k_first, thin, out, out_pos, floor_step):
    """See the compiled twin for the contract."""
    m, n = xi.shape
    a0s_l = a0s.tolist()
    lo_l = lo.tolist()
    aii_l = aii.tolist()
    hi_l = hi.tolist()
    sdt_l = sig_sqdt.tolist()
    act = active.tolist()
    y_l = y.tolist()
    xi_rows = xi.tolist()
    x_l = [0.0] * n

    rec = 0
    code = 0
    done = 0
    for s in range(m):
        row = xi_rows[s]
        for i in range(n):
            x_l[i] = exp(y_l[i]) if act[i] else 0.0
        for i in range(n):
            if act[i]:
                f = a0s_l[i]
                if i > 0:
                    f = f + lo_l[i] * x_l[i - 1]
                f = f - aii_l[i] * x_l[i]
                if i + 1 < n:
                    f = f - hi_l[i] * x_l[i + 1]
                y_l[i] = y_l[i] + f * dt + sdt_l[i] * row[i]
        k = g0 + s + 1
        for i in range(n):
            if act[i]:
                yi = y_l[i]
                if yi != yi or yi > cap:
                    code = i + 1
                    break
                if yi < -cap:
                    act[i] = 0
                    floor_step[i] = k
        if code != 0:
            done = s + 1
            break
        if thin > 0 and k >= k_first and (k - k_first) % thin == 0:
            out[out_pos + rec] = [exp(y_l[i]) if act[i] else 0.0 for i in range(n)]
            rec += 1
        done = s + 1

    y[:] = y_l
    active[:] = act
    return done, rec, code
