# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dual pair-sweep kernel.

Must stay expression-for-expression in sync with ``_smo_py.py``: the two
backends are expected to produce bitwise-identical trajectories, which
also requires building with floating-point contraction disabled (see
setup.py).
"""


def sweep(double[:, ::1] K, double[::1] y, double lam,
          double[::1] alpha, double[::1] f):
    """One cyclic pass over all pairs; mutates alpha and f in place."""
    cdef Py_ssize_t m = alpha.shape[0]
    cdef Py_ssize_t i, j, k
    cdef int changed = 0
    cdef double eta, ai, aj, lo, hi, gi, gj, aj_new, ai_new, ci, cj

    for i in range(m - 1):
        for j in range(i + 1, m):
            eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if eta <= 1e-12:
                continue
            ai = alpha[i]
            aj = alpha[j]
            if y[i] * y[j] < 0.0:
                lo = max(0.0, aj - ai)
                hi = min(lam, lam + aj - ai)
            else:
                lo = max(0.0, ai + aj - lam)
                hi = min(lam, ai + aj)
            if lo >= hi:
                continue
            gi = f[i] - y[i]
            gj = f[j] - y[j]
            aj_new = aj + y[j] * (gi - gj) / eta
            if aj_new > hi:
                aj_new = hi
            elif aj_new < lo:
                aj_new = lo
            if aj_new == aj:
                continue
            ai_new = ai + y[i] * y[j] * (aj - aj_new)
            if ai_new < 0.0:
                ai_new = 0.0
            elif ai_new > lam:
                ai_new = lam
            ci = (ai_new - ai) * y[i]
            cj = (aj_new - aj) * y[j]
            for k in range(m):
                f[k] = f[k] + ci * K[i, k]
            for k in range(m):
                f[k] = f[k] + cj * K[j, k]
            alpha[i] = ai_new
            alpha[j] = aj_new
            changed += 1
    return changed
