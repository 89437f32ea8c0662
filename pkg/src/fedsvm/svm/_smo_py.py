"""Pure-numpy fallback for the dual pair-sweep kernel.

One call performs a full cyclic pass over all sample pairs (i, j), i < j,
jointly optimizing each pair of dual coefficients inside the box
[0, lam] while preserving sum(alpha * y). The arithmetic mirrors the
compiled kernel expression by expression so both backends round
identically; keep the two files in sync.
"""

def sweep(K, y, lam, alpha, f):
    """One cyclic pass; mutates ``alpha`` and ``f`` in place.

    K: M x M Gram matrix.
    y: labels in {-1, +1} as float64.
    alpha: dual coefficients, in [0, lam].
    f: K @ (alpha * y), maintained incrementally.
    Returns the number of pair updates applied.
    """
    m = alpha.shape[0]
    changed = 0
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
            f += ci * K[i]
            f += cj * K[j]
            alpha[i] = ai_new
            alpha[j] = aj_new
            changed += 1
    return changed
