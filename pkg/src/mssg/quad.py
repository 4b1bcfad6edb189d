"""Adaptive Simpson quadrature for scalar integrands."""

import math


def adaptive_simpson(f, a, b, tol=1e-10, max_depth=60):
    if a == b:
        return 0.0
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) * (fa + 4 * fm + fb) / 6
    return _recurse(f, a, b, fa, fm, fb, whole, tol, max_depth)


def _recurse(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) * (fa + 4 * flm + fm) / 6
    right = (b - m) * (fm + 4 * frm + fb) / 6
    delta = left + right - whole
    if depth <= 0 or abs(delta) <= 15 * tol or not math.isfinite(delta):
        return left + right + delta / 15
    return _recurse(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) + _recurse(
        f, m, b, fm, frm, fb, right, tol / 2, depth - 1
    )
