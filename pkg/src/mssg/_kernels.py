"""Compiled inner loops.

Everything here works on plain arrays so it can be handed to numba.  Setting
``MSSG_DISABLE_NUMBA=1`` before import swaps ``njit`` for a no-op decorator and
runs the exact same code as ordinary Python/numpy, which is what the benchmark
compares against.

Status codes returned by the integrators are translated into exceptions by the
calling modules.
"""

import os

import numpy as np

JIT_ENABLED = os.environ.get("MSSG_DISABLE_NUMBA", "0") not in ("1", "true", "yes")

if JIT_ENABLED:
    try:
        from numba import njit as _numba_njit
    except ImportError:  # pragma: no cover
        JIT_ENABLED = False

if JIT_ENABLED:

    def njit(fn):
        return _numba_njit(cache=True)(fn)

else:

    def njit(fn):
        return fn


OK = 0
BRACKET_FAILURE = 1
STEP_COLLAPSE = 2
SINGULAR_SYSTEM = 3
POWER_NO_CONVERGE = 4
MAX_STEPS = 5


# ---------------------------------------------------------------------------
# polynomial calculus


@njit
def _ff(a, m):
    # falling factorial a (a-1) ... (a-m+1)
    out = 1.0
    for i in range(m):
        out *= a - i
    return out


@njit
def _mono(alpha, mult, x):
    out = 1.0
    for s in range(x.shape[0]):
        if mult[s] > alpha[s]:
            return 0.0
        out *= _ff(alpha[s], mult[s]) * x[s] ** (alpha[s] - mult[s])
    return out


@njit
def poly_eval(exps, coeffs, x):
    val = 0.0
    for t in range(exps.shape[0]):
        v = coeffs[t]
        for s in range(exps.shape[1]):
            v *= x[s] ** exps[t, s]
        val += v
    return val


@njit
def poly_derivs(exps, coeffs, x):
    """Value, gradient, Hessian and third derivative tensor of the polynomial."""
    T, r = exps.shape
    val = 0.0
    g = np.zeros(r)
    H = np.zeros((r, r))
    D3 = np.zeros((r, r, r))
    mult = np.zeros(r, dtype=np.int64)
    for t in range(T):
        c = coeffs[t]
        alpha = exps[t]
        val += c * _mono(alpha, mult, x)
        for i in range(r):
            mult[i] += 1
            g[i] += c * _mono(alpha, mult, x)
            for j in range(i, r):
                mult[j] += 1
                H[i, j] += c * _mono(alpha, mult, x)
                for k in range(j, r):
                    mult[k] += 1
                    D3[i, j, k] += c * _mono(alpha, mult, x)
                    mult[k] -= 1
                mult[j] -= 1
            mult[i] -= 1
    for i in range(r):
        for j in range(i, r):
            H[j, i] = H[i, j]
            for k in range(j, r):
                v = D3[i, j, k]
                D3[i, k, j] = v
                D3[j, i, k] = v
                D3[j, k, i] = v
                D3[k, i, j] = v
                D3[k, j, i] = v
    return val, g, H, D3


@njit
def poly_grad_hess(exps, coeffs, x):
    T, r = exps.shape
    g = np.zeros(r)
    H = np.zeros((r, r))
    mult = np.zeros(r, dtype=np.int64)
    for t in range(T):
        c = coeffs[t]
        alpha = exps[t]
        for i in range(r):
            mult[i] += 1
            g[i] += c * _mono(alpha, mult, x)
            for j in range(i, r):
                mult[j] += 1
                H[i, j] += c * _mono(alpha, mult, x)
                mult[j] -= 1
            mult[i] -= 1
    for i in range(r):
        for j in range(i + 1, r):
            H[j, i] = H[i, j]
    return g, H


# ---------------------------------------------------------------------------
# small dense linear algebra


@njit
def jacobi_eigh(A, tol, max_sweeps):
    """Cyclic Jacobi eigen-decomposition of a small symmetric matrix.

    Returns eigenvalues in ascending order and the matching eigenvectors as
    columns.
    """
    n = A.shape[0]
    a = A.copy()
    V = np.eye(n)
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale += a[i, j] * a[i, j]
    scale = np.sqrt(scale)
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += a[i, j] * a[i, j]
        if np.sqrt(off) <= tol * max(scale, 1e-300):
            break
        for p in range(n):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + np.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - s * vkq
                    V[k, q] = s * vkp + c * vkq
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    order = np.argsort(w)
    return w[order], V[:, order]


@njit
def perron_power(M, v0, tol, maxit):
    """Power iteration on M + I for a nonnegative matrix M.

    The identity shift makes the iteration primitive, so periodic matrices
    (zero diagonal, bipartite couplings) still converge.  Returns the Perron
    eigenvalue, a nonnegative eigenvector with unit 1-norm, and a flag.
    """
    n = M.shape[0]
    v = np.empty(n)
    tot = 0.0
    for i in range(n):
        v[i] = abs(v0[i]) + 1e-300
        tot += v[i]
    for i in range(n):
        v[i] /= tot
    lam = 0.0
    w = np.empty(n)
    for _ in range(maxit):
        tot = 0.0
        for i in range(n):
            acc = v[i]
            for j in range(n):
                acc += M[i, j] * v[j]
            w[i] = acc
            tot += acc
        diff = 0.0
        for i in range(n):
            w[i] /= tot
            diff = max(diff, abs(w[i] - v[i]))
            v[i] = w[i]
        lam = tot - 1.0
        if diff <= tol:
            return lam, v, True
    return lam, v, False


@njit
def solve_pivot(A, b):
    """Gaussian elimination with partial pivoting; flag False if singular."""
    n = A.shape[0]
    a = A.copy()
    x = b.copy()
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale = max(scale, abs(a[i, j]))
    for k in range(n):
        piv = k
        best = abs(a[k, k])
        for i in range(k + 1, n):
            if abs(a[i, k]) > best:
                best = abs(a[i, k])
                piv = i
        if best <= 1e-14 * max(scale, 1e-300):
            return x, False
        if piv != k:
            for j in range(n):
                tmp = a[k, j]
                a[k, j] = a[piv, j]
                a[piv, j] = tmp
            tmp = x[k]
            x[k] = x[piv]
            x[piv] = tmp
        for i in range(k + 1, n):
            f = a[i, k] / a[k, k]
            if f != 0.0:
                for j in range(k, n):
                    a[i, j] -= f * a[k, j]
                x[i] -= f * x[k]
    for k in range(n - 1, -1, -1):
        acc = x[k]
        for j in range(k + 1, n):
            acc -= a[k, j] * x[j]
        x[k] = acc / a[k, k]
    return x, True


# ---------------------------------------------------------------------------
# root-finding (type I) dynamics


@njit
def type1_rhs(exps, coeffs, lam, p, phi, L, v_guess):
    """Return (p', Phi', status) for the root-finding ODE at state (p, Phi)."""
    r = lam.shape[0]
    pc = max(p, 0.0)
    g, H = poly_grad_hess(exps, coeffs, phi)
    A = np.empty((r, r))
    c = np.empty(r)
    for s in range(r):
        c[s] = g[s] / lam[s] / L[s]
        for t in range(r):
            A[s, t] = pc * H[s, t] / lam[s] / L[s]
    M = A.copy()
    tol = 1e-14
    lam0, v, ok = perron_power(M, v_guess, tol, 200000)
    if lam0 > 1.0 + 1e-9:
        return 0.0, v, BRACKET_FAILURE
    if lam0 >= 1.0:
        pp = 0.0
    else:
        lo = 0.0
        hi = 1.0
        for _ in range(200):
            for s in range(r):
                for t in range(r):
                    M[s, t] = A[s, t] + hi * c[s] * lam[t]
            lh, v, ok = perron_power(M, v, tol, 200000)
            if lh >= 1.0:
                break
            lo = hi
            hi *= 2.0
        for _ in range(200):
            if hi - lo <= 1e-13 * max(1.0, hi):
                break
            mid = 0.5 * (lo + hi)
            for s in range(r):
                for t in range(r):
                    M[s, t] = A[s, t] + mid * c[s] * lam[t]
            lm, v, ok = perron_power(M, v, tol, 200000)
            if lm >= 1.0:
                hi = mid
            else:
                lo = mid
        pp = 0.5 * (lo + hi)
    for s in range(r):
        for t in range(r):
            M[s, t] = A[s, t] + pp * c[s] * lam[t]
    _, v, ok = perron_power(M, v, tol, 200000)
    if not ok:
        return pp, v, POWER_NO_CONVERGE
    nrm = 0.0
    for s in range(r):
        nrm += lam[s] * v[s]
    dphi = v / nrm
    return pp, dphi, OK


@njit
def _type1_step(exps, coeffs, lam, L, p, phi, hs, k1p, k1v):
    # one backward RK4 step of size hs starting from (p, phi) with slope k1
    p2 = p - 0.5 * hs * k1p
    f2 = phi - 0.5 * hs * k1v
    k2p, k2v, st2 = type1_rhs(exps, coeffs, lam, p2, f2, L, k1v)
    p3 = p - 0.5 * hs * k2p
    f3 = phi - 0.5 * hs * k2v
    k3p, k3v, st3 = type1_rhs(exps, coeffs, lam, p3, f3, L, k2v)
    p4 = p - hs * k3p
    f4 = phi - hs * k3v
    k4p, k4v, st4 = type1_rhs(exps, coeffs, lam, p4, f4, L, k3v)
    st = max(st2, max(st3, st4))
    pn = p - hs * (k1p + 2.0 * k2p + 2.0 * k3p + k4p) / 6.0
    fn = phi - hs * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0
    return pn, fn, st


@njit
def integrate_type1(exps, coeffs, lam, h2, x_end, dq, tol_p, max_steps):
    """Integrate the root-finding ODE backward from the endpoint until p = 0.

    Returns arrays ordered by decreasing q: q, p, p', Phi, Phi', and status.
    """
    r = lam.shape[0]
    L = np.empty(r)
    g, _ = poly_grad_hess(exps, coeffs, x_end)
    for s in range(r):
        L[s] = (g[s] / lam[s] + h2[s]) / x_end[s]
    qs = np.empty(max_steps + 2)
    ps = np.empty(max_steps + 2)
    dps = np.empty(max_steps + 2)
    phis = np.empty((max_steps + 2, r))
    dphis = np.empty((max_steps + 2, r))
    q = 0.0
    for s in range(r):
        q += lam[s] * x_end[s]
    p = 1.0
    phi = x_end.copy()
    kp, kv, st = type1_rhs(exps, coeffs, lam, p, phi, L, np.ones(r))
    if st != OK:
        return qs[:0], ps[:0], dps[:0], phis[:0], dphis[:0], L, st
    n = 0
    qs[0] = q
    ps[0] = p
    dps[0] = kp
    phis[0] = phi
    dphis[0] = kv
    while True:
        if n >= max_steps:
            return qs[: n + 1], ps[: n + 1], dps[: n + 1], phis[: n + 1], dphis[: n + 1], L, MAX_STEPS
        hs = min(dq, q)
        pn, fn, st = _type1_step(exps, coeffs, lam, L, p, phi, hs, kp, kv)
        if st != OK:
            return qs[: n + 1], ps[: n + 1], dps[: n + 1], phis[: n + 1], dphis[: n + 1], L, st
        last = False
        if pn <= tol_p:
            # bisect the step length so that p lands on zero
            lo = 0.0
            hi = hs
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                pm, fm, st = _type1_step(exps, coeffs, lam, L, p, phi, mid, kp, kv)
                if abs(pm) <= tol_p:
                    hs = mid
                    pn = pm
                    fn = fm
                    break
                if pm > 0:
                    lo = mid
                else:
                    hi = mid
                hs = mid
                pn = pm
                fn = fm
            last = True
        qn = q - hs
        # admissibility re-projection
        defect = qn
        for s in range(r):
            defect -= lam[s] * fn[s]
        for s in range(r):
            fn[s] += defect
            if fn[s] < 0.0:
                if h2[s] > 0.0:
                    return qs[: n + 1], ps[: n + 1], dps[: n + 1], phis[: n + 1], dphis[: n + 1], L, STEP_COLLAPSE
        kp, kv, st = type1_rhs(exps, coeffs, lam, pn, fn, L, kv)
        if st != OK:
            return qs[: n + 1], ps[: n + 1], dps[: n + 1], phis[: n + 1], dphis[: n + 1], L, st
        n += 1
        q = qn
        p = pn
        phi = fn
        qs[n] = q
        ps[n] = p
        dps[n] = kp
        phis[n] = phi
        dphis[n] = kv
        if last:
            break
        if q <= 0.0:
            # p never reached zero before q = 0
            return qs[: n + 1], ps[: n + 1], dps[: n + 1], phis[: n + 1], dphis[: n + 1], L, STEP_COLLAPSE
    return qs[: n + 1], ps[: n + 1], dps[: n + 1], phis[: n + 1], dphis[: n + 1], L, OK


# ---------------------------------------------------------------------------
# tree-descending (type II) dynamics


@njit
def type2_rhs(exps, coeffs, lam, phi, dphi):
    """Return (Phi'', Psi, energy density, status)."""
    r = lam.shape[0]
    _, g, H, D3 = poly_derivs(exps, coeffs, phi)
    v = np.empty(r)
    for s in range(r):
        v[s] = max(dphi[s], 0.0)
    B = np.zeros(r)
    for s in range(r):
        for t in range(r):
            B[s] += H[s, t] / lam[s] * v[t]
    A = np.zeros((r + 1, r + 1))
    rhs = np.zeros(r + 1)
    dens = 0.0
    for s in range(r):
        A[s, s] = -1.0
        if v[s] > 0.0 and B[s] > 0.0:
            for t in range(r):
                A[s, t] += v[s] * H[s, t] / lam[s] / B[s]
            quad = 0.0
            for t in range(r):
                for u in range(r):
                    quad += D3[s, t, u] / lam[s] * v[t] * v[u]
            rhs[s] = -v[s] * quad / B[s]
            A[s, r] = 2.0 * np.sqrt(v[s] ** 3 * B[s])
            dens += lam[s] * np.sqrt(v[s] * B[s])
        A[r, s] = lam[s]
    sol, ok = solve_pivot(A, rhs)
    if not ok:
        return sol[:r], 0.0, dens, SINGULAR_SYSTEM
    res = 0.0
    nrm = 0.0
    for i in range(r + 1):
        acc = -rhs[i]
        for j in range(r + 1):
            acc += A[i, j] * sol[j]
            nrm = max(nrm, abs(A[i, j] * sol[j]))
        res = max(res, abs(acc))
    nrm = max(nrm, np.max(np.abs(rhs)))
    if res > 1e-9 * max(nrm, 1e-300):
        return sol[:r], sol[r], dens, SINGULAR_SYSTEM
    return sol[:r], sol[r], dens, OK


@njit
def _type2_step(exps, coeffs, lam, phi, dphi, hs, a1, e1):
    # a1 = Phi'' at the start, e1 = energy density at the start
    b1 = dphi
    p2 = phi + 0.5 * hs * b1
    d2 = dphi + 0.5 * hs * a1
    a2, _, e2, s2 = type2_rhs(exps, coeffs, lam, p2, d2)
    p3 = phi + 0.5 * hs * d2
    d3 = dphi + 0.5 * hs * a2
    a3, _, e3, s3 = type2_rhs(exps, coeffs, lam, p3, d3)
    p4 = phi + hs * d3
    d4 = dphi + hs * a3
    a4, _, e4, s4 = type2_rhs(exps, coeffs, lam, p4, d4)
    st = max(s2, max(s3, s4))
    pn = phi + hs * (b1 + 2.0 * d2 + 2.0 * d3 + d4) / 6.0
    dn = dphi + hs * (a1 + 2.0 * a2 + 2.0 * a3 + a4) / 6.0
    de = hs * (e1 + 2.0 * e2 + 2.0 * e3 + e4) / 6.0
    return pn, dn, de, st


@njit
def integrate_type2(exps, coeffs, lam, q_start, phi0, v0, dq, tol_exit, max_steps):
    """Integrate the tree-descending ODE forward until max Phi_s = 1.

    Returns q, Phi, Phi', Psi, accumulated energy integral, status.
    """
    r = lam.shape[0]
    qs = np.empty(max_steps + 2)
    phis = np.empty((max_steps + 2, r))
    dphis = np.empty((max_steps + 2, r))
    psis = np.empty(max_steps + 2)
    ens = np.empty(max_steps + 2)
    q = q_start
    phi = phi0.copy()
    dphi = v0.copy()
    acc, psi, dens, st = type2_rhs(exps, coeffs, lam, phi, dphi)
    n = 0
    qs[0] = q
    phis[0] = phi
    dphis[0] = dphi
    psis[0] = psi
    ens[0] = 0.0
    if st != OK:
        return qs[:1], phis[:1], dphis[:1], psis[:1], ens[:1], st
    energy = 0.0
    while True:
        if n >= max_steps:
            return qs[: n + 1], phis[: n + 1], dphis[: n + 1], psis[: n + 1], ens[: n + 1], MAX_STEPS
        hs = dq
        pn, dn, de, st = _type2_step(exps, coeffs, lam, phi, dphi, hs, acc, dens)
        if st != OK:
            return qs[: n + 1], phis[: n + 1], dphis[: n + 1], psis[: n + 1], ens[: n + 1], st
        last = False
        if np.max(pn) >= 1.0 - tol_exit:
            lo = 0.0
            hi = hs
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                pm, dm, em, st = _type2_step(exps, coeffs, lam, phi, dphi, mid, acc, dens)
                gap = np.max(pm) - 1.0
                hs = mid
                pn = pm
                dn = dm
                de = em
                if abs(gap) <= tol_exit:
                    break
                if gap > 0:
                    hi = mid
                else:
                    lo = mid
            last = True
        qn = q + hs
        defect = qn
        ddef = 1.0
        for s in range(r):
            defect -= lam[s] * pn[s]
            ddef -= lam[s] * dn[s]
        if abs(ddef) > 1e-6:
            return qs[: n + 1], phis[: n + 1], dphis[: n + 1], psis[: n + 1], ens[: n + 1], STEP_COLLAPSE
        for s in range(r):
            pn[s] += defect
            dn[s] += ddef
        acc, psi, dens, st = type2_rhs(exps, coeffs, lam, pn, dn)
        if st != OK:
            return qs[: n + 1], phis[: n + 1], dphis[: n + 1], psis[: n + 1], ens[: n + 1], st
        n += 1
        q = qn
        phi = pn
        dphi = dn
        energy += de
        qs[n] = q
        phis[n] = phi
        dphis[n] = dphi
        psis[n] = psi
        ens[n] = energy
        if last:
            break
    return qs[: n + 1], phis[: n + 1], dphis[: n + 1], psis[: n + 1], ens[: n + 1], OK


# ---------------------------------------------------------------------------
# pure-model Dyson equation


@njit
def dyson_residual(a, lam, E, z, M):
    r = a.shape[0]
    S = 0.0 + 0.0j
    for s in range(r):
        S += lam[s] * a[s] * M[s]
    res = 0.0
    for s in range(r):
        val = 1.0 + a[s] * M[s] * (E - lam[s] * z / a[s] - lam[s] * M[s] + S)
        res = max(res, abs(val))
    return res


@njit
def dyson_iterate(a, lam, E, z, M0, damping, tol, max_iter):
    """Damped fixed-point iteration for the pure-model Dyson equation.

    Returns (M, residual, iterations, converged).
    """
    r = a.shape[0]
    M = M0.copy()
    new = np.empty(r, dtype=np.complex128)
    for it in range(max_iter):
        S = 0.0 + 0.0j
        for s in range(r):
            S += lam[s] * a[s] * M[s]
        ok = True
        for s in range(r):
            den = a[s] * (E - lam[s] * z / a[s] - lam[s] * M[s] + S)
            if den == 0.0:
                ok = False
                break
            new[s] = -1.0 / den
        if not ok:
            return M, np.inf, it, False
        for s in range(r):
            M[s] = damping * M[s] + (1.0 - damping) * new[s]
            if not np.isfinite(M[s].real) or not np.isfinite(M[s].imag):
                return M, np.inf, it, False
        if it % 16 == 0 or it == max_iter - 1:
            res = dyson_residual(a, lam, E, z, M)
            if res <= tol:
                return M, res, it + 1, True
    res = dyson_residual(a, lam, E, z, M)
    return M, res, max_iter, res <= tol
