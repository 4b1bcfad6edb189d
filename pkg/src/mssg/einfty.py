"""E_infinity for pure models: closed algebraic path and Dyson-equation scan.

The pure-model Dyson equation is written here as

    1 + a_s M_s (E - lambda_s z / a_s - lambda_s M_s + sum_t lambda_t a_t M_t) = 0,

which is the general multi-species equation after substituting M_s -> -M_s / lambda_s.
With this convention Im M_s <= 0 whenever Im z > 0, and M_s ~ 1/(lambda_s z)
for large |z|.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import NonConvergence, ScanFailure, ValidationError
from .variational import _validate_pure, pure_alg

DAMPING = 0.5
MAX_ITER = 100_000
TOL_RES = 1e-10


@dataclass
class DysonState:
    E: float
    z: complex
    M: np.ndarray
    residual: float
    iterations: int


@dataclass
class ClosedEinfty:
    einfty: float
    A: float
    K: np.ndarray
    L: float


def einfty_pure_closed(a, lam) -> ClosedEinfty:
    a, lam = _validate_pure(a, lam)
    if a.sum() < 3:
        raise ValidationError("closed path needs total degree >= 3")
    L = pure_alg(a, lam).L
    B = a / lam
    A = 2.0 / np.sqrt(L)
    Ks = (A * B - np.sqrt(A * A * B * B + 4.0 * B)) / 2.0
    return ClosedEinfty(float(A - lam @ Ks), float(A), Ks, float(L))


def dyson_residual(a, lam, E, z, M) -> float:
    return float(
        K.dyson_residual(np.asarray(a, float), np.asarray(lam, float), float(E), complex(z), np.asarray(M, complex))
    )


def dyson_solve(a, lam, E: float, z: complex = 0.0, M0=None, max_iter: int = MAX_ITER, tol: float = TOL_RES) -> DysonState:
    a, lam = _validate_pure(a, lam)
    z = complex(z)
    if z.imag < 0 or (z.imag == 0 and z.real != 0):
        raise ValidationError("spectral parameter must lie in the upper half plane or be zero")
    af = a.astype(float)
    if M0 is None:
        # large-|E| / large-|z| asymptotics as the starting point
        M0 = -1.0 / (af * (E - lam * z / af) + 1j * 1e-300)
        if E == 0 and z == 0:
            M0 = -np.ones(a.size, dtype=complex)
    M, res, it, ok = K.dyson_iterate(af, lam, float(E), z, np.asarray(M0, dtype=complex), DAMPING, tol, max_iter)
    if not ok:
        raise NonConvergence(f"Dyson iteration stalled at E={E}, residual {res:.3g}")
    if z == 0:
        if np.max(np.abs(M.imag)) > 1e-9 or np.any(M.real >= 0):
            raise NonConvergence("no real negative solution at this energy")
        M = M.real.astype(complex)
    return DysonState(float(E), z, M, float(res), int(it))


def _real_solution(a, lam, E) -> bool:
    try:
        dyson_solve(a, lam, E, 0.0)
        return True
    except NonConvergence:
        return False


def einfty_scan(a, lam, tol: float = 1e-6) -> float:
    """Smallest E at which the z = 0 iteration still converges to a real solution."""
    a, lam = _validate_pure(a, lam)
    if a.sum() < 3:
        raise ValidationError("scan needs total degree >= 3")
    xi_s_one = a / lam
    hi = float(2.0 * np.sum(lam * np.sqrt(2.0 * xi_s_one)))
    lo = 0.0
    if not _real_solution(a, lam, hi):
        raise ScanFailure("no convergence even at the upper bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _real_solution(a, lam, mid):
            hi = mid
        else:
            lo = mid
    return hi
