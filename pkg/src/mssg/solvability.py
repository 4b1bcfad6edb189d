"""Solvability classification of points in [0,1]^r.

The symmetric matrix built here has diagonal (d_s xi + lambda_s h_s^2)/x_s - d_ss xi
and off-diagonal -d_ss' xi.  Its smallest eigenvalue decides the class.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels as K
from .errors import NoSolvablePoint, NotSolvable, ValidationError
from .mixture import MixtureModel

TOL_SOLVE = 1e-9
JACOBI_TOL = 1e-13


class Solvability(str, Enum):
    SUPER = "SuperSolvable"
    SOLVABLE = "Solvable"
    SUB = "StrictlySubSolvable"


@dataclass
class SolvabilityReport:
    point: np.ndarray
    m_sym: np.ndarray
    lambda_min: float
    classification: Solvability
    null_vector: np.ndarray | None = None
    # the zero point is super-solvable and, without a field, solvable as well
    also_super: bool = False

    def to_dict(self) -> dict:
        return {
            "point": self.point.tolist(),
            "m_sym": self.m_sym.tolist(),
            "lambda_min": self.lambda_min,
            "classification": self.classification.value,
            "null_vector": None if self.null_vector is None else self.null_vector.tolist(),
        }


def _check_point(model: MixtureModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (model.r,):
        raise ValidationError(f"point must have {model.r} coordinates")
    if np.any(~np.isfinite(x)) or np.any(x < 0) or np.any(x > 1):
        raise ValidationError("point must lie in [0,1]^r")
    return x


def build_msym(model: MixtureModel, x) -> np.ndarray:
    x = _check_point(model, x)
    if np.any(x <= 0):
        raise ValidationError("build_msym needs every coordinate strictly positive")
    g, H = K.poly_grad_hess(model.exponents, model.coeffs, x)
    M = -H.copy()
    M[np.diag_indices(model.r)] += (g + model.lam * model.h2) / x
    return 0.5 * (M + M.T)


def build_mstar(model: MixtureModel, x) -> np.ndarray:
    """Non-symmetric companion diag(xi^s + h_s^2) - (x_s d_s' xi^s)."""
    x = _check_point(model, x)
    c = model.calculus(x)
    return np.diag(c.xi_s + model.h2) - x[:, None] * c.d_xi_s


def min_eig(A: np.ndarray) -> tuple[float, np.ndarray]:
    w, V = K.jacobi_eigh(np.ascontiguousarray(A, dtype=float), JACOBI_TOL, 100)
    return float(w[0]), V[:, 0]


def _normalised_min(model: MixtureModel, x) -> tuple[float, float, np.ndarray, np.ndarray]:
    M = build_msym(model, x)
    lmin, vec = min_eig(M)
    # scale from the two pieces of M separately: for r = 1 the norm of M itself
    # would make the relative eigenvalue always +-1
    g, H = K.poly_grad_hess(model.exponents, model.coeffs, np.asarray(x, dtype=float))
    diag = np.abs((g + model.lam * model.h2) / x)
    norm1 = float(diag.max() + np.abs(H).sum(axis=0).max())
    return lmin, norm1, M, vec


def classify(model: MixtureModel, x, tol_solve: float = TOL_SOLVE) -> SolvabilityReport:
    x = _check_point(model, x)
    if np.all(x == 0):
        r = model.r
        if model.has_field:
            return SolvabilityReport(x, np.zeros((r, r)), 0.0, Solvability.SUPER)
        return SolvabilityReport(x, np.zeros((r, r)), 0.0, Solvability.SOLVABLE, also_super=True)
    if np.any(x == 0):
        raise ValidationError("mixed zero and nonzero coordinates are not supported")
    lmin, norm1, M, vec = _normalised_min(model, x)
    rel = lmin / norm1 if norm1 > 0 else lmin
    if rel > tol_solve:
        cls = Solvability.SUPER
    elif rel < -tol_solve:
        cls = Solvability.SUB
    else:
        cls = Solvability.SOLVABLE
    null = None
    if cls is Solvability.SOLVABLE:
        v = vec if vec.sum() >= 0 else -vec
        null = v / float(model.lam @ v)
    return SolvabilityReport(x, M, lmin, cls, null)


def is_super_solvable(report: SolvabilityReport) -> bool:
    return report.classification is Solvability.SUPER or report.also_super


def find_solvable(
    model: MixtureModel,
    direction,
    scan_points: int = 256,
    tol_solve: float = TOL_SOLVE,
) -> np.ndarray:
    """Largest t with t*u solvable, for t up to the edge of the unit box."""
    if not model.has_field:
        raise ValidationError("find_solvable needs a nonzero field")
    u = np.asarray(direction, dtype=float).reshape(-1)
    if u.shape != (model.r,) or np.any(u <= 0):
        raise ValidationError("direction must be a strictly positive r-vector")
    t_cap = min(1.0 / float(model.lam @ u), 1.0 / float(u.max()))

    def f(t):
        lmin, norm1, _, _ = _normalised_min(model, t * u)
        return lmin / norm1 if norm1 > 0 else lmin

    ts = t_cap * np.arange(1, scan_points + 1) / scan_points
    vals = np.array([f(t) for t in ts])
    if abs(vals[-1]) <= tol_solve:
        return t_cap * u
    sign = np.sign(vals)
    idx = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    if idx.size == 0:
        raise NoSolvablePoint("smallest eigenvalue keeps one sign along the ray")
    i = int(idx[-1])
    lo, hi = ts[i], ts[i + 1]
    flo = vals[i]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            lo = hi = mid
            break
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    # pick whichever bracket end is closer to singular
    t = lo if abs(f(lo)) <= abs(f(hi)) else hi
    return t * u


def perron_matrix(model: MixtureModel, x) -> np.ndarray:
    """x_s d_s' xi^s(x) / (xi^s(x) + h_s^2); it fixes the null vector of M*_sym."""
    c = model.calculus(x)
    return x[:, None] * c.d_xi_s / (c.xi_s + model.h2)[:, None]


def perron_velocity(model: MixtureModel, x, tol_solve: float = TOL_SOLVE) -> np.ndarray:
    x = _check_point(model, x)
    if np.any(x <= 0):
        raise NotSolvable("perron_velocity needs a strictly positive point")
    rep = classify(model, x, tol_solve)
    if rep.classification is not Solvability.SOLVABLE:
        raise NotSolvable(f"point is {rep.classification.value}")
    M = perron_matrix(model, x)
    start = rep.null_vector if rep.null_vector is not None else np.ones(model.r)
    _, v, ok = K.perron_power(M, np.abs(start), 1e-15, 1_000_000)
    if not ok:
        raise NotSolvable("power iteration did not settle")
    return v / float(model.lam @ v)
