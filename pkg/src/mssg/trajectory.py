"""Root-finding (type I) and tree-descending (type II) trajectories.

Both solvers are fixed-step RK4 with a bisected terminal step; the loops live
in ``_kernels``.  Grids are returned in increasing q.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernels as K
from .errors import BracketFailure, NotSolvable, SingularSystem, StepCollapse, ValidationError, NumericFailure
from .mixture import MixtureModel
from .solvability import Solvability, classify, is_super_solvable

DQ = 1e-3
EPS_START = 1e-6
TOL_P = 1e-10
TOL_EXIT = 1e-12


class Kind(str, Enum):
    ROOT_FINDING = "RootFinding"
    TREE_DESCENDING = "TreeDescending"


@dataclass
class TrajectorySegment:
    kind: Kind
    q: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    p: np.ndarray
    dp: np.ndarray
    psi: np.ndarray | None = None
    L: np.ndarray | None = None
    # running integral of sum_s lambda_s sqrt(Phi'_s (xi^s o Phi)') from q_start
    energy: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def q_start(self) -> float:
        return float(self.q[0])

    @property
    def q_end(self) -> float:
        return float(self.q[-1])

    def to_rows(self) -> np.ndarray:
        psi = self.psi if self.psi is not None else np.full(self.q.shape, np.nan)
        return np.column_stack([self.q, self.p, self.phi, self.dphi, psi])

    def header(self) -> list[str]:
        r = self.phi.shape[1]
        return ["q", "p"] + [f"Phi_{s + 1}" for s in range(r)] + [f"dPhi_{s + 1}" for s in range(r)] + ["Psi"]


_STATUS = {
    K.BRACKET_FAILURE: BracketFailure,
    K.STEP_COLLAPSE: StepCollapse,
    K.SINGULAR_SYSTEM: SingularSystem,
    K.POWER_NO_CONVERGE: NumericFailure,
    K.MAX_STEPS: StepCollapse,
}


def _raise(status: int, what: str):
    if status != K.OK:
        raise _STATUS[status](f"{what} failed (status {status})")


# ---------------------------------------------------------------------------
# type I


def type1_rhs(model: MixtureModel, p: float, phi, L) -> tuple[float, np.ndarray]:
    """p' and Phi' making the Perron eigenvalue of M(p, p', Phi) equal to one."""
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0):
        raise ValidationError("type1_rhs needs Phi strictly positive")
    pp, dphi, st = K.type1_rhs(
        model.exponents, model.coeffs, model.lam, float(p), phi, np.asarray(L, dtype=float), np.ones(model.r)
    )
    _raise(st, "type1_rhs")
    return float(pp), dphi


def root_constants(model: MixtureModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (model.xi_s(x) + model.h2) / x


def type1_solve(model: MixtureModel, x, dq: float = DQ, check_endpoint: bool = True) -> TrajectorySegment:
    """Integrate backward from q1 = <lambda, x> with p(q1) = 1 until p hits 0."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if np.any(x <= 0):
        raise ValidationError("type I endpoint must be strictly positive")
    if check_endpoint:
        rep = classify(model, x)
        if rep.classification is Solvability.SUB:
            raise BracketFailure("endpoint is strictly sub-solvable")
    max_steps = int(np.ceil(float(model.lam @ x) / dq)) + 10
    q, p, dp, phi, dphi, L, st = K.integrate_type1(
        model.exponents, model.coeffs, model.lam, model.h2, x, float(dq), TOL_P, max_steps
    )
    _raise(st, "type I integration")
    return TrajectorySegment(
        kind=Kind.ROOT_FINDING,
        q=q[::-1].copy(),
        phi=phi[::-1].copy(),
        dphi=dphi[::-1].copy(),
        p=p[::-1].copy(),
        dp=dp[::-1].copy(),
        L=L.copy(),
    )


def first_integral_defect(model: MixtureModel, seg: TrajectorySegment) -> np.ndarray:
    """p xi^s(Phi) - L_s (Phi_s - Phi_s(q0)) along a root-finding segment."""
    xs = np.array([model.xi_s(f) for f in seg.phi])
    return seg.p[:, None] * xs - seg.L[None, :] * (seg.phi - seg.phi[0][None, :])


# ---------------------------------------------------------------------------
# type II


def type2_rhs(model: MixtureModel, phi, dphi) -> tuple[np.ndarray, float]:
    phi = np.asarray(phi, dtype=float)
    dphi = np.asarray(dphi, dtype=float)
    if np.any(phi < 0) or np.any(dphi < 0):
        raise ValidationError("type2_rhs needs Phi and Phi' nonnegative")
    dd, psi, _, st = K.type2_rhs(model.exponents, model.coeffs, model.lam, phi, dphi)
    _raise(st, "type2_rhs")
    return dd, float(psi)


def type2_solve(
    model: MixtureModel,
    phi1,
    v,
    dq: float = DQ,
    eps_start: float = EPS_START,
    check_start: bool = True,
) -> TrajectorySegment:
    """Integrate forward from (Phi(q1), Phi'(q1)) = (phi1, v) until max Phi_s = 1."""
    phi1 = np.asarray(phi1, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    if np.any(v < 0) or abs(float(model.lam @ v) - 1.0) > 1e-9:
        raise ValidationError("start velocity must be nonnegative with <lambda, v> = 1")
    if np.all(phi1 == 0):
        if check_start and model.has_field:
            raise NotSolvable("starting at the origin requires zero field")
        q0 = eps_start
        start = eps_start * v
    else:
        if check_start:
            rep = classify(model, phi1)
            if rep.classification is not Solvability.SOLVABLE:
                raise NotSolvable(f"start point is {rep.classification.value}")
        q0 = float(model.lam @ phi1)
        start = phi1.copy()
    max_steps = int(np.ceil((1.0 - q0) / dq)) + 10
    q, phi, dphi, psi, en, st = K.integrate_type2(
        model.exponents, model.coeffs, model.lam, q0, start, v.copy(), float(dq), TOL_EXIT, max_steps
    )
    _raise(st, "type II integration")
    n = q.shape[0]
    return TrajectorySegment(
        kind=Kind.TREE_DESCENDING,
        q=q.copy(),
        phi=phi.copy(),
        dphi=dphi.copy(),
        p=np.ones(n),
        dp=np.zeros(n),
        psi=psi.copy(),
        energy=en.copy(),
    )


def targeted_residual(seg: TrajectorySegment) -> float:
    return float(np.max(np.abs(seg.phi[-1] - 1.0)))


def species_psi(model: MixtureModel, seg: TrajectorySegment) -> np.ndarray:
    """Psi_s = (1/Phi'_s) d/dq sqrt(Phi'_s / (xi^s o Phi)') by five-point differences.

    Returns an array (n - 4, r) at grid points 2..n-3; used only as a check.
    Assumes a uniform grid, which holds away from a clipped terminal step.
    """
    B = np.array([model.calculus(f).d_xi_s @ d for f, d in zip(seg.phi, seg.dphi)])
    g = np.sqrt(seg.dphi / B)
    h = (seg.q[4:] - seg.q[:-4])[:, None] / 4.0
    dg = (g[:-4] - 8.0 * g[1:-3] + 8.0 * g[3:-1] - g[4:]) / (12.0 * h)
    return dg / seg.dphi[2:-2]
