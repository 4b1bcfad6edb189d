"""The algorithmic functional, the threshold search and closed forms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DomainGap, NumericFailure, SearchInconclusive, ValidationError
from .mixture import MixtureModel
from .quad import adaptive_simpson
from .solvability import classify, find_solvable, is_super_solvable, perron_velocity
from .trajectory import DQ, Kind, TrajectorySegment, targeted_residual, type1_solve, type2_solve

TOL_TARGET = 1e-4
SCAN_POINTS = 64
TOL_PARAM = 1e-10


class Case(str, Enum):
    SUPER_SOLVABLE_ENDPOINT = "SuperSolvableEndpoint"
    MIXED_WITH_FIELD = "MixedWithField"
    ZERO_FIELD_TREE = "ZeroFieldTree"


@dataclass
class Candidate:
    root: TrajectorySegment | None
    tree: TrajectorySegment | None
    energy: float
    targeted_residual: float
    q0: float
    q1: float
    phi_q1: np.ndarray
    param: float | None = None

    @property
    def segments(self) -> list[TrajectorySegment]:
        return [s for s in (self.root, self.tree) if s is not None]


@dataclass
class AlgResult:
    case_label: Case
    alg: float
    q0: float
    q1: float
    phi_q1: np.ndarray
    candidates: list[Candidate]
    maximizer_index: int
    scan: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "case": self.case_label.value,
            "alg": self.alg,
            "q0": self.q0,
            "q1": self.q1,
            "phi_q1": [float(v) for v in self.phi_q1],
            "maximizer_index": self.maximizer_index,
            "candidates": [
                {
                    "energy": c.energy,
                    "targeted_residual": c.targeted_residual,
                    "q0": c.q0,
                    "q1": c.q1,
                    "phi_q1": [float(v) for v in c.phi_q1],
                    "param": c.param,
                }
                for c in self.candidates
            ],
        }


# ---------------------------------------------------------------------------
# functional


def _trapezoid(y, x):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def segment_density(model: MixtureModel, seg: TrajectorySegment) -> np.ndarray:
    """sqrt(Phi'_s (p xi^s o Phi)') per grid point, shape (n, r)."""
    out = np.empty_like(seg.phi)
    for i, (f, d) in enumerate(zip(seg.phi, seg.dphi)):
        c = model.calculus(np.maximum(f, 0.0))
        deriv = seg.dp[i] * c.xi_s + seg.p[i] * (c.d_xi_s @ d)
        out[i] = np.sqrt(np.maximum(d, 0.0) * np.maximum(deriv, 0.0))
    return out


def evaluate_A(model: MixtureModel, segments, q0: float, gap_tol: float = 1e-5) -> float:
    """Algorithmic functional of a piecewise trajectory tiling [q0, 1]."""
    segs = sorted([s for s in segments if s is not None], key=lambda s: s.q_start)
    if not segs:
        raise DomainGap("no segments")
    if abs(segs[0].q_start - q0) > gap_tol or abs(segs[-1].q_end - 1.0) > gap_tol:
        raise DomainGap("segments do not cover [q0, 1]")
    for a, b in zip(segs[:-1], segs[1:]):
        if abs(a.q_end - b.q_start) > gap_tol:
            raise DomainGap("segments leave a gap")
    phi0 = np.maximum(segs[0].phi[0], 0.0)
    total = float(model.lam @ (model.h * np.sqrt(phi0)))
    for seg in segs:
        dens = segment_density(model, seg) @ model.lam
        total += _trapezoid(dens, seg.q)
    return total


def endpoint_energy(model: MixtureModel, phi_q1) -> float:
    phi_q1 = np.asarray(phi_q1, dtype=float)
    return float(model.lam @ np.sqrt(phi_q1 * (model.xi_s(phi_q1) + model.h2)))


# ---------------------------------------------------------------------------
# threshold search


def _simplex_vector(model: MixtureModel, theta: float) -> np.ndarray:
    lam = model.lam
    return np.array([theta / lam[0], (1.0 - theta) / lam[1]])


def _candidate_b(model, x, dq, param=None) -> Candidate:
    v = perron_velocity(model, x)
    tree = type2_solve(model, x, v, dq=dq)
    root = type1_solve(model, x, dq=dq, check_endpoint=False)
    energy = endpoint_energy(model, x) + float(tree.energy[-1])
    return Candidate(root, tree, energy, targeted_residual(tree), root.q_start, float(model.lam @ x), x.copy(), param)


def _candidate_c(model, v, dq, param=None) -> Candidate:
    tree = type2_solve(model, np.zeros(model.r), v, dq=dq)
    energy = float(tree.energy[-1])
    return Candidate(None, tree, energy, targeted_residual(tree), 0.0, 0.0, np.zeros(model.r), param)


def _mismatch(seg: TrajectorySegment) -> float:
    return float(seg.phi[-1, 0] - seg.phi[-1, 1])


def _shoot(model, case, theta, dq):
    """Return (mismatch, tree segment, start point) or None where the shot fails."""
    try:
        if case is Case.MIXED_WITH_FIELD:
            x = find_solvable(model, _simplex_vector(model, theta))
            v = perron_velocity(model, x)
            seg = type2_solve(model, x, v, dq=dq)
            return _mismatch(seg), seg, x
        v = _simplex_vector(model, theta)
        seg = type2_solve(model, np.zeros(model.r), v, dq=dq)
        return _mismatch(seg), seg, v
    except (NumericFailure, ValidationError):
        return None


def _bisect_theta(model, case, lo, hi, flo, dq):
    while hi - lo > TOL_PARAM:
        mid = 0.5 * (lo + hi)
        shot = _shoot(model, case, mid, dq)
        if shot is None:
            return None
        fm = shot[0]
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _assemble(case, candidates, scan=()) -> AlgResult:
    good = [c for c in candidates if c.targeted_residual <= TOL_TARGET]
    if not good:
        raise SearchInconclusive("no targeted trajectory found")
    good.sort(key=lambda c: (c.param if c.param is not None else 0.0))
    k = int(np.argmax([c.energy for c in good]))
    best = good[k]
    return AlgResult(case, best.energy, best.q0, best.q1, best.phi_q1, good, k, list(scan))


def case_of(model: MixtureModel) -> Case:
    if not model.has_field:
        return Case.ZERO_FIELD_TREE
    if is_super_solvable(classify(model, np.ones(model.r))) or classify(model, np.ones(model.r)).classification.value == "Solvable":
        return Case.SUPER_SOLVABLE_ENDPOINT
    return Case.MIXED_WITH_FIELD


def alg_value(
    model: MixtureModel,
    scan_points: int = SCAN_POINTS,
    endpoint=None,
    velocity=None,
    dq: float = DQ,
) -> AlgResult:
    """ALG together with every targeted candidate trajectory found by the scan."""
    case = case_of(model)
    r = model.r
    if case is Case.SUPER_SOLVABLE_ENDPOINT:
        one = np.ones(r)
        root = type1_solve(model, one, dq=dq, check_endpoint=False)
        cand = Candidate(root, None, endpoint_energy(model, one), 0.0, root.q_start, 1.0, one)
        return _assemble(case, [cand])

    if case is Case.MIXED_WITH_FIELD:
        if endpoint is not None:
            return _assemble(case, [_candidate_b(model, np.asarray(endpoint, dtype=float), dq)])
        if r == 1:
            x = find_solvable(model, np.ones(1))
            return _assemble(case, [_candidate_b(model, x, dq)])
    else:
        if velocity is not None:
            v = np.asarray(velocity, dtype=float)
            return _assemble(case, [_candidate_c(model, v / float(model.lam @ v), dq)])
        if r == 1:
            return _assemble(case, [_candidate_c(model, np.ones(1), dq)])

    if r != 2:
        raise ValidationError("automatic search covers r <= 2; pass an endpoint or a velocity")

    thetas = (np.arange(scan_points) + 0.5) / scan_points
    shots = [_shoot(model, case, t, dq) for t in thetas]
    scan = [(float(t), s[0] if s is not None else float("nan")) for t, s in zip(thetas, shots)]
    roots = []
    for i, (t, s) in enumerate(zip(thetas, shots)):
        if s is not None and s[0] == 0.0:
            roots.append(float(t))
        if i + 1 < len(shots):
            a, b = s, shots[i + 1]
            if a is not None and b is not None and a[0] * b[0] < 0:
                root = _bisect_theta(model, case, float(t), float(thetas[i + 1]), a[0], dq)
                if root is not None:
                    roots.append(root)
    candidates = []
    for theta in roots:
        try:
            if case is Case.MIXED_WITH_FIELD:
                x = find_solvable(model, _simplex_vector(model, theta))
                candidates.append(_candidate_b(model, x, dq, theta))
            else:
                candidates.append(_candidate_c(model, _simplex_vector(model, theta), dq, theta))
        except (NumericFailure, ValidationError):
            continue
    return _assemble(case, candidates, scan)


# ---------------------------------------------------------------------------
# closed forms


@dataclass
class SingleSpeciesResult:
    alg: float
    q0: float
    q1: float
    h: float
    dxi: object
    ddxi: object

    def p(self, q: float) -> float:
        """Optimal information schedule on [q0, 1]."""
        if q >= self.q1:
            return 1.0
        if self.q1 >= 1.0:
            top = q * (self.dxi(1.0) + self.h**2) - self.h**2
        else:
            top = q * self.ddxi(self.q1) - self.h**2
        return top / self.dxi(q)


def single_species_alg(model: MixtureModel) -> SingleSpeciesResult:
    if model.r != 1:
        raise ValidationError("single-species formula needs r = 1")
    h2 = float(model.h2[0])

    def dxi(q):
        return float(model.xi_s(np.array([q]))[0])

    def ddxi(q):
        return float(model.calculus(np.array([q])).d_xi_s[0, 0])

    if dxi(1.0) + h2 >= ddxi(1.0):
        alg = math.sqrt(dxi(1.0) + h2)
        return SingleSpeciesResult(alg, h2 / (dxi(1.0) + h2), 1.0, math.sqrt(h2), dxi, ddxi)

    def g(q):
        return dxi(q) + h2 - q * ddxi(q)

    lo, hi = 0.0, 1.0
    if h2 == 0.0:
        lo = hi = 0.0
    while hi - lo > 1e-15:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    q1 = 0.5 * (lo + hi)
    alg = q1 * math.sqrt(ddxi(q1)) + adaptive_simpson(lambda q: math.sqrt(ddxi(q)), q1, 1.0, 1e-12)
    q0 = h2 / ddxi(q1) if ddxi(q1) > 0 else 0.0
    return SingleSpeciesResult(alg, q0, q1, math.sqrt(h2), dxi, ddxi)


@dataclass
class PureModelSolution:
    a: np.ndarray
    lam: np.ndarray
    L: float
    b: np.ndarray
    alg: float


def pure_exponents(a, lam, L) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return (1.0 - np.sqrt(a / (a + L * np.asarray(lam, dtype=float)))) / 2.0


def _validate_pure(a, lam):
    a = np.asarray(a)
    lam = np.asarray(lam, dtype=float)
    if a.ndim != 1 or a.shape != lam.shape or a.size == 0:
        raise ValidationError("exponent and weight vectors must match")
    if np.any(a < 1) or np.any(a != np.round(a)):
        raise ValidationError("pure exponents must be positive integers")
    if np.any(lam <= 0) or abs(lam.sum() - 1) > 1e-12:
        raise ValidationError("lambda must be positive and sum to one")
    return a.astype(np.int64), lam


def pure_alg(a, lam) -> PureModelSolution:
    """Closed-form ALG for xi = prod_s x_s^{a_s} without field."""
    a, lam = _validate_pure(a, lam)
    total = int(a.sum())
    if total == 2:
        if a.size == 2 and np.all(a == 1):
            return PureModelSolution(a, lam, float("inf"), np.array([1.0, 1.0]), float(np.sqrt(lam).sum()))
        raise ValidationError("total degree 2 is only supported for x1*x2")
    if total < 2:
        raise ValidationError("total degree must be at least 2")

    def gap(L):
        return float(a @ pure_exponents(a, lam, L)) - 1.0

    lo, hi = 0.0, 1.0
    while gap(hi) < 0:
        hi *= 2.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * hi:
            break
    L = 0.5 * (lo + hi)
    b = pure_exponents(a, lam, L)
    alg = float(np.sum(lam * np.sqrt(L * a) / np.sqrt(a + L * lam)))
    return PureModelSolution(a, lam, L, b, alg)


def pure_model(a, lam) -> MixtureModel:
    a, lam = _validate_pure(a, lam)
    return MixtureModel(lam, np.zeros(a.size), [a], [1.0], warn=False)


# ---------------------------------------------------------------------------
# second variation along the diagonal of x^4 + y^4 + 24xy


def asb_second_variation(c: float, Q: float | None = None, amplitude: float = 1.0, tol: float = 1e-10) -> float:
    """Second variation (divided by sqrt 6) for the perturbation amplitude*sin(pi c q)."""
    if c <= 0:
        raise ValidationError("c must be positive")
    if Q is None:
        Q = 1.0 / c
    k = math.pi * c

    def integrand(q):
        chi = amplitude * math.sin(k * q)
        dchi = amplitude * k * math.cos(k * q)
        s = q * q + 2.0
        first = (2 * chi * chi + 5 * q * chi * dchi - dchi * dchi) / math.sqrt(s)
        second = ((dchi - q * chi) * (2 * q * chi + q * q * dchi) - 2 * dchi * dchi) / s**1.5
        return first + second

    return adaptive_simpson(integrand, 0.0, float(Q), tol)
