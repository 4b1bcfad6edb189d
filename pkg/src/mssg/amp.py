"""Finite-N Hamiltonians and the two-stage message passing algorithm.

Stage I is a fixed-point AMP iteration that lands on a point with overlap
profile Phi(q1).  Stage II is an incremental AMP that walks the overlap
profile from Phi(q1) up to (almost) the unit sphere along the tree-descending
trajectory.  The last iterate is rescaled onto the product of spheres.

Two places depart from a literal transcription of the recursions; both are
documented in the project notes:

* Stage I starts from ``h + sqrt(xi^s(Phi(q1))) g`` with a seeded Gaussian g,
  so that the first iterate already has the stationary law.
* The first Stage II increment is topped up by an independent Gaussian so
  its variance matches the increment of the time-changed Brownian motion.
  Without it the first increment is nearly zero (z^{l+1} and z^l have the
  same law) and every later step lags the schedule by one cell.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import CostGuard, GridTooCoarse, NumericBlowup, NumericFailure, ValidationError
from .mixture import MixtureModel, gamma_from_xi
from .trajectory import TrajectorySegment
from .variational import AlgResult, alg_value

log = logging.getLogger(__name__)

COST_BUDGET = 5e9
MEMORY_BUDGET = 2.5e8  # tensor entries, about 2 GB of float64
BLOWUP = 10.0
DELTA = 0.05
ELL_LOW = 30


# ---------------------------------------------------------------------------
# Hamiltonian


@dataclass(frozen=True)
class Hamiltonian:
    N: int
    species: np.ndarray
    sizes: np.ndarray
    tensors: dict
    h_vec: np.ndarray
    seed: int

    @property
    def r(self) -> int:
        return self.sizes.size


class GradEnergy(NamedTuple):
    grad: np.ndarray
    energy: float


def species_sizes(lam, N: int) -> np.ndarray:
    sizes = np.rint(np.asarray(lam) * N).astype(np.int64)
    sizes[0] += N - int(sizes.sum())
    if np.any(sizes <= 0):
        raise ValidationError("every species needs at least one coordinate")
    return sizes


def hamiltonian_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def algorithm_rng(seed: int) -> np.random.Generator:
    # an independent Philox stream for the algorithm's own randomness
    return np.random.Generator(np.random.Philox(seed).jumped())


def sample_hamiltonian(
    model: MixtureModel,
    N: int,
    seed: int,
    budget: float = COST_BUDGET,
    memory: float = MEMORY_BUDGET,
) -> Hamiltonian:
    if N < model.r:
        raise ValidationError("N must be at least the number of species")
    degree = model.degree
    if float(N) ** degree > budget:
        raise CostGuard(f"N^{degree} = {float(N) ** degree:.3g} exceeds the budget {budget:.3g}")
    if float(N) ** degree > memory:
        raise CostGuard(f"a degree-{degree} tensor at N={N} does not fit in memory")
    sizes = species_sizes(model.lam, N)
    species = np.repeat(np.arange(model.r), sizes)
    gam = gamma_from_xi(model).gamma
    rng = hamiltonian_rng(seed)
    tensors = {}
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    blocks = [slice(int(bounds[s]), int(bounds[s + 1])) for s in range(model.r)]
    for k in sorted(gam):
        T = rng.standard_normal((N,) * k)
        # species occupy contiguous blocks, so scale block views in place
        for idx in itertools.product(range(model.r), repeat=k):
            T[tuple(blocks[s] for s in idx)] *= gam[k][idx]
        tensors[k] = T
    h_vec = model.h[species].astype(float)
    return Hamiltonian(N, species, sizes, tensors, h_vec, int(seed))


def _contract_except(T: np.ndarray, sigma: np.ndarray, pos: int) -> np.ndarray:
    """Contract sigma into every slot of T except ``pos``; only contiguous reshapes."""
    N = sigma.size
    v = T
    for _ in range(T.ndim - 1 - pos):
        v = v.reshape(-1, N) @ sigma
    for _ in range(pos):
        v = sigma @ v.reshape(N, -1)
    return v.reshape(N)


def grad_energy(H: Hamiltonian, sigma, field: bool = True) -> GradEnergy:
    """Gradient and value of H at sigma; ``field=False`` drops the linear term."""
    sigma = np.asarray(sigma, dtype=float)
    if field:
        grad = H.h_vec.copy()
        energy = float(H.h_vec @ sigma)
    else:
        grad = np.zeros(H.N)
        energy = 0.0
    for k in sorted(H.tensors):
        T = H.tensors[k]
        scale = float(H.N) ** (-(k - 1) / 2.0)
        if k == 1:
            grad += scale * T
            energy += scale * float(T @ sigma)
            continue
        first = None
        for pos in range(k):
            v = _contract_except(T, sigma, pos)
            if first is None:
                first = v
            grad += scale * v
        energy += scale * float(first @ sigma)
    return GradEnergy(grad, energy)


def overlaps(H: Hamiltonian, x, y) -> np.ndarray:
    """Per-species normalised inner products."""
    return np.bincount(H.species, weights=np.asarray(x) * np.asarray(y), minlength=H.r) / H.sizes


# ---------------------------------------------------------------------------
# Stage I


def overlap_recursion(model: MixtureModel, phi_q1, k_max: int) -> np.ndarray:
    """R^0 = 0 and R^{k+1} = (xi^s(R^k) + h^2) Phi(q1) / (xi^s(Phi(q1)) + h^2)."""
    phi = np.asarray(phi_q1, dtype=float)
    if phi.shape != (model.r,) or np.any(phi <= 0):
        raise ValidationError("Phi(q1) must be a strictly positive r-vector")
    ratio = phi / (model.xi_s(phi) + model.h2)
    R = np.zeros((k_max + 1, model.r))
    for k in range(k_max):
        R[k + 1] = (model.xi_s(R[k]) + model.h2) * ratio
    return R


def stage1_coefficients(model: MixtureModel, phi_q1) -> np.ndarray:
    phi = np.asarray(phi_q1, dtype=float)
    return np.sqrt(phi / (model.xi_s(phi) + model.h2))


@dataclass
class Stage1Result:
    a: np.ndarray
    w: np.ndarray
    m: np.ndarray
    self_overlap: np.ndarray
    lag_overlap: np.ndarray
    energy: np.ndarray


def _check_blowup(R: np.ndarray, where: str):
    if not np.all(np.isfinite(R)) or np.any(np.abs(R) > BLOWUP):
        raise NumericBlowup(f"overlap left the bounded range during {where}")


def stage1_run(H: Hamiltonian, model: MixtureModel, phi_q1, ell_low: int, rng=None) -> Stage1Result:
    if not model.has_field:
        raise ValidationError("Stage I needs a nonzero field")
    if ell_low < 1:
        raise ValidationError("ell_low must be positive")
    phi = np.asarray(phi_q1, dtype=float)
    a = stage1_coefficients(model, phi)
    rng = algorithm_rng(H.seed) if rng is None else rng
    sp = H.species
    noise = np.sqrt(model.xi_s(phi))
    w = np.empty((ell_low + 1, H.N))
    m = np.empty((ell_low + 1, H.N))
    w[0] = H.h_vec + noise[sp] * rng.standard_normal(H.N)
    m[0] = a[sp] * w[0]
    self_ov = np.zeros((ell_low + 1, model.r))
    lag_ov = np.full((ell_low + 1, model.r), np.nan)
    energy = np.zeros(ell_low + 1)
    prev = np.zeros(H.N)
    for k in range(ell_low + 1):
        self_ov[k] = overlaps(H, m[k], m[k])
        if k > 0:
            lag_ov[k] = overlaps(H, m[k], m[k - 1])
        _check_blowup(self_ov[k], "Stage I")
        ge = grad_energy(H, m[k])
        energy[k] = ge.energy / H.N
        if k == ell_low:
            break
        if k > 0:
            D = model.calculus(np.clip(lag_ov[k], 0.0, 1.0)).d_xi_s
            onsager = (D @ a)[sp] * prev
        else:
            onsager = 0.0
        w[k + 1] = ge.grad - onsager
        m[k + 1] = a[sp] * w[k + 1]
        prev = m[k]
    return Stage1Result(a, w, m, self_ov, lag_ov, energy)


def stage1_se(model: MixtureModel, phi_q1, k_max: int) -> dict:
    """Covariances of (W~^j, M^j) propagated through the state evolution map.

    W~^0 has variance xi^s(Phi(q1)) and is independent of the disorder;
    W~^{j+1} has covariance xi^s(E[M^j M^k]) and M = a (h + W~).
    """
    phi = np.asarray(phi_q1, dtype=float)
    a = stage1_coefficients(model, phi)
    n = k_max + 1
    cw = np.zeros((n, n, model.r))
    cm = np.zeros((n, n, model.r))
    cw[0, 0] = model.xi_s(phi)
    cm[0, 0] = a * a * (model.h2 + cw[0, 0])
    for j in range(n):
        for k in range(n):
            if j == 0 or k == 0:
                if j != k:
                    cw[j, k] = 0.0
                    cm[j, k] = a * a * model.h2
                continue
            cw[j, k] = model.xi_s(np.clip(cm[j - 1, k - 1], 0.0, None))
            cm[j, k] = a * a * (model.h2 + cw[j, k])
    return {"cov_w": cw, "cov_m": cm, "a": a}


# ---------------------------------------------------------------------------
# Stage II schedule


def _interp_path(tree: TrajectorySegment, q) -> np.ndarray:
    q = np.atleast_1d(np.asarray(q, dtype=float))
    out = np.empty((q.size, tree.phi.shape[1]))
    for s in range(tree.phi.shape[1]):
        out[:, s] = np.interp(q, tree.q, tree.phi[:, s])
    return out


@dataclass
class AmpSchedule:
    phi_q1: np.ndarray
    a_vec: np.ndarray
    ell_low: int
    delta: float
    q_grid: np.ndarray
    phi_grid: np.ndarray
    xi_grid: np.ndarray
    u: np.ndarray
    # onsager[i, j] multiplies n^{j-1} (m^{ell_low - 1} for j = 0) when forming z^{i+1}
    onsager: np.ndarray
    kick: np.ndarray
    se_cov: dict
    zero_field: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.u.shape[0]


def build_schedule(
    model: MixtureModel,
    phi_q1,
    q1: float,
    delta: float,
    ell_low: int,
    tree: TrajectorySegment,
) -> AmpSchedule:
    r = model.r
    zero_field = not model.has_field
    if not (0.0 < delta <= (1.0 - q1) / 3.0 + 1e-15):
        raise ValidationError("delta must lie in (0, (1 - q1)/3]")
    base = delta if zero_field else float(q1)
    steps = int(np.floor((1.0 - 2.0 * delta - base) / delta + 1e-9))
    if steps < 1:
        raise GridTooCoarse("no Stage II step fits below 1 - 2 delta")
    q_grid = base + delta * np.arange(steps + 1)
    phi_grid = _interp_path(tree, q_grid)
    if not zero_field:
        phi_grid[0] = np.asarray(phi_q1, dtype=float)
    xi_grid = np.array([model.xi_s(f) for f in phi_grid])
    dphi = np.diff(phi_grid, axis=0)
    dxi = np.diff(xi_grid, axis=0)
    if np.any(dphi < -1e-12) or np.any(dxi < -1e-12):
        raise NumericFailure("overlap path is not increasing on the grid")
    u = np.zeros_like(dphi)
    pos = dxi > 0
    u[pos] = np.sqrt(np.maximum(dphi[pos], 0.0) / dxi[pos])

    a_vec = np.zeros(r) if zero_field else stage1_coefficients(model, phi_q1)
    R_root = np.zeros(r) if zero_field else overlap_recursion(model, phi_q1, ell_low)[ell_low]

    onsager = np.zeros((steps, steps + 1, r))
    for i in range(steps):
        for j in range(i + 1):
            if j == 0:
                if zero_field:
                    continue
                deriv = a_vec - u[0] if i > 0 else a_vec
                arg = R_root
            else:
                deriv = u[j - 1] - u[j] if j < i else u[i - 1]
                arg = phi_grid[j - 1]
            D = model.calculus(np.clip(arg, 0.0, 1.0)).d_xi_s
            onsager[i, j] = D @ deriv

    # state evolution gives the first increment variance xi(Phi(q1)) - 2 xi(R) + xi(Phi(q1))
    # with the root, or xi(Phi(delta)) from z = 0 without field
    if zero_field:
        natural = xi_grid[0]
    else:
        natural = 2.0 * (xi_grid[0] - model.xi_s(R_root))
    kick = np.sqrt(np.maximum(dxi[0] - natural, 0.0))

    sched = AmpSchedule(
        phi_q1=np.zeros(r) if zero_field else np.asarray(phi_q1, dtype=float).copy(),
        a_vec=a_vec,
        ell_low=int(ell_low),
        delta=float(delta),
        q_grid=q_grid,
        phi_grid=phi_grid,
        xi_grid=xi_grid,
        u=u,
        onsager=onsager,
        kick=kick,
        se_cov={},
        zero_field=zero_field,
        meta={"root_overlap": R_root},
    )
    sched.se_cov = stage2_se(sched)
    if not zero_field:
        sched.se_cov.update(stage1_se(model, phi_q1, ell_low))
    return sched


def stage2_se(sched: AmpSchedule) -> dict:
    """Covariances of the limiting processes Z and N on the grid.

    Z is a Brownian motion run at clock xi^s(Phi(q)); N starts with variance
    Phi(q_0), is independent of the increments, and accumulates u times them.
    """
    n = sched.steps + 1
    r = sched.u.shape[1]
    t = sched.xi_grid
    cov_z = np.empty((n, n, r))
    cov_n = np.empty((n, n, r))
    cov_dz = np.empty((n - 1, n, r))
    for s in range(r):
        dt = np.diff(t[:, s])
        cov_z[:, :, s] = np.minimum.outer(t[:, s], t[:, s])
        # N_i = N_0 + sum_{k<i} u_k (Z_{k+1} - Z_k)
        A = np.tril(np.ones((n, n - 1)), -1) * sched.u[:, s][None, :]
        cov_n[:, :, s] = sched.phi_grid[0, s] + (A * dt[None, :]) @ A.T
        Z = cov_z[:, :, s]
        cov_dz[:, :, s] = Z[1:, :] - Z[:-1, :]
    return {"cov_z": cov_z, "cov_n": cov_n, "cov_dz_z": cov_dz}


def se_identity_errors(model: MixtureModel, sched: AmpSchedule) -> dict:
    """Largest violation of each covariance identity the tables must satisfy."""
    se = sched.se_cov
    n = sched.steps + 1
    idx = np.arange(n)
    mn = np.minimum.outer(idx, idx)
    out = {}
    out["n_overlap"] = float(np.max(np.abs(se["cov_n"] - sched.phi_grid[mn])))
    out["z_overlap"] = float(np.max(np.abs(se["cov_z"] - sched.xi_grid[mn])))
    dz = se["cov_z"][1:, 1:] - se["cov_z"][1:, :-1] - se["cov_z"][:-1, 1:] + se["cov_z"][:-1, :-1]
    diag = np.array([dz[i, i] for i in range(n - 1)])
    out["increment_variance"] = float(np.max(np.abs(diag - np.diff(sched.xi_grid, axis=0))))
    past = np.tril(np.ones((n - 1, n), dtype=bool))  # j <= i
    out["increment_orthogonality"] = float(np.max(np.abs(se["cov_dz_z"][past])))
    out["u_increment"] = float(
        np.max(np.abs(sched.u**2 * np.diff(sched.xi_grid, axis=0) - np.diff(sched.phi_grid, axis=0)))
    )
    if "cov_m" in se:
        cm, cw = se["cov_m"], se["cov_w"]
        k = cm.shape[0]
        R = overlap_recursion(model, sched.phi_q1, k)
        phi = sched.phi_q1
        e1 = e2 = e3 = e4 = 0.0
        for j in range(k):
            e1 = max(e1, float(np.max(np.abs(cw[j, j] - model.xi_s(phi)))))
            e3 = max(e3, float(np.max(np.abs(cm[j, j] - phi))))
            for l in range(j + 1, k):
                e2 = max(e2, float(np.max(np.abs(cw[j, l] - model.xi_s(R[j])))))
                e4 = max(e4, float(np.max(np.abs(cm[j, l] - R[j + 1]))))
        out.update({"w_variance": e1, "w_cross": e2, "m_variance": e3, "m_cross": e4})
    return out


# ---------------------------------------------------------------------------
# Stage II


@dataclass
class Stage2Result:
    n: np.ndarray
    eps: np.ndarray
    overlap: np.ndarray
    martingale: np.ndarray
    energy_tilde: np.ndarray
    energy: np.ndarray
    output: np.ndarray
    output_energy: float


def stage2_run(
    H: Hamiltonian,
    model: MixtureModel,
    stage1: Stage1Result | None,
    sched: AmpSchedule,
    rng=None,
) -> Stage2Result:
    rng = algorithm_rng(H.seed) if rng is None else rng
    sp = H.species
    steps = sched.steps
    r = model.r
    if sched.zero_field:
        root = np.sqrt(sched.phi_grid[0])[sp] * rng.standard_normal(H.N)
        z_prev = np.zeros(H.N)
        m_before = np.zeros(H.N)
        eps = np.zeros(r)
    else:
        if stage1 is None:
            raise ValidationError("a Stage I result is needed when the field is nonzero")
        k = stage1.m.shape[0] - 1
        R_last = overlaps(H, stage1.m[k], stage1.m[k])
        eps = np.sqrt(sched.phi_q1 / R_last) - 1.0
        root = (1.0 + eps)[sp] * stage1.m[k]
        z_prev = stage1.w[k] - H.h_vec
        m_before = stage1.m[k - 1]

    n = np.empty((steps + 1, H.N))
    n[0] = root
    z_ref = z_prev - sched.kick[sp] * rng.standard_normal(H.N)
    e_tilde = np.empty(steps + 1)
    e_full = np.empty(steps + 1)
    for i in range(steps):
        ge = grad_energy(H, n[i], field=False)
        e_tilde[i] = ge.energy / H.N
        e_full[i] = (ge.energy + float(H.h_vec @ n[i])) / H.N
        z_next = ge.grad - sched.onsager[i, 0][sp] * m_before
        for j in range(1, i + 1):
            z_next -= sched.onsager[i, j][sp] * n[j - 1]
        n[i + 1] = n[i] + sched.u[i][sp] * (z_next - z_ref)
        z_ref = z_next
        _check_blowup(overlaps(H, n[i + 1], n[i + 1]), "Stage II")
    ge = grad_energy(H, n[steps], field=False)
    e_tilde[steps] = ge.energy / H.N
    e_full[steps] = (ge.energy + float(H.h_vec @ n[steps])) / H.N

    ov = np.empty((steps + 1, steps + 1, r))
    for i in range(steps + 1):
        for j in range(i, steps + 1):
            ov[i, j] = ov[j, i] = overlaps(H, n[i], n[j])
    mart = np.full((steps, steps + 1, r), np.nan)
    for i in range(steps):
        d = n[i + 1] - n[i]
        for j in range(i + 1):
            mart[i, j] = overlaps(H, d, n[j])

    scale = 1.0 / np.sqrt(ov[steps, steps])
    out = scale[sp] * n[steps]
    out_energy = grad_energy(H, out).energy / H.N
    return Stage2Result(n, eps, ov, mart, e_tilde, e_full, out, out_energy)


def round_to_spheres(H: Hamiltonian, x) -> np.ndarray:
    R = overlaps(H, x, x)
    return (1.0 / np.sqrt(R))[H.species] * x


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class SeedReport:
    seed: int
    stage1_self: np.ndarray | None
    stage1_lag: np.ndarray | None
    stage1_energy: np.ndarray | None
    stage2_overlap: np.ndarray | None
    stage2_martingale: np.ndarray | None
    stage2_energy: np.ndarray | None
    pre_rounding_energy: float
    final_energy: float
    output_norms: np.ndarray
    deviations: dict


@dataclass
class AmpReport:
    N: int
    delta: float
    ell_low: int
    seeds: list
    alg_ref: float
    predicted_stage1: np.ndarray | None
    predicted_stage2: np.ndarray | None
    predicted_gain: np.ndarray | None
    stage2_ran: bool
    reports: list
    failures: dict
    deviations: dict

    @property
    def final_energies(self) -> np.ndarray:
        return np.array([rep.final_energy for rep in self.reports])

    @property
    def mean_final_energy(self) -> float:
        return float(self.final_energies.mean())

    @property
    def mean_abs_gap(self) -> float:
        return float(np.mean(np.abs(self.final_energies - self.alg_ref)))

    def to_dict(self) -> dict:
        def arr(x):
            return None if x is None else np.asarray(x).tolist()

        return {
            "N": self.N,
            "delta": self.delta,
            "ell_low": self.ell_low,
            "seeds": list(self.seeds),
            "alg_ref": self.alg_ref,
            "mean_final_energy": self.mean_final_energy,
            "mean_abs_gap": self.mean_abs_gap,
            "stage2_ran": self.stage2_ran,
            "predicted_stage1": arr(self.predicted_stage1),
            "predicted_stage2": arr(self.predicted_stage2),
            "predicted_gain": arr(self.predicted_gain),
            "deviations": self.deviations,
            "failures": {str(k): v for k, v in self.failures.items()},
            "per_seed": [
                {
                    "seed": rep.seed,
                    "final_energy": rep.final_energy,
                    "pre_rounding_energy": rep.pre_rounding_energy,
                    "output_norms": arr(rep.output_norms),
                    "stage1_self_overlap": arr(rep.stage1_self),
                    "stage1_lag_overlap": arr(rep.stage1_lag),
                    "stage1_energy": arr(rep.stage1_energy),
                    "stage2_overlap": arr(rep.stage2_overlap),
                    "stage2_martingale": arr(rep.stage2_martingale),
                    "stage2_energy": arr(rep.stage2_energy),
                    "deviations": rep.deviations,
                }
                for rep in self.reports
            ],
        }


def _path_for(model: MixtureModel, alg: AlgResult):
    best = alg.candidates[alg.maximizer_index]
    return best.phi_q1, best.q1, best.tree


def _one_seed(model, N, seed, sched, phi_q1, ell_low, R_pred) -> SeedReport:
    H = sample_hamiltonian(model, N, seed)
    rng = algorithm_rng(seed)
    dev = {}
    s1 = None
    if model.has_field:
        s1 = stage1_run(H, model, phi_q1, ell_low, rng)
        dev["stage1_lag"] = float(np.max(np.abs(s1.lag_overlap[1:] - R_pred[1:])))
        dev["stage1_self"] = float(np.max(np.abs(s1.self_overlap - phi_q1[None, :])))
    s2 = None
    if sched is not None:
        s2 = stage2_run(H, model, s1, sched, rng)
        idx = np.arange(sched.steps + 1)
        target = sched.phi_grid[np.minimum.outer(idx, idx)]
        dev["stage2_overlap"] = float(np.max(np.abs(s2.overlap - target)))
        dev["martingale"] = float(np.nanmax(np.abs(s2.martingale)))
        out, pre = s2.output, s2.energy[-1]
    else:
        last = s1.m[-1]
        pre = float(s1.energy[-1])
        out = round_to_spheres(H, last)
    final = grad_energy(H, out).energy / H.N
    return SeedReport(
        seed=int(seed),
        stage1_self=None if s1 is None else s1.self_overlap,
        stage1_lag=None if s1 is None else s1.lag_overlap,
        stage1_energy=None if s1 is None else s1.energy,
        stage2_overlap=None if s2 is None else s2.overlap,
        stage2_martingale=None if s2 is None else s2.martingale,
        stage2_energy=None if s2 is None else s2.energy,
        pre_rounding_energy=float(pre),
        final_energy=float(final),
        output_norms=overlaps(H, out, out),
        deviations=dev,
    )


def run_full(
    model: MixtureModel,
    N: int,
    delta: float = DELTA,
    ell_low: int = ELL_LOW,
    seeds=(17,),
    alg: AlgResult | None = None,
    threads: int = 1,
) -> AmpReport:
    """Run both stages on every seed and compare the final energies with ALG.

    Stage II is skipped when no grid step fits above q1 (for
    instance when the whole unit vector is super-solvable and q1 = 1).
    """
    if alg is None:
        alg = alg_value(model)
    phi_q1, q1, tree = _path_for(model, alg)
    phi_q1 = np.asarray(phi_q1, dtype=float)
    seeds = sorted(int(s) for s in seeds)
    if not seeds:
        raise ValidationError("at least one seed is required")

    sched = None
    if tree is not None:
        try:
            sched = build_schedule(model, phi_q1, q1, delta, ell_low, tree)
        except GridTooCoarse:
            log.info("Stage II skipped: q1 = %.6f leaves no room for a step", q1)
    if sched is None and not model.has_field:
        raise GridTooCoarse("a zero-field model needs at least one Stage II step")

    R_pred = overlap_recursion(model, phi_q1, ell_low) if model.has_field else None
    if model.has_field:
        log.debug("Stage I runs %d iterations toward Phi(q1) = %s", ell_low, phi_q1)

    def task(seed):
        try:
            return seed, _one_seed(model, N, seed, sched, phi_q1, ell_low, R_pred), None
        except NumericBlowup as exc:
            return seed, None, str(exc)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, seeds))
    else:
        results = [task(s) for s in seeds]
    results.sort(key=lambda t: t[0])
    reports = [rep for _, rep, err in results if rep is not None]
    failures = {seed: err for seed, _, err in results if err is not None}
    if len(failures) * 2 > len(seeds):
        raise NumericBlowup(f"{len(failures)} of {len(seeds)} seeds diverged")

    keys = sorted({k for rep in reports for k in rep.deviations})
    deviations = {k: max(rep.deviations[k] for rep in reports if k in rep.deviations) for k in keys}
    gain = None
    if sched is not None:
        dphi = np.diff(sched.phi_grid, axis=0)
        dxi = np.diff(sched.xi_grid, axis=0)
        gain = np.sqrt(np.maximum(dphi * dxi, 0.0)) @ model.lam
    return AmpReport(
        N=int(N),
        delta=float(delta),
        ell_low=int(ell_low),
        seeds=seeds,
        alg_ref=float(alg.alg),
        predicted_stage1=R_pred,
        predicted_stage2=None if sched is None else sched.phi_grid,
        predicted_gain=gain,
        stage2_ran=sched is not None,
        reports=reports,
        failures=failures,
        deviations=deviations,
    )
