"""Ground state of multi-species spherical SK with an external field."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

ETA = 1e-6


@dataclass(frozen=True)
class QuadraticSkModel:
    W: np.ndarray
    v: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        r = lam.size
        if W.shape != (r, r) or v.shape != (r,):
            raise ValidationError("W must be r x r and v length r")
        if not np.array_equal(W, W.T):
            raise ValidationError("W must be symmetric")
        if np.any(W < 0) or np.any(v < 0):
            raise ValidationError("W and v must be nonnegative")
        if np.any(lam <= 0) or abs(lam.sum() - 1) > 1e-12:
            raise ValidationError("lambda must be positive and sum to one")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "lam", lam)

    @property
    def r(self) -> int:
        return self.lam.size

    def _interaction(self) -> np.ndarray:
        # 2 sum_t lambda_t w_st^2
        return 2.0 * (self.W**2) @ self.lam


def gs_closed_form(m: QuadraticSkModel) -> float:
    return float(m.lam @ np.sqrt(m.v**2 + m._interaction()))


def a_opt(m: QuadraticSkModel) -> np.ndarray:
    num = m.v**2
    den = num + m._interaction()
    out = np.zeros(m.r)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


def step_maps(m: QuadraticSkModel, a) -> QuadraticSkModel:
    a = np.asarray(a, dtype=float)
    if a.shape != (m.r,) or np.any(a < 0) or np.any(a > 1):
        raise ValidationError("a must lie in [0,1]^r")
    keep = np.sqrt(1.0 - a)
    W = keep[:, None] * m.W * keep[None, :]
    W = 0.5 * (W + W.T)
    v = np.sqrt(2.0 * (1.0 - a) * ((m.W**2) @ (m.lam * a)))
    return QuadraticSkModel(W, v, m.lam)


@dataclass
class RecursionTrace:
    E: np.ndarray
    F: np.ndarray
    alpha: np.ndarray
    eta: float


def regularise(m: QuadraticSkModel, eta: float = ETA) -> tuple[QuadraticSkModel, float]:
    """Lift zero field components to eta so the recursion can start."""
    if np.all(m.v > 0):
        return m, 0.0
    v = np.where(m.v > 0, m.v, eta)
    return QuadraticSkModel(m.W, v, m.lam), eta


def recursion_trace(m: QuadraticSkModel, T: int, eta: float = ETA) -> RecursionTrace:
    m, used = regularise(m, eta)
    E = np.empty(T + 1)
    F = np.empty(T)
    alpha = np.empty(T)
    cur = m
    for t in range(T):
        E[t] = gs_closed_form(cur)
        a = a_opt(cur)
        alpha[t] = a.min()
        F[t] = float(cur.lam @ (cur.v * np.sqrt(a)))
        cur = step_maps(cur, a)
    E[T] = gs_closed_form(cur)
    return RecursionTrace(E, F, alpha, used)


def finite_n_estimate(w: float, N: int, seed: int = 17, tol: float = 1e-9, max_iter: int = 100_000) -> float:
    """w * lambda_max((G + G^T)/2) / sqrt(N) for an N x N standard Gaussian G."""
    if w < 0:
        raise ValidationError("w must be nonnegative")
    rng = np.random.Generator(np.random.Philox(seed))
    G = rng.standard_normal((N, N))
    S = 0.5 * (G + G.T) / np.sqrt(N)
    # shift so the top eigenvalue dominates in magnitude
    shift = 1.5
    x = rng.standard_normal(N)
    x /= np.linalg.norm(x)
    mu = 0.0
    for _ in range(max_iter):
        y = S @ x + shift * x
        mu_new = float(x @ y)
        x = y / np.linalg.norm(y)
        if abs(mu_new - mu) <= tol * abs(mu_new):
            mu = mu_new
            break
        mu = mu_new
    return w * (mu - shift)
