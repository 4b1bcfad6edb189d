"""Mixture polynomial xi, species weights and external field."""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .errors import ValidationError

log = logging.getLogger(__name__)

MAX_DEGREE = 6
MAX_SPECIES = 8


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """Model (xi, lambda, h).

    ``exponents`` is a (terms, r) integer array and ``coeffs`` the matching
    nonnegative coefficients, so xi(x) = sum_t coeffs[t] * prod_s x_s**exponents[t, s].
    Like monomials are merged on construction.
    """

    lam: np.ndarray
    h: np.ndarray
    exponents: np.ndarray
    coeffs: np.ndarray

    def __init__(self, lam, h, exponents, coeffs, warn=True):
        lam = np.asarray(lam, dtype=float).reshape(-1)
        h = np.asarray(h, dtype=float).reshape(-1)
        exps = np.asarray(exponents, dtype=np.int64)
        coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
        r = lam.shape[0]
        if not 1 <= r <= MAX_SPECIES:
            raise ValidationError(f"species count must be in 1..{MAX_SPECIES}, got {r}")
        if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
            raise ValidationError("lambda entries must be positive")
        if abs(lam.sum() - 1.0) > 1e-12:
            raise ValidationError(f"lambda must sum to 1 (got {lam.sum():.17g})")
        if h.shape != (r,):
            raise ValidationError("h must have one entry per species")
        if np.any(~np.isfinite(h)) or np.any(h < 0):
            raise ValidationError("h entries must be nonnegative")
        if exps.ndim != 2 or exps.shape[1] != r or exps.shape[0] == 0:
            raise ValidationError("xi needs a nonempty term list with exponent vectors of length r")
        if coeffs.shape[0] != exps.shape[0]:
            raise ValidationError("one coefficient per exponent vector")
        if np.any(exps < 0):
            raise ValidationError("exponents must be nonnegative")
        deg = exps.sum(axis=1)
        if np.any(deg < 2):
            raise ValidationError("every monomial must have total degree >= 2")
        if np.any(deg > MAX_DEGREE):
            raise ValidationError(f"total degree capped at {MAX_DEGREE}")
        if np.any(~np.isfinite(coeffs)) or np.any(coeffs < 0):
            raise ValidationError("xi coefficients must be nonnegative")
        merged: dict[tuple, float] = {}
        for row, c in zip(exps, coeffs):
            key = tuple(int(v) for v in row)
            merged[key] = merged.get(key, 0.0) + float(c)
        keys = sorted(merged)
        exps = np.array(keys, dtype=np.int64).reshape(len(keys), r)
        coeffs = np.array([merged[k] for k in keys], dtype=float)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "coeffs", coeffs)
        for arr in (lam, h, exps, coeffs):
            arr.setflags(write=False)
        if warn and not self.non_degenerate:
            log.warning("xi lacks some quadratic or cubic interaction; solvers proceed anyway")

    # -- basic properties -------------------------------------------------

    @property
    def r(self) -> int:
        return int(self.lam.shape[0])

    @property
    def h2(self) -> np.ndarray:
        return self.h * self.h

    @property
    def degree(self) -> int:
        return int(self.exponents.sum(axis=1).max())

    @property
    def has_field(self) -> bool:
        return bool(np.any(self.h > 0))

    @property
    def terms(self) -> list[tuple[tuple[int, ...], float]]:
        return [(tuple(int(v) for v in e), float(c)) for e, c in zip(self.exponents, self.coeffs)]

    @property
    def non_degenerate(self) -> bool:
        """True iff every quadratic and cubic monomial appears with positive weight."""
        present = {e: c for e, c in self.terms if c > 0}
        for k in (2, 3):
            for combo in itertools.combinations_with_replacement(range(self.r), k):
                alpha = [0] * self.r
                for s in combo:
                    alpha[s] += 1
                if tuple(alpha) not in present:
                    return False
        return True

    def with_field(self, h) -> "MixtureModel":
        return MixtureModel(self.lam, h, self.exponents, self.coeffs, warn=False)

    def add_term(self, alpha, coeff) -> "MixtureModel":
        exps = np.vstack([self.exponents, np.asarray(alpha, dtype=np.int64)[None, :]])
        return MixtureModel(self.lam, self.h, exps, np.append(self.coeffs, coeff), warn=False)

    # -- I/O ----------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict, warn=True) -> "MixtureModel":
        try:
            lam = data["lambda"]
            h = data.get("h", [0.0] * len(lam))
            xi = data["xi"]
            exps = [t["exponents"] for t in xi]
            coeffs = [t["coeff"] for t in xi]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed model description: {exc}") from exc
        return cls(lam, h, exps, coeffs, warn=warn)

    def to_dict(self) -> dict:
        return {
            "lambda": [float(v) for v in self.lam],
            "h": [float(v) for v in self.h],
            "xi": [{"exponents": list(e), "coeff": c} for e, c in self.terms],
        }

    @classmethod
    def load(cls, path, warn=True) -> "MixtureModel":
        try:
            with open(Path(path)) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read model file {path}: {exc}") from exc
        return cls.from_dict(data, warn=warn)

    # -- evaluation -----------------------------------------------------------

    def _point(self, x, x_max):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape != (self.r,):
            raise ValidationError(f"point must have {self.r} coordinates")
        if np.any(~np.isfinite(x)) or np.any(x < 0) or np.any(x > x_max):
            raise ValidationError(f"point must lie in [0, {x_max}]^r")
        return x

    def xi(self, x, x_max: float = 2.0) -> float:
        return float(K.poly_eval(self.exponents, self.coeffs, self._point(x, x_max)))

    def calculus(self, x, x_max: float = 2.0) -> "XiCalculus":
        x = self._point(x, x_max)
        val, g, H, D3 = K.poly_derivs(self.exponents, self.coeffs, x)
        lam = self.lam
        return XiCalculus(
            value=float(val),
            grad=g,
            hess=H,
            xi_s=g / lam,
            d_xi_s=H / lam[:, None],
            dd_xi_s=D3 / lam[:, None, None],
        )

    def xi_s(self, x) -> np.ndarray:
        """Vector of xi^s(x) = dxi/dx_s / lambda_s."""
        g, _ = K.poly_grad_hess(self.exponents, self.coeffs, np.asarray(x, dtype=float))
        return g / self.lam


@dataclass(frozen=True)
class XiCalculus:
    value: float
    grad: np.ndarray
    hess: np.ndarray
    xi_s: np.ndarray
    d_xi_s: np.ndarray
    dd_xi_s: np.ndarray


def eval_xi(model: MixtureModel, x, x_max: float = 2.0) -> float:
    return model.xi(x, x_max)


def xi_calculus(model: MixtureModel, x, x_max: float = 2.0) -> XiCalculus:
    return model.calculus(x, x_max)


def rescaled_terms(terms, factors):
    """Terms of nu(c_1 x_1, ..., c_r x_r) given the terms of nu."""
    out = []
    factors = [float(f) for f in factors]
    for alpha, coeff in terms:
        scale = math.prod(f**a for f, a in zip(factors, alpha))
        out.append((tuple(alpha), coeff * scale))
    return out


def model_from_terms(lam, h, terms, warn=True) -> MixtureModel:
    exps = [t[0] for t in terms]
    coeffs = [t[1] for t in terms]
    return MixtureModel(lam, h, exps, coeffs, warn=warn)


# ---------------------------------------------------------------------------
# sampling tensors


@dataclass(frozen=True)
class CoefficientTensors:
    """Per degree k, the symmetric array gamma over species multi-indices."""

    lam: np.ndarray
    gamma: dict

    def gamma_sq(self, k: int) -> np.ndarray:
        return self.gamma[k] ** 2


def _multinomial(alpha) -> int:
    out = math.factorial(sum(alpha))
    for a in alpha:
        out //= math.factorial(a)
    return out


def gamma_from_xi(model: MixtureModel) -> CoefficientTensors:
    """Invert the covariance identity xi(x) = sum_k <Gamma^2, (lambda x)^{(k)}>."""
    if np.any(model.coeffs < 0):
        raise ValidationError("negative xi coefficient cannot be realised by a Gaussian tensor")
    r = model.r
    lam = model.lam
    gamma: dict[int, np.ndarray] = {}
    for alpha, coeff in model.terms:
        k = sum(alpha)
        arr = gamma.setdefault(k, np.zeros((r,) * k))
        g2 = coeff / (_multinomial(alpha) * math.prod(lam[s] ** alpha[s] for s in range(r)))
        base = [s for s in range(r) for _ in range(alpha[s])]
        for idx in set(itertools.permutations(base)):
            arr[idx] = math.sqrt(g2)
    return CoefficientTensors(lam=lam.copy(), gamma=gamma)


def xi_from_gamma(tensors: CoefficientTensors) -> dict:
    """Coefficient of each monomial implied by the tensors (inverse of gamma_from_xi)."""
    lam = tensors.lam
    r = lam.shape[0]
    out: dict[tuple, float] = {}
    for k, arr in tensors.gamma.items():
        for idx in itertools.product(range(r), repeat=k):
            g2 = arr[idx] ** 2
            if g2 == 0.0:
                continue
            alpha = [0] * r
            for s in idx:
                alpha[s] += 1
            key = tuple(alpha)
            out[key] = out.get(key, 0.0) + g2 * math.prod(lam[s] for s in idx)
    return out
