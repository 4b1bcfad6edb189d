import itertools
import os

import numpy as np
import pytest
from hypothesis import strategies as st

from mssg.mixture import MixtureModel

MODELS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "models")


def model_path(name: str) -> str:
    return os.path.join(MODELS_DIR, f"{name}.json")


def load(name: str) -> MixtureModel:
    return MixtureModel.load(model_path(name), warn=False)


@pytest.fixture
def models_dir():
    return MODELS_DIR


def full_model(r, coeff_rng, h, lam=None, max_degree=3):
    """Random non-degenerate model: every monomial of degree 2..max_degree present."""
    terms_e, terms_c = [], []
    for k in range(2, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(r), k):
            alpha = [0] * r
            for s in combo:
                alpha[s] += 1
            terms_e.append(alpha)
            terms_c.append(coeff_rng.uniform(0.1, 1.0))
    if lam is None:
        lam = coeff_rng.uniform(0.2, 1.0, r)
        lam = lam / lam.sum()
        lam[-1] = 1.0 - lam[:-1].sum()
    return MixtureModel(lam, h, terms_e, terms_c, warn=False)


@st.composite
def random_models(draw, r_max=3, field=None, max_degree=3):
    r = draw(st.integers(1, r_max))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    if field is None:
        field = draw(st.booleans())
    h = rng.uniform(0.2, 1.5, r) if field else np.zeros(r)
    return full_model(r, rng, h, max_degree=max_degree)
