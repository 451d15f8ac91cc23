import numpy as np
import pytest

from ordcon.autodiff import Tape
from ordcon.proxies import ProxyBank


@pytest.fixture
def tape():
    return Tape()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_bank(rng, lo, hi, dim, seed=0):
    """Bank whose assignable labels are lo..hi (sentinels lo-1 and hi+1)."""
    vecs = rng.normal(size=(hi - lo + 3, dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return ProxyBank(lo - 1, hi + 1, vecs, seed)


def vec_of(bank, label):
    """Proxy vector for any label in range, sentinels included."""
    return bank.vectors[bank.row(label)]
