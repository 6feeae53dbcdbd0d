import numpy as np
import pytest

from isodot import FragmentLengthDist


@pytest.fixture
def point_mass():
    """Point-mass fragment length distribution factory (d=76, l_M=400)."""

    def make(length: int, d: int = 76, l_m: int = 400) -> FragmentLengthDist:
        return FragmentLengthDist(d=d, l_M=l_m, probs={length: 1.0})

    return make


@pytest.fixture
def random_dist():
    """Random 3-point fragment length distribution on [76, 400]."""

    def make(rng: np.random.Generator) -> FragmentLengthDist:
        lengths = rng.choice(np.arange(76, 401), size=3, replace=False)
        weights = rng.dirichlet(np.ones(3))
        return FragmentLengthDist(
            d=76, l_M=400, probs={int(l): float(w) for l, w in zip(lengths, weights)}
        )

    return make
