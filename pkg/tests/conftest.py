from __future__ import annotations

import numpy as np
import pytest

from mi2sl.swm import SpatialWeights, generate_small_world, normalize_max_row_sum


def ring(n: int) -> SpatialWeights:
    w = np.zeros((n, n))
    for i in range(n):
        w[i, (i + 1) % n] = w[(i + 1) % n, i] = 1.0
    return SpatialWeights(w)


def random_symmetric(rng: np.random.Generator, n: int, density: float = 0.5) -> SpatialWeights:
    a = rng.random((n, n)) * (rng.random((n, n)) < density)
    a = np.triu(a, 1)
    a = a + a.T
    if not a.any():
        a[0, 1] = a[1, 0] = 1.0
    return SpatialWeights(a)


@pytest.fixture(scope="session")
def sw100() -> SpatialWeights:
    return normalize_max_row_sum(generate_small_world(100, 10, 0.4, 11))
