import functools

import numpy as np
import pytest

from tnls.experiments import spectral_data
from tnls.grid import make_grid, reference_grid


@functools.lru_cache(maxsize=None)
def ref(N, M=4000):
    return reference_grid(N, M=M)


@functools.lru_cache(maxsize=None)
def plain(N, r_max, M, stretch=1.0):
    return make_grid(N, r_max, M, stretch)


def spec(N, M=4000):
    return spectral_data(ref(N, M))


@pytest.fixture(params=[3, 4, 5])
def N(request):
    return request.param


def bump(grid, c=3.0, w=1.0):
    """smooth, effectively compact"""
    return np.exp(-((grid.r - c) / w) ** 2)
