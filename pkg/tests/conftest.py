import numpy as np
import pytest

from cppmech.instance import Instance
from cppmech.verify import random_coverage, random_instance, random_mrs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_instances(count, seed, **kw):
    rng = np.random.default_rng(seed)
    return [random_instance(rng, **kw) for _ in range(count)]


def coverage_instance(n, m, k, seed):
    rng = np.random.default_rng(seed)
    return Instance(n, m, k, tuple(random_coverage(m, rng) for _ in range(n)))


def mrs_instance(n, m, k, seed):
    rng = np.random.default_rng(seed)
    return Instance(n, m, k, tuple(random_mrs(m, rng) for _ in range(n)))
