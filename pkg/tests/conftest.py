import numpy as np
import pytest

from robustpref.prefgen import ActionSpace


def make_space(values, features=None) -> ActionSpace:
    values = np.asarray(values, dtype=float)
    return ActionSpace(tuple(f"a{i}" for i in range(len(values))), values, features)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
