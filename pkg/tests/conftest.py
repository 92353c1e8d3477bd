import numpy as np
import pytest

from branchfluct import canonical
from branchfluct.model import build_model


@pytest.fixture(scope="session")
def pairs():
    """(model, eigen-structure) for every canonical model, built once."""
    return {name: canonical.get_pair(name) for name in canonical.canonical_names()}


@pytest.fixture(scope="session")
def cyclic_model():
    """Three types feeding each other in a cycle: one real eigenvalue at 1 and
    a complex pair at -1/2 +- sqrt(3)/2 i (small regime, oscillatory)."""
    return build_model(
        labels=["a", "b", "c"],
        q=np.zeros((3, 3)),
        gamma=[1.0, 1.0, 1.0],
        offspring=[
            [(1.0, [1, 1, 0])],
            [(1.0, [0, 1, 1])],
            [(1.0, [1, 0, 1])],
        ],
    )


@pytest.fixture(scope="session")
def small3_model():
    """Three-type small-regime model with a two-dimensional remainder space,
    so the fast-decay covariance block is genuinely nonzero."""
    return build_model(
        labels=["a", "b", "c"],
        q=np.zeros((3, 3)),
        gamma=[1.0, 1.0, 1.0],
        offspring=[
            [(1.0, [2, 0, 0])],
            [(0.5, [1, 1, 0]), (0.35, [0, 1, 0]), (0.15, [0, 2, 0])],
            [(0.5, [0, 1, 1]), (0.4, [0, 0, 1]), (0.1, [0, 0, 0])],
        ],
    )
