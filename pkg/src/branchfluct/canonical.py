"""Canonical benchmark models used throughout the tests and demos.

Five small models cover the regime trichotomy and the Jordan case:

* ``model_y``: one type, clean binary fission (Yule); large regime.
* ``model_l``: two types, generator [[3,0],[1,2]]; both eigenvalues large.
* ``model_c``: two symmetric types with mixture offspring, eigenvalues
  (1, 1/2); the sub-leading eigenvalue is exactly critical and the critical
  covariance kernel is non-degenerate.
* ``model_s``: two types, generator [[1,1],[1,1]], eigenvalues (2, 0);
  small regime.
* ``model_j``: two types, generator [[1,1],[0,1]]; defective leading
  eigenvalue with a rank-2 chain, declared explicitly.
"""

from __future__ import annotations

import numpy as np

from .model import build_model
from .spectral import build_eigenstructure, make_eigenstructure


def model_y():
    """Binary fission at unit rate, single type."""
    return build_model(
        labels=["a"],
        q=[[0.0]],
        gamma=[1.0],
        offspring=[[(1.0, [2])]],
    )


def model_s():
    """Two types feeding each other; eigenvalues (2, 0), small regime."""
    return build_model(
        labels=["a", "b"],
        q=np.zeros((2, 2)),
        gamma=[1.0, 1.0],
        offspring=[
            [(1.0, [2, 1])],
            [(1.0, [1, 2])],
        ],
    )


def model_l():
    """Two types, generator [[3,0],[1,2]]; both eigenvalues in the large regime."""
    return build_model(
        labels=["a", "b"],
        q=np.zeros((2, 2)),
        gamma=[1.0, 1.0],
        offspring=[
            [(1.0, [4, 0])],
            [(1.0, [1, 3])],
        ],
    )


def model_c():
    """Symmetric mixture model with eigenvalues (1, 1/2): exactly critical.

    Each parent keeps its own type on average 1.75 times and produces the
    other type 0.25 times; the offspring randomness makes the pair
    correlation of the sign functional (1, -1) strictly positive, so the
    critical limit kernel is non-degenerate.
    """
    return build_model(
        labels=["a", "b"],
        q=np.zeros((2, 2)),
        gamma=[1.0, 1.0],
        offspring=[
            [(0.25, [1, 1]), (0.75, [2, 0])],
            [(0.25, [1, 1]), (0.75, [0, 2])],
        ],
    )


def model_j():
    """Defective generator [[1,1],[0,1]]: one eigenvalue with a rank-2 chain."""
    return build_model(
        labels=["a", "b"],
        q=np.zeros((2, 2)),
        gamma=[1.0, 1.0],
        offspring=[
            [(1.0, [2, 1])],
            [(1.0, [0, 2])],
        ],
    )


def eigen_j():
    """Declared chain structure for model_j (never computed numerically)."""
    return make_eigenstructure(
        eigenvalues=[1.0],
        phi=[[[(1.0, 0.0)], [(0.0, 1.0)]]],
        duals=[[[(1.0, 0.0)], [(0.0, 1.0)]]],
        chain_links={(0, 1, 0): 0},
    )


def _simple_eigen(eigenvalues, vectors, duals):
    return make_eigenstructure(
        eigenvalues=eigenvalues,
        phi=[[[v]] for v in vectors],
        duals=[[[w]] for w in duals],
        chain_links={},
    )


_DECLARED = {
    "model_y": lambda: _simple_eigen([1.0], [(1.0,)], [(1.0,)]),
    "model_s": lambda: _simple_eigen(
        [2.0, 0.0],
        [(1.0, 1.0), (1.0, -1.0)],
        [(0.5, 0.5), (0.5, -0.5)],
    ),
    "model_l": lambda: _simple_eigen(
        [3.0, 2.0],
        [(1.0, 1.0), (0.0, 1.0)],
        [(1.0, 0.0), (-1.0, 1.0)],
    ),
    "model_c": lambda: _simple_eigen(
        [1.0, 0.5],
        [(1.0, 1.0), (1.0, -1.0)],
        [(0.5, 0.5), (0.5, -0.5)],
    ),
    "model_j": eigen_j,
}


def eigenstructure_for(name, model):
    """Validated eigen-structure with the conventional integer scaling."""
    return build_eigenstructure(model, declared=_DECLARED[name]())


_BUILDERS = {
    "model_y": model_y,
    "model_l": model_l,
    "model_c": model_c,
    "model_s": model_s,
    "model_j": model_j,
}


def canonical_names():
    return tuple(_BUILDERS)


def get_model(name):
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise KeyError(f"unknown canonical model {name!r}") from None


def get_pair(name):
    """(model, validated eigen-structure) for a canonical model name."""
    model = get_model(name)
    return model, eigenstructure_for(name, model)
