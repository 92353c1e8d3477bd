"""Fluctuation analysis toolkit for supercritical multitype branching
processes with non-local offspring on finite type spaces.

Core entry points:

* ``model``: model definition, validation, offspring pair-correlation form.
* ``spectral``: mean-semigroup generator, eigen/Jordan structure, regime
  classification.
* ``moments``: exact joint moments (evolution equation + ODE oracle).
* ``limits``: martingale transforms, strong-law limits, covariance kernels.
* ``simulate``: exact Monte Carlo (event-driven and closed-form engines).
* ``verify``: statistical checks tying simulation to the limit theory.
"""

__version__ = "0.1.0"

from . import canonical, limits, model, moments, spectral, verify  # noqa: F401
from .model import BranchingModel, build_model  # noqa: F401
