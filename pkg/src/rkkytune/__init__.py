"""Tunable fermion-mediated interactions between lattice-trapped bosons.

Modules
-------
spectra   single-particle eigenbases of the fermionic mediator (1D and 2D)
kernel    second-order mediated kernel, asymptotic forms, fits, transforms
lattice   Gaussian-smeared lattice couplings, ratio and kagome scans
manybody  exact diagonalisation of hardcore-boson chains and observables
cli       batch front-end
"""
__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402

__all__ = ["__version__", "BACKEND"]
