"""Relative oscillation toolkit for Sturm-Liouville operators.

Decides whether a perturbed operator inserts finitely or infinitely many
eigenvalues into an essential spectral gap of a background operator, using
effective Pruefer angles, iterated-log threshold criteria, phase-equation
averaging, and Floquet band data for periodic backgrounds.
"""

from .kernels import NUMBA_ENABLED

__version__ = "0.1.0"

__all__ = ["NUMBA_ENABLED", "__version__"]
