"""Birman-Schwinger tools for a heavy impurity in a two-dimensional Fermi gas.

Modules: lattice (momenta, cutoffs, coupling), schur (finite-dimensional
Birman-Schwinger/Krein identities), fock (second-quantized sectors and exact
diagonalization), renorm (cutoff-free sums), polaron, molecule, delta
(rank-one contact example), convergence and cli.
"""

from .lattice import CutoffScheme, ModelParams, fermi_sea, make_scheme
from .molecule import solve_molecule
from .polaron import solve_polaron

__version__ = "0.1.0"

__all__ = ["CutoffScheme", "ModelParams", "fermi_sea", "make_scheme", "solve_molecule",
           "solve_polaron", "__version__"]
