"""Finite-difference reference solver."""

from .diagnostics import caccioppoli_ratio, radial_profile
from .fd import (FDSolveError, UnderResolvedWarning, assemble, assemble_neumann_box, build_lattice,
                 direct_solve, discrete_green, linear_solve, operator_matrix)
from .grid import Box, Disk, Embedded, GridField

__all__ = ["Box", "Disk", "Embedded", "GridField", "FDSolveError", "UnderResolvedWarning", "assemble",
           "assemble_neumann_box", "build_lattice", "caccioppoli_ratio", "direct_solve", "discrete_green",
           "linear_solve", "operator_matrix", "radial_profile"]
