"""memslab: a finite-difference laboratory for an electrostatically actuated
clamped plate over a deforming gap.

Subpackages:
  grid        grids, stencils, discrete norms, snapshot CSV format
  potential   transformed-gap electrostatic solve, traces, forcing, energy
  identities  integral identities and inequalities checked as residuals
  dynamics    energy-monitored IMEX evolution and its audits
  semigroup   discrete clamped fourth-order semigroup and smoothing fits
  stationary  stationary solves and continuation toward the pull-in fold
  cli         flat-text configs, subcommands, artifact layout
"""

from .grid import GridSpec, ScalarField

__all__ = ["GridSpec", "ScalarField"]
__version__ = "0.1.0"
