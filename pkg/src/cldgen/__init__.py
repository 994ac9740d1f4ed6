"""Generative modeling with position-noise-regularized kinetic Langevin diffusions.

The forward process is a linear SDE on position-velocity phase space whose
operators all factor as 2x2 blocks; training uses hybrid score matching
against exact forward samples, and generation runs a discretized backward
process from the stationary law.
"""

from .forward import GaussianMixtureSpec, PhaseEnsemble
from .kinetics import Block2, KineticParams, Schedule

__all__ = ["Block2", "KineticParams", "Schedule", "PhaseEnsemble", "GaussianMixtureSpec"]

__version__ = "0.1.0"
