"""hiercoord: hierarchical set-point coordination for coupled subsystems.

A coordinator reconciles the coupling profiles of interacting dynamical
subsystems by fixed-point iteration, prices candidate set-points through a
central cost, and optimizes the set-point with a derivative-free
trust-region method.  A closed-loop harness and a cryogenic cold-box
surrogate benchmark demonstrate the scheme against a decentralized
baseline.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
