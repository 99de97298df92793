"""Modelling toolkit for erbium single-photon emitters in CaWO4.

Submodules
----------
lattice
    Scheelite geometry, nuclear and electronic spin-bath sampling, dipolar couplings.
cce
    Cluster-correlation expansion of central-spin coherence, ESEEM, decay fits.
hom
    Two-photon interference histograms, dephasing models, visibility inversion.
crystalfield
    S4 crystal-field Hamiltonians, Kramers-doublet g-tensors, axial perturbation fits.
rates
    Photon budget, cavity contrast, direct-process T1, cyclicity, readout fidelity.
impurity
    Paramagnetic-impurity concentration from Ramsey T2* by Monte-Carlo inversion.
"""

from .errors import DomainError, EstimationError, FitError

__version__ = "0.1.0"

__all__ = ["DomainError", "EstimationError", "FitError", "__version__"]
