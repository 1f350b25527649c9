"""Pointwise maximal leakage (PML) assessment and mechanism design with estimated priors."""

from pmlkit.errors import InfeasibleError, InputError, InsufficientSamplesError, NumericalError, PMLError
from pmlkit.leakage import Mechanism, PrivacyGuarantee, eps_min, pml_per_outcome
from pmlkit.prob import Distribution, SampleSet, UncertaintySet, beta_star, estimate_distribution

__all__ = [
    "Distribution",
    "InfeasibleError",
    "InputError",
    "InsufficientSamplesError",
    "Mechanism",
    "NumericalError",
    "PMLError",
    "PrivacyGuarantee",
    "SampleSet",
    "UncertaintySet",
    "beta_star",
    "eps_min",
    "estimate_distribution",
    "pml_per_outcome",
]
