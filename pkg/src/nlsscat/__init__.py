"""Direct scattering, entropy functionals and split-step NLS diagnostics."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AccuracyWarning,
    BoxSizeError,
    ConsistencyError,
    CoverageError,
    DomainError,
    GridAdequacyWarning,
    GridError,
    IntegrationError,
    NlsScatError,
    ParameterError,
)
from .potentials import SampledPotential, apply_symmetry, make_potential, sobolev_norm  # noqa: E402
from .scattering import ScatteringTable, a_from_reflection, a_upper_half, transition_coefficients  # noqa: E402
from .entropy import entropy_report, k_tilde  # noqa: E402
from .oscillation import equivalence_report, exp_smoothing, oscillation_sum, tail_average  # noqa: E402
from .nls import conservation_report, evolve_split_step  # noqa: E402

__all__ = [
    "AccuracyWarning", "BoxSizeError", "ConsistencyError", "CoverageError", "DomainError",
    "GridAdequacyWarning", "GridError", "IntegrationError", "NlsScatError", "ParameterError",
    "SampledPotential", "apply_symmetry", "make_potential", "sobolev_norm",
    "ScatteringTable", "a_from_reflection", "a_upper_half", "transition_coefficients",
    "entropy_report", "k_tilde",
    "equivalence_report", "exp_smoothing", "oscillation_sum", "tail_average",
    "conservation_report", "evolve_split_step",
]
