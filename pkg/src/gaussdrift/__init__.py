"""Gaussian-operator propagation for a system particle in a dilute thermal bath."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .phasespace import (HBAR, GaussianOperator, InvalidDimensionError, SingularCovarianceError,
                         TraceLedger, centroid, eta_factor, hs_inner, symplectic_form, wigner_eval)
from .hamiltonians import ExperimentHamiltonian, FreeParticle, HamiltonianModel, HarmonicOscillator
from .propagator import DynamicalState, StiffnessError, integrate, rhs_diagonal, rhs_offdiagonal
from .environment import (BathParams, dof_count, drop_particle, inject_particle, maybe_inject,
                          sample_bath, should_drop)
from .experiment import (CoherenceSeries, DecayFit, InsufficientDataError, coherence_norm,
                         fit_decay, run_ensemble, run_experiment)
from .config import ConfigError, RunConfig, load_config

__all__ = [
    "HBAR", "GaussianOperator", "InvalidDimensionError", "SingularCovarianceError", "TraceLedger",
    "centroid", "eta_factor", "hs_inner", "symplectic_form", "wigner_eval",
    "ExperimentHamiltonian", "FreeParticle", "HamiltonianModel", "HarmonicOscillator",
    "DynamicalState", "StiffnessError", "integrate", "rhs_diagonal", "rhs_offdiagonal",
    "BathParams", "dof_count", "drop_particle", "inject_particle", "maybe_inject", "sample_bath",
    "should_drop", "CoherenceSeries", "DecayFit", "InsufficientDataError", "coherence_norm",
    "fit_decay", "run_ensemble", "run_experiment", "ConfigError", "RunConfig", "load_config",
]
