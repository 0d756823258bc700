"""Gravity-related collapse of a mirror superposition driven by a single photon:
decay rates, photon-detection curves, trajectory simulation and inversion."""

__version__ = "0.1.0"

from .physics import (  # noqa: E402
    BranchWeights,
    CollapseModelConfig,
    DomainError,
    DriveCircuitSpec,
    InterferometerSpec,
    MicroEnhancementParams,
    MirrorSpec,
    PhotodiodeSpec,
    PhysicalConstants,
    PiezoSpec,
    branch_weights,
    decay_rate,
    detection_probability,
    dp_quadratic_coefficient,
    micro_enhancement,
    mirror_displacement,
)
from .scenario import ExperimentScenario, TimeGrid  # noqa: E402

__all__ = [
    "BranchWeights", "CollapseModelConfig", "DomainError", "DriveCircuitSpec",
    "ExperimentScenario", "InterferometerSpec", "MicroEnhancementParams", "MirrorSpec",
    "PhotodiodeSpec", "PhysicalConstants", "PiezoSpec", "TimeGrid", "branch_weights",
    "decay_rate", "detection_probability", "dp_quadratic_coefficient", "micro_enhancement",
    "mirror_displacement",
]
