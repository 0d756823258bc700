"""Closed-form physics of the single-mirror Michelson collapse experiment.

Everything here is SI and side-effect free. The component specs are frozen
dataclasses that validate themselves on construction; the operations are plain
functions of those specs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class DomainError(ValueError):
    """An input lies outside the physically admissible range."""


def _positive(name: str, value: float) -> None:
    if not (value > 0 and math.isfinite(value)):
        raise DomainError(f"{name} must be positive and finite, got {value!r}")


def _nonnegative(name: str, value: float) -> None:
    if not (value >= 0 and math.isfinite(value)):
        raise DomainError(f"{name} must be non-negative and finite, got {value!r}")


def _unit_interval(name: str, value: float) -> None:
    if not (0.0 <= value <= 1.0):
        raise DomainError(f"{name} must lie in [0, 1], got {value!r}")


@dataclass(frozen=True)
class PhysicalConstants:
    G: float = 6.674e-11
    hbar: float = 1.054571817e-34
    eps0: float = 8.8541878128e-12

    def __post_init__(self):
        for name in ("G", "hbar", "eps0"):
            _positive(name, getattr(self, name))


@dataclass(frozen=True)
class PhotodiodeSpec:
    """Avalanche photodiode driving the piezo.

    ``breakdown_voltage`` is carried for completeness only; the piezo sees the
    excess bias ``excess_bias`` alone.
    """

    breakdown_voltage: float
    excess_bias: float
    internal_resistance: float
    quantum_efficiency: float

    def __post_init__(self):
        _positive("excess_bias", self.excess_bias)
        _nonnegative("internal_resistance", self.internal_resistance)
        _unit_interval("quantum_efficiency", self.quantum_efficiency)


@dataclass(frozen=True)
class PiezoSpec:
    d33: float
    rel_permittivity: float
    radius: float
    thickness: float
    density: float

    def __post_init__(self):
        for name in ("d33", "rel_permittivity", "radius", "thickness", "density"):
            _positive(name, getattr(self, name))


@dataclass(frozen=True)
class MirrorSpec:
    radius: float
    thickness: float
    density: float

    def __post_init__(self):
        for name in ("radius", "thickness", "density"):
            _positive(name, getattr(self, name))


@dataclass(frozen=True)
class InterferometerSpec:
    """Detector response ``alpha*sin^2(phase_factor*pi*ds/lambda + phi0) + beta``.

    ``phase_factor`` is 2 for the Michelson geometry and 4 for the
    Mach-Zehnder with corner-cube reflectors.
    """

    wavelength: float
    alpha: float
    beta: float
    phi0: float
    input_rate: float
    coupling_transmission: float = 1.0
    phase_factor: float = 2.0

    def __post_init__(self):
        _positive("wavelength", self.wavelength)
        _nonnegative("alpha", self.alpha)
        _nonnegative("beta", self.beta)
        if self.alpha + self.beta > 1.0 + 1e-12:
            raise DomainError(
                f"alpha + beta must not exceed 1, got {self.alpha + self.beta!r}")
        _nonnegative("input_rate", self.input_rate)
        _unit_interval("coupling_transmission", self.coupling_transmission)
        if self.phase_factor not in (2.0, 4.0):
            raise DomainError(f"phase_factor must be 2 or 4, got {self.phase_factor!r}")


@dataclass(frozen=True)
class DriveCircuitSpec:
    series_resistance: float = 0.0

    def __post_init__(self):
        _nonnegative("series_resistance", self.series_resistance)


@dataclass(frozen=True)
class BranchWeights:
    """Born weights of the moved / not-moved branches; the second is derived."""

    w_mov: float

    def __post_init__(self):
        _unit_interval("w_mov", self.w_mov)

    @property
    def w_not_mov(self) -> float:
        return 1.0 - self.w_mov


@dataclass(frozen=True)
class MicroEnhancementParams:
    lattice_constant: float = 2e-10
    nuclei_spread: float = 1e-11
    xi0: float = 100.0

    def __post_init__(self):
        _positive("lattice_constant", self.lattice_constant)
        _positive("nuclei_spread", self.nuclei_spread)
        if not self.nuclei_spread < 10 * self.lattice_constant:
            raise DomainError("nuclei_spread must be below 10 lattice constants")
        if not self.xi0 >= 1.0:
            raise DomainError(f"xi0 must be >= 1, got {self.xi0!r}")


MODEL_KINDS = ("smeared", "parameter_free", "custom_table")


@dataclass(frozen=True, eq=False)
class CollapseModelConfig:
    """Which decay-rate law applies.

    ``table`` is a pair ``(times, rates)`` used only by ``custom_table``;
    rates are interpolated linearly and held constant beyond the ends.
    """

    kind: str = "smeared"
    gamma_factor: float = 1.0
    enhancement: MicroEnhancementParams = field(default_factory=MicroEnhancementParams)
    table: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise DomainError(f"unknown collapse model kind {self.kind!r}")
        _positive("gamma_factor", self.gamma_factor)
        if self.kind == "custom_table":
            if self.table is None or len(self.table[0]) == 0:
                raise DomainError("custom_table model needs a non-empty table")
            t, g = (np.asarray(a, dtype=float) for a in self.table)
            if t.shape != g.shape or t.ndim != 1:
                raise DomainError("table times and rates must be 1-D of equal length")
            if np.any(np.diff(t) <= 0):
                raise DomainError("table times must be strictly increasing")
            if np.any(g < 0) or not np.all(np.isfinite(g)):
                raise DomainError("table rates must be finite and non-negative")
            object.__setattr__(self, "table", (t, g))

    @classmethod
    def constant(cls, rate: float) -> "CollapseModelConfig":
        return cls(kind="custom_table", table=(np.array([0.0]), np.array([float(rate)])))


# --------------------------------------------------------------------------
# operations


def branch_weights(T2: float, eta: float) -> BranchWeights:
    _unit_interval("T2", T2)
    _unit_interval("eta", eta)
    return BranchWeights(T2 * eta)


def detection_probability(ds, itf: InterferometerSpec):
    phase = itf.phase_factor * np.pi * np.asarray(ds, dtype=float) / itf.wavelength + itf.phi0
    return itf.alpha * np.sin(phase) ** 2 + itf.beta


def piezo_capacitance(pz: PiezoSpec, consts: PhysicalConstants = PhysicalConstants()) -> float:
    return consts.eps0 * pz.rel_permittivity * math.pi * pz.radius**2 / pz.thickness


def drive_time_constant(circuit: DriveCircuitSpec, pd: PhotodiodeSpec, capacitance: float) -> float:
    _nonnegative("capacitance", capacitance)
    return (circuit.series_resistance + pd.internal_resistance) * capacitance


def displacement_plateau(pd: PhotodiodeSpec, pz: PiezoSpec) -> float:
    return pz.d33 * pd.excess_bias


def mirror_displacement(t, pd: PhotodiodeSpec, pz: PiezoSpec, circuit: DriveCircuitSpec,
                        consts: PhysicalConstants = PhysicalConstants()):
    """Mirror displacement after the avalanche at ``t = 0`` (RC charging)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("time must be non-negative")
    tau = drive_time_constant(circuit, pd, piezo_capacitance(pz, consts))
    plateau = displacement_plateau(pd, pz)
    if tau == 0.0:
        return np.where(t > 0, plateau, 0.0)
    return plateau * -np.expm1(-t / tau)


def dp_quadratic_coefficient(pz: Optional[PiezoSpec], mir: Optional[MirrorSpec],
                             consts: PhysicalConstants = PhysicalConstants()) -> float:
    """Coefficient ``k`` with ``E_DP = k * ds**2`` for piezo plus mirror.

    Either component may be ``None`` to get the other one's term alone.
    """
    total = 0.0
    if pz is not None:
        total += (pz.density**2 * pz.thickness * math.pi * pz.radius**2
                  * (1 + 0.64 * pz.thickness / pz.radius) / 3.0)
    if mir is not None:
        total += (mir.density**2 * mir.thickness * math.pi * mir.radius**2
                  * (1 + 0.64 * mir.thickness / mir.radius))
    return 2 * math.pi * consts.G * total


def micro_enhancement(ds, p: MicroEnhancementParams = MicroEnhancementParams()):
    """Factor by which nuclear-scale mass localisation raises E_DP.

    Equal to ``xi0`` below the nuclei spread, 1 beyond ten lattice constants,
    and log-linear in ``ln(ds)`` in between.
    """
    ds = np.asarray(ds, dtype=float)
    if np.any(ds < 0):
        raise DomainError("displacement must be non-negative")
    lo, hi = math.log(p.nuclei_spread), math.log(10 * p.lattice_constant)
    with np.errstate(divide="ignore"):
        frac = (hi - np.log(ds)) / (hi - lo)
    frac = np.clip(frac, 0.0, 1.0)
    return np.exp(frac * math.log(p.xi0))


def decay_rate(E_DP, gamma_factor: float = 1.0, consts: PhysicalConstants = PhysicalConstants()):
    E_DP = np.asarray(E_DP, dtype=float)
    if np.any(E_DP < 0):
        raise DomainError("E_DP must be non-negative")
    _positive("gamma_factor", gamma_factor)
    return E_DP / (gamma_factor * consts.hbar)
