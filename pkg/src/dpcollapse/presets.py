"""Reference parameter sets of the Michelson demonstration (bench-top values)."""
from __future__ import annotations

import math
from typing import Optional

from .physics import (
    CollapseModelConfig,
    DriveCircuitSpec,
    InterferometerSpec,
    MirrorSpec,
    PhotodiodeSpec,
    PiezoSpec,
)
from .scenario import ExperimentScenario, TimeGrid

PHOTODIODE = PhotodiodeSpec(breakdown_voltage=143.0, excess_bias=12.0,
                            internal_resistance=100.0, quantum_efficiency=0.85)
PIEZO = PiezoSpec(d33=600e-12, rel_permittivity=4200.0, radius=1.5e-3,
                  thickness=0.2e-3, density=7600.0)
MIRROR = MirrorSpec(radius=3.5e-3, thickness=2e-3, density=2650.0)
SPLITTER_T2 = 0.4
INPUT_RATE = 1e7


def bench_interferometer(input_rate: float = INPUT_RATE) -> InterferometerSpec:
    return InterferometerSpec(wavelength=632.8e-9, alpha=1.0, beta=0.0,
                              phi0=math.pi / 4, input_rate=input_rate,
                              coupling_transmission=SPLITTER_T2)


def bench_scenario(series_resistance: float = 1e3, kind: str = "smeared",
                   horizon: float = 12e-6, n_bins: int = 600,
                   input_rate: float = INPUT_RATE,
                   model: Optional[CollapseModelConfig] = None) -> ExperimentScenario:
    return ExperimentScenario(
        photodiode=PHOTODIODE,
        piezo=PIEZO,
        mirror=MIRROR,
        interferometer=bench_interferometer(input_rate),
        circuit=DriveCircuitSpec(series_resistance),
        model=model or CollapseModelConfig(kind=kind),
        grid=TimeGrid.from_horizon(horizon, n_bins),
    )


def constant_rate_scenario(rate: float = 1e6, input_rate: float = 1e8, n_bins: int = 50,
                           horizon: float = 8e-6) -> ExperimentScenario:
    """Estimator test bed: instant drive to the fringe maximum, constant decay.

    With no series or diode resistance the mirror sits at the lambda/8
    plateau from t = 0, so every bin has full contrast and the generating
    cumulative decay is ``rate * t``.
    """
    wavelength = bench_interferometer().wavelength
    pd = PhotodiodeSpec(PHOTODIODE.breakdown_voltage, PHOTODIODE.excess_bias, 0.0,
                        PHOTODIODE.quantum_efficiency)
    pz = PiezoSpec(wavelength / 8 / PHOTODIODE.excess_bias, PIEZO.rel_permittivity,
                   PIEZO.radius, PIEZO.thickness, PIEZO.density)
    return ExperimentScenario(
        photodiode=pd, piezo=pz, mirror=MIRROR,
        interferometer=bench_interferometer(input_rate),
        circuit=DriveCircuitSpec(0.0),
        model=CollapseModelConfig.constant(rate),
        grid=TimeGrid.from_horizon(horizon, n_bins),
    )
