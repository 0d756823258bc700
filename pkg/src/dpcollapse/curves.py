"""Expected photon-detection curves of the Michelson experiment.

All curves are sampled at bin centres of the scenario's grid and share one
cumulative-decay quadrature per (scenario, model).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .physics import BranchWeights, DomainError, detection_probability
from .scenario import ExperimentScenario, TimeGrid

UNITS = ("rate", "probability", "fraction", "m")


@dataclass(frozen=True, eq=False)
class RateCurve:
    """A sampled time series on a uniform grid.

    ``stderr`` is present only for empirical (Monte Carlo or measured) curves.
    """

    grid: TimeGrid
    values: np.ndarray
    stderr: Optional[np.ndarray] = None
    unit: str = "rate"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_bins,):
            raise DomainError(
                f"curve has {values.shape} values for a grid of {self.grid.n_bins} bins")
        object.__setattr__(self, "values", values)
        if self.stderr is not None:
            se = np.asarray(self.stderr, dtype=float)
            if se.shape != values.shape:
                raise DomainError("stderr must match values")
            object.__setattr__(self, "stderr", se)
        if self.unit not in UNITS:
            raise DomainError(f"unknown unit tag {self.unit!r}")
        if self.unit in ("rate", "probability") and np.any(values < 0):
            raise DomainError(f"{self.unit} curve has negative values")

    @property
    def t(self) -> np.ndarray:
        return self.grid.centers

    @property
    def empirical(self) -> bool:
        return self.stderr is not None


def _grid(sc: ExperimentScenario) -> TimeGrid:
    if sc.grid is None:
        raise DomainError("scenario needs a time grid to sample curves")
    return sc.grid


def _weights(sc, w):
    return sc.weights if w is None else w


def _p_zero(sc) -> float:
    return float(detection_probability(0.0, sc.interferometer))


def _p_moved(sc) -> np.ndarray:
    return detection_probability(sc.displacement(_grid(sc).centers), sc.interferometer)


def survival_on_grid(sc: ExperimentScenario) -> np.ndarray:
    grid = _grid(sc)
    return sc.decay_history().survival(grid.centers)


def displacement_curve(sc: ExperimentScenario) -> RateCurve:
    grid = _grid(sc)
    return RateCurve(grid, sc.displacement(grid.centers), unit="m")


def curve_zero(sc: ExperimentScenario) -> RateCurve:
    grid = _grid(sc)
    value = sc.interferometer.input_rate * _p_zero(sc)
    return RateCurve(grid, np.full(grid.n_bins, value))


def curve_dark_count(sc: ExperimentScenario) -> RateCurve:
    return RateCurve(_grid(sc), sc.interferometer.input_rate * _p_moved(sc))


def curve_superposed(sc: ExperimentScenario, w: Optional[BranchWeights] = None) -> RateCurve:
    w = _weights(sc, w)
    n_in = sc.interferometer.input_rate
    values = n_in * (w.w_mov * _p_moved(sc) + w.w_not_mov * _p_zero(sc))
    return RateCurve(_grid(sc), values)


def curve_mean_all(sc: ExperimentScenario, w: Optional[BranchWeights] = None) -> RateCurve:
    """Ensemble mean over all traces."""
    w = _weights(sc, w)
    p_sup = survival_on_grid(sc)
    collapsed = 1.0 - p_sup
    values = (p_sup * curve_superposed(sc, w).values
              + w.w_mov * collapsed * curve_dark_count(sc).values
              + w.w_not_mov * collapsed * curve_zero(sc).values)
    return RateCurve(_grid(sc), values)


def _mean_to_dc_conditional_form(sc, w, p_sup):
    # average restricted to traces that end moved, before simplification
    n_sup = curve_superposed(sc, w).values
    n_dc = curve_dark_count(sc).values
    p_mov = w.w_mov * (1.0 - p_sup)
    return (w.w_mov * p_sup * n_sup + p_mov * n_dc) / w.w_mov


def curve_mean_to_dc(sc: ExperimentScenario, w: Optional[BranchWeights] = None,
                     check: bool = True) -> RateCurve:
    """Mean over traces that eventually jump to the dark-count curve.

    The closed form is cross-checked bin by bin against the unsimplified
    conditional average (relative 1e-10).
    """
    w = _weights(sc, w)
    if w.w_mov == 0:
        raise DomainError("conditional mean undefined for w_mov = 0")
    p_sup = survival_on_grid(sc)
    n_dc = curve_dark_count(sc).values
    n_0 = curve_zero(sc).values
    values = n_dc - w.w_not_mov * (n_dc - n_0) * p_sup
    if check:
        other = _mean_to_dc_conditional_form(sc, w, p_sup)
        scale = np.maximum(np.abs(values), np.finfo(float).tiny)
        if np.any(np.abs(other - values) > 1e-10 * scale):
            raise RuntimeError("conditional-mean identity violated beyond 1e-10")
    return RateCurve(_grid(sc), values)


def prob_to_mov_curve(sc: ExperimentScenario, w: Optional[BranchWeights] = None) -> RateCurve:
    """Detection probability of a single probe photon, conditioned on a
    later 'mirror moved' readout."""
    w = _weights(sc, w)
    p_sup = survival_on_grid(sc)
    p_mov = _p_moved(sc)
    values = p_mov - w.w_not_mov * (p_mov - _p_zero(sc)) * p_sup
    return RateCurve(_grid(sc), values, unit="probability")


def percent_deviation(curve: RateCurve, reference: RateCurve) -> RateCurve:
    """Bin-wise ``(curve - reference) / reference`` as a fraction."""
    if curve.grid != reference.grid:
        raise DomainError("curves live on different grids")
    if np.any(reference.values == 0):
        raise DomainError("reference curve has zero-valued bins")
    values = (curve.values - reference.values) / reference.values
    stderr = None
    if curve.stderr is not None:
        stderr = curve.stderr / np.abs(reference.values)
    return RateCurve(curve.grid, values, stderr, unit="fraction")
