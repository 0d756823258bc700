"""Experiment scenarios and the time-dependent decay law built on them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicHermiteSpline

from .physics import (
    BranchWeights,
    CollapseModelConfig,
    DomainError,
    DriveCircuitSpec,
    InterferometerSpec,
    MirrorSpec,
    PhotodiodeSpec,
    PhysicalConstants,
    PiezoSpec,
    decay_rate,
    displacement_plateau,
    dp_quadratic_coefficient,
    drive_time_constant,
    micro_enhancement,
    mirror_displacement,
    piezo_capacitance,
)


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach its tolerance."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform bins ``[i*dt, (i+1)*dt)`` starting at zero."""

    dt: float
    n_bins: int

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt!r}")
        if self.n_bins < 2:
            raise DomainError(f"n_bins must be >= 2, got {self.n_bins!r}")

    @classmethod
    def from_horizon(cls, horizon: float, n_bins: int) -> "TimeGrid":
        return cls(horizon / n_bins, int(n_bins))

    @property
    def t0(self) -> float:
        return 0.0

    @property
    def horizon(self) -> float:
        return self.dt * self.n_bins

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_bins) + 0.5) * self.dt

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.n_bins + 1) * self.dt


@dataclass(frozen=True)
class Drive:
    """Photodiode, piezo, mirror and series resistor of one moved mirror."""

    photodiode: PhotodiodeSpec
    piezo: PiezoSpec
    mirror: MirrorSpec
    circuit: DriveCircuitSpec = DriveCircuitSpec()


def _tau(drive, consts) -> float:
    return drive_time_constant(drive.circuit, drive.photodiode,
                               piezo_capacitance(drive.piezo, consts))


def _displacement(drive, consts, t):
    return mirror_displacement(t, drive.photodiode, drive.piezo, drive.circuit, consts)


def _time_at_displacement(drive, consts, ds: float) -> Optional[float]:
    plateau = displacement_plateau(drive.photodiode, drive.piezo)
    if not 0 < ds < plateau:
        return None
    tau = _tau(drive, consts)
    if tau == 0:
        return None
    return -tau * math.log1p(-ds / plateau)


def rate_function(model: CollapseModelConfig, drive, consts: PhysicalConstants
                  ) -> tuple[Callable[[np.ndarray], np.ndarray], list[float]]:
    """Return ``(gamma(t), kinks)`` for a model applied to a drive.

    ``kinks`` are times where gamma is not smooth; quadrature splits there.
    """
    if model.kind == "custom_table":
        times, rates = model.table

        def gamma(t):
            return np.interp(np.asarray(t, dtype=float), times, rates)

        return gamma, [float(x) for x in times if x > 0]

    k = dp_quadratic_coefficient(drive.piezo, drive.mirror, consts)

    def smeared(t):
        ds = _displacement(drive, consts, t)
        return decay_rate(k * ds**2, model.gamma_factor, consts)

    if model.kind == "smeared":
        return smeared, []

    enh = model.enhancement

    def parameter_free(t):
        ds = _displacement(drive, consts, t)
        return smeared(t) * micro_enhancement(ds, enh)

    kinks = [_time_at_displacement(drive, consts, enh.nuclei_spread),
             _time_at_displacement(drive, consts, 10 * enh.lattice_constant)]
    return parameter_free, [x for x in kinks if x is not None]


class DecayHistory:
    """Cumulative decay ``A(t) = int_0^t gamma`` on a refined node set.

    Between nodes ``A`` is a cubic Hermite interpolant using ``gamma`` as the
    exact derivative, so rate and cumulative stay consistent everywhere.
    """

    def __init__(self, nodes: np.ndarray, cumulative: np.ndarray, rates: np.ndarray):
        self.nodes = nodes
        self.values = cumulative
        self.rates = rates
        self.horizon = float(nodes[-1])
        self._spline = CubicHermiteSpline(nodes, cumulative, rates)

    @classmethod
    def build(cls, gamma: Callable, horizon: float, breakpoints: Sequence[float] = (),
              rtol: float = 1e-8, max_level: int = 16) -> "DecayHistory":
        """Composite Simpson per smooth segment, halving the step until two
        successive levels agree to ``rtol * max(1, A)``.

        The fine level is kept; its error is about 1/15 of the level difference.
        """
        return cls.build_many([gamma], horizon, breakpoints, rtol, max_level)[0]

    @classmethod
    def build_many(cls, gammas: Sequence[Callable], horizon: float,
                   breakpoints: Sequence[float] = (), rtol: float = 1e-8,
                   max_level: int = 16) -> list["DecayHistory"]:
        """Like :meth:`build` for several rates sharing one node set."""
        if not horizon > 0:
            raise DomainError("horizon must be positive")
        cuts = sorted({0.0, float(horizon), *[b for b in breakpoints if 0 < b < horizon]})
        n = 16
        coarse = None
        for _level in range(max_level):
            nodes = np.concatenate(
                [np.linspace(a, b, n + 1)[:-1] for a, b in zip(cuts[:-1], cuts[1:])]
                + [np.array([cuts[-1]])])
            rates = [np.asarray(g(nodes), dtype=float) * np.ones_like(nodes) for g in gammas]
            cums = [_segmented_simpson(nodes, r, len(cuts) - 1, n) for r in rates]
            if coarse is not None:
                ok = True
                for cum, prev in zip(cums, coarse):
                    shared = cum[::2]
                    if np.any(np.abs(shared - prev) > rtol * np.maximum(1.0, np.abs(shared))):
                        ok = False
                if ok:
                    return [cls(nodes, c, r) for c, r in zip(cums, rates)]
            coarse = cums
            n *= 2
        raise QuadratureError(
            f"cumulative decay did not converge to rtol={rtol}; last estimate "
            f"A(horizon)={[c[-1] for c in coarse]!r}")

    def cumulative(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.horizon * (1 + 1e-12)):
            raise DomainError("time outside the decay history")
        return self._spline(np.clip(t, 0.0, self.horizon))

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        return self._spline.derivative()(np.clip(t, 0.0, self.horizon))

    def survival(self, t):
        return np.exp(-self.cumulative(t))

    @property
    def total(self) -> float:
        return float(self.values[-1])

    def invert(self, target) -> np.ndarray:
        """Earliest ``t`` with ``A(t) = target``; NaN when beyond the horizon."""
        target = np.atleast_1d(np.asarray(target, dtype=float))
        if target.size == 1:
            return np.array([self.invert_scalar(float(target[0]))])
        out = np.full(target.shape, np.nan)
        ok = target <= self.values[-1]
        if not np.any(ok):
            return out
        tg = target[ok]
        idx = np.clip(np.searchsorted(self.values, tg, side="left"), 1, len(self.nodes) - 1) - 1
        c = self._spline.c[:, idx]
        width = self.nodes[idx + 1] - self.nodes[idx]
        lo, hi = np.zeros_like(tg), width.copy()
        # bisection on the local Hermite cubic, vectorised over all targets
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = ((c[0] * mid + c[1]) * mid + c[2]) * mid + c[3] < tg
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        res = self.nodes[idx] + 0.5 * (lo + hi)
        res[tg <= 0] = 0.0
        out[ok] = res
        return out

    def invert_scalar(self, target: float) -> float:
        if target > self.values[-1] or math.isnan(target):
            return math.nan
        if target <= 0:
            return 0.0
        i = int(np.searchsorted(self.values, target, side="left"))
        i = min(max(i, 1), len(self.nodes) - 1) - 1
        c0, c1, c2, c3 = (float(v) for v in self._spline.c[:, i])
        lo, hi = 0.0, float(self.nodes[i + 1] - self.nodes[i])
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if ((c0 * mid + c1) * mid + c2) * mid + c3 < target:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-16 * (self.nodes[i] + hi):
                break
        return float(self.nodes[i]) + 0.5 * (lo + hi)


def _segmented_simpson(nodes, rates, n_segments, n):
    out = np.empty_like(nodes)
    offset = 0.0
    for s in range(n_segments):
        sl = slice(s * n, (s + 1) * n + 1)
        part = cumulative_simpson(rates[sl], x=nodes[sl], initial=0.0)
        out[sl] = offset + part
        offset = out[(s + 1) * n]
    return out


@dataclass(frozen=True, eq=False)
class ExperimentScenario:
    """Full parameterisation of one Michelson run."""

    photodiode: PhotodiodeSpec
    piezo: PiezoSpec
    mirror: MirrorSpec
    interferometer: InterferometerSpec
    circuit: DriveCircuitSpec = DriveCircuitSpec()
    model: CollapseModelConfig = field(default_factory=CollapseModelConfig)
    grid: Optional[TimeGrid] = None
    constants: PhysicalConstants = PhysicalConstants()

    def __post_init__(self):
        object.__setattr__(self, "_histories", {})
        if self.interferometer.phase_factor != 2.0:
            raise DomainError("the Michelson scenario uses the 2*pi phase convention")

    def replace(self, **changes) -> "ExperimentScenario":
        from dataclasses import replace
        return replace(self, **changes)

    @property
    def weights(self) -> BranchWeights:
        return BranchWeights(self.interferometer.coupling_transmission
                             * self.photodiode.quantum_efficiency)

    @property
    def tau(self) -> float:
        return _tau(self, self.constants)

    def displacement(self, t):
        return _displacement(self, self.constants, t)

    def decay_history(self, model: Optional[CollapseModelConfig] = None,
                      horizon: Optional[float] = None) -> DecayHistory:
        model = model or self.model
        if horizon is None:
            if self.grid is None:
                raise DomainError("scenario has no grid; pass a horizon")
            horizon = self.grid.horizon
        key = (id(model), float(horizon))
        hist = self._histories.get(key)
        if hist is None:
            gamma, kinks = rate_function(model, self, self.constants)
            hist = DecayHistory.build(gamma, horizon, kinks)
            self._histories[key] = hist
            self._histories[(key, "model")] = model  # keep id() stable
        return hist


def gamma_of_time(t, scenario, model: Optional[CollapseModelConfig] = None):
    """Instantaneous decay rate of the mirror superposition."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("time must be non-negative")
    gamma, _ = rate_function(model or scenario.model, scenario, scenario.constants)
    return gamma(t)


def survival_probability(model: Optional[CollapseModelConfig], scenario, t):
    """``exp(-int_0^t gamma)``, integrated to relative tolerance 1e-8."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("time must be non-negative")
    horizon = float(np.max(t)) if t.size else 0.0
    if horizon == 0.0:
        return np.ones_like(t)
    return scenario.decay_history(model, horizon).survival(t)


def occupation_probabilities(model, scenario, weights: BranchWeights, t):
    """``(P_sup, P_mov, P_not_mov)`` at time(s) ``t``."""
    p_sup = survival_probability(model, scenario, t)
    collapsed = 1.0 - p_sup
    return p_sup, weights.w_mov * collapsed, weights.w_not_mov * collapsed


def default_horizon(scenario, model: Optional[CollapseModelConfig] = None) -> float:
    """``max(8*tau_p, 4 * t[P_sup = 1e-3])``; falls back to ``8*tau_p`` (or 1 us)
    when the superposition never decays that far."""
    model = model or scenario.model
    tau = scenario.tau
    base = 8 * tau if tau > 0 else 1e-6
    gamma, kinks = rate_function(model, scenario, scenario.constants)
    target = math.log(1e3)
    horizon = base
    for _ in range(40):
        hist = DecayHistory.build(gamma, horizon, kinks, rtol=1e-6)
        if hist.total >= target:
            t_half = float(hist.invert(target)[0])
            return max(base, 4 * t_half)
        horizon *= 2
    return base
