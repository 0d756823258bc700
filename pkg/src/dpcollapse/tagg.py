"""Two-mirror Mach-Zehnder variant with three photon branches.

Branches: ``+`` (photon detected by the upper photodiode, upper mirror moves),
``-`` (right photodiode, right mirror moves), ``0`` (photon not detected).
Three reduction channels act on the superposition:

* ``mirror_plus`` separates ``{+}`` from the rest,
* ``mirror_minus`` separates ``{-}`` from the rest,
* ``power_supply`` separates ``{+, -}`` (current drawn) from ``{0}``.

A channel is active while the current support has members on both sides of
its split. Channel rates depend on global time only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .curves import RateCurve
from .montecarlo import SeedPolicy, _exp_draw, draw_detections, mean_curve
from .physics import (
    CollapseModelConfig,
    DomainError,
    InterferometerSpec,
    PhysicalConstants,
    detection_probability,
)
from .scenario import DecayHistory, Drive, TimeGrid, _displacement, rate_function

BRANCHES = ("+", "-", "0")
FULL_SUPPORT = frozenset(BRANCHES)


@dataclass(frozen=True)
class MZWeights:
    w_plus: float
    w_minus: float
    w_zero: float

    def __post_init__(self):
        for name in ("w_plus", "w_minus", "w_zero"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1], got {v!r}")
        if abs(self.w_plus + self.w_minus + self.w_zero - 1.0) > 1e-12:
            raise DomainError("branch weights must sum to 1")

    def of(self, branch: str) -> float:
        return {"+": self.w_plus, "-": self.w_minus, "0": self.w_zero}[branch]

    def total(self, support) -> float:
        return sum(self.of(b) for b in support)


def mz_weights(T2: float, R2: float, eta_plus: float, eta_minus: float) -> MZWeights:
    for name, v in (("T2", T2), ("R2", R2), ("eta_plus", eta_plus), ("eta_minus", eta_minus)):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name} must lie in [0, 1], got {v!r}")
    if T2 + R2 > 1.0 + 1e-12:
        raise DomainError("T2 + R2 must not exceed 1")
    w_plus, w_minus = T2 * eta_plus, R2 * eta_minus
    w_zero = 1.0 - w_plus - w_minus
    if w_zero < 0:
        raise DomainError("negative weight for the undetected branch")
    return MZWeights(w_plus, w_minus, w_zero)


@dataclass(frozen=True)
class SupportSet:
    members: frozenset

    def __post_init__(self):
        members = frozenset(self.members)
        if not members or not members <= FULL_SUPPORT:
            raise DomainError(f"invalid support {sorted(members)!r}")
        object.__setattr__(self, "members", members)

    @property
    def reduced(self) -> bool:
        return len(self.members) == 1


CHANNEL_SETS = {
    "mirror_plus": frozenset({"+"}),
    "mirror_minus": frozenset({"-"}),
    "power_supply": frozenset({"+", "-"}),
}


@dataclass(frozen=True, eq=False)
class ReductionChannel:
    id: str
    rate: Optional[CollapseModelConfig] = None

    def __post_init__(self):
        if self.id not in CHANNEL_SETS:
            raise DomainError(f"unknown reduction channel {self.id!r}")

    @property
    def distinguished_set(self) -> frozenset:
        return CHANNEL_SETS[self.id]

    def active(self, support: frozenset) -> bool:
        inside = support & self.distinguished_set
        return bool(inside) and bool(support - self.distinguished_set)


def mz_detection_probability(ds_plus, ds_minus, params: InterferometerSpec):
    """Detector response of the four-pass geometry (phase factor 4)."""
    if params.phase_factor != 4.0:
        params = _with_phase_factor(params, 4.0)
    return detection_probability(np.asarray(ds_plus, dtype=float)
                                 - np.asarray(ds_minus, dtype=float), params)


def _with_phase_factor(itf, factor):
    from dataclasses import replace
    return replace(itf, phase_factor=factor)


@dataclass(frozen=True, eq=False)
class MZScenario:
    """Both arms, the splitter, the three channel rates and the time grid.

    A channel model of ``None`` means that channel never fires.
    """

    interferometer: InterferometerSpec
    splitter_T2: float
    splitter_R2: float
    eta_plus: float
    eta_minus: float
    drive_plus: Drive
    drive_minus: Drive
    model_plus: Optional[CollapseModelConfig] = field(default_factory=CollapseModelConfig)
    model_minus: Optional[CollapseModelConfig] = field(default_factory=CollapseModelConfig)
    model_ps: Optional[CollapseModelConfig] = None
    grid: Optional[TimeGrid] = None
    inverted: bool = False
    constants: PhysicalConstants = PhysicalConstants()

    def __post_init__(self):
        if self.interferometer.phase_factor != 4.0:
            object.__setattr__(self, "interferometer",
                               _with_phase_factor(self.interferometer, 4.0))
        # validates splitter and efficiencies
        self.weights  # noqa: B018
        object.__setattr__(self, "_histories", {})

    @property
    def weights(self) -> MZWeights:
        return mz_weights(self.splitter_T2, self.splitter_R2, self.eta_plus, self.eta_minus)

    @property
    def channels(self) -> tuple:
        return (ReductionChannel("mirror_plus", self.model_plus),
                ReductionChannel("mirror_minus", self.model_minus),
                ReductionChannel("power_supply", self.model_ps))

    def ds_plus(self, t):
        return _displacement(self.drive_plus, self.constants, t)

    def ds_minus(self, t):
        if self.inverted:
            return -self.ds_plus(t)
        return _displacement(self.drive_minus, self.constants, t)

    def branch_probabilities(self, t) -> dict:
        """Detection probability of each branch at times ``t``."""
        t = np.asarray(t, dtype=float)
        itf = self.interferometer
        zero = np.zeros_like(t)
        return {
            "+": mz_detection_probability(self.ds_plus(t), zero, itf),
            "-": mz_detection_probability(zero, self.ds_minus(t), itf),
            "0": mz_detection_probability(zero, zero, itf) + zero,
        }

    def _rate(self, model, drive):
        if model is None:
            return (lambda t: np.zeros_like(np.asarray(t, dtype=float))), []
        return rate_function(model, drive, self.constants)

    def histories(self, horizon: Optional[float] = None) -> dict:
        """Cumulative rates of the three channels on one shared node set."""
        if horizon is None:
            if self.grid is None:
                raise DomainError("scenario has no grid; pass a horizon")
            horizon = self.grid.horizon
        cached = self._histories.get(float(horizon))
        if cached is not None:
            return cached
        drives = (self.drive_plus, self.drive_minus, self.drive_plus)
        gammas, kinks = [], []
        for ch, drive in zip(self.channels, drives):
            g, k = self._rate(ch.rate, drive)
            gammas.append(g)
            kinks.extend(k)
        hists = DecayHistory.build_many(gammas, horizon, kinks)
        out = {ch.id: h for ch, h in zip(self.channels, hists)}
        self._histories[float(horizon)] = out
        return out


def _grid(sc):
    if sc.grid is None:
        raise DomainError("scenario needs a time grid")
    return sc.grid


def mz_curves(sc: MZScenario) -> tuple:
    """``(dark-count +, zero, dark-count -)`` rate curves."""
    grid = _grid(sc)
    p = sc.branch_probabilities(grid.centers)
    n_in = sc.interferometer.input_rate
    return tuple(RateCurve(grid, n_in * p[b]) for b in ("+", "0", "-"))


def mz_mean_to_dc_plus(sc: MZScenario) -> RateCurve:
    """Mean over traces that end on the ``+`` dark-count curve (closed form)."""
    w = sc.weights
    if w.w_plus == 0:
        raise DomainError("conditional mean undefined for w_plus = 0")
    grid = _grid(sc)
    t = grid.centers
    h = sc.histories()
    a_p = h["mirror_plus"].cumulative(t)
    a_m = h["mirror_minus"].cumulative(t)
    a_ps = h["power_supply"].cumulative(t)
    n_dcp, n_0, n_dcm = (c.values for c in mz_curves(sc))
    e_all = np.exp(-(a_p + a_m + a_ps))
    bracket_minus = e_all
    if w.w_minus > 0:
        bracket_minus = e_all + (-np.expm1(-a_ps)) * np.exp(-(a_p + a_m)) / (w.w_plus + w.w_minus)
    bracket_zero = e_all + (-np.expm1(-a_m)) * np.exp(-(a_p + a_ps)) / (w.w_zero + w.w_plus)
    values = (n_dcp
              - w.w_minus * (n_dcp - n_dcm) * bracket_minus
              - w.w_zero * (n_dcp - n_0) * bracket_zero)
    return RateCurve(grid, values)


def mz_support_probabilities(sc: MZScenario, t) -> dict:
    """Probability of the full and of each two-branch support at ``t``.

    Derived from independent first-firing times of the channels; used to
    cross-check the closed form and the simulator.
    """
    h = sc.histories()
    t = np.asarray(t, dtype=float)
    s = {k: h[k].survival(t) for k in h}
    sp, sm, sps = s["mirror_plus"], s["mirror_minus"], s["power_supply"]
    w = sc.weights
    full = sp * sm * sps
    return {
        FULL_SUPPORT: full,
        frozenset("+-"): (w.w_plus + w.w_minus) * (1 - sps) * sp * sm,
        frozenset("+0"): (w.w_plus + w.w_zero) * (1 - sm) * sp * sps,
        frozenset("-0"): (w.w_minus + w.w_zero) * (1 - sp) * sm * sps,
    }


@dataclass(eq=False)
class MZTrajectory:
    """One realisation.

    ``outcome`` is the branch reached within the horizon or ``none``;
    ``branch`` is the branch the trace eventually ends in, Born-drawn within
    the remaining support for survivors.
    """

    support_changes: tuple  # ((time, frozenset), ...) after each partition
    outcome: str
    seed_id: int = 0
    counts: Optional[np.ndarray] = None
    events: Optional[np.ndarray] = None
    branch: Optional[str] = None

    def __post_init__(self):
        if self.branch is None:
            self.branch = self.outcome
        if self.branch not in BRANCHES:
            raise DomainError(f"unknown eventual branch {self.branch!r}")

    def support_at(self, t: float) -> frozenset:
        support = FULL_SUPPORT
        for time, s in self.support_changes:
            if time <= t:
                support = s
        return support


def _mixture(sc, support, probs):
    w = sc.weights
    total = w.total(support)
    return sum(w.of(b) * probs[b] for b in support) / total


class _MZKernel:
    def __init__(self, sc: MZScenario):
        self.sc = sc
        self.grid = _grid(sc)
        self.hist = sc.histories()
        self.probs_c = sc.branch_probabilities(self.grid.centers)

    def _reductions(self, rng):
        """Partition events ``[(time, new_support), ...]`` in time order."""
        horizon = self.grid.horizon
        firings = []
        for ch in self.sc.channels:
            target = _exp_draw(rng)
            h = self.hist[ch.id]
            if target <= h.total:
                firings.append((h.invert_scalar(target), ch))
        firings.sort(key=lambda x: x[0])
        w = self.sc.weights
        support = FULL_SUPPORT
        changes = []
        for time, ch in firings:
            if time > horizon or not ch.active(support):
                continue
            inside = support & ch.distinguished_set
            outside = support - ch.distinguished_set
            u = rng.random()
            support = inside if u * w.total(support) < w.total(inside) else outside
            changes.append((time, support))
        return changes

    def _eventual(self, support, rng):
        # Born choice within the surviving support
        w = self.sc.weights
        members = [b for b in BRANCHES if b in support]
        cum = np.cumsum([w.of(b) for b in members])
        return members[int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))]

    def expected_counts(self, changes):
        # midpoint rule: each bin takes the support present at its centre
        grid, sc = self.grid, self.sc
        p = _mixture(sc, FULL_SUPPORT, self.probs_c)
        for time, s in changes:
            p = np.where(grid.centers >= time, _mixture(sc, s, self.probs_c), p)
        return sc.interferometer.input_rate * grid.dt * p

    def prob_fn(self, changes):
        sc = self.sc

        def fn(t):
            t = np.asarray(t, dtype=float)
            probs = sc.branch_probabilities(t)
            out = _mixture(sc, FULL_SUPPORT, probs)
            for time, s in changes:
                out = np.where(t >= time, _mixture(sc, s, probs), out)
            return out

        return fn

    def run(self, rng, seed_id=0, detection="binned", emission="poisson") -> MZTrajectory:
        changes = self._reductions(rng)
        final = changes[-1][1] if changes else FULL_SUPPORT
        outcome = next(iter(final)) if len(final) == 1 else "none"
        branch = outcome if outcome != "none" else self._eventual(final, rng)
        expected = self.expected_counts(changes) if detection == "binned" else None
        counts, events = draw_detections(self.prob_fn(changes), self.grid,
                                         self.sc.interferometer.input_rate, rng,
                                         detection, emission, expected)
        return MZTrajectory(tuple(changes), outcome, seed_id, counts, events, branch)


def mz_simulate_trajectory(sc: MZScenario, random_source: np.random.Generator, *,
                           detection: str = "binned", emission: str = "poisson",
                           seed_id: int = 0) -> MZTrajectory:
    """Competing-channel reduction process with photon detections."""
    return _MZKernel(sc).run(random_source, seed_id, detection, emission)


@dataclass(eq=False)
class MZEnsembleSummary:
    n_trajectories: int
    mean_all: RateCurve
    mean_to_dc_plus: RateCurve
    outcome_counts: dict
    final_supports: list
    branches: np.ndarray
    counts: Optional[np.ndarray] = field(default=None, repr=False)


def run_mz_ensemble(sc: MZScenario, n: int, policy: SeedPolicy = SeedPolicy(), *,
                    detection: str = "binned", emission: str = "poisson") -> MZEnsembleSummary:
    if n < 1:
        raise DomainError("need at least one trajectory")
    kernel = _MZKernel(sc)
    trajs = [kernel.run(policy.generator(i), i, detection, emission) for i in range(n)]
    counts = np.stack([tr.counts for tr in trajs]).astype(np.int64)
    outcomes = np.array([tr.outcome for tr in trajs], dtype=object)
    branches = np.array([tr.branch for tr in trajs], dtype=object)
    finals = [tr.support_changes[-1][1] if tr.support_changes else FULL_SUPPORT for tr in trajs]
    return MZEnsembleSummary(
        n_trajectories=n,
        mean_all=mean_curve(counts, kernel.grid),
        mean_to_dc_plus=mean_curve(counts[branches == "+"], kernel.grid),
        outcome_counts={b: int((outcomes == b).sum()) for b in (*BRANCHES, "none")},
        final_supports=finals,
        branches=branches,
        counts=counts,
    )
