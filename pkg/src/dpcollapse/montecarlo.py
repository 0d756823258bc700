"""Stochastic collapse trajectories of the Michelson experiment.

Each trajectory draws a collapse time from the inhomogeneous decay law
(inverse CDF on the cumulative decay), a Born outcome, and photon detections
from a thinned emission stream. Trajectory ``i`` uses its own substream derived
from ``(master_seed, i)``, so ensembles are reproducible whatever the worker
count or execution order.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .curves import RateCurve
from .physics import BranchWeights, CollapseModelConfig, DomainError, detection_probability
from .scenario import DecayHistory, ExperimentScenario

OUTCOMES = ("mov", "not_mov", "none")


@dataclass(frozen=True)
class SeedPolicy:
    master_seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise DomainError("master_seed must be an unsigned 64-bit integer")

    def generator(self, index: int) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(index),))
        return np.random.Generator(np.random.PCG64(seq))


@dataclass(eq=False)
class Trajectory:
    """One realisation.

    ``outcome`` is the state reached within the horizon; ``branch`` is the
    branch the trace eventually ends in (equal to ``outcome`` once collapsed,
    Born-drawn for survivors). Conditional means select on ``branch``.
    """

    collapse_time: Optional[float]
    outcome: str
    seed_id: int = 0
    counts: Optional[np.ndarray] = None
    events: Optional[np.ndarray] = None
    branch: Optional[str] = None

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise DomainError(f"unknown outcome {self.outcome!r}")
        if (self.outcome == "none") != (self.collapse_time is None):
            raise DomainError("outcome 'none' iff no collapse time")
        if self.branch is None:
            if self.outcome == "none":
                raise DomainError("a surviving trajectory needs its eventual branch")
            self.branch = self.outcome
        elif self.branch not in ("mov", "not_mov"):
            raise DomainError(f"unknown branch {self.branch!r}")
        elif self.outcome != "none" and self.branch != self.outcome:
            raise DomainError("branch must equal the outcome once collapsed")


def _exp_draw(rng: np.random.Generator) -> float:
    # -ln(1-u) with u in [0, 1) is Exp(1) and never infinite
    return -math.log1p(-rng.random())


def _collapse_from_history(history: DecayHistory, horizon: float, rng) -> Optional[float]:
    target = _exp_draw(rng)
    if horizon >= history.horizon:
        total = history.total
    else:
        total = float(history.cumulative(horizon))
    if target > total:
        return None
    return history.invert_scalar(target)


def sample_collapse_time(model: Optional[CollapseModelConfig], sc: ExperimentScenario,
                         horizon: float, random_source: np.random.Generator) -> Optional[float]:
    """Collapse time, or ``None`` if the superposition outlives ``horizon``."""
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    return _collapse_from_history(sc.decay_history(model, horizon), horizon, random_source)


def sample_outcome(w: BranchWeights, random_source: np.random.Generator) -> str:
    return "mov" if random_source.random() < w.w_mov else "not_mov"


def draw_detections(expected_rate_fn, grid, input_rate, rng, detection="binned",
                    emission="poisson", expected_counts=None):
    """Thin an emission stream by a time-dependent detection probability.

    ``expected_rate_fn(t)`` gives the detection probability at times ``t``.
    Binned mode draws per-bin counts with mean ``input_rate * dt * p(center)``
    (midpoint rule, collapse state included);
    event mode thins individual emissions at their exact times.
    Returns ``(counts, events)``.
    """
    if detection == "binned":
        if expected_counts is None:
            expected_counts = input_rate * grid.dt * expected_rate_fn(grid.centers)
        if emission == "poisson":
            return rng.poisson(expected_counts), None
        phase = rng.random()
        n_emit = np.diff(np.floor(grid.edges * input_rate - phase)).astype(np.int64)
        p = np.clip(expected_counts / (input_rate * grid.dt), 0.0, 1.0) if input_rate > 0 \
            else np.zeros(grid.n_bins)
        return rng.binomial(np.maximum(n_emit, 0), p), None
    if detection != "events":
        raise DomainError(f"unknown detection mode {detection!r}")
    horizon = grid.horizon
    if emission == "poisson":
        n = rng.poisson(input_rate * horizon)
        times = np.sort(rng.uniform(0.0, horizon, n))
    else:
        phase = rng.random()
        times = (np.arange(math.floor(input_rate * horizon)) + phase) / input_rate
        times = times[times < horizon]
    keep = rng.random(times.size) < expected_rate_fn(times)
    events = times[keep]
    counts = np.histogram(events, bins=grid.edges)[0]
    return counts, events


class _MichelsonKernel:
    """Precomputed per-scenario quantities shared by all trajectories."""

    def __init__(self, sc: ExperimentScenario, w: BranchWeights):
        if sc.grid is None:
            raise DomainError("scenario needs a time grid")
        self.sc, self.w, self.grid = sc, w, sc.grid
        self.history = sc.decay_history(sc.model, sc.grid.horizon)
        itf = sc.interferometer
        self.p0 = float(detection_probability(0.0, itf))
        self.p_dc_c = detection_probability(sc.displacement(self.grid.centers), itf)

    def p_dc(self, t):
        return detection_probability(self.sc.displacement(t), self.sc.interferometer)

    def prob_fn(self, collapse_time, outcome):
        w, p0 = self.w, self.p0

        def fn(t):
            t = np.asarray(t, dtype=float)
            p_dc = self.p_dc(t)
            before = w.w_mov * p_dc + w.w_not_mov * p0
            if outcome == "none":
                return before
            after = p_dc if outcome == "mov" else np.full_like(t, p0)
            return np.where(t < collapse_time, before, after)

        return fn

    def expected_counts(self, collapse_time, outcome):
        grid, w = self.grid, self.w
        before = w.w_mov * self.p_dc_c + w.w_not_mov * self.p0
        if outcome == "none":
            p = before
        else:
            after = self.p_dc_c if outcome == "mov" else self.p0
            # midpoint rule: the bin takes the state at its centre
            p = np.where(grid.centers < collapse_time, before, after)
        return self.sc.interferometer.input_rate * grid.dt * p

    def run(self, rng, seed_id=0, detection="binned", emission="poisson") -> Trajectory:
        horizon = self.grid.horizon
        t_c = _collapse_from_history(self.history, horizon, rng)
        drawn = sample_outcome(self.w, rng)
        outcome = "none" if t_c is None else drawn
        expected = None
        if detection == "binned":
            expected = self.expected_counts(t_c, outcome)
        counts, events = draw_detections(
            self.prob_fn(t_c, outcome), self.grid, self.sc.interferometer.input_rate, rng,
            detection, emission, expected)
        return Trajectory(t_c, outcome, seed_id, counts, events, drawn)


def simulate_trajectory(sc: ExperimentScenario, w: Optional[BranchWeights],
                        random_source: np.random.Generator, *, detection: str = "binned",
                        emission: str = "poisson", seed_id: int = 0) -> Trajectory:
    """One stochastic realisation over the scenario's grid."""
    kernel = _MichelsonKernel(sc, w or sc.weights)
    return kernel.run(random_source, seed_id, detection, emission)


@dataclass(eq=False)
class EnsembleSummary:
    """Aggregated ensemble with per-bin standard errors.

    ``counts`` (trajectories x bins) and the per-trajectory arrays are kept for
    bootstrap resampling and trajectory dumps. ``outcome_counts`` tallies the
    states reached within the horizon (mov, not_mov, none); the conditional
    means select on the eventual branch.
    """

    n_trajectories: int
    mean_all: RateCurve
    mean_to_dc: RateCurve
    mean_to_zero: RateCurve
    outcome_counts: tuple
    collapse_times: np.ndarray
    outcomes: np.ndarray
    branches: np.ndarray
    counts: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def median_collapse_time(self) -> float:
        """Median over all trajectories; survivors count as +inf."""
        t = np.where(np.isnan(self.collapse_times), np.inf, self.collapse_times)
        return float(np.median(t))


def mean_curve(counts: np.ndarray, grid) -> RateCurve:
    """Per-bin mean rate and its standard error from a count matrix."""
    n = counts.shape[0]
    if n == 0:
        nan = np.full(grid.n_bins, np.nan)
        return RateCurve(grid, nan, nan.copy())
    total = counts.sum(axis=0, dtype=np.int64)
    mean = total / n
    if n > 1:
        sq = (counts.astype(np.int64) ** 2).sum(axis=0)
        var = (sq - total.astype(float) * mean) / (n - 1)
        se = np.sqrt(np.maximum(var, 0.0) / n)
    else:
        se = np.zeros(grid.n_bins)
    return RateCurve(grid, mean / grid.dt, se / grid.dt)


def _run_chunk(args):
    sc, w, indices, master_seed, detection, emission = args
    kernel = _MichelsonKernel(sc, w)
    policy = SeedPolicy(master_seed)
    return [kernel.run(policy.generator(i), i, detection, emission) for i in indices]


def summarize(trajectories, grid) -> EnsembleSummary:
    counts = np.stack([tr.counts for tr in trajectories]).astype(np.int64)
    outcomes = np.array([tr.outcome for tr in trajectories], dtype=object)
    branches = np.array([tr.branch for tr in trajectories], dtype=object)
    t_c = np.array([np.nan if tr.collapse_time is None else tr.collapse_time
                    for tr in trajectories])
    mov = branches == "mov"
    not_mov = branches == "not_mov"
    return EnsembleSummary(
        n_trajectories=len(trajectories),
        mean_all=mean_curve(counts, grid),
        mean_to_dc=mean_curve(counts[mov], grid),
        mean_to_zero=mean_curve(counts[not_mov], grid),
        outcome_counts=tuple(int((outcomes == o).sum()) for o in OUTCOMES),
        collapse_times=t_c,
        outcomes=outcomes,
        branches=branches,
        counts=counts,
    )


def run_ensemble(sc: ExperimentScenario, w: Optional[BranchWeights], n: int,
                 policy: SeedPolicy = SeedPolicy(), *, workers: int = 1,
                 detection: str = "binned", emission: str = "poisson") -> EnsembleSummary:
    """Simulate ``n`` trajectories and aggregate them in index order."""
    if n < 1:
        raise DomainError("need at least one trajectory")
    w = w or sc.weights
    indices = np.arange(n)
    if workers <= 1:
        trajs = _run_chunk((sc, w, indices, policy.master_seed, detection, emission))
    else:
        chunks = np.array_split(indices, workers)
        jobs = [(sc, w, c, policy.master_seed, detection, emission) for c in chunks]
        with ProcessPoolExecutor(workers) as ex:
            trajs = [tr for part in ex.map(_run_chunk, jobs) for tr in part]
    return summarize(trajs, sc.grid)
