"""Model-free recovery of the cumulative decay and its rate from conditional
mean detection curves, with bootstrap bands and a goodness-of-fit statistic."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import isotonic_regression

from .curves import RateCurve
from .montecarlo import SeedPolicy
from .physics import CollapseModelConfig, DomainError, InterferometerSpec, detection_probability
from .scenario import TimeGrid

# per-bin mask reasons
VALID, LOW_CONTRAST, COLLAPSED, ABOVE_ONE, NOISY = 0, 1, 2, 3, 4
REASONS = {VALID: "valid", LOW_CONTRAST: "low_contrast", COLLAPSED: "collapsed",
           ABOVE_ONE: "above_one", NOISY: "noisy"}


class EstimationError(RuntimeError):
    """No bin survived masking, or the input cannot support an estimate."""


@dataclass(eq=False)
class GammaEstimate:
    """Per-bin cumulative decay, optional rate and bands.

    ``mask`` is True on bins that carry an estimate; ``flags`` records why the
    others were dropped. ``raw`` is the cumulative before the monotone
    projection and ``stderr`` its propagated standard error (zero when the
    input had none).
    """

    grid: TimeGrid
    cumulative: np.ndarray
    mask: np.ndarray
    flags: np.ndarray
    raw: np.ndarray
    stderr: np.ndarray
    rate: Optional[np.ndarray] = None
    ci_lower: Optional[np.ndarray] = None
    ci_upper: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return self.grid.centers

    def masked_counts(self) -> dict:
        return {REASONS[k]: int(np.sum(self.flags == k)) for k in REASONS}


def _invert(grid, measured, measured_se, dc, zero, w_not_mov, min_contrast, eps_stat,
            max_rel_err, floor):
    if not 0.0 < w_not_mov <= 1.0:
        raise DomainError("w_not_mov must lie in (0, 1]")
    contrast = dc - zero
    if min_contrast is None:
        min_contrast = 0.05 * float(np.max(np.abs(contrast)))
    flags = np.full(grid.n_bins, VALID)
    low = np.abs(contrast) < max(min_contrast, np.finfo(float).tiny)
    flags[low] = LOW_CONTRAST
    safe = np.where(low, 1.0, contrast)
    y = (dc - measured) / (w_not_mov * safe)
    sy = np.zeros(grid.n_bins) if measured_se is None else measured_se / (w_not_mov * np.abs(safe))
    noisy = measured_se is not None
    upper = 1.0 + (eps_stat * sy if noisy else 1e-9)
    lower = np.maximum(floor, eps_stat * sy) if noisy else floor
    ok = ~low
    flags[ok & ~(y <= upper)] = ABOVE_ONE
    flags[ok & ~(y > lower)] = COLLAPSED
    valid = flags == VALID
    raw = np.full(grid.n_bins, np.nan)
    raw[valid] = -np.log(np.minimum(y[valid], 1.0))
    se = np.zeros(grid.n_bins)
    se[valid] = sy[valid] / y[valid]
    if max_rel_err is not None and noisy:
        rel = se / np.maximum(raw, np.finfo(float).tiny)
        flags[valid & (rel > max_rel_err)] = NOISY
        valid = flags == VALID
        raw[~valid] = np.nan
    if not np.any(valid):
        counts = {REASONS[k]: int(np.sum(flags == k)) for k in REASONS}
        raise EstimationError(f"every bin was masked: {counts}")
    cum = np.full(grid.n_bins, np.nan)
    weights = None
    if noisy and np.all(se[valid] > 0):
        weights = 1.0 / se[valid] ** 2
    cum[valid] = isotonic_regression(raw[valid], weights=weights, increasing=True).x
    return GammaEstimate(grid, cum, valid, flags, raw, se,
                         diagnostics={"min_contrast": min_contrast})


def invert_mean_to_dc(mean_to_dc: RateCurve, dc: RateCurve, zero: RateCurve,
                      w_not_mov: float, min_contrast: Optional[float] = None, *,
                      eps_stat: float = 3.0, max_rel_err: Optional[float] = None,
                      floor: float = 1e-12) -> GammaEstimate:
    """Solve the conditional-mean relation bin by bin for the cumulative decay.

    Bins are masked for low fringe contrast (default 5% of the largest), for a
    decay factor at or below ``floor`` (fully collapsed), for a decay factor
    above 1 beyond ``eps_stat`` standard errors, and optionally where the
    propagated relative error exceeds ``max_rel_err``.
    """
    for c in (dc, zero):
        if c.grid != mean_to_dc.grid:
            raise DomainError("curves live on different grids")
    return _invert(mean_to_dc.grid, mean_to_dc.values, mean_to_dc.stderr, dc.values,
                   zero.values, w_not_mov, min_contrast, eps_stat, max_rel_err, floor)


def invert_p_to_mov(p_curve: RateCurve, ds_curve, itf: InterferometerSpec, w_not_mov: float,
                    min_contrast: Optional[float] = None, **kw) -> GammaEstimate:
    """Same inversion on single-photon probabilities, references from the
    detector response at ``ds`` and at rest."""
    if p_curve.unit != "probability":
        raise DomainError("expected a probability-tagged curve")
    ds = ds_curve.values if isinstance(ds_curve, RateCurve) else np.asarray(ds_curve, float)
    dc = detection_probability(ds, itf)
    zero = np.full_like(dc, float(detection_probability(0.0, itf)))
    return _invert(p_curve.grid, p_curve.values, p_curve.stderr, dc, zero, w_not_mov,
                   min_contrast, kw.get("eps_stat", 3.0), kw.get("max_rel_err"),
                   kw.get("floor", 1e-12))


def smooth_rate(est: GammaEstimate, window_bins: int = 5) -> GammaEstimate:
    """Rate as the slope of a local linear fit over ``window_bins`` bins.

    Only unmasked bins enter each fit; negative slopes are clipped to zero and
    the clipped fraction is reported in ``diagnostics['clip_fraction']``.
    """
    if window_bins < 3 or window_bins % 2 == 0:
        raise DomainError("window_bins must be odd and >= 3")
    valid = est.mask
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EstimationError("no unmasked bins")
    if window_bins > n_valid:
        raise EstimationError(f"window of {window_bins} bins exceeds {n_valid} unmasked bins")
    n = est.grid.n_bins
    half = window_bins // 2
    t = est.grid.centers
    y = np.where(valid, est.cumulative, 0.0)
    s0, s1, s2, sy, sty = (np.zeros(n) for _ in range(5))
    for k in range(-half, half + 1):
        src = np.arange(n) + k
        inside = (src >= 0) & (src < n)
        src_c = np.clip(src, 0, n - 1)
        use = inside & valid[src_c]
        tk = t[src_c] - t  # centred for conditioning
        s0 += use
        s1 += use * tk
        s2 += use * tk * tk
        sy += use * y[src_c]
        sty += use * tk * y[src_c]
    det = s0 * s2 - s1 * s1
    with np.errstate(invalid="ignore", divide="ignore"):
        slope = (s0 * sty - s1 * sy) / det
    good = valid & (s0 >= 2) & (np.abs(det) > 0)
    rate = np.full(n, np.nan)
    rate[good] = slope[good]
    clipped = good & (rate < 0)
    rate[clipped] = 0.0
    diag = dict(est.diagnostics)
    diag["clip_fraction"] = float(clipped.sum() / max(good.sum(), 1))
    diag["window_bins"] = window_bins
    return replace(est, rate=rate, diagnostics=diag)


def _conditional_mean(counts, select, weights=None):
    if weights is None:
        return counts[select].mean(axis=0)
    w = weights * select
    return (w @ counts) / w.sum()


def bootstrap_bands(counts: np.ndarray, branches, grid: TimeGrid, dc: RateCurve,
                    zero: RateCurve, w_not_mov: float, n_resamples: int = 200,
                    seed: int = 0, *, estimate: Optional[GammaEstimate] = None,
                    level: float = 0.95, **inversion) -> GammaEstimate:
    """Percentile bands on the cumulative decay by resampling trajectories.

    ``counts`` is the (trajectories x bins) detection-count matrix and
    ``branches`` the per-trajectory eventual branch labels. Each resample
    redraws all trajectories with replacement, re-forms the conditional mean
    over the ``mov`` branch and inverts it bin by bin (without the monotone
    projection).
    """
    if n_resamples < 100:
        raise DomainError("n_resamples must be >= 100")
    counts = np.asarray(counts)
    mov = np.asarray(branches) == "mov"
    if mov.sum() < 10:
        raise EstimationError("fewer than 10 trajectories ended in the moved branch")
    if estimate is None:
        from .montecarlo import mean_curve
        estimate = invert_mean_to_dc(mean_curve(counts[mov], grid), dc, zero, w_not_mov,
                                     **inversion)
    n = counts.shape[0]
    contrast = dc.values - zero.values
    safe = np.where(estimate.mask, contrast, 1.0)
    policy = SeedPolicy(seed)
    samples = np.empty((n_resamples, grid.n_bins))
    for r in range(n_resamples):
        rng = policy.generator(r)
        w = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
        if (w * mov).sum() == 0:
            samples[r] = np.nan
            continue
        mean = _conditional_mean(counts, mov, w) / grid.dt
        y = (dc.values - mean) / (w_not_mov * safe)
        # y <= 0 means "fully collapsed"; cap at the decay of the smallest double
        samples[r] = -np.log(np.maximum(y, np.finfo(float).tiny))
    alpha = (1.0 - level) / 2.0
    lo = np.nanpercentile(samples, 100 * alpha, axis=0)
    hi = np.nanpercentile(samples, 100 * (1 - alpha), axis=0)
    lo[~estimate.mask] = np.nan
    hi[~estimate.mask] = np.nan
    diag = dict(estimate.diagnostics)
    diag["n_resamples"] = n_resamples
    return replace(estimate, ci_lower=lo, ci_upper=hi, diagnostics=diag)


@dataclass(frozen=True)
class Goodness:
    statistic: float
    n_bins: int

    @property
    def reduced(self) -> float:
        return self.statistic / self.n_bins if self.n_bins else float("nan")


def model_goodness(est: GammaEstimate, candidate: CollapseModelConfig, sc) -> Goodness:
    """Variance-weighted squared residuals between the estimated and predicted
    cumulative decay over unmasked bins (plain squares when the estimate
    carries no errors)."""
    pred = sc.decay_history(candidate, est.grid.horizon).cumulative(est.grid.centers)
    m = est.mask
    res = est.raw[m] - pred[m]
    se = est.stderr[m]
    if np.all(se > 0):
        res = res / se
    return Goodness(float(res @ res), int(m.sum()))
