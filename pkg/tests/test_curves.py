import numpy as np
import pytest
from hypothesis import given, strategies as st

from dpcollapse import curves as C
from dpcollapse.physics import BranchWeights, CollapseModelConfig, DomainError, PiezoSpec
from dpcollapse.presets import PIEZO, bench_scenario


@pytest.fixture(scope="module")
def sc():
    return bench_scenario()


def test_zero_curve(sc):
    z = C.curve_zero(sc)
    assert np.all(z.values == z.values[0])
    assert z.values[0] == pytest.approx(5e6, rel=1e-15)
    from dataclasses import replace
    dark = sc.replace(interferometer=replace(sc.interferometer, alpha=0.0, beta=0.0))
    assert np.all(C.curve_zero(dark).values == 0.0)


def test_dark_count_curve(sc):
    dc = C.curve_dark_count(sc)
    assert dc.values[0] == pytest.approx(5e6, rel=1e-3)
    from dpcollapse.physics import detection_probability
    plateau = 1e7 * detection_probability(7.2e-9, sc.interferometer)
    assert dc.values[-1] == pytest.approx(plateau, rel=1e-3)
    from dataclasses import replace
    still = sc.replace(piezo=replace(PIEZO, d33=1e-30))
    assert np.allclose(C.curve_dark_count(still).values, C.curve_zero(still).values, rtol=1e-12)


def test_superposed_limits(sc):
    assert np.allclose(C.curve_superposed(sc, BranchWeights(1.0)).values,
                       C.curve_dark_count(sc).values, rtol=1e-15)
    assert np.allclose(C.curve_superposed(sc, BranchWeights(0.0)).values,
                       C.curve_zero(sc).values, rtol=1e-15)
    sup = C.curve_superposed(sc).values[-1]
    assert sup == pytest.approx(0.34 * C.curve_dark_count(sc).values[-1] + 0.66 * 5e6, rel=1e-12)


@given(st.floats(0.0, 1.0))
def test_mixture_identity(w_mov):
    sc = bench_scenario(n_bins=50)
    w = BranchWeights(w_mov)
    lhs = C.curve_superposed(sc, w).values
    rhs = w.w_mov * C.curve_dark_count(sc).values + w.w_not_mov * C.curve_zero(sc).values
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=0)


def test_mean_all_limits(sc):
    still = sc.replace(model=CollapseModelConfig.constant(0.0))
    assert np.allclose(C.curve_mean_all(still).values, C.curve_superposed(still).values,
                       rtol=1e-15)
    fast = sc.replace(model=CollapseModelConfig.constant(1e9))
    late = C.curve_mean_all(fast).values[-1]
    assert late == pytest.approx(C.curve_superposed(fast).values[-1], rel=1e-12)


def test_mean_to_dc_limits(sc):
    m = C.curve_mean_to_dc(sc)
    assert m.values[0] == pytest.approx(5e6, rel=1e-3)
    assert m.values[-1] == pytest.approx(C.curve_dark_count(sc).values[-1], rel=1e-12)
    still = sc.replace(model=CollapseModelConfig.constant(0.0))
    assert np.allclose(C.curve_mean_to_dc(still).values, C.curve_superposed(still).values,
                       rtol=1e-12)


def test_mean_to_dc_matches_unsimplified_form(sc):
    # conditional average over moved traces, written out by hand
    w = sc.weights
    p_sup = C.survival_on_grid(sc)
    p_mov = w.w_mov * (1 - p_sup)
    direct = (w.w_mov * p_sup * C.curve_superposed(sc).values
              + p_mov * C.curve_dark_count(sc).values) / w.w_mov
    assert np.allclose(C.curve_mean_to_dc(sc).values, direct, rtol=1e-10, atol=0)


def test_mean_to_dc_rejects_zero_weight(sc):
    with pytest.raises(DomainError):
        C.curve_mean_to_dc(sc, BranchWeights(0.0))


def test_prob_to_mov(sc):
    p = C.prob_to_mov_curve(sc)
    assert p.unit == "probability"
    assert p.values[0] == pytest.approx(0.5, rel=1e-3)
    assert np.allclose(p.values, C.curve_mean_to_dc(sc).values / 1e7, rtol=1e-12)


def test_percent_deviation(sc):
    z = C.curve_zero(sc)
    assert np.all(C.percent_deviation(z, z).values == 0)
    scaled = C.RateCurve(z.grid, 1.1 * z.values)
    assert np.allclose(C.percent_deviation(scaled, z).values, 0.1)
    dev = C.percent_deviation(C.curve_mean_to_dc(sc), z).values
    dc = C.curve_dark_count(sc).values
    assert abs(dev[0]) < 1e-3
    assert dev[-1] == pytest.approx((dc[-1] - 5e6) / 5e6, rel=1e-9)


def test_displacement_curve_25k():
    sc = bench_scenario(25e3, horizon=8e-6, n_bins=400)
    ds = C.displacement_curve(sc).values
    assert np.all(ds < 2e-9)


def test_rate_curve_validation(sc):
    with pytest.raises(DomainError):
        C.RateCurve(sc.grid, np.zeros(3))
    with pytest.raises(DomainError):
        C.RateCurve(sc.grid, -np.ones(sc.grid.n_bins))
