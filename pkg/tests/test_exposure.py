import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nnxva.exposure import (CreditCurve, ExposureError, ExposureProfile, cumulative_alive_indicator, cva_dva,
                            epe_ene, exposure_profile)


def test_alive_indicator_all_alive():
    assert np.all(cumulative_alive_indicator(np.ones((3, 2)), [1, 3], 5) == 1.0)


def test_alive_indicator_hand_product():
    eta = np.array([[1.0, 0.0, 1.0]])
    post = cumulative_alive_indicator(eta, [1, 2, 3], 4, "post")
    assert post[0].tolist() == [1.0, 1.0, 0.0, 0.0]
    pre = cumulative_alive_indicator(eta, [1, 2, 3], 4, "pre")
    assert pre[0].tolist() == [1.0, 1.0, 1.0, 0.0]


def test_alive_indicator_first_date_exercise():
    eta = np.array([[0.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
    post = cumulative_alive_indicator(eta, [2, 4, 6], 8, "post")
    assert np.all(post[0, 2:] == 0.0) and np.all(post[0, :2] == 1.0)
    assert np.all(post[1] == 1.0)


def test_alive_indicator_validation():
    with pytest.raises(ExposureError):
        cumulative_alive_indicator(np.ones((2, 3)), [1, 2], 4)
    with pytest.raises(ExposureError):
        cumulative_alive_indicator(np.full((1, 1), 0.5), [1], 4)


def test_epe_ene_hand_values():
    e, _, g, _ = epe_ene(np.array([1.0, -2.0, 3.0]), np.array([1.0, 1.0, 0.0]))
    assert e[0] == pytest.approx(1 / 3, rel=1e-15)
    assert g[0] == pytest.approx(-2 / 3, rel=1e-15)


def test_physical_needs_underlying():
    with pytest.raises(ExposureError):
        epe_ene(np.ones(3), np.ones(3), settlement="physical")


def test_physical_uses_underlying_after_exercise():
    e, _, g, _ = epe_ene(np.array([5.0, 5.0]), np.array([1.0, 0.0]), settlement="physical",
                         underlying=np.array([0.0, -4.0]))
    assert e[0] == 2.5 and g[0] == -2.0


def test_long_option_has_no_negative_exposure():
    rng = np.random.default_rng(0)
    v = np.abs(rng.normal(size=(100, 6)))
    prof = exposure_profile(np.linspace(0, 1, 6), v, v, np.ones_like(v), event_steps=[3])
    assert np.all(prof.ene == 0.0)


def test_all_exercised_first_date_kills_exposure():
    v = np.ones((10, 6))
    eta = np.zeros((10, 2))
    eta[:, 1] = 1.0
    prof = exposure_profile(np.linspace(0, 1, 6), v, v, np.ones_like(v), eta, [2, 4])
    later = (prof.times > 0.4) | ((prof.times == 0.4) & (prof.side == "post"))
    assert np.all(prof.epe[later] == 0.0)
    assert prof.at(0.4, "pre")[0] == 1.0


def test_profile_rows_at_jumps():
    v = np.ones((4, 5))
    prof = exposure_profile(np.linspace(0, 1, 5), v, v, np.ones_like(v), event_steps=[2], credit_steps=[0, 2, 4])
    assert prof.side.tolist() == ["post", "pre", "post", "post"]
    assert len(prof) == 4


def test_cva_hand_value():
    prof = ExposureProfile(np.array([0.0, 1.0]), np.array(["post", "post"]), np.ones(2), np.zeros(2), np.zeros(2),
                           np.zeros(2))
    cpty = CreditCurve.from_default_probability(0.1, 1.0, 0.4)
    cva, dva, flags = cva_dva(prof, cpty)
    assert cva == pytest.approx(0.06, rel=1e-12)
    assert dva == 0.0 and not flags["cpty_extrapolated"]


def test_cva_zero_hazard_and_full_recovery():
    prof = ExposureProfile(np.array([0.0, 0.5, 1.0]), np.array(["post"] * 3), np.ones(3), np.zeros(3),
                           -np.ones(3), np.zeros(3))
    assert cva_dva(prof, CreditCurve.flat(0.0), CreditCurve.flat(0.0))[:2] == (0.0, 0.0)
    assert cva_dva(prof, CreditCurve.flat(0.05, recovery=1.0), CreditCurve.flat(0.05, recovery=1.0))[:2] == (0.0, 0.0)


def test_dva_sign_and_extrapolation_flag():
    prof = ExposureProfile(np.array([0.0, 1.0, 2.0]), np.array(["post"] * 3), np.zeros(3), np.zeros(3),
                           -np.ones(3), np.zeros(3))
    cpty = CreditCurve(0.4, [1.0], [0.02])
    _, dva, flags = cva_dva(prof, cpty, CreditCurve.flat(0.01))
    assert dva < 0
    assert flags["cpty_extrapolated"] and not flags["own_extrapolated"]


def test_credit_curve_piecewise():
    c = CreditCurve(0.4, [1.0, 3.0], [0.01, 0.03])
    assert c.cumulative_hazard(2.0) == pytest.approx(0.01 + 0.03)
    assert c.cumulative_hazard(4.0) == pytest.approx(0.01 + 0.06 + 0.03)
    with pytest.raises(ExposureError):
        CreditCurve(1.5, [1.0], [0.01])


@settings(max_examples=40, deadline=None)
@given(v=arrays(float, (20, 3), elements=st.floats(-1e6, 1e6)))
def test_epe_minus_ene_is_mean_abs(v):
    e, _, g, _ = epe_ene(v)
    assert np.all(e >= 0) and np.all(g <= 0)
    assert np.allclose(e - g, np.abs(v).mean(axis=0), rtol=1e-12, atol=1e-9)
    assert np.allclose(e + g, v.mean(axis=0), rtol=1e-12, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(eta=arrays(float, (6, 3), elements=st.sampled_from([0.0, 1.0])))
def test_alive_indicator_monotone(eta):
    a = cumulative_alive_indicator(eta, [1, 3, 5], 7, "post")
    assert np.all(np.diff(a, axis=1) <= 0)
    b = cumulative_alive_indicator(eta, [1, 3, 5], 7, "pre")
    assert np.all(a <= b)


@settings(max_examples=30, deadline=None)
@given(h=st.floats(0.0, 0.5), r=st.floats(0.0, 1.0), e=st.floats(0.0, 100.0))
def test_cva_monotone_in_hazard(h, r, e):
    prof = ExposureProfile(np.array([0.0, 1.0, 2.0]), np.array(["post"] * 3), np.full(3, e), np.zeros(3),
                           np.zeros(3), np.zeros(3))
    lo = cva_dva(prof, CreditCurve.flat(h, r))[0]
    hi = cva_dva(prof, CreditCurve.flat(h + 0.01, r))[0]
    assert 0.0 <= lo <= hi + 1e-12
