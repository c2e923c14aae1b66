import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from molli_t1.signal_model import (
    CurveError,
    ModelParams,
    SignalCurve,
    apparent_to_true_t1,
    molli_signal,
    null_time,
    signed_signal,
)

positive = st.floats(0.05, 5.0)
t1s = st.floats(50.0, 3000.0)


def test_signal_at_t1_star_matches_high_precision_value():
    # |1 - 2/e| evaluated with mpmath at 30 digits
    assert molli_signal(ModelParams(1.0, 2.0, 1000.0), 1000.0) == pytest.approx(0.264241117657115356808952, rel=1e-15)


def test_signal_at_zero_is_a_minus_b_magnitude():
    assert molli_signal(ModelParams(1.0, 2.0, 800.0), 0.0) == pytest.approx(1.0, abs=1e-15)
    assert signed_signal(ModelParams(1.0, 2.0, 800.0), 0.0) == pytest.approx(-1.0, abs=1e-15)


def test_signal_near_null_is_small():
    p = ModelParams(1.0, 2.0, 1000.0)
    # 693.147 ms sits 1.8e-7 ms before the exact null
    assert molli_signal(p, 693.147) == pytest.approx(1.80559961562e-7, rel=1e-8)


def test_true_t1_examples():
    assert apparent_to_true_t1(ModelParams(1.0, 1.8, 800.0)) == pytest.approx(640.0, rel=1e-15)
    assert ModelParams(1.0, 2.0, 500.0).t1 == pytest.approx(500.0)
    assert apparent_to_true_t1(ModelParams(1.0, 1.0, 800.0)) == 0.0


def test_null_time_examples():
    assert null_time(ModelParams(1.0, 2.0, 1000.0)) == pytest.approx(693.147180559945309, rel=1e-15)
    assert null_time(ModelParams(1.0, 1.0, 1000.0)) == 0.0
    assert null_time(ModelParams(1.0, 0.9, 1000.0)) is None


def test_broadcasting_over_parameter_rows():
    p = np.array([[1.0, 2.0, 1000.0], [0.5, 0.9, 300.0]])
    t = np.array([0.0, 100.0, 1000.0])
    y = molli_signal(p[:, None, :], t)
    assert y.shape == (2, 3)
    for i in range(2):
        np.testing.assert_array_equal(y[i], molli_signal(ModelParams.from_array(p[i]), t))


@settings(max_examples=200, deadline=None)
@given(a=positive, ratio=st.floats(1.0, 3.0), t1_star=t1s, t=st.floats(0.0, 10000.0))
def test_magnitude_is_abs_of_signed(a, ratio, t1_star, t):
    p = ModelParams(a, a * ratio, t1_star)
    assert molli_signal(p, t) == abs(signed_signal(p, t))
    assert molli_signal(p, t) >= 0


@settings(max_examples=200, deadline=None)
@given(a=positive, ratio=st.floats(1.0, 3.0), t1_star=t1s)
def test_signal_vanishes_at_null_time(a, ratio, t1_star):
    p = ModelParams(a, a * ratio, t1_star)
    tn = null_time(p)
    assert tn is not None and tn >= 0
    assert abs(signed_signal(p, tn)) <= 1e-12 * p.b


@settings(max_examples=200, deadline=None)
@given(a=positive, ratio=st.floats(1.01, 3.0), t1_star=t1s, c=st.floats(0.01, 100.0))
def test_t1_invariant_to_amplitude_scaling(a, ratio, t1_star, c):
    p = ModelParams(a, a * ratio, t1_star)
    q = ModelParams(c * a, c * a * ratio, t1_star)
    assert q.t1 == pytest.approx(p.t1, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(a=positive, ratio=st.floats(1.0, 3.0), t1_star=t1s)
def test_signal_tends_to_a(a, ratio, t1_star):
    p = ModelParams(a, a * ratio, t1_star)
    assert molli_signal(p, 60.0 * t1_star) == pytest.approx(a, rel=1e-12)


def test_params_array_round_trip():
    p = ModelParams(0.3, 0.6, 700.0)
    assert ModelParams.from_array(p.as_array()) == p
    assert p.is_valid()
    assert not ModelParams(0.3, 0.6, 0.0).is_valid()


def test_curve_sorts_and_freezes():
    c = SignalCurve([300.0, 100.0, 200.0, 400.0], [3.0, 1.0, 2.0, 4.0])
    np.testing.assert_array_equal(c.times, [100, 200, 300, 400])
    np.testing.assert_array_equal(c.values, [1, 2, 3, 4])
    assert len(c) == 4
    with pytest.raises(ValueError):
        c.values[0] = 9.0


@pytest.mark.parametrize(
    "times, values",
    [
        ([1.0, 2.0, 3.0], [1.0, 1.0, 1.0]),
        ([1.0, 2.0, 2.0, 3.0], [1.0, 1.0, 1.0, 1.0]),
        ([-1.0, 2.0, 3.0, 4.0], [1.0, 1.0, 1.0, 1.0]),
        ([1.0, 2.0, 3.0, 4.0], [1.0, -0.1, 1.0, 1.0]),
        ([1.0, 2.0, 3.0, 4.0], [1.0, np.nan, 1.0, 1.0]),
        ([1.0, 2.0, 3.0, 4.0], [1.0, 1.0, 1.0]),
    ],
)
def test_curve_rejects_invalid(times, values):
    with pytest.raises(CurveError):
        SignalCurve(times, values)
