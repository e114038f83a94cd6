import numpy as np
import pytest

from enkibatt.ocv import LINEAR_FIXTURE, OcvCurve, ocv_eval


def test_fixture_endpoints():
    assert ocv_eval(LINEAR_FIXTURE, 0.0) == 3.0
    assert ocv_eval(LINEAR_FIXTURE, 1.0) == pytest.approx(4.2, abs=1e-15)


def test_table_interpolation():
    curve = OcvCurve.table([0.0, 0.5, 1.0], [3.0, 3.7, 4.2])
    assert curve(0.25) == pytest.approx(3.35, abs=1e-15)


def test_linear_extrapolation_outside_unit_interval():
    curve = OcvCurve.table([0.0, 0.5, 1.0], [3.0, 3.7, 4.2])
    assert curve(-0.1) == pytest.approx(3.0 - 0.1 * 1.4)
    assert curve(1.2) == pytest.approx(4.2 + 0.2 * 1.0)
    poly = OcvCurve(coefficients=(3.2, 0.6, 0.4))
    assert poly(1.5) == pytest.approx(4.2 + 0.5 * (0.6 + 2 * 0.4))


def test_vectorized_evaluation_matches_scalar():
    s = np.linspace(-0.2, 1.2, 15)
    v = LINEAR_FIXTURE(s)
    assert v.shape == s.shape
    assert np.allclose(v, [LINEAR_FIXTURE(float(x)) for x in s])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(coefficients=(4.0, -1.0)),  # decreasing
        dict(coefficients=(3.0, 1.2, -1.0)),  # non-monotone on [0, 1]
        dict(breakpoints=(0.0, 0.5, 1.0), voltages=(3.0, 3.0, 4.0)),
        dict(breakpoints=(0.1, 1.0), voltages=(3.0, 4.0)),  # does not cover 0
        dict(coefficients=(2.0, 1.0)),  # below the voltage window
    ],
)
def test_invalid_curves_are_rejected(kwargs):
    with pytest.raises(ValueError):
        OcvCurve(**kwargs)


def test_dict_roundtrip():
    for curve in (LINEAR_FIXTURE, OcvCurve.table([0.0, 0.3, 1.0], [3.1, 3.6, 4.1])):
        assert OcvCurve.from_dict(curve.to_dict()) == curve
