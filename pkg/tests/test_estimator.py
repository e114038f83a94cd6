import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from enkibatt import EnKIBatteryIdentifier
from enkibatt.estimator import cycle_from_array, output_rmse
from enkibatt.models import THEVENIN, THEVENIN_TRUE
from enkibatt.simulator import ProfileSpec, simulate, synth_profile


@pytest.fixture(scope="module")
def dataset():
    cycle = synth_profile(ProfileSpec(600.0, pulse_current=4.0, duty=1.0), seed=2)
    outputs = simulate(THEVENIN, THEVENIN_TRUE, None, cycle).outputs
    X = np.column_stack([cycle.times, cycle.current, cycle.t_amb])
    return X, outputs


def test_params_roundtrip_through_clone():
    est = EnKIBatteryIdentifier(model="ndct", n_members=40, perturbation="none", random_state=7)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin.set_params(max_iter=3).max_iter == 3


def test_predict_before_fit_raises(dataset):
    X, _ = dataset
    with pytest.raises(NotFittedError):
        EnKIBatteryIdentifier().predict(X)


def test_fit_predict_shapes_and_attributes(dataset):
    X, y = dataset
    est = EnKIBatteryIdentifier(n_members=30, max_iter=3, random_state=1).fit(X, y)
    assert est.theta_.shape == (9,)
    assert list(est.params_) == list(THEVENIN.param_names)
    assert est.n_iter_ == len(est.alphas_) <= 3
    pred = est.predict(X)
    assert pred.shape == y.shape
    assert set(est.rmse(X, y)) == {"voltage", "surf_temp"}
    assert est.named_params().r_o == est.params_["R_o"]


def test_fit_is_reproducible(dataset):
    X, y = dataset
    a = EnKIBatteryIdentifier(n_members=20, max_iter=2, random_state=3).fit(X, y)
    b = EnKIBatteryIdentifier(n_members=20, max_iter=2, random_state=3).fit(X, y)
    assert np.array_equal(a.theta_, b.theta_)


def test_true_parameters_reproduce_noiseless_outputs(dataset):
    X, y = dataset
    est = EnKIBatteryIdentifier()
    est.theta_ = THEVENIN_TRUE
    assert est.rmse(X, y) == {"voltage": 0.0, "surf_temp": 0.0}


def test_fit_rejects_wrong_target_shape(dataset):
    X, y = dataset
    with pytest.raises(ValueError, match="two columns"):
        EnKIBatteryIdentifier().fit(X, y[:, 0:1].repeat(3, axis=1))


def test_cycle_from_array_defaults_ambient():
    c = cycle_from_array(np.array([[0.0, 1.0], [1.0, -1.0]]), t_amb=290.0)
    assert c.t_amb.tolist() == [290.0, 290.0]
    with pytest.raises(ValueError, match="columns"):
        cycle_from_array(np.zeros((3, 4)))


def test_output_rmse():
    m = np.array([[4.0, 300.0], [4.0, 300.0]])
    p = m + [[0.01, -0.1], [-0.01, 0.1]]
    r = output_rmse(m, p)
    assert r["voltage"] == pytest.approx(0.01) and r["surf_temp"] == pytest.approx(0.1)
