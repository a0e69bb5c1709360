import numpy as np
import pytest
from numpy.testing import assert_array_equal
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sfreinforce import (ConfigurationError, EnvSpec, MdpModel, KWReinforce, LRReinforce, SFReinforce,
                         make_chain, save_model)
from sfreinforce.estimator import check_model

from conftest import two_state_model


@pytest.mark.parametrize("cls", [SFReinforce, LRReinforce, KWReinforce])
def test_params_round_trip(cls):
    est = cls(n_iter=7, random_state=3)
    params = est.get_params()
    assert params["n_iter"] == 7 and params["random_state"] == 3
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(a0=0.2)
    assert est.a0 == 0.2


def test_fit_predict():
    m = make_chain(4, forward_cost=1.0, stay_cost=3.0)
    est = SFReinforce(a0=1.0, delta0=2.0, n_iter=3000, diag_every=500, random_state=0).fit(m)
    assert est.theta_.shape == (8,) and est.n_features_in_ == 8
    assert est.n_episodes_ == 3000
    assert_array_equal(est.predict(), est.predict_proba().argmax(axis=1))
    proba = est.predict_proba([1, 3])
    assert proba.shape == (2, 2)
    assert np.allclose(proba.sum(axis=1), 1.0)
    assert est.score(m) == -est.objective_
    assert est.score(m) > -est.record_.initial["objective"]
    assert est.stationarity(m) < est.record_.initial["proj_grad_norm"]


def test_learns_cheaper_action():
    m = MdpModel.from_lists([[[0.0, 1.0], [0.0, 1.0]]], [[3.0, 1.0]], [1.0])
    est = SFReinforce(a0=1.0, n_iter=2000, random_state=0).fit(m)
    assert_array_equal(est.predict(), [1])
    assert est.predict_proba()[0, 1] > 0.9


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SFReinforce().predict()


def test_deterministic_fit():
    m = two_state_model()
    a = SFReinforce(n_iter=500, random_state=5).fit(m)
    b = clone(a).fit(m)
    assert_array_equal(a.theta_, b.theta_)


def test_lr_and_kw_fit():
    m = two_state_model()
    lr = LRReinforce(n_iter=200, diag_every=100, random_state=0).fit(m)
    kw = KWReinforce(n_iter=5, diag_every=5, random_state=0).fit(m)
    assert lr.n_episodes_ == 200
    assert kw.n_episodes_ == 5 * 2 * 4


def test_theta0_and_bound():
    m = two_state_model()
    est = SFReinforce(n_iter=1, a0=1e-12, bound=1.0, theta0=[5.0, 0.0, 0.0, -5.0],
                      random_state=0).fit(m)
    assert np.all(np.abs(est.theta_) <= 1.0)


def test_model_inputs(tmp_path):
    m = two_state_model()
    save_model(m, tmp_path / "m.json")
    for X in (m, str(tmp_path / "m.json"), m.to_dict(), EnvSpec("chain", {"length": 2}),
              {"kind": "chain", "length": 2}):
        assert check_model(X).num_nonterminal == 2
    with pytest.raises(ConfigurationError):
        check_model(42)


def test_state_validation():
    est = SFReinforce(n_iter=10, random_state=0).fit(two_state_model())
    with pytest.raises(ConfigurationError):
        est.predict([0, 2])
    with pytest.raises(ConfigurationError):
        est.predict([0.5])
    assert est.predict(np.array([[1], [0]])).shape == (2,)
