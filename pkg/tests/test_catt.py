import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mldid import fit_catt, predict_catt
from mldid.catt import catt_loss
from mldid.exceptions import AllWeightsZero, SchemaMismatch

from _utils import oracle_bundle, two_period_dgp


def bundle_with_tau(n, seed, tau_fn, noise=1.0):
    sl, truth = two_period_dgp(n, seed, tau_fn=tau_fn, noise=noise)
    return oracle_bundle(sl, truth), truth


def test_zero_h_gives_zero_tau():
    bundle, _ = bundle_with_tau(200, 0, lambda x: x[:, 0])
    bundle = dataclasses.replace(bundle, H=np.zeros(bundle.n_rows))
    model = fit_catt(bundle)
    assert model.intercept == 0.0
    assert_allclose(model.coef, 0.0, atol=1e-12)


def test_large_penalty_kills_slopes():
    bundle, _ = bundle_with_tau(300, 1, lambda x: 2.0 * x[:, 0])
    model = fit_catt(bundle, l1=1e8)
    assert_allclose(model.coef, 0.0, atol=1e-12)


def test_recovers_linear_effect_with_oracle_nuisances():
    bundle, truth = bundle_with_tau(5000, 2, lambda x: 2.0 * x[:, 0],
                                    noise=0.3)
    model = fit_catt(bundle, l1=0.0)
    assert abs(model.coef[0] - 2.0) < 0.1
    assert abs(model.coef[1]) < 0.05
    assert abs(model.intercept) < 0.1


def test_unpenalized_fit_solves_normal_equations():
    from mldid.nuisance import LearnerConfig

    bundle, _ = bundle_with_tau(400, 3, lambda x: 1.0 + x[:, 0] - 0.5 * x[:, 1])
    model = fit_catt(bundle, l1=0.0, config=LearnerConfig(l2=0.0))
    C = bundle.C
    Z = np.concatenate([C[:, None], C[:, None] * bundle.X], axis=1)
    expected, *_ = np.linalg.lstsq(Z, bundle.H, rcond=None)
    got = np.concatenate([[model.intercept], model.coef])
    assert_allclose(got, expected, atol=1e-8)


def test_objective_no_worse_than_zero_model():
    bundle, _ = bundle_with_tau(600, 4, lambda x: x[:, 0] ** 0 + x[:, 1])
    model = fit_catt(bundle)
    zero = dataclasses.replace(model, intercept=0.0,
                               coef=np.zeros_like(model.coef))
    assert catt_loss(bundle, model) <= catt_loss(bundle, zero) + 1e-9


def test_predict_constant_model():
    bundle, _ = bundle_with_tau(100, 5, lambda x: x[:, 0])
    model = fit_catt(bundle, l1=1e8)
    x = np.array([[3.0, -1.0], [0.0, 0.0]])
    assert_allclose(predict_catt(model, x), model.intercept)


def test_predict_linear_arithmetic():
    from mldid.catt import CattModel

    model = CattModel(intercept=0.0, coef=np.array([2.0]), l1=0.0,
                      covariate_names=("x_1",))
    assert_allclose(predict_catt(model, np.array([[1.5]])), [3.0])


def test_fit_predict_round_trip():
    bundle, _ = bundle_with_tau(300, 6, lambda x: 0.5 * x[:, 0])
    model = fit_catt(bundle, l1=0.01)
    first = predict_catt(model, bundle.X)
    again = predict_catt(model, bundle.X)
    assert_allclose(first, again, atol=1e-10)


def test_all_weights_zero():
    bundle, _ = bundle_with_tau(150, 7, lambda x: x[:, 0])
    bundle = dataclasses.replace(bundle, C=np.zeros(bundle.n_rows))
    with pytest.raises(AllWeightsZero):
        fit_catt(bundle)


def test_schema_mismatch():
    bundle, _ = bundle_with_tau(150, 8, lambda x: x[:, 0])
    model = fit_catt(bundle, l1=0.1)
    with pytest.raises(SchemaMismatch):
        predict_catt(model, np.zeros((4, 5)))
