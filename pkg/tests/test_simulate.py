import numpy as np
import pytest
from numpy.testing import assert_allclose

from mldid import DgpConfig, NEVER_TREATED, oracle_dynamic, simulate
from mldid.exceptions import MldidError


def test_reproducible_given_seed():
    a = simulate(DgpConfig(n_units=200, seed=5))
    b = simulate(DgpConfig(n_units=200, seed=5))
    assert np.array_equal(a.panel.outcomes, b.panel.outcomes)
    assert np.array_equal(a.drawn_class, b.drawn_class)
    c = simulate(DgpConfig(n_units=200, seed=6))
    assert not np.array_equal(a.panel.outcomes, c.panel.outcomes)


def test_observed_equals_untreated_before_start():
    oracle = simulate(DgpConfig(n_units=500, seed=1))
    panel = oracle.panel
    for t in range(1, 5):
        pre = (panel.groups == NEVER_TREATED) | (panel.groups > t)
        assert_allclose(panel.outcomes[pre, t - 1], oracle.y_untreated[pre, t - 1])
    treated = panel.groups >= 2
    for t in range(1, 5):
        post = treated & (panel.groups <= t)
        assert_allclose(panel.outcomes[post, t - 1], oracle.y_treated[post, t - 1])


def test_placebo_truth_exactly_zero():
    oracle = simulate(DgpConfig(n_units=300, seed=2))
    # No anticipation: the treated series coincides with the untreated one
    # before the start period, so pre-treatment effects are exactly zero.
    assert oracle.oracle_att(3, 1) == 0.0
    assert oracle.oracle_att(4, 2) == 0.0
    g = oracle.panel.groups
    for coh in (2, 3, 4):
        rows = g == coh
        pre_cols = np.arange(coh - 1)
        assert np.array_equal(
            oracle.y_treated[np.ix_(rows, pre_cols)],
            oracle.y_untreated[np.ix_(rows, pre_cols)],
        )


def test_random_assignment_class_shares():
    oracle = simulate(DgpConfig(n_units=10000, seed=3))
    # T+1 = 5 equally likely classes: never treated, cohorts 2..4, and a
    # post-horizon class that is observationally never treated.
    for cls in (0, 2, 3, 4, 5):
        share = float(np.mean(oracle.drawn_class == cls))
        assert abs(share - 0.2) < 0.02
    never_share = float(np.mean(oracle.panel.groups == NEVER_TREATED))
    assert abs(never_share - 0.4) < 0.03


def test_logit_assignment_depends_on_kappa():
    oracle = simulate(DgpConfig(n_units=20000, seed=4, assignment="logit-x2"))
    x2 = oracle.panel.covariates[:, 0, 1]
    late_or_never = np.isin(oracle.drawn_class, [4, 5])
    # Larger class scores attach to later cohorts, so high x2 pushes units
    # toward the late classes.
    assert x2[late_or_never].mean() > x2[~late_or_never].mean() + 0.05


def test_exposure_scaling_of_effects():
    oracle = simulate(DgpConfig(n_units=20000, seed=5, tau="const"))
    # delta_e = e + 1: three periods after a period-2 start the mean
    # effect is 3 for the constant-tau scenario.
    assert abs(oracle.oracle_att(2, 4) - 3.0) < 0.1
    assert abs(oracle.oracle_att(2, 2) - 1.0) < 0.1


def test_oracle_att_matches_potential_outcome_mean():
    oracle = simulate(DgpConfig(n_units=400, seed=6))
    rows = oracle.panel.groups == 2
    expected = float(
        (oracle.y_treated[rows, 2] - oracle.y_untreated[rows, 2]).mean()
    )
    assert oracle.oracle_att(2, 3) == expected


def test_oracle_catt_is_noise_free_linear_in_exposure():
    oracle = simulate(DgpConfig(n_units=300, seed=7, tau="x1"))
    catt = oracle.oracle_catt()
    x1 = oracle.panel.covariates[:, 0, 0]
    for e in (0, 1, 2):
        rows, vals = catt[e]
        assert_allclose(vals, (e + 1) * x1[rows], atol=1e-12)
    rows, vals = catt[-2]
    assert_allclose(vals, 0.0)
    # Realized effects differ from the conditional ones only through the
    # swapped noise draws, which are mean zero.
    big = simulate(DgpConfig(n_units=20000, seed=8, tau="x1"))
    rows2 = big.panel.groups == 2
    realized = big.y_treated[rows2, 1] - big.y_untreated[rows2, 1]
    conditional = big.panel.covariates[rows2, 0, 0]
    assert abs((realized - conditional).mean()) < 0.05


def test_time_varying_covariate_is_per_unit_trend():
    oracle = simulate(DgpConfig(n_units=50, seed=9))
    x5 = oracle.panel.covariates[:, :, 4]
    base = x5[:, 0]
    for t in range(1, 5):
        assert_allclose(x5[:, t - 1], base * t)


def test_tau_scenarios():
    for tau, fn in [
        ("x1", lambda x: x[:, 0]),
        ("x23sq", lambda x: (x[:, 1] + x[:, 2]) ** 2),
        ("const", lambda x: np.ones(x.shape[0])),
        ("x1x3", lambda x: x[:, 0] + x[:, 2]),
    ]:
        oracle = simulate(DgpConfig(n_units=100, seed=10, tau=tau))
        x = oracle.panel.covariates[:, 0, :]
        assert_allclose(oracle.tau_unit, fn(x), atol=1e-12)


def test_confounding_enters_both_potential_series():
    base = simulate(DgpConfig(n_units=200, seed=11, confounding="none"))
    conf = simulate(DgpConfig(n_units=200, seed=11, confounding="trend",
                              chi="x123"))
    x = conf.panel.covariates[:, 0, :]
    chi = x[:, 0] + x[:, 1] + x[:, 2]
    for t in range(1, 5):
        shift = conf.y_untreated[:, t - 1] - base.y_untreated[:, t - 1]
        assert_allclose(shift, t * chi, atol=1e-10)
        shift_tr = conf.y_treated[:, t - 1] - base.y_treated[:, t - 1]
        assert_allclose(shift_tr, t * chi, atol=1e-10)


def test_zero_noise_oracle_dynamics_by_hand():
    # With tau = 1 and no noise, every realized effect is exactly e + 1,
    # so each event-study aggregate equals e + 1 regardless of weights.
    oracle = simulate(DgpConfig(n_units=10, seed=12, tau="const",
                                noise_scale=0.0))
    dyn = oracle_dynamic(oracle)
    for e, theta in dyn.items():
        if e >= 0:
            assert_allclose(theta, e + 1.0, atol=1e-12)
        else:
            assert theta == 0.0


def test_oracle_dynamic_single_cohort():
    for attempt in range(50):
        oracle = simulate(DgpConfig(n_units=30, seed=100 + attempt))
        if oracle.panel.cohorts == [2, 3, 4]:
            break
    dyn = oracle_dynamic(oracle, include_placebo=False)
    cells = oracle.oracle_cells(False)
    # e = 2 is observable for cohort 2 only: the aggregate is that cell.
    assert_allclose(dyn[2], cells[(2, 4)], atol=1e-12)


def test_config_validation():
    with pytest.raises(MldidError):
        DgpConfig(n_units=5)
    with pytest.raises(MldidError):
        DgpConfig(n_units=100, tau="cubic")
    with pytest.raises(MldidError):
        DgpConfig(n_units=100, assignment="lottery")
