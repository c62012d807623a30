import numpy as np
import pytest

from oracles import drop_cumulative as oracle_cumulative
from oracles import drop_current as oracle_current
from oracles import ols_normal_equations
from rmabcalls.core import E, NE
from rmabcalls.metrics import (
    RankDeficientError, drop_cumulative, drop_cumulative_series, drop_current, drop_current_series,
    drops_prevented, normalized_reward, ols_regression, percent_reduction, selection_audit, t_two_sided_p,
)
from rmabcalls.simulator import TrialLog

# Fixed 20-row dataset: T = 10 treated then 10 controls, planted beta = -0.5,
# noise sd 0.1. Expected values come from the normal-equations oracle.
OLS_X = np.array([
    [-0.36, 1.204], [1.397, 0.317], [0.414, -0.49], [-0.914, -0.9], [-0.998, 0.929],
    [-0.056, 0.128], [-0.64, -1.088], [-1.202, -0.842], [0.599, 0.018], [-0.457, -0.239],
    [-1.427, 1.231], [-1.216, 0.042], [2.137, -2.551], [-1.407, -0.724], [0.117, -1.715],
    [-0.235, -0.028], [0.171, -2.388], [0.646, 1.597], [0.437, -0.723], [-0.613, -2.646],
])
OLS_Y = np.array([
    0.1988, 1.006, 0.7872, 0.1081, -0.0278, 0.4473, 0.4772, 0.4111, 0.5017, 0.3389,
    0.3853, 0.7259, 2.1682, 0.8282, 1.4301, 0.8292, 1.6583, 0.8238, 1.1126, 1.3891,
])
OLS_T = np.array([1.0] * 10 + [0.0] * 10)
OLS_COEF = [1.0138882692232443, -0.5433803652146743, 0.29506962174199025, -0.20518204705742293]
OLS_SE = [0.044072326691820304, 0.057534632860160036, 0.03052731702403261, 0.02449429303787197]
OLS_P = [1.0942888536367716e-13, 6.048237438059139e-08, 4.3989057090053664e-08, 3.037202084195654e-07]


def test_drop_current_examples():
    assert drop_current(np.array([[E, NE], [E, NE]]), 1) == 0
    assert drop_current(np.array([[E, E], [E, NE]]), 1) == 1
    assert drop_current(np.array([[NE, E, E], [E, NE, NE]]), 1) == 1
    with pytest.raises(IndexError):
        drop_current(np.array([[E]]), 3)


def test_drop_cumulative_examples():
    assert drop_cumulative(np.array([[E], [NE], [NE]]), 2) == 2
    assert drop_cumulative(np.ones((4, 3), int), 3) == 0


def test_drops_prevented_and_identical_logs():
    s = np.array([[E, E], [NE, E], [NE, NE]])
    assert drops_prevented(s, s, 2) == 0
    csoc = np.array([[E] * 5, [NE] * 5, [NE] * 5])        # cumulative 10
    pol = np.array([[E] * 5, [NE] * 3 + [E] * 2, [NE] * 4 + [E]])  # cumulative 7
    assert drop_cumulative(csoc, 2) == 10 and drop_cumulative(pol, 2) == 7
    assert drops_prevented(pol, csoc, 2) == 3


def test_metrics_match_oracle_on_random_logs():
    rng = np.random.default_rng(0)
    s = rng.integers(0, 2, size=(15, 30))
    for t in range(15):
        assert drop_current(s, t) == oracle_current(s, t)
        assert drop_cumulative(s, t) == oracle_cumulative(s, t)
    np.testing.assert_array_equal(np.diff(drop_cumulative_series(s)), drop_current_series(s)[1:])


def test_trial_log_includes_final_state():
    log = TrialLog(np.array([[E], [E]]), np.zeros((2, 1)), "csoc", 0, 0, 0.5, final_states=np.array([NE]))
    assert drop_cumulative(log, 2) == 1


def test_percent_reduction():
    assert round(percent_reduction(1322, 1944), 1) == 32.0
    assert round(percent_reduction(1843, 1944), 1) == 5.2
    assert percent_reduction(7, 7) == 0.0
    with pytest.raises(ZeroDivisionError):
        percent_reduction(3, 0)


def test_normalized_reward():
    assert normalized_reward(5, 2, 8) == 50.0
    assert normalized_reward(8, 2, 8) == 100.0
    assert normalized_reward(2, 2, 8) == 0.0
    assert normalized_reward(5 + 3.5, 2 + 3.5, 8 + 3.5) == pytest.approx(50.0)
    with pytest.raises(ZeroDivisionError):
        normalized_reward(1, 2, 2)


def test_selection_audit_single_cluster():
    states = np.array([[NE, E, NE, NE], [E, E, NE, E]])
    actions = np.array([[1, 0, 1, 0], [0, 1, 0, 1]])
    log = TrialLog(states, actions, "whittle", 0, 0, 0.5, np.zeros(4, int), np.array([E, E, NE, E]))
    tensors = np.zeros((1, 2, 2, 2))
    tensors[0, 1, :, E] = [0.7, 0.9]
    audit = selection_audit([log], tensors)
    assert sum(audit.weekly[0].values()) == 2 and audit.clusters_used(0) == 1
    assert audit.weekly[0][(0, NE)] == 2
    assert audit.first_week_ne_share == 1.0
    assert audit.conversion_share == 0.5
    assert audit.hue[(0, NE)] == 0.7


def test_ols_group_means():
    t = np.array([1, 1, 1, 0, 0, 0])
    y = np.where(t == 1, 5.0, 7.0)
    res = ols_regression(y, t)
    assert res.beta_hat == pytest.approx(-2.0)
    assert res.intercept == pytest.approx(7.0)
    # zero residuals: se 0, p reported as 0
    assert np.allclose(res.se, 0.0) and (res.p_values[:2] == 0.0).all()


def test_ols_matches_frozen_oracle():
    res = ols_regression(OLS_Y, OLS_T, OLS_X, ["x0", "x1"])
    np.testing.assert_allclose(res.coef, OLS_COEF, rtol=0, atol=1e-8)
    np.testing.assert_allclose(res.se, OLS_SE, rtol=0, atol=1e-8)
    np.testing.assert_allclose(res.p_values, OLS_P, rtol=0, atol=1e-8)
    assert res.df == 16 and res.names == ["intercept", "treatment", "x0", "x1"]


def test_ols_matches_oracle_random():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(40, 3))
    t = (rng.random(40) < 0.5).astype(float)
    y = 2 + 0.3 * t + x @ [0.5, 0.0, -1.0] + rng.normal(size=40)
    res = ols_regression(y, t, x)
    coef, se, p = ols_normal_equations(y, np.column_stack([np.ones(40), t, x]))
    np.testing.assert_allclose(res.coef, coef, atol=1e-10)
    np.testing.assert_allclose(res.se, se, atol=1e-10)
    np.testing.assert_allclose(res.p_values, p, atol=1e-10)


def test_ols_rank_deficiency_names_columns():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(12, 1))
    t = (np.arange(12) % 2).astype(float)
    with pytest.raises(RankDeficientError) as exc:
        ols_regression(rng.normal(size=12), t, np.column_stack([x, 2 * x]), ["age", "age2"])
    assert exc.value.columns == ["age2"]
    with pytest.raises(ValueError, match="n > J"):
        ols_regression([1.0, 2.0], [0, 1])


def test_t_p_values_match_scipy():
    from scipy import stats

    t = np.array([0.0, 0.5, 1.96, 4.0, -3.0])
    np.testing.assert_allclose(t_two_sided_p(t, 7), 2 * stats.t.sf(np.abs(t), 7), atol=1e-14)
    assert t_two_sided_p(np.inf, 5) == 0.0
