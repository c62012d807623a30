import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rmabcalls.core import TransitionModel, TransitionModelError, validate_transition_model
from rmabcalls.kmeans import kmeans
from rmabcalls.metrics import (
    drop_cumulative, drop_current, normalized_reward, ols_regression, t_two_sided_p,
)
from rmabcalls.policies import CohortState, eligible_arms, select_myopic, select_random, select_round_robin, \
    select_whittle
from rmabcalls.whittle import IndexTable, whittle_indices

prob = st.floats(0.0, 1.0, allow_nan=False)
FAST = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@FAST
@given(arrays(float, (2, 2, 2), elements=st.floats(-0.5, 1.5, allow_nan=False)))
def test_validation_accepts_only_stochastic(t):
    ok = (t >= 0).all() and (t <= 1).all() and np.allclose(t.sum(-1), 1.0, atol=1e-9, rtol=0)
    try:
        m = validate_transition_model(TransitionModel(t))
    except TransitionModelError:
        assert not ok
    else:
        assert ok
        np.testing.assert_allclose(m.tensor.sum(-1), 1.0, atol=1e-12)


@FAST
@given(prob, prob)
def test_zero_effect_models_have_zero_index(p_ne, p_e):
    t = TransitionModel.from_probs(p_ne, p_e, p_ne, p_e).tensor[None]
    assert np.abs(whittle_indices(t, 0.5)).max() <= 1e-5


@FAST
@given(st.lists(st.tuples(prob, prob, prob, prob), min_size=1, max_size=4))
def test_index_bounded_by_subsidy_range(rows):
    t = np.stack([TransitionModel.from_probs(*r).tensor for r in rows])
    w = whittle_indices(t, 0.5)
    assert np.all(np.abs(w) <= 1.0 / (1 - 0.5))


@st.composite
def cohorts(draw):
    n = draw(st.integers(0, 25))
    states = draw(arrays(np.int64, n, elements=st.integers(0, 1)))
    clusters = draw(arrays(np.int64, n, elements=st.integers(0, 2)))
    wslc = draw(arrays(float, n, elements=st.sampled_from([1.0, 2.0, 3.0, 4.0, 7.0, np.inf])))
    enroll = draw(arrays(float, n, elements=st.integers(0, 5).map(float)))
    return CohortState(states, clusters, enroll, wslc)


@FAST
@given(cohorts(), st.integers(0, 30), st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_selectors_respect_budget_and_sleep(c, m, eta, seed):
    table = IndexTable(np.round(np.random.default_rng(seed).uniform(-1, 1, (3, 2)), 1), 0.5)
    tensors = np.stack([TransitionModel.from_probs(0.1, 0.5, 0.6, 0.9).tensor,
                        TransitionModel.from_probs(0.3, 0.3, 0.3, 0.3).tensor,
                        TransitionModel.from_probs(0.2, 0.8, 0.7, 0.8).tensor])
    elig = eligible_arms(c, eta)
    for sel in (select_whittle(c, table, m, elig), select_round_robin(c, m, elig),
                select_myopic(c, tensors, m, elig), select_random(c, m, elig, np.random.default_rng(seed))):
        assert len(sel) == min(m, len(elig))
        assert len(set(sel.tolist())) == len(sel)
        assert set(sel.tolist()) <= set(elig.tolist())
        assert (c.weeks_since_last_call[sel] >= eta).all()


@FAST
@given(cohorts(), st.integers(1, 10))
def test_whittle_ties_prefer_low_ids(c, m):
    table = IndexTable(np.zeros((3, 2)), 0.5)
    elig = eligible_arms(c, 1)
    assert select_whittle(c, table, m, elig).tolist() == sorted(elig.tolist())[:m]


@FAST
@given(arrays(np.int64, st.tuples(st.integers(1, 12), st.integers(1, 8)), elements=st.integers(0, 1)))
def test_drop_telescoping(s):
    assert drop_cumulative(s, 0) == 0
    for t in range(1, len(s)):
        assert drop_cumulative(s, t) - drop_cumulative(s, t - 1) == drop_current(s, t)


finite = st.floats(-1e3, 1e3, allow_nan=False)


@FAST
@given(finite, finite, finite, finite)
def test_normalized_reward_affine_invariant(a, c, w, shift):
    if abs(w - c) < 1e-3:
        return
    assert normalized_reward(a + shift, c + shift, w + shift) == pytest.approx(
        normalized_reward(a, c, w), rel=1e-6, abs=1e-6)


@FAST
@given(arrays(float, st.tuples(st.integers(8, 30), st.just(2)), elements=st.floats(-10, 10)),
       st.integers(0, 1000))
def test_kmeans_inertia_monotone(x, seed):
    k = min(3, len(np.unique(x, axis=0)))
    if k < 1:
        return
    res = kmeans(x, k, seed=seed)
    assert all(b <= a + 1e-9 for a, b in zip(res.history, res.history[1:]))


@FAST
@given(st.floats(-50, 50), st.integers(1, 200))
def test_p_values_in_unit_interval(t, df):
    p = float(t_two_sided_p(t, df))
    assert 0.0 <= p <= 1.0


@FAST
@given(st.integers(0, 10_000))
def test_ols_residuals_orthogonal(seed):
    rng = np.random.default_rng(seed)
    n = 25
    t = (np.arange(n) % 2).astype(float)
    x = rng.normal(size=(n, 2))
    y = rng.normal(size=n)
    res = ols_regression(y, t, x)
    design = np.column_stack([np.ones(n), t, x])
    resid = y - design @ res.coef
    np.testing.assert_allclose(design.T @ resid, 0.0, atol=1e-9)
    assert ((res.p_values >= 0) & (res.p_values <= 1)).all()
