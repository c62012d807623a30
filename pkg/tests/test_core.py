import numpy as np
import pytest

from rmabcalls.core import (
    ACTIVE, E, NE, PASSIVE, Action, State, TransitionModel, TransitionModelError,
    evolve, reward, step, validate_transition_model,
)


def test_state_and_action_encoding():
    assert (int(NE), int(E)) == (0, 1)
    assert (int(PASSIVE), int(ACTIVE)) == (0, 1)
    assert State.parse("E") is E and State.parse("ne") is NE and State.parse(1) is E
    assert Action.parse("a") is ACTIVE and Action.parse(" p ") is PASSIVE
    assert ACTIVE.symbol == "a" and E.symbol == "E"
    with pytest.raises(ValueError):
        State.parse("X")
    with pytest.raises(ValueError):
        Action.parse("call")


def test_reward_is_state():
    assert reward(E) == 1 and reward(NE) == 0


def test_from_probs_layout():
    m = TransitionModel.from_probs(0.1, 0.6, 0.8, 0.95)
    assert m.tensor.shape == (2, 2, 2)
    np.testing.assert_allclose(m.p_passive, [[0.9, 0.1], [0.4, 0.6]])
    np.testing.assert_allclose(m.p_active, [[0.2, 0.8], [0.05, 0.95]])
    np.testing.assert_allclose(m.probs, [0.1, 0.6, 0.8, 0.95])
    np.testing.assert_allclose(m.passive_probs, [0.1, 0.6])
    assert m.complete


def test_validate_renormalizes_tiny_drift():
    pp = np.array([[0.5, 0.5 + 5e-10], [0.3, 0.7]])
    pa = np.array([[0.2, 0.8], [0.1, 0.9]])
    m = validate_transition_model(TransitionModel.from_matrices(pp, pa))
    np.testing.assert_allclose(m.tensor.sum(-1), 1.0, atol=1e-15)


def test_validate_names_offending_row():
    pp = np.array([[0.5, 0.6], [0.3, 0.7]])
    pa = np.array([[0.2, 0.8], [0.1, 0.9]])
    with pytest.raises(TransitionModelError, match="p_passive row NE"):
        validate_transition_model(TransitionModel.from_matrices(pp, pa))
    pa_bad = np.array([[0.2, 0.8], [-0.1, 1.1]])
    with pytest.raises(TransitionModelError, match="p_active row E"):
        validate_transition_model(TransitionModel.from_matrices(pp.clip(0, 0.5) + [[0, 0], [0.2, 0]], pa_bad))


def test_missing_rows_allowed_only_when_flagged():
    t = TransitionModel.from_probs(0.1, 0.6, np.nan, 0.9, missing=np.array([[0, 0], [1, 0]], bool))
    assert not t.complete
    validate_transition_model(t, allow_missing=True)
    with pytest.raises(TransitionModelError, match="p_active row NE"):
        validate_transition_model(t)


def test_equality_is_nan_aware():
    a = TransitionModel.from_probs(0.1, np.nan, 0.5, 0.5, missing=np.array([[0, 1], [0, 0]], bool))
    b = TransitionModel.from_probs(0.1, np.nan, 0.5, 0.5, missing=np.array([[0, 1], [0, 0]], bool))
    assert a == b
    assert a != TransitionModel.from_probs(0.1, 0.2, 0.5, 0.5)


def test_absorbing_and_deterministic_evolution():
    rng = np.random.default_rng(0)
    stuck = TransitionModel.from_probs(0.0, 0.0, 1.0, 1.0)
    assert all(evolve(E, PASSIVE, stuck, rng) == NE for _ in range(20))
    assert all(evolve(NE, ACTIVE, stuck, rng) == E for _ in range(20))


def test_step_uses_uniform_threshold():
    p_engage = np.zeros((3, 2, 2))
    p_engage[:, ACTIVE, NE] = 0.5
    p_engage[:, PASSIVE, E] = 0.3
    states = np.array([NE, NE, E])
    actions = np.array([ACTIVE, ACTIVE, PASSIVE])
    out = step(states, actions, p_engage, np.array([0.49, 0.5, 0.29]))
    assert out.tolist() == [1, 0, 1]


def test_step_empirical_frequency():
    m = TransitionModel.from_probs(0.25, 0.6, 0.7, 0.9)
    n = 200_000
    rng = np.random.default_rng(1)
    p = np.repeat(m.tensor[None, :, :, E], n, axis=0)
    nxt = step(np.full(n, NE), np.full(n, ACTIVE), p, rng.random(n))
    assert abs(nxt.mean() - 0.7) < 4 * np.sqrt(0.7 * 0.3 / n)
