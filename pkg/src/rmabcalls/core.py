"""Two-state engagement MDP: states, actions, rewards and transition models.

Transition tensors are indexed ``[action, state, next_state]`` throughout the
package, with ``NE=0, E=1`` and ``PASSIVE=0, ACTIVE=1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

ROW_TOL = 1e-9


class State(IntEnum):
    NE = 0
    E = 1

    @classmethod
    def parse(cls, symbol) -> "State":
        s = str(symbol).strip().upper()
        if s in ("E", "1"):
            return cls.E
        if s in ("NE", "0"):
            return cls.NE
        raise ValueError(f"unknown state symbol {symbol!r}")

    @property
    def symbol(self) -> str:
        return self.name


class Action(IntEnum):
    PASSIVE = 0
    ACTIVE = 1

    @classmethod
    def parse(cls, symbol) -> "Action":
        s = str(symbol).strip().lower()
        if s == "p":
            return cls.PASSIVE
        if s == "a":
            return cls.ACTIVE
        raise ValueError(f"unknown action symbol {symbol!r}")

    @property
    def symbol(self) -> str:
        return "p" if self is Action.PASSIVE else "a"


NE, E = State.NE, State.E
PASSIVE, ACTIVE = Action.PASSIVE, Action.ACTIVE
_MATRIX_NAMES = ("p_passive", "p_active")


def reward(state) -> int:
    """R(s) = s."""
    return int(state)


class TransitionModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TransitionModel:
    """Per-action 2x2 row-stochastic matrices for one arm or cluster.

    ``missing[a, s]`` marks rows estimated from zero samples (their entries
    are NaN); ``imputed[a, s]`` marks rows copied in by imputation.
    """

    tensor: np.ndarray
    missing: np.ndarray = field(default=None)
    imputed: np.ndarray = field(default=None)

    def __post_init__(self):
        t = np.array(self.tensor, dtype=float)
        if t.shape != (2, 2, 2):
            raise TransitionModelError(f"expected a (2, 2, 2) tensor, got {t.shape}")
        miss = np.zeros((2, 2), bool) if self.missing is None else np.array(self.missing, bool)
        imp = np.zeros((2, 2), bool) if self.imputed is None else np.array(self.imputed, bool)
        for arr in (t, miss, imp):
            arr.setflags(write=False)
        object.__setattr__(self, "tensor", t)
        object.__setattr__(self, "missing", miss)
        object.__setattr__(self, "imputed", imp)

    @classmethod
    def from_matrices(cls, p_passive, p_active, **kw) -> "TransitionModel":
        return cls(np.stack([np.asarray(p_passive, float), np.asarray(p_active, float)]), **kw)

    @classmethod
    def from_probs(cls, pp_ne_e, pp_e_e, pa_ne_e, pa_e_e, **kw) -> "TransitionModel":
        """Build from the four engagement probabilities P^a_{s,E}."""
        t = np.empty((2, 2, 2))
        for a, (q_ne, q_e) in enumerate([(pp_ne_e, pp_e_e), (pa_ne_e, pa_e_e)]):
            t[a, NE] = (1.0 - q_ne, q_ne)
            t[a, E] = (1.0 - q_e, q_e)
        return cls(t, **kw)

    @property
    def p_passive(self) -> np.ndarray:
        return self.tensor[PASSIVE]

    @property
    def p_active(self) -> np.ndarray:
        return self.tensor[ACTIVE]

    @property
    def probs(self) -> np.ndarray:
        """(P^p_{NE,E}, P^p_{E,E}, P^a_{NE,E}, P^a_{E,E})."""
        return self.tensor[:, :, E].reshape(-1).copy()

    @property
    def passive_probs(self) -> np.ndarray:
        return self.tensor[PASSIVE, :, E].copy()

    @property
    def complete(self) -> bool:
        return not self.missing.any()

    def __eq__(self, other) -> bool:
        if not isinstance(other, TransitionModel):
            return NotImplemented
        return (
            np.array_equal(self.tensor, other.tensor, equal_nan=True)
            and np.array_equal(self.missing, other.missing)
            and np.array_equal(self.imputed, other.imputed)
        )

    __hash__ = None


def validate_transition_model(m: TransitionModel, allow_missing: bool = False) -> TransitionModel:
    """Check row-stochasticity; renormalize rows off by at most ``ROW_TOL``.

    Raises TransitionModelError naming the offending matrix and row.
    """
    t = np.array(m.tensor, dtype=float)
    for a in (PASSIVE, ACTIVE):
        for s in (NE, E):
            row = t[a, s]
            name = f"{_MATRIX_NAMES[a]} row {State(s).name}"
            if np.isnan(row).any():
                if allow_missing and m.missing[a, s]:
                    continue
                raise TransitionModelError(f"{name} is missing (NaN entries)")
            if (row < 0).any() or (row > 1).any():
                raise TransitionModelError(f"{name} has entries outside [0, 1]: {row.tolist()}")
            total = row.sum()
            if abs(total - 1.0) > ROW_TOL:
                raise TransitionModelError(f"{name} sums to {total!r}, not 1: {row.tolist()}")
            t[a, s] = row / total
    return TransitionModel(t, missing=m.missing, imputed=m.imputed)


def evolve(state, action, m: TransitionModel, rng: np.random.Generator) -> State:
    """Draw the next state from row ``state`` of the ``action`` matrix."""
    p_engage = m.tensor[int(action), int(state), E]
    return E if rng.random() < p_engage else NE


def step(states: np.ndarray, actions: np.ndarray, p_engage: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorised evolution with pre-drawn uniforms.

    ``p_engage`` has shape (n, 2, 2) indexed ``[arm, action, state]`` and holds
    P^a_{s,E}. An arm moves to E iff its uniform falls below that probability,
    so a fixed ``u`` gives common random numbers across policies.
    """
    idx = np.arange(len(states))
    return (u < p_engage[idx, actions, states]).astype(np.int8)
