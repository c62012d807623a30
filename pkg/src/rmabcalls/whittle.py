"""Whittle indices for two-state arms via subsidy value iteration and bisection.

The passive action earns a subsidy ``lam`` on top of the state reward; the
index of a state is the smallest subsidy at which passive becomes weakly
preferred there. Everything here is vectorised over a batch of models so the
same code path serves one arm and a whole cohort.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ACTIVE, E, NE, PASSIVE, State, TransitionModel, validate_transition_model

DEFAULT_BETA = 0.5
DEFAULT_EPS = 1e-9
DEFAULT_TOL = 1e-6
MAX_SWEEPS = 100_000

_REWARD = np.array([0.0, 1.0])


class ConvergenceError(RuntimeError):
    pass


class BracketError(RuntimeError):
    def __init__(self, message, gap_low=None, gap_high=None, model_index=None):
        super().__init__(message)
        self.model_index = model_index
        self.gap_low = gap_low
        self.gap_high = gap_high


@dataclass(frozen=True)
class SubsidySolution:
    v: np.ndarray
    q_passive: np.ndarray
    q_active: np.ndarray
    lam: float
    beta: float
    residual: float
    sweeps: int


def subsidy_bound(beta: float) -> float:
    return 1.0 / (1.0 - beta)


def _check_beta(beta):
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"discount factor must lie in [0, 1), got {beta}")


def value_iteration(tensors: np.ndarray, lam: np.ndarray, beta: float,
                    eps: float = DEFAULT_EPS, max_sweeps: int = MAX_SWEEPS):
    """Batch value iteration from V=0.

    tensors: (K, 2, 2, 2) indexed [model, action, state, next_state]
    lam: (K,) passive subsidies
    Returns (V, Q_passive, Q_active, residual, sweeps) with arrays of shape (K, 2).
    """
    tensors = np.asarray(tensors, dtype=float)
    lam = np.asarray(lam, dtype=float)
    v = np.zeros((tensors.shape[0], 2))
    for sweep in range(1, max_sweeps + 1):
        ev = np.einsum("kaij,kj->kai", tensors, v)
        q_p = lam[:, None] + _REWARD + beta * ev[:, PASSIVE]
        q_a = _REWARD + beta * ev[:, ACTIVE]
        v_new = np.maximum(q_p, q_a)
        residual = float(np.max(np.abs(v_new - v))) if v.size else 0.0
        v = v_new
        if residual <= eps:
            return v, q_p, q_a, residual, sweep
    raise ConvergenceError(
        f"value iteration did not reach eps={eps} in {max_sweeps} sweeps (beta={beta}, residual={residual})"
    )


def solve_subsidy_mdp(m: TransitionModel, lam: float, beta: float = DEFAULT_BETA,
                      eps: float = DEFAULT_EPS, max_sweeps: int = MAX_SWEEPS) -> SubsidySolution:
    _check_beta(beta)
    if eps <= 0:
        raise ValueError("eps must be positive")
    m = validate_transition_model(m)
    v, q_p, q_a, res, sweeps = value_iteration(m.tensor[None], np.array([lam]), beta, eps, max_sweeps)
    return SubsidySolution(v[0], q_p[0], q_a[0], float(lam), beta, res, sweeps)


def _gaps(tensors, states, lam, beta, eps):
    """Q(s, a) - Q(s, p) for each (model, state, subsidy) triple."""
    _, q_p, q_a, _, _ = value_iteration(tensors, lam, beta, eps)
    rows = np.arange(len(states))
    return q_a[rows, states] - q_p[rows, states]


def whittle_indices(tensors: np.ndarray, beta: float = DEFAULT_BETA, tol: float = DEFAULT_TOL,
                    eps: float = DEFAULT_EPS) -> np.ndarray:
    """Whittle index of both states for a batch of (K, 2, 2, 2) tensors -> (K, 2).

    Bisection over [-1/(1-beta), 1/(1-beta)] on the predicate
    ``Q(s,a) - Q(s,p) <= 0``; ties move the bracket down (infimum).
    """
    _check_beta(beta)
    tensors = np.asarray(tensors, dtype=float)
    k = tensors.shape[0]
    if k == 0:
        return np.zeros((0, 2))
    rep = np.repeat(tensors, 2, axis=0)
    states = np.tile(np.array([NE, E]), k)
    bound = subsidy_bound(beta)
    lo = np.full(2 * k, -bound)
    hi = np.full(2 * k, bound)
    gap_lo = _gaps(rep, states, lo, beta, eps)
    gap_hi = _gaps(rep, states, hi, beta, eps)
    bad = (gap_lo < 0) | (gap_hi > 0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise BracketError(
            f"model {i // 2} state {State(states[i]).name}: Q-gap does not change sign on "
            f"[{-bound}, {bound}] (gap at low end {gap_lo[i]:.6g}, at high end {gap_hi[i]:.6g})",
            gap_lo[i], gap_hi[i], i // 2,
        )
    n_steps = max(0, math.ceil(math.log2(2 * bound / tol)))
    for _ in range(n_steps):
        mid = 0.5 * (lo + hi)
        passive_ok = _gaps(rep, states, mid, beta, eps) <= 0
        hi = np.where(passive_ok, mid, hi)
        lo = np.where(passive_ok, lo, mid)
    return (0.5 * (lo + hi)).reshape(k, 2)


def whittle_index(m: TransitionModel, s, beta: float = DEFAULT_BETA, tol: float = DEFAULT_TOL,
                  eps: float = DEFAULT_EPS) -> float:
    m = validate_transition_model(m)
    return float(whittle_indices(m.tensor[None], beta, tol, eps)[0, int(s)])


@dataclass(frozen=True)
class IndexabilityReport:
    passed: bool
    # (state name, subsidy) pairs where the passive set lost that state
    violations: list = field(default_factory=list)

    def __str__(self):
        if self.passed:
            return "indexable: passive set grows monotonically in the subsidy"
        lines = ["not indexable; passive set shrinks at:"]
        lines += [f"  state={s} lambda={lam:.6g}" for s, lam in self.violations]
        return "\n".join(lines)


def check_indexability(m: TransitionModel, beta: float = DEFAULT_BETA, grid: int = 2001,
                       eps: float = DEFAULT_EPS) -> IndexabilityReport:
    _check_beta(beta)
    m = validate_transition_model(m)
    bound = subsidy_bound(beta)
    lams = np.linspace(-bound, bound, grid)
    _, q_p, q_a, _, _ = value_iteration(np.repeat(m.tensor[None], grid, axis=0), lams, beta, eps)
    passive = q_p >= q_a
    violations = []
    for s in (NE, E):
        drops = np.flatnonzero(passive[:-1, s] & ~passive[1:, s])
        violations += [(State(s).name, float(lams[i + 1])) for i in drops]
    violations.sort(key=lambda v: v[1])
    return IndexabilityReport(not violations, violations)


@dataclass(frozen=True, eq=False)
class IndexTable:
    """Precomputed index for every (cluster, state); ``values[c, s]``."""

    values: np.ndarray
    beta: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1, 2)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return self.values.shape[0]

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        return isinstance(other, IndexTable) and self.beta == other.beta and np.array_equal(self.values, other.values)

    @property
    def entries(self) -> dict:
        return {(c, State(s)): float(self.values[c, s]) for c in range(self.k) for s in (NE, E)}

    def lookup(self, cluster, state) -> float:
        if not 0 <= int(cluster) < self.k:
            raise KeyError(f"no index entry for cluster {cluster}")
        return float(self.values[int(cluster), int(state)])

    def lookup_many(self, clusters: np.ndarray, states: np.ndarray) -> np.ndarray:
        clusters = np.asarray(clusters)
        if clusters.size and (clusters.min() < 0 or clusters.max() >= self.k):
            raise KeyError(f"index table has {self.k} clusters; lookup asked for {clusters.max()}")
        return self.values[clusters, np.asarray(states)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cluster_id", "state", "whittle_index", "beta"])
            for c in range(self.k):
                for s in (NE, E):
                    w.writerow([c, State(s).name, repr(float(self.values[c, s])), repr(float(self.beta))])

    @classmethod
    def from_csv(cls, path) -> "IndexTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty index table")
        k = max(int(r["cluster_id"]) for r in rows) + 1
        values = np.full((k, 2), np.nan)
        betas = {float(r["beta"]) for r in rows}
        if len(betas) != 1:
            raise ValueError(f"{path}: mixed beta values {sorted(betas)}")
        for r in rows:
            values[int(r["cluster_id"]), State.parse(r["state"])] = float(r["whittle_index"])
        if np.isnan(values).any():
            raise ValueError(f"{Path(path).name}: index table does not cover every (cluster, state)")
        return cls(values, betas.pop())


def precompute_index_table(clusters, beta: float = DEFAULT_BETA, tol: float = DEFAULT_TOL) -> IndexTable:
    """Index table for a ClusterModelSet (or a plain sequence of models)."""
    models: Sequence[TransitionModel] = getattr(clusters, "models", clusters)
    for c, m in enumerate(models):
        if not m.complete:
            raise ValueError(f"cluster {c} has missing transition rows; impute before indexing")
    tensors = np.stack([validate_transition_model(m).tensor for m in models]) if models else np.zeros((0, 2, 2, 2))
    try:
        values = whittle_indices(tensors, beta, tol)
    except BracketError as exc:
        raise BracketError(f"cluster {exc.model_index}: {exc}", exc.gap_low, exc.gap_high, exc.model_index) from exc
    return IndexTable(values, beta)
