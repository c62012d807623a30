"""Weekly service-call selection under a budget and a post-call sleeping window.

Arms are identified by their position ``0..n-1`` in the cohort. Every
selector returns a sorted int array of arm ids; all ties break on ascending
arm id.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import ACTIVE, E, PASSIVE, State
from .whittle import IndexTable

NEVER = np.inf
DEFAULT_ETA = 4
POLICIES = ("whittle", "round_robin", "myopic", "random", "csoc")


@dataclass
class CohortState:
    states: np.ndarray
    clusters: np.ndarray
    # enrollment as sortable numbers (e.g. date ordinals)
    enrollment: np.ndarray
    weeks_since_last_call: np.ndarray = None
    week_index: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        n = len(self.states)
        self.clusters = np.asarray(self.clusters, dtype=np.int64)
        self.enrollment = np.asarray(self.enrollment, dtype=float)
        if self.weeks_since_last_call is None:
            self.weeks_since_last_call = np.full(n, NEVER)
        self.weeks_since_last_call = np.asarray(self.weeks_since_last_call, dtype=float)
        if (self.weeks_since_last_call < 0).any():
            raise ValueError("weeks_since_last_call must be >= 0 or never-called")

    @property
    def n(self) -> int:
        return len(self.states)

    def advance(self, called, next_states) -> None:
        """Move to the next week: called arms reset their counter."""
        self.weeks_since_last_call = self.weeks_since_last_call + 1
        self.weeks_since_last_call[np.asarray(called, dtype=np.int64)] = 1
        self.states = np.asarray(next_states, dtype=np.int64)
        self.week_index += 1


def eligible_arms(c: CohortState, eta: int = DEFAULT_ETA) -> np.ndarray:
    if eta < 1:
        raise ValueError("eta must be >= 1")
    return np.flatnonzero(c.weeks_since_last_call >= eta)


def _top_m(scores: np.ndarray, eligible: np.ndarray, m: int) -> np.ndarray:
    eligible = np.asarray(eligible, dtype=np.int64)
    if m <= 0 or len(eligible) == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((eligible, -scores[eligible]))
    return np.sort(eligible[order[:m]])


def select_whittle(c: CohortState, table: IndexTable, m: int, eligible) -> np.ndarray:
    scores = table.lookup_many(c.clusters, c.states)
    return _top_m(scores, eligible, m)


def select_round_robin(c: CohortState, m: int, eligible) -> np.ndarray:
    """Never-called arms first by (enrollment, id); then longest-since-call first."""
    eligible = np.asarray(eligible, dtype=np.int64)
    if m <= 0 or len(eligible) == 0:
        return np.zeros(0, dtype=np.int64)
    wslc = c.weeks_since_last_call[eligible]
    never = np.isinf(wslc)
    order = np.lexsort((eligible, c.enrollment[eligible], -np.where(never, 0, wslc), ~never))
    return np.sort(eligible[order[:m]])


def myopic_scores(c: CohortState, tensors: np.ndarray) -> np.ndarray:
    t = np.asarray(tensors)[c.clusters]
    rows = np.arange(c.n)
    return t[rows, ACTIVE, c.states, E] - t[rows, PASSIVE, c.states, E]


def select_myopic(c: CohortState, models, m: int, eligible) -> np.ndarray:
    """``models`` is a ClusterModelSet or a (k, 2, 2, 2) tensor stack."""
    tensors = models.tensor() if hasattr(models, "tensor") else np.asarray(models)
    if np.isnan(tensors).any():
        raise ValueError("myopic selection needs complete models (impute first)")
    return _top_m(myopic_scores(c, tensors), eligible, m)


def select_random(c: CohortState, m: int, eligible, rng: np.random.Generator) -> np.ndarray:
    eligible = np.asarray(eligible, dtype=np.int64)
    if m <= 0 or len(eligible) == 0:
        return np.zeros(0, dtype=np.int64)
    if m >= len(eligible):
        return np.sort(eligible)
    return np.sort(rng.choice(eligible, size=m, replace=False))


def select_csoc(c: CohortState = None, *_, **__) -> np.ndarray:
    return np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------------------
# policy objects used by the simulator and the planning CLI

@dataclass
class Policy:
    name: str
    table: IndexTable | None = None
    tensors: np.ndarray | None = None

    def select(self, c: CohortState, m: int, eligible, rng: np.random.Generator | None = None) -> np.ndarray:
        if self.name == "whittle":
            return select_whittle(c, self.table, m, eligible)
        if self.name == "round_robin":
            return select_round_robin(c, m, eligible)
        if self.name == "myopic":
            return select_myopic(c, self.tensors, m, eligible)
        if self.name == "random":
            return select_random(c, m, eligible, rng)
        if self.name == "csoc":
            return select_csoc(c)
        raise ValueError(f"unknown policy {self.name!r}; expected one of {POLICIES}")


def canonical_policy(name: str) -> str:
    name = {"rr": "round_robin", "rmab": "whittle", "roundrobin": "round_robin"}.get(name.lower(), name.lower())
    if name not in POLICIES:
        raise ValueError(f"unknown policy {name!r}; expected one of {POLICIES}")
    return name


def make_policy(name: str, table: IndexTable | None = None, tensors=None) -> Policy:
    name = canonical_policy(name)
    if name == "whittle" and table is None:
        raise ValueError("whittle policy needs an index table")
    if name == "myopic" and tensors is None:
        raise ValueError("myopic policy needs transition models")
    return Policy(name, table, None if tensors is None else np.asarray(tensors))


def write_call_list(path, week_index: int, selected, policy: str, c: CohortState,
                    table: IndexTable | None = None, arm_ids=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["week_index", "arm_id", "policy", "whittle_index", "cluster_id", "state"])
        for arm in selected:
            idx = "" if table is None or policy != "whittle" else repr(table.lookup(c.clusters[arm], c.states[arm]))
            aid = arm if arm_ids is None else arm_ids[arm]
            w.writerow([week_index, aid, policy, idx, int(c.clusters[arm]), State(c.states[arm]).name])
