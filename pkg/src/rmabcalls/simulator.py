"""Synthetic cohorts and weekly roll-outs of call policies.

Randomness is split into named substreams keyed by ``(seed, trial, stream)``
so that, within a trial, every policy sees the same cohort, the same initial
states and the same per-(week, arm) uniforms. An arm's next state is E iff its
uniform is below the relevant engagement probability (common random numbers).
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace
from datetime import date, timedelta

import numpy as np

from .clustering import Beneficiary
from .core import Action, E, NE, PASSIVE, State, step
from .features import FeatureEncoder
from .metrics import drop_cumulative_series, normalized_reward
from .policies import DEFAULT_ETA, CohortState, Policy, canonical_policy, eligible_arms, make_policy
from .whittle import DEFAULT_BETA, IndexTable, precompute_index_table, whittle_indices

STREAM_COHORT, STREAM_EVOLVE, STREAM_POLICY = 0, 1, 2
NONRECOVERABLE, SELF_CORRECTING = 1, 0
LANGUAGES = ("hindi", "marathi", "english")


def substream(seed: int, trial: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trial), int(stream)]))


@dataclass(frozen=True)
class ArchetypeRanges:
    """Uniform ranges for the four engagement probabilities of each archetype."""

    # non-recoverable: rarely re-engage unaided, calls pull them back
    nr_passive_ne_e: tuple = (0.0, 0.05)
    nr_passive_e_e: tuple = (0.4, 0.7)
    nr_active_ne_e: tuple = (0.85, 0.95)
    nr_active_e_e: tuple = (1.0, 1.0)
    # self-correcting: lapse every other week and bounce straight back; a call
    # in E looks like a near-certain gain to a one-step planner but is worth
    # little once the bounce-back is accounted for
    sc_passive_ne_e: tuple = (0.97, 1.0)
    sc_passive_e_e: tuple = (0.0, 0.02)
    sc_active_ne_uplift: tuple = (0.0, 0.05)
    sc_active_e_e: tuple = (1.0, 1.0)

    @classmethod
    def heterogeneous(cls) -> "ArchetypeRanges":
        """Passive dynamics spread over most of the unit square.

        Used for clustering studies, where a finer partition should pay off.
        """
        return cls(nr_passive_ne_e=(0.0, 0.2), nr_passive_e_e=(0.2, 1.0),
                   sc_passive_ne_e=(0.4, 1.0), sc_passive_e_e=(0.2, 1.0))


@dataclass(frozen=True)
class CohortSpec:
    n_arms: int = 1000
    fraction_nonrecoverable: float = 0.5
    feature_informativeness: float = 1.0
    n_features: int = 4
    history_weeks: int = 40
    history_call_rate: float = 0.1
    ranges: ArchetypeRanges = field(default_factory=ArchetypeRanges)
    seed: int = 0

    def __post_init__(self):
        if self.n_arms < 1:
            raise ValueError("n_arms must be >= 1")
        for name in ("fraction_nonrecoverable", "feature_informativeness", "history_call_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.history_weeks < 0 or self.n_features < 1:
            raise ValueError("history_weeks must be >= 0 and n_features >= 1")


@dataclass
class Cohort:
    beneficiaries: list
    tensors: np.ndarray          # ground truth, (n, 2, 2, 2)
    archetypes: np.ndarray       # 1 = non-recoverable, 0 = self-correcting
    initial_states: np.ndarray
    raw_features: dict
    encoder: FeatureEncoder
    spec: CohortSpec

    @property
    def n(self) -> int:
        return len(self.beneficiaries)

    @property
    def features(self) -> np.ndarray:
        return np.stack([b.features for b in self.beneficiaries])

    @property
    def enrollment(self) -> np.ndarray:
        return np.array([b.enrollment_date.toordinal() for b in self.beneficiaries], dtype=float)

    def passive_truth(self) -> np.ndarray:
        return self.tensors[:, PASSIVE, :, E]


def _draw(rng, bounds, n):
    lo, hi = bounds
    return rng.uniform(lo, hi, n)


def _tensor_from_probs(pp_ne, pp_e, pa_ne, pa_e) -> np.ndarray:
    t = np.empty((len(pp_ne), 2, 2, 2))
    for a, (q_ne, q_e) in enumerate([(pp_ne, pp_e), (pa_ne, pa_e)]):
        t[:, a, NE, E] = q_ne
        t[:, a, NE, NE] = 1.0 - q_ne
        t[:, a, E, E] = q_e
        t[:, a, E, NE] = 1.0 - q_e
    return t


def generate_cohort(spec: CohortSpec) -> Cohort:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, STREAM_COHORT]))
    n, r = spec.n_arms, spec.ranges
    nr = rng.random(n) < spec.fraction_nonrecoverable

    pp_ne = np.where(nr, _draw(rng, r.nr_passive_ne_e, n), _draw(rng, r.sc_passive_ne_e, n))
    pp_e = np.where(nr, _draw(rng, r.nr_passive_e_e, n), _draw(rng, r.sc_passive_e_e, n))
    pa_ne = np.where(nr, _draw(rng, r.nr_active_ne_e, n),
                     np.minimum(1.0, pp_ne + _draw(rng, r.sc_active_ne_uplift, n)))
    pa_e = np.where(nr, _draw(rng, r.nr_active_e_e, n), _draw(rng, r.sc_active_e_e, n))
    tensors = _tensor_from_probs(pp_ne, pp_e, pa_ne, pa_e)

    # features see the true archetype with probability rho, otherwise a coin flip
    sees_truth = rng.random(n) < spec.feature_informativeness
    seen = np.where(sees_truth, nr, rng.random(n) < 0.5)
    sign = np.where(seen, 1.0, -1.0)
    raw = {f"f{j}": (0.8 * sign + rng.normal(0.0, 0.5, n)).round(6).tolist() for j in range(spec.n_features)}
    raw["language"] = [LANGUAGES[i] for i in rng.integers(len(LANGUAGES), size=n)]
    encoder = FeatureEncoder.fit(raw)
    x = encoder.transform(raw)

    start = date(2021, 1, 4)
    offsets = rng.integers(0, 28, size=n)
    initial = (rng.random(n) < 0.5).astype(np.int8)

    # historical trajectories under occasional random calls
    hist_s = (rng.random(n) < 0.5).astype(np.int64)
    trajs = [[] for _ in range(n)]
    p_engage = tensors[:, :, :, E]
    for _ in range(spec.history_weeks):
        acts = (rng.random(n) < spec.history_call_rate).astype(np.int64)
        nxt = step(hist_s, acts, p_engage, rng.random(n)).astype(np.int64)
        for i in range(n):
            trajs[i].append((int(hist_s[i]), int(acts[i]), int(nxt[i])))
        hist_s = nxt

    bens = [Beneficiary(f"b{i:05d}", x[i], trajs[i], start + timedelta(days=int(offsets[i]))) for i in range(n)]
    return Cohort(bens, tensors, nr.astype(np.int8), initial, raw, encoder, spec)


# ---------------------------------------------------------------------------

@dataclass
class TrialLog:
    states: np.ndarray   # (weeks, n) state at the start of each week
    actions: np.ndarray  # (weeks, n) 1 = called
    policy: str
    seed: int
    trial: int
    beta: float
    clusters: np.ndarray = None
    final_states: np.ndarray = None  # state after the last week

    @property
    def rewards(self) -> np.ndarray:
        return self.states.astype(np.int64)

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def total_discounted_reward(self) -> float:
        disc = self.beta ** np.arange(self.horizon)
        return float(disc @ self.rewards.sum(1))

    def calls(self, week: int) -> np.ndarray:
        return np.flatnonzero(self.actions[week])

    def rows(self):
        for t in range(self.horizon):
            for arm in range(self.n):
                s = int(self.states[t, arm])
                yield self.trial, t, arm, s, int(self.actions[t, arm]), s


def write_trial_logs(path, logs) -> None:
    """One row per (trial, week, arm); a trailing ``cluster`` column carries the planner's model id."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "week", "arm", "state", "action", "reward", "cluster"])
        for log in logs:
            clusters = np.arange(log.n) if log.clusters is None else log.clusters
            for trial, t, arm, s, a, r in log.rows():
                w.writerow([trial, t, arm, State(s).name, Action(a).symbol, r, int(clusters[arm])])


def read_trial_logs(path, policy: str = "", beta: float = DEFAULT_BETA) -> list:
    data = {}
    clusters = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("trial", "week", "arm", "state", "action") if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}:1: missing column(s) {missing}")
        for line, row in enumerate(reader, start=2):
            try:
                key = (int(row["trial"]), int(row["week"]), int(row["arm"]))
                data[key] = (State.parse(row["state"]), Action.parse(row["action"]))
                if row.get("cluster") not in (None, ""):
                    clusters[key[0], key[2]] = int(row["cluster"])
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{line}: {exc}") from exc
    logs = []
    for trial in sorted({k[0] for k in data}):
        keys = [k for k in data if k[0] == trial]
        weeks = max(k[1] for k in keys) + 1
        n = max(k[2] for k in keys) + 1
        if len(keys) != weeks * n:
            raise ValueError(f"{path}: trial {trial} has {len(keys)} rows, expected {weeks}x{n}")
        states = np.zeros((weeks, n), np.int8)
        actions = np.zeros((weeks, n), np.int8)
        for _, t, arm in keys:
            states[t, arm], actions[t, arm] = data[(trial, t, arm)]
        cl = None
        if all((trial, a) in clusters for a in range(n)):
            cl = np.array([clusters[trial, a] for a in range(n)], dtype=np.int64)
        logs.append(TrialLog(states, actions, policy, -1, trial, beta, cl))
    return logs


def _budget(m, week: int) -> int:
    if np.ndim(m) == 0:
        return int(m)
    if week >= len(m):
        raise ValueError(f"budget schedule has {len(m)} weeks, trial needs week {week}")
    return int(m[week])


def run_trial(cohort: Cohort, policy: Policy, weeks: int = 40, m=50, beta: float = DEFAULT_BETA,
              eta: int = DEFAULT_ETA, seed: int = 0, trial: int = 0, clusters=None) -> TrialLog:
    """Roll ``policy`` forward ``weeks`` weeks on the cohort's ground-truth dynamics.

    ``clusters`` maps arms to the planner's model ids (defaults to one model
    per arm, i.e. a planner that knows the truth).
    """
    n = cohort.n
    clusters = np.arange(n) if clusters is None else np.asarray(clusters, dtype=np.int64)
    u = substream(seed, trial, STREAM_EVOLVE).random((weeks, n))
    policy_rng = substream(seed, trial, STREAM_POLICY)
    c = CohortState(cohort.initial_states.copy(), clusters, cohort.enrollment)
    p_engage = cohort.tensors[:, :, :, E]
    states = np.zeros((weeks, n), np.int8)
    actions = np.zeros((weeks, n), np.int8)
    for t in range(weeks):
        states[t] = c.states
        chosen = policy.select(c, _budget(m, t), eligible_arms(c, eta), policy_rng)
        actions[t, chosen] = 1
        nxt = step(c.states, actions[t].astype(np.int64), p_engage, u[t])
        c.advance(chosen, nxt)
    return TrialLog(states, actions, policy.name, seed, trial, beta, clusters, c.states.astype(np.int8))


# ---------------------------------------------------------------------------

@dataclass
class PolicySummary:
    rewards: np.ndarray           # per-trial total discounted reward
    normalized: np.ndarray        # per-trial normalized reward (NaN if undefined)
    cumulative_drops: np.ndarray  # per-trial cumulative engagement drop at the last week

    @staticmethod
    def _mean_se(x):
        x = np.asarray(x, float)
        x = x[~np.isnan(x)]
        if len(x) == 0:
            return None, None
        se = float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0
        return float(x.mean()), se


@dataclass
class ExperimentResult:
    summaries: dict
    config: dict
    logs: dict = field(default_factory=dict)
    # mean total discounted reward of Whittle and CSOC, the normalization anchors
    anchors: dict = field(default_factory=dict)

    def normalized_of_means(self, policy: str):
        if self.anchors.get("whittle") == self.anchors.get("csoc"):
            return None
        return normalized_reward(self.summaries[policy].rewards.mean(), self.anchors["csoc"], self.anchors["whittle"])

    def paired_difference(self, a: str, b: str, field_name: str = "normalized"):
        """Mean and standard error of the per-trial difference a - b."""
        d = getattr(self.summaries[a], field_name) - getattr(self.summaries[b], field_name)
        return PolicySummary._mean_se(d)

    def to_dict(self) -> dict:
        out = {}
        csoc = self.summaries.get("csoc")  # drops prevented only when CSOC was requested
        for name, s in self.summaries.items():
            mr, ser = PolicySummary._mean_se(s.rewards)
            mn, sen = PolicySummary._mean_se(s.normalized)
            md, sed = PolicySummary._mean_se(s.cumulative_drops)
            entry = {
                "mean_reward": mr, "stderr_reward": ser,
                "normalized_reward": self.normalized_of_means(name),
                "mean_normalized_reward": mn, "stderr_normalized_reward": sen,
                "mean_cumulative_drops": md, "stderr_cumulative_drops": sed,
            }
            if csoc is not None:
                mp, sep = PolicySummary._mean_se(csoc.cumulative_drops - s.cumulative_drops)
                entry["mean_drops_prevented"], entry["stderr_drops_prevented"] = mp, sep
            out[name] = entry
        return {"config": self.config, "policies": out}


def planner_for(cohort: Cohort, beta: float, model_set=None, table: IndexTable | None = None):
    """(arm -> cluster ids, cluster tensors, index table) used to plan on a cohort."""
    if model_set is None:
        tensors = cohort.tensors
        clusters = np.arange(cohort.n)
        if table is None:
            table = IndexTable(whittle_indices(tensors, beta), beta)
    else:
        tensors = model_set.tensor()
        clusters = model_set.assign(cohort.features)
        if table is None:
            table = precompute_index_table(model_set, beta)
    return clusters, tensors, table


def run_experiment(spec: CohortSpec, policies=("whittle", "myopic", "random", "csoc"), trials: int = 30,
                   weeks: int = 40, m=50, beta: float = DEFAULT_BETA, eta: int = DEFAULT_ETA,
                   base_seed: int = 0, model_set=None, table: IndexTable | None = None,
                   keep_logs: bool = False) -> ExperimentResult:
    """Paired multi-trial comparison; trial j draws its cohort from seed (base_seed, j)."""
    policies = list(dict.fromkeys(canonical_policy(p) for p in policies))
    # Whittle and CSOC always run: they anchor the normalized reward
    run = policies + [p for p in ("whittle", "csoc") if p not in policies]
    rewards = {p: [] for p in run}
    drops = {p: [] for p in run}
    logs = {p: [] for p in policies}
    for j in range(trials):
        cohort_seed = int(np.random.SeedSequence([base_seed, j, STREAM_COHORT]).generate_state(1)[0])
        cohort = generate_cohort(replace(spec, seed=cohort_seed))
        clusters, tensors, tbl = planner_for(cohort, beta, model_set, table)
        for p in run:
            log = run_trial(cohort, make_policy(p, tbl, tensors), weeks, m, beta, eta, base_seed, j, clusters)
            rewards[p].append(log.total_discounted_reward)
            drops[p].append(drop_cumulative_series(log)[-1])
            if keep_logs and p in logs:
                logs[p].append(log)
    rewards = {p: np.array(v) for p, v in rewards.items()}
    denom = rewards["whittle"] - rewards["csoc"]
    safe = np.where(denom != 0, denom, np.nan)
    norm = {p: 100.0 * (r - rewards["csoc"]) / safe for p, r in rewards.items()}
    summaries = {p: PolicySummary(rewards[p], norm[p], np.array(drops[p], float)) for p in policies}
    anchors = {p: float(rewards[p].mean()) for p in ("whittle", "csoc")}
    config = {"spec": {**asdict(spec), "ranges": asdict(spec.ranges)}, "policies": list(policies),
              "trials": trials, "weeks": weeks, "m": m if np.ndim(m) == 0 else list(m),
              "beta": beta, "eta": eta, "base_seed": base_seed,
              "planner": "truth" if model_set is None else model_set.method_tag}
    return ExperimentResult(summaries, config, logs if keep_logs else {}, anchors)
