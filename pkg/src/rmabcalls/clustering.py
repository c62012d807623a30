"""Offline estimation of cluster transition models from historical trajectories.

Four clustering routes are provided:

* ``FO``  k-means on standardised registration features.
* ``FAP`` rule buckets on features, then k-means on bucket-pooled
  (passive + active) engagement probabilities.
* ``FPP`` as FAP, but the second level only sees passive probabilities.
* ``PPF`` k-means on each beneficiary's own passive probabilities, plus a
  random forest that maps features to the resulting cluster.

Every route pools the ``(s, a, s')`` samples of a cluster's members to get its
TransitionModel. Rows with no samples stay NaN and are flagged missing until
``impute_missing_active`` fills them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date
from typing import Sequence

import numpy as np

from .core import ACTIVE, E, NE, PASSIVE, TransitionModel
from .forest import Forest, fit_forest
from .kmeans import assign_nearest, kmeans

METHODS = ("FO", "FAP", "FPP", "PPF")
DEFAULT_K = 40


@dataclass
class Beneficiary:
    id: str
    features: np.ndarray
    # one (state, action, next_state) triple per week, ints
    trajectory: list = field(default_factory=list)
    enrollment_date: date | None = None


def feature_matrix(train: Sequence[Beneficiary]) -> np.ndarray:
    if not train:
        return np.zeros((0, 0))
    lengths = {len(b.features) for b in train}
    if len(lengths) != 1:
        raise ValueError(f"feature vectors have differing lengths {sorted(lengths)}")
    return np.stack([np.asarray(b.features, dtype=float) for b in train])


# ---------------------------------------------------------------------------
# estimation

def count_transitions(traj) -> np.ndarray:
    """counts[s, a, s'] for one trajectory."""
    counts = np.zeros((2, 2, 2), dtype=np.int64)
    for s, a, s2 in traj:
        counts[int(s), int(a), int(s2)] += 1
    return counts


def model_from_counts(counts: np.ndarray) -> TransitionModel:
    """Maximum-likelihood rows; rows without samples are NaN and flagged."""
    by_action = np.transpose(np.asarray(counts, dtype=float), (1, 0, 2))  # [a, s, s']
    totals = by_action.sum(-1)
    missing = totals == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        p_e = by_action[..., E] / totals
    # NE column as 1 - p so the tensor survives a trip through the four probabilities
    tensor = np.stack([1.0 - p_e, p_e], axis=-1)
    tensor[missing] = np.nan
    return TransitionModel(tensor, missing=missing)


def estimate_transitions(trajs) -> tuple[np.ndarray, TransitionModel]:
    counts = np.zeros((2, 2, 2), dtype=np.int64)
    for traj in trajs:
        counts += count_transitions(traj)
    return counts, model_from_counts(counts)


def _per_beneficiary_counts(train) -> np.ndarray:
    return np.stack([count_transitions(b.trajectory) for b in train]) if train else np.zeros((0, 2, 2, 2), np.int64)


def _pool(counts: np.ndarray, labels: np.ndarray, k: int) -> list[TransitionModel]:
    pooled = np.zeros((k, 2, 2, 2), dtype=np.int64)
    np.add.at(pooled, labels, counts)
    return [model_from_counts(c) for c in pooled]


def passive_estimates(counts: np.ndarray) -> np.ndarray:
    """Per-beneficiary (P^p_{NE,E}, P^p_{E,E}); NaN where a row has no samples."""
    passive = counts[:, :, PASSIVE, :].astype(float)  # [n, s, s']
    totals = passive.sum(-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, passive[:, :, E] / totals, np.nan)


# ---------------------------------------------------------------------------
# assigners: feature vector -> cluster id

@dataclass(eq=False)
class CentroidAssigner:
    mean: np.ndarray
    scale: np.ndarray
    centers: np.ndarray

    kind = "centroid"

    def __call__(self, x) -> np.ndarray:
        return assign_nearest((np.atleast_2d(x) - self.mean) / self.scale, self.centers)

    def to_dict(self):
        return {"kind": self.kind, "mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "centers": self.centers.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["scale"], float), np.asarray(d["centers"], float))

    def __eq__(self, o):
        return isinstance(o, CentroidAssigner) and all(
            np.array_equal(getattr(self, f), getattr(o, f)) for f in ("mean", "scale", "centers"))


@dataclass(eq=False)
class BucketRules:
    """Per-feature bin edges; a bucket is the tuple of bin indices.

    A value falls in bin ``j`` when exactly ``j`` edges lie strictly below it.
    """

    edges: list
    columns: list

    @classmethod
    def quantiles(cls, x: np.ndarray, n_quantiles: int = 3, columns=None) -> "BucketRules":
        columns = list(range(x.shape[1])) if columns is None else [int(c) for c in columns]
        qs = np.arange(1, n_quantiles) / n_quantiles
        edges = [np.unique(np.quantile(x[:, c], qs)).tolist() for c in columns]
        return cls(edges, columns)

    @classmethod
    def from_config(cls, cfg: dict, x: np.ndarray) -> "BucketRules":
        unknown = set(cfg) - {"n_quantiles", "columns", "edges"}
        if unknown:
            raise ValueError(f"unknown bucket-rule keys {sorted(unknown)}")
        if "edges" in cfg:
            edges = [sorted(float(v) for v in e) for e in cfg["edges"]]
            columns = cfg.get("columns", list(range(len(edges))))
            if len(columns) != len(edges):
                raise ValueError("bucket rules: 'columns' and 'edges' lengths differ")
            return cls(edges, [int(c) for c in columns])
        return cls.quantiles(x, int(cfg.get("n_quantiles", 3)), cfg.get("columns"))

    def keys(self, x) -> list[tuple]:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        bins = np.column_stack(
            [np.searchsorted(np.asarray(e, float), x[:, c], side="left") for e, c in zip(self.edges, self.columns)]
        ) if self.columns else np.zeros((len(x), 0), int)
        return [tuple(int(v) for v in row) for row in bins]

    def to_dict(self):
        return {"edges": [list(map(float, e)) for e in self.edges], "columns": list(self.columns)}

    @classmethod
    def from_dict(cls, d):
        return cls([list(map(float, e)) for e in d["edges"]], [int(c) for c in d["columns"]])

    def __eq__(self, o):
        return isinstance(o, BucketRules) and self.to_dict() == o.to_dict()


@dataclass(eq=False)
class BucketAssigner:
    rules: BucketRules
    bucket_keys: list
    bucket_clusters: list

    kind = "buckets"

    def __post_init__(self):
        self.bucket_keys = [tuple(k) for k in self.bucket_keys]
        self._lookup = dict(zip(self.bucket_keys, self.bucket_clusters))
        self._key_arr = np.array(self.bucket_keys, dtype=float).reshape(len(self.bucket_keys), -1)

    def __call__(self, x) -> np.ndarray:
        out = []
        for key in self.rules.keys(x):
            c = self._lookup.get(key)
            if c is None:
                # unseen bucket: nearest training bucket in bin-index space
                d = np.abs(self._key_arr - np.array(key, float)).sum(1)
                c = self.bucket_clusters[int(d.argmin())]
            out.append(c)
        return np.array(out, dtype=np.int64)

    def to_dict(self):
        return {"kind": self.kind, "rules": self.rules.to_dict(),
                "bucket_keys": [list(k) for k in self.bucket_keys],
                "bucket_clusters": [int(c) for c in self.bucket_clusters]}

    @classmethod
    def from_dict(cls, d):
        return cls(BucketRules.from_dict(d["rules"]), [tuple(k) for k in d["bucket_keys"]],
                   [int(c) for c in d["bucket_clusters"]])

    def __eq__(self, o):
        return isinstance(o, BucketAssigner) and self.to_dict() == o.to_dict()


@dataclass(eq=False)
class ForestAssigner:
    forest: Forest

    kind = "forest"

    def __call__(self, x) -> np.ndarray:
        return self.forest.predict(np.atleast_2d(x))

    def to_dict(self):
        return {"kind": self.kind, **self.forest.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(Forest.from_dict(d))

    def __eq__(self, o):
        return isinstance(o, ForestAssigner) and self.forest == o.forest


_ASSIGNERS = {a.kind: a for a in (CentroidAssigner, BucketAssigner, ForestAssigner)}


# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ClusterModelSet:
    method_tag: str
    models: list
    centers: np.ndarray
    sizes: np.ndarray
    labels: np.ndarray  # cluster of each training beneficiary, in input order
    assigner: object
    meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.models)

    def assign(self, features) -> np.ndarray:
        return self.assigner(np.asarray(features, dtype=float))

    def tensor(self) -> np.ndarray:
        return np.stack([m.tensor for m in self.models])

    @property
    def complete(self) -> bool:
        return all(m.complete for m in self.models)

    def replace_models(self, models) -> "ClusterModelSet":
        return ClusterModelSet(self.method_tag, list(models), self.centers, self.sizes, self.labels,
                               self.assigner, dict(self.meta))

    def to_dict(self) -> dict:
        clusters = []
        for c, m in enumerate(self.models):
            probs = [None if np.isnan(v) else float(v) for v in m.probs]
            clusters.append({
                "id": c,
                "p_passive_ne_e": probs[0], "p_passive_e_e": probs[1],
                "p_active_ne_e": probs[2], "p_active_e_e": probs[3],
                "missing": m.missing.astype(int).tolist(),
                "imputed": m.imputed.astype(int).tolist(),
                "size": int(self.sizes[c]),
            })
        return {
            "k": self.k,
            "method_tag": self.method_tag,
            "clusters": clusters,
            "centers": np.asarray(self.centers).tolist(),
            "labels": np.asarray(self.labels).astype(int).tolist(),
            "assigner": self.assigner.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterModelSet":
        if d["method_tag"] not in METHODS:
            raise ValueError(f"unknown method tag {d['method_tag']!r}")
        models = []
        for c in sorted(d["clusters"], key=lambda c: c["id"]):
            vals = [np.nan if c[f] is None else c[f]
                    for f in ("p_passive_ne_e", "p_passive_e_e", "p_active_ne_e", "p_active_e_e")]
            models.append(TransitionModel.from_probs(*vals, missing=np.array(c["missing"], bool),
                                                     imputed=np.array(c["imputed"], bool)))
        if len(models) != d["k"]:
            raise ValueError(f"model JSON declares k={d['k']} but lists {len(models)} clusters")
        sizes = np.array([c["size"] for c in sorted(d["clusters"], key=lambda c: c["id"])], dtype=np.int64)
        assigner = _ASSIGNERS[d["assigner"]["kind"]].from_dict(d["assigner"])
        return cls(d["method_tag"], models, np.asarray(d["centers"], float), sizes,
                   np.asarray(d["labels"], dtype=np.int64), assigner, d.get("meta", {}))

    def __eq__(self, o):
        if not isinstance(o, ClusterModelSet):
            return NotImplemented
        return (
            self.method_tag == o.method_tag
            and self.k == o.k
            and all(a == b for a, b in zip(self.models, o.models))
            and np.array_equal(self.centers, o.centers)
            and np.array_equal(self.sizes, o.sizes)
            and np.array_equal(self.labels, o.labels)
            and self.assigner == o.assigner
            and self.meta == o.meta
        )


def _finish(tag, counts, labels, k, centers, assigner) -> ClusterModelSet:
    labels = np.asarray(labels, dtype=np.int64)
    sizes = np.bincount(labels, minlength=k).astype(np.int64)
    return ClusterModelSet(tag, _pool(counts, labels, k), np.asarray(centers, float), sizes, labels, assigner)


def standardize_fit(x: np.ndarray):
    mean = x.mean(0)
    scale = x.std(0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def cluster_fo(train: Sequence[Beneficiary], k: int = DEFAULT_K, seed: int = 0, n_init: int = 1) -> ClusterModelSet:
    x = feature_matrix(train)
    mean, scale = standardize_fit(x)
    km = kmeans((x - mean) / scale, k, seed=seed, n_init=n_init)
    return _finish("FO", _per_beneficiary_counts(train), km.labels, k, km.centers,
                   CentroidAssigner(mean, scale, km.centers))


def _nearest_donor(target: np.ndarray, donors: np.ndarray, candidates: np.ndarray) -> int:
    """Index (into candidates) of the nearest donor by nan-aware Euclidean distance; ties -> lowest."""
    diff = donors[candidates] - target
    d2 = np.where(np.isnan(diff), 0.0, diff ** 2).sum(1)
    return int(candidates[int(d2.argmin())])


def _cluster_buckets(tag, train, k, seed, rules, use_active, n_init):
    x = feature_matrix(train)
    if rules is None:
        rules = BucketRules.quantiles(x)
    elif isinstance(rules, dict):
        rules = BucketRules.from_config(rules, x)
    keys = rules.keys(x)
    bucket_keys = sorted(set(keys))
    bucket_of = {key: i for i, key in enumerate(bucket_keys)}
    b_labels = np.array([bucket_of[key] for key in keys], dtype=np.int64)
    counts = _per_beneficiary_counts(train)
    bucket_models = _pool(counts, b_labels, len(bucket_keys))
    probs = np.stack([m.probs for m in bucket_models])  # (B, 4)
    estimable = np.flatnonzero(~np.isnan(probs[:, :2]).any(1))
    if len(estimable) < k:
        raise ValueError(f"{tag}: only {len(estimable)} buckets with estimable passive rows, need k={k}")
    if use_active:
        # fill missing active coordinates from the nearest bucket (passive space) that has them
        for col in (2, 3):
            have = estimable[~np.isnan(probs[estimable, col])]
            if len(have) == 0:
                raise ValueError(f"{tag}: no bucket has active samples for row {'NE' if col == 2 else 'E'}")
            for b in estimable[np.isnan(probs[estimable, col])]:
                probs[b, col] = probs[_nearest_donor(probs[b, :2], probs[:, :2], have), col]
        vecs = probs[estimable]
    else:
        vecs = probs[estimable, :2]
    km = kmeans(vecs, k, seed=seed, n_init=n_init)
    bucket_clusters = np.full(len(bucket_keys), -1, dtype=np.int64)
    bucket_clusters[estimable] = km.labels
    key_arr = np.array(bucket_keys, dtype=float).reshape(len(bucket_keys), -1)
    for b in np.flatnonzero(bucket_clusters < 0):
        d = np.abs(key_arr[estimable] - key_arr[b]).sum(1)
        bucket_clusters[b] = bucket_clusters[estimable[int(d.argmin())]]
    labels = bucket_clusters[b_labels]
    assigner = BucketAssigner(rules, bucket_keys, bucket_clusters.tolist())
    out = _finish(tag, counts, labels, k, km.centers, assigner)
    out.meta["n_buckets"] = len(bucket_keys)
    return out


def cluster_fap(train, k: int = DEFAULT_K, seed: int = 0, rules=None, n_init: int = 1) -> ClusterModelSet:
    return _cluster_buckets("FAP", train, k, seed, rules, True, n_init)


def cluster_fpp(train, k: int = DEFAULT_K, seed: int = 0, rules=None, n_init: int = 1) -> ClusterModelSet:
    return _cluster_buckets("FPP", train, k, seed, rules, False, n_init)


def cluster_ppf(train, k: int = DEFAULT_K, seed: int = 0, n_trees: int = 100, n_init: int = 1) -> ClusterModelSet:
    x = feature_matrix(train)
    counts = _per_beneficiary_counts(train)
    pts = passive_estimates(counts)
    fit = ~np.isnan(pts).any(1)
    if not fit.any():
        raise ValueError("PPF: no beneficiary has passive samples in both states")
    km = kmeans(pts[fit], k, seed=seed, n_init=n_init)
    forest = fit_forest(x[fit], km.labels, n_classes=k, n_trees=n_trees, seed=seed)
    labels = np.empty(len(train), dtype=np.int64)
    labels[fit] = km.labels
    if (~fit).any():
        labels[~fit] = forest.predict(x[~fit])
    return _finish("PPF", counts, labels, k, km.centers, ForestAssigner(forest))


def fit_clusters(method: str, train, k: int = DEFAULT_K, seed: int = 0, rules=None, **kw) -> ClusterModelSet:
    method = method.upper()
    if method == "FO":
        return cluster_fo(train, k, seed, **kw)
    if method == "FAP":
        return cluster_fap(train, k, seed, rules, **kw)
    if method == "FPP":
        return cluster_fpp(train, k, seed, rules, **kw)
    if method == "PPF":
        return cluster_ppf(train, k, seed, **kw)
    raise ValueError(f"unknown clustering method {method!r}; expected one of {METHODS}")


def impute_missing_active(cms: ClusterModelSet) -> ClusterModelSet:
    """Copy each missing row from the nearest cluster (passive-probability distance) that estimated it.

    Ties go to the lower cluster id. Imputed rows are flagged and lose their
    missing flag. Passive rows are filled the same way should any be missing.
    """
    if cms.complete:
        return cms
    tensors = cms.tensor().copy()
    missing = np.stack([m.missing for m in cms.models])  # [c, a, s]
    imputed = np.stack([m.imputed for m in cms.models])
    passive = tensors[:, PASSIVE, :, E]
    for a in (ACTIVE, PASSIVE):
        for s in (NE, E):
            have = np.flatnonzero(~missing[:, a, s])
            need = np.flatnonzero(missing[:, a, s])
            if len(need) and not len(have):
                kind = "active" if a == ACTIVE else "passive"
                raise ValueError(f"no cluster has {kind} data for state row {['NE', 'E'][s]}; cannot impute")
            for c in need:
                donor = _nearest_donor(passive[c], passive, have)
                tensors[c, a, s] = tensors[donor, a, s]
                imputed[c, a, s] = True
    models = [TransitionModel(tensors[c], missing=np.zeros((2, 2), bool), imputed=imputed[c])
              for c in range(cms.k)]
    return cms.replace_models(models)


def evaluate_clustering(cms: ClusterModelSet, truth_passive, labels=None) -> tuple[float, float]:
    """(average per-beneficiary RMSE of passive probabilities, std of cluster sizes).

    Each beneficiary is compared with the passive (P_{NE,E}, P_{E,E}) of the
    cluster it is assigned to (training labels unless ``labels`` given).
    """
    labels = cms.labels if labels is None else np.asarray(labels)
    truth = np.asarray(truth_passive, dtype=float)
    centers = np.stack([m.passive_probs for m in cms.models])[labels]
    per_ben = np.sqrt(((truth - centers) ** 2).mean(1))
    sizes = np.bincount(labels, minlength=cms.k)
    return float(per_ben.mean()), float(sizes.std())
