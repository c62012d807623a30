"""Random-forest feature -> cluster map stored as a plain list of trees.

Training delegates to scikit-learn; each fitted tree is immediately flattened
into arrays (split feature, threshold, children, leaf class) and prediction
runs on those arrays with a hard majority vote. A forest therefore behaves the
same straight after training and after a JSON round trip.
"""
from __future__ import annotations

import base64
from dataclasses import dataclass, field

import numpy as np

LEAF = -1
# on-disk dtypes of the tree arrays (little-endian, base64 in JSON)
_DTYPES = {"feature": "<i4", "threshold": "<f8", "left": "<i4", "right": "<i4", "leaf_class": "<i4"}


def _encode(a: np.ndarray, dtype: str) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype=dtype).tobytes()).decode("ascii")


def _decode(v, dtype: str, out_dtype) -> np.ndarray:
    if isinstance(v, str):
        return np.frombuffer(base64.b64decode(v), dtype=dtype).astype(out_dtype)
    return np.asarray(v, dtype=out_dtype)


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_class: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        rows = np.arange(len(x))
        while True:
            active = self.left[node] != LEAF
            if not active.any():
                return self.leaf_class[node]
            f = self.feature[node[active]]
            go_left = x[rows[active], f] <= self.threshold[node[active]]
            nxt = np.where(go_left, self.left[node[active]], self.right[node[active]])
            node[active] = nxt

    def to_dict(self) -> dict:
        return {name: _encode(getattr(self, name), dt) for name, dt in _DTYPES.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        """Arrays may be base64 strings (as written) or plain JSON lists."""
        return cls(*(_decode(d[name], dt, float if name == "threshold" else np.int64)
                     for name, dt in _DTYPES.items()))

    def __eq__(self, other):
        return isinstance(other, Tree) and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("feature", "threshold", "left", "right", "leaf_class")
        )


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple
    n_classes: int
    # all trees stacked into one node array, children offset accordingly
    _flat: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.trees:
            object.__setattr__(self, "_flat", None)
            return
        offsets = np.cumsum([0] + [len(t.left) for t in self.trees])[:-1]
        is_leaf = np.concatenate([t.left == LEAF for t in self.trees])
        self_loop = np.arange(len(is_leaf))

        def children(attr):
            c = np.concatenate([getattr(t, attr) + o for t, o in zip(self.trees, offsets)])
            return np.where(is_leaf, self_loop, c)

        flat = (offsets,
                np.where(is_leaf, 0, np.concatenate([t.feature for t in self.trees])),
                np.concatenate([t.threshold for t in self.trees]),
                children("left"), children("right"),
                np.concatenate([t.leaf_class for t in self.trees]),
                is_leaf)
        object.__setattr__(self, "_flat", flat)

    def predict(self, x) -> np.ndarray:
        # thresholds were fitted on float32-cast inputs
        x = np.asarray(x, dtype=np.float32).astype(float)
        if x.ndim == 1:
            x = x[None]
        if self.n_classes == 1 or not self.trees:
            return np.zeros(len(x), dtype=np.int64)
        roots, feature, threshold, left, right, leaf_class, is_leaf = self._flat
        n, d = x.shape
        xf = x.ravel()
        # one walker per (tree, row), tree-major; leaves point to themselves so
        # several levels can be taken between compactions of the walker set
        cur = np.repeat(roots, n)
        base = np.tile(np.arange(n) * d, len(roots))
        node = np.empty_like(cur)
        idx = np.arange(len(cur))
        while len(idx):
            for _ in range(4):
                cur = np.where(xf[base + feature[cur]] <= threshold[cur], left[cur], right[cur])
            node[idx] = cur
            keep = ~is_leaf[cur]
            idx, cur, base = idx[keep], cur[keep], base[keep]
        row = np.tile(np.arange(n), len(roots))
        votes = np.bincount(row * self.n_classes + leaf_class[node], minlength=n * self.n_classes)
        votes = votes.reshape(n, self.n_classes)
        # argmax returns the lowest class on ties
        return votes.argmax(1)

    def to_dict(self) -> dict:
        return {"n_classes": self.n_classes, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        return cls(tuple(Tree.from_dict(t) for t in d["trees"]), int(d["n_classes"]))

    def __eq__(self, other):
        return (
            isinstance(other, Forest)
            and self.n_classes == other.n_classes
            and len(self.trees) == len(other.trees)
            and all(a == b for a, b in zip(self.trees, other.trees))
        )


def fit_forest(x, y, n_classes: int | None = None, n_trees: int = 100, seed: int = 0) -> Forest:
    """Bootstrap-bagged, unlimited-depth trees on (x, integer labels y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    if len(np.unique(y)) < 2:
        label = int(y[0]) if len(y) else 0
        stump = Tree(np.array([LEAF]), np.array([0.0]), np.array([LEAF]), np.array([LEAF]), np.array([label]))
        return Forest((stump,), max(n_classes, 1))
    from sklearn.ensemble import RandomForestClassifier

    rf = RandomForestClassifier(n_estimators=n_trees, max_depth=None, bootstrap=True, random_state=seed)
    rf.fit(x, y)
    classes = rf.classes_.astype(np.int64)
    trees = []
    for est in rf.estimators_:
        t = est.tree_
        leaf_class = classes[t.value[:, 0, :].argmax(1)]
        left = t.children_left.astype(np.int64)
        trees.append(Tree(
            np.where(left == LEAF, 0, t.feature).astype(np.int64),
            t.threshold.astype(float),
            left,
            t.children_right.astype(np.int64),
            leaf_class,
        ))
    return Forest(tuple(trees), n_classes)
