"""Registration-feature encoding: numeric columns pass through, text columns are one-hot."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _is_number(v) -> bool:
    try:
        float(v)
    except (TypeError, ValueError):
        return False
    return True


@dataclass
class FeatureEncoder:
    columns: list
    # column -> sorted levels, only for categorical columns
    levels: dict

    @classmethod
    def fit(cls, table: dict) -> "FeatureEncoder":
        levels = {}
        for col, values in table.items():
            if not all(_is_number(v) for v in values):
                levels[col] = sorted({str(v) for v in values})
        return cls(list(table), levels)

    @property
    def encoded_names(self) -> list:
        names = []
        for col in self.columns:
            if col in self.levels:
                names += [f"{col}={lv}" for lv in self.levels[col]]
            else:
                names.append(col)
        return names

    def transform(self, table: dict) -> np.ndarray:
        missing = [c for c in self.columns if c not in table]
        if missing:
            raise ValueError(f"feature columns missing: {missing}")
        n = len(next(iter(table.values()))) if table else 0
        blocks = []
        for col in self.columns:
            values = table[col]
            if col in self.levels:
                lv = self.levels[col]
                block = np.zeros((n, len(lv)))
                for i, v in enumerate(values):
                    # unseen levels encode as all zeros
                    if str(v) in lv:
                        block[i, lv.index(str(v))] = 1.0
                blocks.append(block)
            else:
                blocks.append(np.asarray([float(v) for v in values], dtype=float)[:, None])
        return np.hstack(blocks) if blocks else np.zeros((n, 0))

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "levels": {k: list(v) for k, v in self.levels.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureEncoder":
        return cls(list(d["columns"]), {k: list(v) for k, v in d["levels"].items()})
