"""CSV/JSON ingestion and export: features, trajectories, listening logs, model files.

Loaders never silently drop rows. Every rejected row yields exactly one
``Diagnostic`` naming the file and line; strict loaders raise ``DataError``
carrying all of them.
"""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass
from datetime import date, datetime, timedelta

import numpy as np

from .clustering import Beneficiary, ClusterModelSet
from .core import Action, NE, E, State
from .features import FeatureEncoder

ID_COL = "beneficiary_id"
ENROLL_COL = "enrollment_date"
TRAJ_COLS = (ID_COL, "week_index", "state", "action", "next_state")
LISTEN_COLS = (ID_COL, "timestamp", "duration_listened")
ENGAGE_SECONDS = 30.0


@dataclass(frozen=True)
class Diagnostic:
    path: str
    line: int
    message: str

    def __str__(self):
        return f"{self.path}:{self.line}: {self.message}"


class DataError(ValueError):
    def __init__(self, diagnostics, summary: str | None = None):
        self.diagnostics = list(diagnostics)
        head = summary or f"{len(self.diagnostics)} problem(s) in input data"
        detail = "; ".join(str(d) for d in self.diagnostics[:10])
        more = f" (+{len(self.diagnostics) - 10} more)" if len(self.diagnostics) > 10 else ""
        super().__init__(f"{head}: {detail}{more}" if detail else head)


def _open_csv(path, required):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    missing = [c for c in required if c not in header]
    if missing:
        fh.close()
        raise DataError([Diagnostic(str(path), 1, f"missing required column(s) {missing}")],
                        "schema mismatch")
    return fh, reader


def parse_date(text: str) -> date:
    return date.fromisoformat(text.strip())


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text)


# ---------------------------------------------------------------------------
# registration features

@dataclass
class FeatureTable:
    ids: list
    columns: dict        # column -> list of raw values (numbers or strings)
    enrollment: list     # date per id

    def __len__(self):
        return len(self.ids)

    def subset(self, ids) -> "FeatureTable":
        pos = {b: i for i, b in enumerate(self.ids)}
        rows = [pos[b] for b in ids]
        return FeatureTable(list(ids), {c: [v[i] for i in rows] for c, v in self.columns.items()},
                            [self.enrollment[i] for i in rows])


def _value(v: str):
    try:
        return float(v)
    except ValueError:
        return v.strip()


def read_features(path) -> tuple[FeatureTable, list]:
    """Returns the table of accepted rows and the diagnostics for the rest."""
    fh, reader = _open_csv(path, (ID_COL, ENROLL_COL))
    cols = [c for c in reader.fieldnames if c not in (ID_COL, ENROLL_COL)]
    ids, enroll, table, diags = [], [], {c: [] for c in cols}, []
    seen = set()
    with fh:
        for line, row in enumerate(reader, start=2):
            bid = (row.get(ID_COL) or "").strip()
            if not bid:
                diags.append(Diagnostic(str(path), line, "empty beneficiary_id"))
                continue
            if bid in seen:
                diags.append(Diagnostic(str(path), line, f"duplicate beneficiary_id {bid!r}"))
                continue
            if any(row.get(c) is None or row[c].strip() == "" for c in cols):
                diags.append(Diagnostic(str(path), line, f"missing feature value for {bid!r}"))
                continue
            try:
                d = parse_date(row[ENROLL_COL] or "")
            except ValueError:
                diags.append(Diagnostic(str(path), line, f"malformed enrollment_date {row[ENROLL_COL]!r}"))
                continue
            seen.add(bid)
            ids.append(bid)
            enroll.append(d)
            for c in cols:
                table[c].append(_value(row[c]))
    return FeatureTable(ids, table, enroll), diags


# ---------------------------------------------------------------------------
# trajectories

def read_trajectories(path) -> tuple[dict, list]:
    """beneficiary_id -> list of (week_index, s, a, s', line), plus diagnostics."""
    fh, reader = _open_csv(path, TRAJ_COLS)
    out = defaultdict(list)
    weeks = defaultdict(set)
    diags = []
    with fh:
        for line, row in enumerate(reader, start=2):
            bid = (row[ID_COL] or "").strip()
            try:
                week = int(row["week_index"])
                if week < 0:
                    raise ValueError
            except (TypeError, ValueError):
                diags.append(Diagnostic(str(path), line, f"bad week_index {row['week_index']!r}"))
                continue
            try:
                s = State.parse(row["state"])
                a = Action.parse(row["action"])
                s2 = State.parse(row["next_state"])
            except ValueError as exc:
                diags.append(Diagnostic(str(path), line, str(exc)))
                continue
            if week in weeks[bid]:
                diags.append(Diagnostic(str(path), line, f"duplicate week {week} for {bid!r}"))
                continue
            weeks[bid].add(week)
            out[bid].append((week, int(s), int(a), int(s2), line))
    return dict(out), diags


@dataclass
class TrainingData:
    beneficiaries: list
    encoder: FeatureEncoder
    features: FeatureTable
    diagnostics: list


def load_training_data(features_path, trajectory_path, strict: bool = True) -> TrainingData:
    """Join features and trajectories on beneficiary_id.

    Trajectory rows whose id has no feature row are rejected, one diagnostic
    per row. A beneficiary with features but no trajectory gets an empty one.
    """
    feats, diags = read_features(features_path)
    trajs, tdiags = read_trajectories(trajectory_path)
    diags += tdiags
    known = set(feats.ids)
    for bid in sorted(set(trajs) - known):
        # rows of an orphan id are not loaded; report each one
        for week, _, _, _, line in trajs.pop(bid):
            diags.append(Diagnostic(str(trajectory_path), line,
                                    f"orphan beneficiary_id {bid!r} (week {week}) has no feature row"))
    if strict and diags:
        raise DataError(diags)
    encoder = FeatureEncoder.fit(feats.columns)
    x = encoder.transform(feats.columns) if feats.columns else np.zeros((len(feats), 0))
    bens = []
    for i, bid in enumerate(feats.ids):
        rows = sorted(trajs.get(bid, []))
        bens.append(Beneficiary(bid, x[i], [(s, a, s2) for _, s, a, s2, _ in rows], feats.enrollment[i]))
    return TrainingData(bens, encoder, feats, diags)


def write_features(path, ids, table: dict, enrollment) -> None:
    cols = list(table)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([ID_COL, *cols, ENROLL_COL])
        for i, bid in enumerate(ids):
            w.writerow([bid, *[_fmt(table[c][i]) for c in cols], enrollment[i].isoformat()])


def write_trajectories(path, beneficiaries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJ_COLS)
        for b in beneficiaries:
            for week, (s, a, s2) in enumerate(b.trajectory):
                w.writerow([b.id, week, State(s).name, Action(a).symbol, State(s2).name])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


# ---------------------------------------------------------------------------
# listening logs and the 30-second rule

@dataclass(frozen=True)
class ListeningRecord:
    beneficiary_id: str
    timestamp: datetime
    duration_listened: float

    def __post_init__(self):
        if not self.duration_listened >= 0:
            raise ValueError(f"duration_listened must be >= 0, got {self.duration_listened}")


def read_listening_records(path, strict: bool = True) -> tuple[list, list]:
    fh, reader = _open_csv(path, LISTEN_COLS)
    recs, diags = [], []
    with fh:
        for line, row in enumerate(reader, start=2):
            try:
                ts = parse_timestamp(row["timestamp"] or "")
            except ValueError:
                diags.append(Diagnostic(str(path), line, f"malformed timestamp {row['timestamp']!r}"))
                continue
            try:
                dur = float(row["duration_listened"])
                recs.append(ListeningRecord(row[ID_COL].strip(), ts, dur))
            except (TypeError, ValueError):
                diags.append(Diagnostic(str(path), line, f"bad duration_listened {row['duration_listened']!r}"))
    if strict and diags:
        raise DataError(diags)
    return recs, diags


def monday_of(d) -> date:
    d = d.date() if isinstance(d, datetime) else d
    return d - timedelta(days=d.weekday())


def week_of(ts, week_start: date) -> int:
    d = ts.date() if isinstance(ts, datetime) else ts
    return (d - monday_of(week_start)).days // 7


def derive_weekly_states(records, week_start: date | None = None, n_weeks: int | None = None,
                         ids=None) -> tuple[list, np.ndarray]:
    """(ids, states[n_ids, n_weeks]) where a week is E iff some listen lasted > 30 s.

    Weeks are Monday-anchored; week 0 is the week containing ``week_start``
    (default: the earliest record). Records outside the window are ignored.
    """
    records = sorted(records, key=lambda r: (r.timestamp.replace(tzinfo=None), r.beneficiary_id))
    if week_start is None:
        if not records:
            raise ValueError("week_start is required when there are no records")
        week_start = records[0].timestamp.date()
    if ids is None:
        ids = sorted({r.beneficiary_id for r in records})
    if n_weeks is None:
        n_weeks = max((week_of(r.timestamp, week_start) for r in records), default=-1) + 1
        n_weeks = max(n_weeks, 1)
    pos = {b: i for i, b in enumerate(ids)}
    states = np.full((len(ids), n_weeks), NE, dtype=np.int8)
    for r in records:
        w = week_of(r.timestamp, week_start)
        i = pos.get(r.beneficiary_id)
        if i is None or not 0 <= w < n_weeks:
            continue
        if r.duration_listened > ENGAGE_SECONDS:
            states[i, w] = E
    return list(ids), states


# ---------------------------------------------------------------------------
# current cohort states for planning

@dataclass
class CohortSnapshot:
    ids: list
    states: np.ndarray
    weeks_since_last_call: np.ndarray  # inf when never called


def read_states(path) -> CohortSnapshot:
    """CSV with beneficiary_id, state and optional weeks_since_last_call (blank = never)."""
    fh, reader = _open_csv(path, (ID_COL, "state"))
    ids, states, wslc, diags, seen = [], [], [], [], set()
    has_wslc = "weeks_since_last_call" in reader.fieldnames
    with fh:
        for line, row in enumerate(reader, start=2):
            bid = row[ID_COL].strip()
            if bid in seen:
                diags.append(Diagnostic(str(path), line, f"duplicate beneficiary_id {bid!r}"))
                continue
            try:
                s = State.parse(row["state"])
                raw = (row.get("weeks_since_last_call") or "").strip() if has_wslc else ""
                w = np.inf if raw == "" else float(raw)
                if w < 0:
                    raise ValueError(f"negative weeks_since_last_call {raw!r}")
            except ValueError as exc:
                diags.append(Diagnostic(str(path), line, str(exc)))
                continue
            seen.add(bid)
            ids.append(bid)
            states.append(int(s))
            wslc.append(w)
    if diags:
        raise DataError(diags)
    return CohortSnapshot(ids, np.array(states, dtype=np.int64), np.array(wslc, dtype=float))


def write_states(path, ids, states, weeks_since_last_call=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([ID_COL, "state", "weeks_since_last_call"])
        for i, bid in enumerate(ids):
            v = "" if weeks_since_last_call is None or np.isinf(weeks_since_last_call[i]) \
                else int(weeks_since_last_call[i])
            w.writerow([bid, State(int(states[i])).name, v])


# ---------------------------------------------------------------------------
# model JSON

def dump_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def write_model(path, cms: ClusterModelSet, encoder: FeatureEncoder | None = None) -> None:
    d = cms.to_dict()
    d["encoder"] = None if encoder is None else encoder.to_dict()
    dump_json(path, d)


def read_model(path) -> tuple[ClusterModelSet, FeatureEncoder | None]:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        enc = d.get("encoder")
        return ClusterModelSet.from_dict(d), None if enc is None else FeatureEncoder.from_dict(enc)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError([Diagnostic(str(path), 0, f"invalid model JSON: {exc!r}")]) from exc
