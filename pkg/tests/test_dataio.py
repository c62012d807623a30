from datetime import date, datetime

import numpy as np
import pytest

from rmabcalls.clustering import cluster_fo, impute_missing_active
from rmabcalls.config import ConfigError, RunConfig
from rmabcalls.core import E, NE
from rmabcalls.dataio import (
    DataError, ListeningRecord, derive_weekly_states, load_training_data, read_features,
    read_listening_records, read_model, read_states, read_trajectories, write_features, write_model,
    write_states, write_trajectories,
)

FEATURES = """beneficiary_id,age,language,enrollment_date
b1,24,hindi,2021-01-04
b2,31,marathi,2021-01-05
b3,19,hindi,2021-01-07
"""
TRAJ = """beneficiary_id,week_index,state,action,next_state
b1,0,E,p,E
b1,1,E,a,NE
b2,0,NE,a,E
b3,0,NE,p,NE
b3,1,NE,p,E
"""


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_three_rows(tmp_path):
    data = load_training_data(_write(tmp_path, "f.csv", FEATURES), _write(tmp_path, "t.csv", TRAJ))
    assert [b.id for b in data.beneficiaries] == ["b1", "b2", "b3"]
    assert data.beneficiaries[0].trajectory == [(E, 0, E), (E, 1, NE)]
    assert data.encoder.encoded_names == ["age", "language=hindi", "language=marathi"]
    assert data.beneficiaries[1].enrollment_date == date(2021, 1, 5)
    assert data.diagnostics == []


def test_unknown_state_symbol_reported_with_line(tmp_path):
    bad = TRAJ.replace("b2,0,NE,a,E", "b2,0,X,a,E")
    _, diags = read_trajectories(_write(tmp_path, "t.csv", bad))
    assert [d.line for d in diags] == [4]
    with pytest.raises(DataError, match="t.csv:4"):
        load_training_data(_write(tmp_path, "f.csv", FEATURES), tmp_path / "t.csv")


def test_orphans_and_duplicates_each_reported(tmp_path):
    feats = FEATURES + "b1,40,hindi,2021-01-08\n"
    traj = TRAJ + "zz,0,E,p,E\nzz,1,E,p,E\n"
    data = load_training_data(_write(tmp_path, "f.csv", feats), _write(tmp_path, "t.csv", traj), strict=False)
    msgs = [(d.path.endswith("f.csv"), d.line) for d in data.diagnostics]
    assert (True, 5) in msgs
    assert sorted(line for is_f, line in msgs if not is_f) == [7, 8]
    assert len(data.beneficiaries) == 3


def test_ingestion_is_total(tmp_path):
    # every input row is either loaded or named in exactly one diagnostic
    traj = TRAJ + "b1,0,E,p,E\nb2,x,E,p,E\nb3,2,E,call,E\n"
    trajs, diags = read_trajectories(_write(tmp_path, "t.csv", traj))
    loaded = sum(len(v) for v in trajs.values())
    assert loaded + len(diags) == traj.count("\n") - 1
    assert sorted(d.line for d in diags) == [7, 8, 9]


def test_feature_row_problems(tmp_path):
    text = FEATURES + ",22,hindi,2021-01-04\nb5,,hindi,2021-01-04\nb6,22,hindi,04/01/2021\n"
    table, diags = read_features(_write(tmp_path, "f.csv", text))
    assert len(table) == 3
    assert [d.line for d in diags] == [5, 6, 7]


def test_schema_mismatch(tmp_path):
    with pytest.raises(DataError, match="schema mismatch"):
        read_trajectories(_write(tmp_path, "t.csv", "beneficiary_id,week_index\nb1,0\n"))


def _rec(bid, ts, dur):
    return ListeningRecord(bid, datetime.fromisoformat(ts), dur)


def test_thirty_second_rule():
    recs = [_rec("a", "2021-01-04T10:00:00", 45), _rec("a", "2021-01-05T10:00:00", 10),
            _rec("b", "2021-01-06T10:00:00", 30), _rec("c", "2021-01-12T09:00:00", 31)]
    ids, states = derive_weekly_states(recs, date(2021, 1, 4), 2, ids=["a", "b", "c", "d"])
    assert ids == ["a", "b", "c", "d"]
    # exactly 30 s is not engagement; a week without records is NE
    assert states.tolist() == [[E, NE], [NE, NE], [NE, E], [NE, NE]]


def test_week_start_defaults_and_monday_anchor():
    recs = [_rec("a", "2021-01-06T10:00:00", 40), _rec("a", "2021-01-11T00:00:00", 40)]
    _, states = derive_weekly_states(recs)
    assert states.tolist() == [[E, E]]


def test_negative_duration_rejected():
    with pytest.raises(ValueError):
        ListeningRecord("a", datetime(2021, 1, 4), -1.0)


def test_listening_file_reports_malformed_timestamp(tmp_path):
    text = ("beneficiary_id,timestamp,duration_listened\n"
            "a,2021-01-04T10:00:00Z,45\n"
            "a,yesterday,45\n"
            "b,2021-01-04T10:00:00,-3\n")
    p = _write(tmp_path, "l.csv", text)
    recs, diags = read_listening_records(p, strict=False)
    assert len(recs) == 1 and [d.line for d in diags] == [3, 4]
    with pytest.raises(DataError, match="l.csv:3"):
        read_listening_records(p)


def test_states_roundtrip(tmp_path):
    p = tmp_path / "s.csv"
    write_states(p, ["a", "b"], [E, NE], np.array([2, np.inf]))
    snap = read_states(p)
    assert snap.ids == ["a", "b"] and snap.states.tolist() == [E, NE]
    assert snap.weeks_since_last_call[0] == 2 and np.isinf(snap.weeks_since_last_call[1])
    p.write_text("beneficiary_id,state\na,E\na,NE\n")
    with pytest.raises(DataError, match="duplicate"):
        read_states(p)


def test_feature_and_trajectory_writers_roundtrip(tmp_path):
    data = load_training_data(_write(tmp_path, "f.csv", FEATURES), _write(tmp_path, "t.csv", TRAJ))
    write_features(tmp_path / "f2.csv", data.features.ids, data.features.columns, data.features.enrollment)
    write_trajectories(tmp_path / "t2.csv", data.beneficiaries)
    back = load_training_data(tmp_path / "f2.csv", tmp_path / "t2.csv")
    for a, b in zip(data.beneficiaries, back.beneficiaries):
        assert a.id == b.id and a.trajectory == b.trajectory
        np.testing.assert_array_equal(a.features, b.features)


def test_model_json_roundtrip(tmp_path):
    data = load_training_data(_write(tmp_path, "f.csv", FEATURES), _write(tmp_path, "t.csv", TRAJ))
    cms = impute_missing_active(cluster_fo(data.beneficiaries, k=2, seed=0))
    write_model(tmp_path / "m.json", cms, data.encoder)
    back, enc = read_model(tmp_path / "m.json")
    assert back == cms and enc == data.encoder
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(ValueError):
        read_model(tmp_path / "bad.json")


def test_run_config_validation(tmp_path):
    cfg = RunConfig.from_dict({"method": "fap", "k": 20, "m": [5, 6]})
    assert cfg.method == "FAP" and cfg.k == 20
    assert cfg.merged(k=None, beta=0.9).beta == 0.9
    with pytest.raises(ConfigError, match="unknown config key"):
        RunConfig.from_dict({"budget": 3})
    for bad in ({"k": 0}, {"beta": 1.0}, {"m": -1}, {"method": "XYZ"}, {"eta": 1.5}):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(bad)
    p = tmp_path / "c.json"
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        RunConfig.from_json(p)
