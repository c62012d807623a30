"""Command-line pipeline: generate -> train -> index -> plan / simulate -> analyze.

Exit codes: 0 success, 1 usage, 2 data, 3 numerical. Failures print one line
to stderr of the form ``ERROR {"code": 2, "kind": "data", "message": "..."}``.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .clustering import (
    BucketRules, fit_clusters, evaluate_clustering, impute_missing_active, passive_estimates,
    _per_beneficiary_counts,
)
from .config import ConfigError, RunConfig
from .core import TransitionModelError
from .dataio import DataError
from .metrics import (
    RankDeficientError, drop_cumulative_series, ols_regression, percent_reduction, selection_audit,
)
from .policies import CohortState, canonical_policy, eligible_arms, make_policy, write_call_list
from .simulator import (
    ArchetypeRanges, CohortSpec, generate_cohort, read_trial_logs, run_experiment, write_trial_logs,
)
from .whittle import BracketError, ConvergenceError, IndexTable, precompute_index_table

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv_list(text: str) -> list:
    return [t.strip() for t in text.split(",") if t.strip()]


def _policy(name: str) -> str:
    try:
        return canonical_policy(name)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _budget_arg(text: str):
    vals = [int(v) for v in _csv_list(text)]
    return vals[0] if len(vals) == 1 else vals


def _base_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if getattr(args, "config", None) else RunConfig()
    over = {}
    for name in ("method", "k", "beta", "m", "eta", "weeks", "trials", "seed", "n_trees", "bucket_rules"):
        if hasattr(args, name):
            over[name] = getattr(args, name)
    return cfg.merged(**over)


# ---------------------------------------------------------------------------
# generate

def cmd_generate(args) -> int:
    ranges = ArchetypeRanges.heterogeneous() if args.heterogeneous else ArchetypeRanges()
    spec = CohortSpec(n_arms=args.n, fraction_nonrecoverable=args.x, feature_informativeness=args.informativeness,
                      history_weeks=args.history_weeks, ranges=ranges, seed=args.seed)
    cohort = generate_cohort(spec)
    ids = [b.id for b in cohort.beneficiaries]
    dataio.write_features(args.features_out, ids, cohort.raw_features,
                          [b.enrollment_date for b in cohort.beneficiaries])
    dataio.write_trajectories(args.trajectories_out, cohort.beneficiaries)
    if args.states_out:
        dataio.write_states(args.states_out, ids, cohort.initial_states)
    if args.truth_out:
        with open(args.truth_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["beneficiary_id", "archetype", "p_passive_ne_e", "p_passive_e_e",
                        "p_active_ne_e", "p_active_e_e"])
            for i, bid in enumerate(ids):
                t = cohort.tensors[i]
                w.writerow([bid, "nonrecoverable" if cohort.archetypes[i] else "self_correcting",
                            *[repr(float(v)) for v in (t[0, 0, 1], t[0, 1, 1], t[1, 0, 1], t[1, 1, 1])]])
    return EXIT_OK


def _read_truth(path, ids) -> np.ndarray:
    fh, reader = dataio._open_csv(path, ("beneficiary_id", "p_passive_ne_e", "p_passive_e_e"))
    with fh:
        truth = {r["beneficiary_id"]: (float(r["p_passive_ne_e"]), float(r["p_passive_e_e"])) for r in reader}
    missing = [b for b in ids if b not in truth]
    if missing:
        raise DataError([dataio.Diagnostic(str(path), 0, f"no ground truth for {missing[:5]}")])
    return np.array([truth[b] for b in ids])


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    cfg = _base_config(args)
    data = dataio.load_training_data(args.features, args.trajectories)
    rules = None
    if cfg.bucket_rules:
        with open(cfg.bucket_rules, encoding="utf-8") as fh:
            rules = json.load(fh)
    kw = {"n_trees": cfg.n_trees} if cfg.method == "PPF" else {}
    cms = fit_clusters(cfg.method, data.beneficiaries, cfg.k, seed=cfg.seed, rules=rules, **kw)
    if args.truth:
        truth, ref = _read_truth(args.truth, [b.id for b in data.beneficiaries]), "ground_truth"
    else:
        truth, ref = passive_estimates(_per_beneficiary_counts(data.beneficiaries)), "empirical"
    ok = ~np.isnan(truth).any(1)
    rmse, size_std = evaluate_clustering(cms, truth[ok], cms.labels[ok]) if ok.any() else (None, None)
    cms = impute_missing_active(cms)
    cms.meta.update({
        "seed": cfg.seed, "n_beneficiaries": len(data.beneficiaries),
        "evaluation": {"rmse": rmse, "size_std": size_std, "reference": ref},
    })
    dataio.write_model(args.out, cms, data.encoder)
    return EXIT_OK


# ---------------------------------------------------------------------------
# index

def cmd_index(args) -> int:
    cms, _ = dataio.read_model(args.model)
    precompute_index_table(cms, args.beta).to_csv(args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# plan

def _load_cohort_for_planning(args, cms, encoder):
    if bool(args.states) == bool(args.listening):
        raise UsageError("plan needs exactly one of --states or --listening")
    if args.states:
        snap = dataio.read_states(args.states)
    else:
        recs, _ = dataio.read_listening_records(args.listening)
        start = dataio.parse_date(args.week_start) if args.week_start else None
        ids, weekly = dataio.derive_weekly_states(recs, start)
        snap = dataio.CohortSnapshot(ids, weekly[:, -1].astype(np.int64), np.full(len(ids), np.inf))
    feats, diags = dataio.read_features(args.features)
    if diags:
        raise DataError(diags)
    pos = {b: i for i, b in enumerate(feats.ids)}
    orphans = [b for b in snap.ids if b not in pos]
    if orphans:
        raise DataError([dataio.Diagnostic(str(args.features), 0, f"no feature row for {b!r}") for b in orphans])
    sub = feats.subset(snap.ids)
    if encoder is None:
        raise DataError([dataio.Diagnostic(str(args.model), 0, "model JSON carries no feature encoder")])
    x = encoder.transform(sub.columns)
    clusters = cms.assign(x)
    enrollment = np.array([d.toordinal() for d in sub.enrollment], dtype=float)
    return snap, CohortState(snap.states, clusters, enrollment, snap.weeks_since_last_call, args.week_index)


def cmd_plan(args) -> int:
    cms, encoder = dataio.read_model(args.model)
    policy = _policy(args.policy)
    snap, c = _load_cohort_for_planning(args, cms, encoder)
    table = None
    if policy == "whittle":
        table = IndexTable.from_csv(args.index) if args.index else precompute_index_table(cms, args.beta)
        if table.k != cms.k:
            raise DataError([dataio.Diagnostic(str(args.index), 0,
                                               f"index table has {table.k} clusters, model has {cms.k}")])
    tensors = cms.tensor() if policy == "myopic" else None
    pol = make_policy(policy, table, tensors)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, args.week_index, 2]))
    chosen = pol.select(c, args.m, eligible_arms(c, args.eta), rng)
    write_call_list(args.out, args.week_index, chosen, policy, c, table, snap.ids)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args) -> int:
    cfg = _base_config(args)
    policies = [_policy(p) for p in _csv_list(args.policies)]
    model_set = table = None
    if args.model:
        model_set, _ = dataio.read_model(args.model)
        if args.index:
            table = IndexTable.from_csv(args.index)
    elif args.index:
        raise UsageError("--index needs --model")
    ranges = ArchetypeRanges.heterogeneous() if args.heterogeneous else ArchetypeRanges()
    runs, plot_rows = [], []
    xs = [float(v) for v in _csv_list(args.x)]
    for x in xs:
        spec = CohortSpec(n_arms=args.n_arms, fraction_nonrecoverable=x,
                          feature_informativeness=args.informativeness,
                          history_weeks=0, ranges=ranges)
        res = run_experiment(spec, policies, cfg.trials, cfg.weeks, cfg.m, cfg.beta, cfg.eta, cfg.seed,
                             model_set, table, keep_logs=bool(args.logs_dir))
        d = res.to_dict()
        d["x"] = x
        runs.append(d)
        for p in policies:
            e = d["policies"][p]
            plot_rows.append([x, p, e["mean_normalized_reward"], e["stderr_normalized_reward"]])
        if args.logs_dir:
            out = Path(args.logs_dir)
            out.mkdir(parents=True, exist_ok=True)
            for p in policies:
                write_trial_logs(out / f"logs_x{x:g}_{p}.csv", res.logs[p])
    dataio.dump_json(args.out, {"runs": runs})
    if args.plot_csv:
        with open(args.plot_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "policy", "normalized_reward", "stderr"])
            for x, p, v, se in plot_rows:
                w.writerow([repr(x), p, "" if v is None else repr(v), "" if se is None else repr(se)])
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze

def _policy_paths(items) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--logs expects POLICY=PATH, got {item!r}")
        name, path = item.split("=", 1)
        out[_policy(name)] = path
    return out


def _mean_series(logs) -> np.ndarray:
    series = [drop_cumulative_series(lg) for lg in logs]
    if len({len(s) for s in series}) != 1:
        raise DataError([dataio.Diagnostic("logs", 0, "trials have different horizons")])
    return np.mean(series, axis=0)


def _regression_from_observations(args) -> dict:
    fh, reader = dataio._open_csv(args.observations, (args.outcome, args.treatment))
    covs = [c for c in reader.fieldnames if c not in (args.outcome, args.treatment, "beneficiary_id")]
    y, t, x = [], [], []
    with fh:
        for line, row in enumerate(reader, start=2):
            try:
                y.append(float(row[args.outcome]))
                t.append(float(row[args.treatment]))
                x.append([float(row[c]) for c in covs])
            except (TypeError, ValueError) as exc:
                raise DataError([dataio.Diagnostic(str(args.observations), line, f"non-numeric value: {exc}")])
    res = ols_regression(np.array(y), np.array(t), np.array(x).reshape(len(y), len(covs)), covs)
    return res.to_dict()


def cmd_analyze(args) -> int:
    if not args.logs and not args.observations:
        raise UsageError("analyze needs --logs and/or --observations")
    summary = {}
    if args.logs:
        paths = _policy_paths(args.logs)
        logs = {p: read_trial_logs(path, p, args.beta) for p, path in paths.items()}
        series = {p: _mean_series(v) for p, v in logs.items()}
        policies = {}
        for p, lg in logs.items():
            audit = selection_audit(lg)
            entry = {
                "trials": len(lg),
                "mean_cumulative_drops": float(series[p][-1]),
                "first_week_calls": audit.first_week_calls,
                "first_week_ne_share": audit.first_week_ne_share,
                "conversion_share": audit.conversion_share,
                "weekly_selection": [
                    [{"cluster": c, "state": s, "calls": n} for (c, s), n in sorted(wk.items())]
                    for wk in audit.weekly
                ],
            }
            if "csoc" in series:
                entry["drops_prevented"] = float(series["csoc"][-1] - series[p][-1])
                ctrl = float(series["csoc"][-1])
                entry["percent_reduction"] = percent_reduction(float(series[p][-1]), ctrl) if ctrl else None
            policies[p] = entry
        summary["policies"] = policies
        if args.metrics_out:
            if "csoc" not in series:
                raise UsageError("drops-prevented series needs a csoc log (--logs csoc=PATH)")
            with open(args.metrics_out, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["week", "policy", "drops_prevented"])
                for p in sorted(series):
                    for t, v in enumerate(series["csoc"] - series[p]):
                        w.writerow([t, p, repr(float(v))])
    if args.observations:
        summary["regression"] = _regression_from_observations(args)
    dataio.dump_json(args.out, summary)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rmabcalls", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate", help="write a synthetic training cohort")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--x", type=float, default=0.5, help="fraction of non-recoverable arms")
    g.add_argument("--informativeness", type=float, default=1.0)
    g.add_argument("--history-weeks", type=int, default=40)
    g.add_argument("--heterogeneous", action="store_true", help="spread passive dynamics widely")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--features-out", required=True)
    g.add_argument("--trajectories-out", required=True)
    g.add_argument("--states-out")
    g.add_argument("--truth-out")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="cluster, evaluate and impute; write model JSON")
    t.add_argument("--features", required=True)
    t.add_argument("--trajectories", required=True)
    t.add_argument("--method", type=str.upper, choices=("FO", "FAP", "FPP", "PPF"))
    t.add_argument("--k", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--n-trees", dest="n_trees", type=int)
    t.add_argument("--bucket-rules", dest="bucket_rules")
    t.add_argument("--truth", help="ground-truth CSV for the RMSE evaluation")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("index", help="precompute the Whittle index table")
    i.add_argument("--model", required=True)
    i.add_argument("--beta", type=float, default=0.5)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_index)

    pl = sub.add_parser("plan", help="choose this week's calls")
    pl.add_argument("--model", required=True)
    pl.add_argument("--features", required=True)
    pl.add_argument("--states")
    pl.add_argument("--listening")
    pl.add_argument("--week-start")
    pl.add_argument("--index")
    pl.add_argument("--policy", default="whittle")
    pl.add_argument("--m", type=int, required=True)
    pl.add_argument("--eta", type=int, default=4)
    pl.add_argument("--beta", type=float, default=0.5)
    pl.add_argument("--week-index", type=int, default=0)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plan)

    s = sub.add_parser("simulate", help="multi-trial policy comparison on synthetic cohorts")
    s.add_argument("--x", default="0.5", help="comma-separated non-recoverable fractions")
    s.add_argument("--n-arms", type=int, default=1000)
    s.add_argument("--informativeness", type=float, default=1.0)
    s.add_argument("--heterogeneous", action="store_true")
    s.add_argument("--policies", default=",".join(("whittle", "myopic", "random", "csoc")))
    s.add_argument("--trials", type=int)
    s.add_argument("--weeks", type=int)
    s.add_argument("--m", type=_budget_arg)
    s.add_argument("--beta", type=float)
    s.add_argument("--eta", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--model")
    s.add_argument("--index")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--plot-csv")
    s.add_argument("--logs-dir")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="engagement-drop metrics and treatment regression")
    a.add_argument("--logs", action="append", default=[], metavar="POLICY=PATH")
    a.add_argument("--beta", type=float, default=0.5)
    a.add_argument("--metrics-out")
    a.add_argument("--observations")
    a.add_argument("--outcome", default="cumulative_drops")
    a.add_argument("--treatment", default="treatment")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)
    return p


def _fail(code: int, kind: str, message: str) -> int:
    print("ERROR " + json.dumps({"code": code, "kind": kind, "message": message}, sort_keys=True),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except (BracketError, ConvergenceError, RankDeficientError, ZeroDivisionError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERICAL, "numerical", str(exc))
    except (DataError, TransitionModelError, OSError, ValueError, KeyError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))


if __name__ == "__main__":
    sys.exit(main())
