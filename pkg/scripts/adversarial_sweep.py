"""Normalized reward of Whittle, Myopic and Random as the non-recoverable share x grows.

Usage: python scripts/adversarial_sweep.py [--x 0.2 0.4 0.6 0.8] [--trials 30] [--csv out.csv]
"""
import argparse
import csv
import time

from rmabcalls.simulator import CohortSpec, run_experiment


def sweep(xs, n_arms=1000, trials=30, weeks=40, m=50, beta=0.5, seed=0):
    """x -> ExperimentResult; planners know the true models."""
    out = {}
    for x in xs:
        spec = CohortSpec(n_arms=n_arms, fraction_nonrecoverable=x, history_weeks=0)
        out[x] = run_experiment(spec, ("whittle", "myopic", "random", "csoc"), trials, weeks, m, beta,
                                base_seed=seed)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--x", type=float, nargs="+", default=[0.2, 0.4, 0.6, 0.8])
    ap.add_argument("--n-arms", type=int, default=1000)
    ap.add_argument("--trials", type=int, default=30)
    ap.add_argument("--weeks", type=int, default=40)
    ap.add_argument("--m", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv")
    args = ap.parse_args()
    t0 = time.perf_counter()
    results = sweep(args.x, args.n_arms, args.trials, args.weeks, args.m, seed=args.seed)
    rows = []
    for x, res in results.items():
        d = res.to_dict()["policies"]
        gap, se = res.paired_difference("myopic", "random")
        for p in ("whittle", "myopic", "random"):
            rows.append([x, p, d[p]["mean_normalized_reward"], d[p]["stderr_normalized_reward"]])
        print(f"x={x:.2f} whittle={d['whittle']['mean_normalized_reward']:.1f} "
              f"myopic={d['myopic']['mean_normalized_reward']:.1f} random={d['random']['mean_normalized_reward']:.1f} "
              f"myopic-random={gap:+.2f} (se {se:.2f})")
    print(f"took {time.perf_counter() - t0:.1f}s")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "policy", "normalized_reward", "stderr"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
