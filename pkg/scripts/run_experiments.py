"""Run every registered experiment (or a subset) and write CSV/JSON results.

    python scripts/run_experiments.py --out results
    python scripts/run_experiments.py ex3-stealthy --jobs 8 --full-scale
"""
import argparse

from dplab.experiments import REGISTRY, default_config, run_experiment


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("names", nargs="*", default=sorted(REGISTRY), help="experiments to run (default: all)")
    p.add_argument("--out", default="results")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seeds", type=int, help="use seeds 0..N-1 instead of the default")
    p.add_argument("--full-scale", action="store_true", help="best-of-10 restarts")
    args = p.parse_args()
    for name in args.names:
        cfg = default_config(name, args.full_scale)
        if args.seeds is not None:
            cfg.seeds = tuple(range(args.seeds))
        res = run_experiment(cfg, args.out, args.jobs)
        print(f"{name}: {len(res.records)} records, {res.seconds:.1f}s")


if __name__ == "__main__":
    main()
