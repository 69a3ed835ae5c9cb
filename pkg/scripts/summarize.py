"""Print per-cell medians from an experiment's summary.json.

    python scripts/summarize.py results/ex3-stealthy/summary.json shift rv_reject portmanteau_reject
"""
import argparse
import json


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("summary")
    p.add_argument("fields", nargs="*", default=["shift"])
    args = p.parse_args()
    doc = json.load(open(args.summary))
    print(f"{'delta':>7} {'attack':>10} " + " ".join(f"{f:>18}" for f in args.fields))
    for cell in doc["cells"]:
        vals = [f"{cell[f]['median']:18.4g}" if f in cell else f"{'-':>18}" for f in args.fields]
        print(f"{cell.get('delta', ''):>7} {cell.get('attack', ''):>10} " + " ".join(vals))


if __name__ == "__main__":
    main()
