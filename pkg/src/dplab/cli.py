"""``dplab simulate|attack|detect|experiment``.

Exit codes: 0 success (no detection), 2 at least one test raised an alarm, 1 error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import attacks as atk
from .detection import SuiteConfig, alarm, any_alarm, run_suite, write_report
from .experiments import ExperimentConfig, default_config, resolve_system, run_experiment
from .lti_sim import Dataset, LtiSystem, export_csv, gaussian_input, load_dataset, save_dataset, simulate

EXIT_OK, EXIT_ERROR, EXIT_DETECTED = 0, 1, 2


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    return doc


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1))
    tmp.replace(path)


SIMULATE_KEYS = {"system", "sigma_w", "T", "sigma_u", "x0", "burn_in", "csv"}


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    unknown = set(cfg) - SIMULATE_KEYS
    if unknown:
        raise ValueError(f"unknown simulate config keys: {sorted(unknown)}")
    sys_ = resolve_system(cfg.get("system", "scalar"), cfg.get("sigma_w"))
    T = int(cfg.get("T", 100))
    if T < 1:
        raise ValueError("T must be positive")
    rng = np.random.default_rng(args.seed)
    U = gaussian_input(sys_.m, T, cfg.get("sigma_u", 1.0), rng)
    d, noise = simulate(sys_, U, cfg.get("x0"), rng, int(cfg.get("burn_in", 0)))
    out = Path(args.out)
    save_dataset(out / "dataset.json", d, noise, sys_, seed=args.seed, timestamp=time.time())
    if cfg.get("csv", False):
        export_csv(out / "dataset.csv", d)
    print(out / "dataset.json")
    return EXIT_OK


ATTACK_KEYS = {"kind", "delta", "delta_x", "delta_u", "dist", "n_candidates", "n_restarts", "max_iters",
               "s", "deltas", "sigma_u"}


def _run_attack(d: Dataset, cfg: dict, seed) -> tuple[atk.PoisonDelta, dict]:
    kind = cfg.get("kind", "stealthy")
    delta = float(cfg.get("delta", 0.05))
    budget = atk.BudgetSpec(float(cfg.get("delta_x", delta)), float(cfg.get("delta_u", delta)))
    if kind == "oblivious":
        res = atk.oblivious_random(d, budget, cfg.get("dist", "gaussian"), int(cfg.get("n_candidates", 100)), seed)
    elif kind == "indistinguishable":
        dl = atk.indistinguishable_input(d, cfg.get("sigma_u", 1.0), seed)
        return dl, {"dU": dl.dU.tolist(), "dX": dl.dX.tolist(), "seed": seed}
    elif kind == "mse_max":
        res = atk.mse_max_attack(d, budget, n_restarts=int(cfg.get("n_restarts", 10)), seed=seed)
    elif kind == "stealthy":
        s = int(cfg.get("s", 10))
        spec = atk.StealthyConstraintSpec(cfg["deltas"], s) if "deltas" in cfg else \
            atk.StealthyConstraintSpec.uniform(delta, s)
        opts = atk.StealthyOptions(n_restarts=int(cfg.get("n_restarts", 3)),
                                   max_iters=int(cfg.get("max_iters", 400)), seed=seed)
        res = atk.stealthy_attack(d, spec, opts)
    else:
        raise ValueError(f"unknown attack kind {kind!r}")
    return res.delta, res.to_json()


def cmd_attack(args) -> int:
    cfg = _load_config(args.config)
    unknown = set(cfg) - ATTACK_KEYS
    if unknown:
        raise ValueError(f"unknown attack config keys: {sorted(unknown)}")
    d, doc = load_dataset(args.dataset)
    out = Path(args.out)
    try:
        delta, payload = _run_attack(d, cfg, args.seed)
    except atk.InfeasibleAttackError as exc:
        _write_json(out / "diagnostics.json", {
            "error": str(exc),
            "violations": [None if not np.isfinite(v) else float(v) for v in exc.violations],
            "dU": exc.best.dU.tolist(), "dX": exc.best.dX.tolist(),
        })
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    payload["kind"] = cfg.get("kind", "stealthy")
    _write_json(out / "attack.json", payload)
    system = LtiSystem.from_json(doc["system"]) if "system" in doc else None
    save_dataset(out / "poisoned.json", delta.apply(d), None, system, source=str(args.dataset))
    print(out / "attack.json")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _load_config(args.config)
    d, doc = load_dataset(args.dataset)
    if "sigma_w" not in cfg and "system" in doc:
        cfg["sigma_w"] = doc["system"]["sigma_w"]
    suite = SuiteConfig.from_json(cfg)
    report = run_suite(d, suite)
    out = Path(args.out)
    write_report(report, out / "report.json", out / "report.csv")
    for o in report:
        verdict = ("reject" if o.reject else "accept") + (" ALARM" if alarm(o) else "")
        print(f"{o.name:24s} stat={o.statistic:.6g} p={o.p_value:.4g} {verdict}")
    return EXIT_DETECTED if any_alarm(report) else EXIT_OK


def cmd_experiment(args) -> int:
    cfg = default_config(args.name, args.full_scale)
    if args.config is not None:
        doc = {**_config_fields(cfg), **_load_config(args.config), "name": args.name}
        cfg = ExperimentConfig.from_json(doc)
    if args.seeds is not None:
        cfg.seeds = tuple(range(args.seeds))
    res = run_experiment(cfg, args.out, args.jobs)
    print(f"{cfg.name}: {len(res.records)} records in {res.seconds:.1f}s -> {Path(args.out) / cfg.name}")
    return EXIT_OK


def _config_fields(cfg: ExperimentConfig) -> dict:
    return {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dplab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a dataset")
    s.add_argument("--config")
    s.add_argument("--out", default=".")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("attack", help="poison a dataset")
    a.add_argument("dataset")
    a.add_argument("--config")
    a.add_argument("--out", default=".")
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_attack)

    dt = sub.add_parser("detect", help="run the detection suite")
    dt.add_argument("dataset")
    dt.add_argument("--config")
    dt.add_argument("--out", default=".")
    dt.set_defaults(func=cmd_detect)

    e = sub.add_parser("experiment", help="run a registered experiment")
    e.add_argument("name")
    e.add_argument("--config")
    e.add_argument("--out", default="results")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--seeds", type=int, help="use seeds 0..N-1")
    e.add_argument("--full-scale", action="store_true", help="best-of-10 restarts")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
