"""Registered experiments: input poisoning, residual-energy attacks, stealthy attacks.

Each experiment maps a seed to a list of flat records (one per grid cell and
attack) plus long-format series rows, and writes ``records.csv``,
``series.csv`` and ``summary.json`` under its output directory.
"""
from __future__ import annotations

import csv
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .analysis import alignment_angle
from .attacks import (BudgetSpec, InfeasibleAttackError, StealthyConstraintSpec, StealthyOptions,
                      constraint_values, indistinguishable_input, mse_max_attack, oblivious_random,
                      stealthy_attack)
from .detection import (correlations, leverage_outliers, partial_f_statistic, portmanteau_test,
                        residual_variance_test)
from .lti_sim import (Dataset, LtiSystem, example_benchmark_plant_discrete, example_scalar,
                      gaussian_input, simulate)
from .numerics import f_ppf
from .regression import confidence_ellipse, ls_fit

DELTAS = (0.01, 0.025, 0.05, 0.075, 0.1)


@dataclass
class ExperimentConfig:
    name: str
    system: str | dict = "benchmark"
    T: int = 500
    seeds: tuple[int, ...] = tuple(range(10))
    attack: dict = field(default_factory=dict)
    detection: dict = field(default_factory=dict)
    output_dir: str = "results"

    def __post_init__(self):
        if self.name not in REGISTRY and self.name != "custom":
            raise ValueError(f"unknown experiment {self.name!r}; registered: {sorted(REGISTRY)}")
        self.seeds = tuple(int(s) for s in self.seeds)

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        unknown = set(doc) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**doc)


def resolve_system(spec: str | dict, sigma_w: float | None = None) -> LtiSystem:
    """Named example ("scalar", "benchmark") or an inline system document."""
    if isinstance(spec, dict):
        return LtiSystem.from_json(spec)
    if spec == "scalar":
        return example_scalar(1.0 if sigma_w is None else sigma_w)
    if spec == "benchmark":
        return example_benchmark_plant_discrete(0.1 if sigma_w is None else sigma_w)
    raise ValueError(f"unknown system {spec!r}")


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def _residual_norms(R: np.ndarray) -> np.ndarray:
    return np.linalg.norm(R, axis=0)


def _series(rows: list, seed: int, kind: str, values, **cell) -> None:
    for i, v in enumerate(values):
        rows.append({"seed": seed, **cell, "kind": kind, "index": i, "value": float(v)})


# -- ex1: indistinguishable input -----------------------------------------------

def _ex1_seed(cfg: ExperimentConfig, seed: int) -> tuple[list[dict], list[dict]]:
    sigmas = cfg.attack.get("sigmas", (0.1, 1.0, 10.0))
    horizons = cfg.attack.get("horizons", (30, 100, 1000))
    alpha = cfg.detection.get("alpha", 0.05)
    records, series = [], []
    for i, sigma in enumerate(sigmas):
        sys = example_scalar(sigma)
        for j, T in enumerate(horizons):
            U = gaussian_input(1, T, 1.0, _rng(seed, i, j, 0))
            d, _ = simulate(sys, U, seed=_rng(seed, i, j, 1))
            dp = indistinguishable_input(d, 1.0, _rng(seed, i, j, 2)).apply(d)
            z, d1, d2 = partial_f_statistic(d)
            zp, _, _ = partial_f_statistic(dp)
            rec = {"seed": seed, "sigma": sigma, "T": T, "Z_clean": z, "Z_poisoned": zp,
                   "f_critical": f_ppf(1 - alpha, d1, d2)}
            for tag, data in (("clean", d), ("poisoned", dp)):
                fit = ls_fit(data)
                ell = confidence_ellipse(fit, alpha)
                rec.update({f"a_{tag}": fit.A_hat[0, 0], f"b_{tag}": fit.B_hat[0, 0],
                            f"ell_s11_{tag}": ell.shape[0, 0], f"ell_s12_{tag}": ell.shape[0, 1],
                            f"ell_s22_{tag}": ell.shape[1, 1], f"ell_r2_{tag}": ell.radius2})
            records.append(rec)
    return records, series


def _ex1_default(full_scale: bool) -> ExperimentConfig:
    return ExperimentConfig("ex1-input-poisoning", system="scalar", T=1000, seeds=tuple(range(10)),
                            attack={"kind": "indistinguishable"}, detection={"alpha": 0.05})


# -- ex2: residual-energy maximization ----------------------------------------------

def _detect_row(fit, sys: LtiSystem, s: int, alpha: float) -> dict:
    rv = residual_variance_test(fit, sys.sigma_w, alpha)
    pm = portmanteau_test(correlations(fit.R, s), s, alpha)
    return {"rss": fit.mse, "rv_p": rv.p_value, "rv_reject": int(rv.reject),
            "portmanteau": pm.statistic, "portmanteau_p": pm.p_value, "portmanteau_reject": int(pm.reject)}


def _ex2_seed(cfg: ExperimentConfig, seed: int) -> tuple[list[dict], list[dict]]:
    sys = resolve_system(cfg.system, cfg.attack.get("sigma_w", 0.1))
    deltas = cfg.attack.get("deltas", DELTAS)
    restarts = cfg.attack.get("n_restarts", 3)
    n_candidates = cfg.attack.get("n_candidates", 100)
    alpha = cfg.detection.get("alpha", 0.05)
    s = cfg.detection.get("s", 10)
    d, _ = simulate(sys, gaussian_input(sys.m, cfg.T, 1.0, _rng(seed, 0)), seed=_rng(seed, 1))
    fit = ls_fit(d)
    records, series = [], []
    records.append({"seed": seed, "delta": 0.0, "attack": "none",
                    "shift": float(np.linalg.norm(fit.theta - sys.theta, 2)),
                    "angle": alignment_angle(fit.theta, fit.theta - sys.theta),
                    **_detect_row(fit, sys, s, alpha)})
    _series(series, seed, "residual_norm", _residual_norms(fit.R), delta=0.0, attack="none")
    for k, delta in enumerate(deltas):
        budget = BudgetSpec.uniform(delta)
        attacks = {
            "adaptive": lambda: mse_max_attack(d, budget, n_restarts=restarts, seed=_rng(seed, 2, k)),
            "gaussian": lambda: oblivious_random(d, budget, "gaussian", n_candidates, _rng(seed, 3, k)),
            "uniform": lambda: oblivious_random(d, budget, "uniform", n_candidates, _rng(seed, 4, k)),
        }
        for name, run in attacks.items():
            res = run()
            fp = ls_fit(res.delta.apply(d))
            err = fp.theta - sys.theta
            records.append({
                "seed": seed, "delta": delta, "attack": name,
                "shift": float(np.linalg.norm(err, 2)),
                "angle": alignment_angle(fit.theta, err),
                **_detect_row(fp, sys, s, alpha),
            })
            _series(series, seed, "residual_norm", _residual_norms(fp.R), delta=delta, attack=name)
    return records, series


def _ex2_default(full_scale: bool) -> ExperimentConfig:
    return ExperimentConfig("ex2-mse-max", system="benchmark", T=200, seeds=tuple(range(20)),
                            attack={"sigma_w": 0.1, "deltas": list(DELTAS), "n_restarts": 10 if full_scale else 3,
                                    "n_candidates": 100},
                            detection={"alpha": 0.05, "s": 10})


# -- ex3: stealthy attack -------------------------------------------------------

def _ex3_seed(cfg: ExperimentConfig, seed: int) -> tuple[list[dict], list[dict]]:
    sys = resolve_system(cfg.system, cfg.attack.get("sigma_w", 0.1))
    deltas = cfg.attack.get("deltas", DELTAS)
    restarts = cfg.attack.get("n_restarts", 3)
    max_iters = cfg.attack.get("max_iters", 400)
    alpha = cfg.detection.get("alpha", 0.05)
    s = cfg.detection.get("s", 10)
    d, _ = simulate(sys, gaussian_input(sys.m, cfg.T, 1.0, _rng(seed, 0)), seed=_rng(seed, 1))
    fit = ls_fit(d)
    z_clean = partial_f_statistic(d)[0]
    records, series = [], []
    records.append({"seed": seed, "delta": 0.0, "attack": "none",
                    "shift": float(np.linalg.norm(fit.theta - sys.theta, 2)), "Z": z_clean,
                    "outliers": len(leverage_outliers(fit)), "feasible": 1, "max_violation": 0.0,
                    **_detect_row(fit, sys, s, alpha)})
    _series(series, seed, "residual_norm", _residual_norms(fit.R), delta=0.0, attack="none")
    _series(series, seed, "leverage", fit.leverage, delta=0.0, attack="none")
    for k, delta in enumerate(deltas):
        spec = StealthyConstraintSpec.uniform(delta, s)
        opts = StealthyOptions(n_restarts=restarts, max_iters=max_iters, seed=_rng(seed, 2, k))
        runs = {}
        try:
            runs["stealthy"] = stealthy_attack(d, spec, opts)
        except InfeasibleAttackError:
            records.append({"seed": seed, "delta": delta, "attack": "stealthy", "feasible": 0})
        runs["mse_max"] = mse_max_attack(d, BudgetSpec.uniform(delta), n_restarts=restarts, seed=_rng(seed, 3, k))
        for name, res in runs.items():
            dp = res.delta.apply(d)
            fp = ls_fit(dp)
            g = constraint_values(d, res.delta, s)
            rec = {"seed": seed, "delta": delta, "attack": name,
                   "shift": float(np.linalg.norm(fp.theta - sys.theta, 2)),
                   "shift_A": float(np.linalg.norm(fp.A_hat - fit.A_hat, 2)),
                   "shift_B": float(np.linalg.norm(fp.B_hat - fit.B_hat, 2)),
                   "Z": partial_f_statistic(dp)[0],
                   "outliers": len(leverage_outliers(fp)),
                   "feasible": int(bool(np.all(np.nan_to_num(g) <= np.array(spec.deltas) + 1e-6))),
                   "max_violation": float(np.nanmax(g - np.array(spec.deltas))),
                   **_detect_row(fp, sys, s, alpha)}
            rec.update({f"g{i}": float(v) for i, v in enumerate(g)})
            records.append(rec)
            _series(series, seed, "residual_norm", _residual_norms(fp.R), delta=delta, attack=name)
            _series(series, seed, "leverage", fp.leverage, delta=delta, attack=name)
    return records, series


def _ex3_default(full_scale: bool) -> ExperimentConfig:
    return ExperimentConfig("ex3-stealthy", system="benchmark", T=500, seeds=tuple(range(10)),
                            attack={"sigma_w": 0.1, "deltas": list(DELTAS), "n_restarts": 10 if full_scale else 3,
                                    "max_iters": 400},
                            detection={"alpha": 0.05, "s": 10})


REGISTRY: dict[str, tuple[Callable[[bool], ExperimentConfig], Callable]] = {
    "ex1-input-poisoning": (_ex1_default, _ex1_seed),
    "ex2-mse-max": (_ex2_default, _ex2_seed),
    "ex3-stealthy": (_ex3_default, _ex3_seed),
}


def default_config(name: str, full_scale: bool = False) -> ExperimentConfig:
    if name not in REGISTRY:
        raise ValueError(f"unknown experiment {name!r}; registered: {sorted(REGISTRY)}")
    return REGISTRY[name][0](full_scale)


# -- running and persistence ------------------------------------------------------

def _run_one(args):
    cfg, seed = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return REGISTRY[cfg.name][1](cfg, seed)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[dict]
    series: list[dict]
    summary: dict
    seconds: float


def _cell_key(rec: dict) -> tuple:
    return tuple((k, rec[k]) for k in ("sigma", "T", "delta", "attack") if k in rec)


def summarize(records: list[dict]) -> list[dict]:
    """Median and IQR of every numeric column, grouped by grid cell."""
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        groups.setdefault(_cell_key(r), []).append(r)
    out = []
    for key, rows in groups.items():
        entry = dict(key)
        entry["count"] = len(rows)
        cols = sorted({c for r in rows for c in r} - set(entry) - {"seed"})
        for c in cols:
            vals = np.array([r.get(c, np.nan) for r in rows], dtype=float)
            vals = vals[np.isfinite(vals)]
            if vals.size == 0:
                continue
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            entry[c] = {"median": float(med), "iqr": float(q3 - q1), "n": int(vals.size)}
        out.append(entry)
    return out


def _write_csv(path: Path, rows: list[dict]) -> None:
    cols: list[str] = []
    for r in rows:
        cols.extend(c for c in r if c not in cols)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, restval="")
        w.writeheader()
        w.writerows(rows)
    tmp.replace(path)


def _write_json(path: Path, doc) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1, default=float))
    tmp.replace(path)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None, jobs: int = 1) -> ExperimentResult:
    """Run every seed (concurrently up to ``jobs``) and persist the tables."""
    if cfg.name == "custom":
        raise ValueError("custom experiments need a registered pipeline; pick one of " + ", ".join(REGISTRY))
    t0 = time.perf_counter()
    work = [(cfg, s) for s in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_one, work))
    else:
        parts = [_run_one(w) for w in work]
    records = [r for rec, _ in parts for r in rec]
    series = [r for _, ser in parts for r in ser]
    summary = {"name": cfg.name, "config": asdict(cfg), "cells": summarize(records)}
    seconds = time.perf_counter() - t0
    summary["seconds"] = seconds
    out = Path(out_dir if out_dir is not None else cfg.output_dir) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "records.csv", records)
    if series:
        _write_csv(out / "series.csv", series)
    _write_json(out / "summary.json", summary)
    return ExperimentResult(cfg, records, series, summary, seconds)
