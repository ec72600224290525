"""Experiment drivers shared by the CLI and the scripts: sweeps and concentration."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .datagen import STREAM_KQ, STREAM_V, LengthDistribution, SamplerConfig, SequenceBatch, train_dataset
from .evalkit import eval_ood, probe_mechanism
from .oracle import population_wkq_linear, population_wv
from .trainer import TrainConfig, one_step, run_algorithm1

METRIC_COLUMNS = (
    "ell_min", "ell_max", "N_trg", "seed",
    "ood_accuracy", "pseudo_rate", "leftmost_rate", "dominant_mechanism",
)


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def run_cell(N: int, N_trg: int, L: int, ell_min: int, ell_max: int, seed: int,
             train: TrainConfig, n_test: int) -> dict:
    """Train on ``Unif[ell_min..ell_max]`` and score on the matching OOD sampler."""
    cfg = SamplerConfig(N, N_trg, L)
    dist = LengthDistribution.uniform(ell_min, ell_max)
    params = run_algorithm1(cfg, dist, replace(train, seed=seed))
    rec = eval_ood(params, cfg, ell_min, ell_max, n_test, seed)
    probe = probe_mechanism(params, cfg, dist)
    return {
        "ell_min": ell_min, "ell_max": ell_max, "N_trg": N_trg, "seed": seed,
        "ood_accuracy": rec.ood_accuracy, "pseudo_rate": rec.pseudo_rate,
        "leftmost_rate": rec.leftmost_rate, "dominant_mechanism": probe.dominant,
    }


def _cell_job(args: dict) -> tuple[dict, dict | None, str | None]:
    try:
        return args, run_cell(**{k: v for k, v in args.items() if k != "path"}), None
    except Exception:  # recorded per cell; the sweep carries on
        return args, None, traceback.format_exc()


@dataclass
class SweepResult:
    table: Path
    rows: list[dict]
    failures: list[dict]
    computed: int
    reused: int


def run_sweep(exp: ExperimentConfig, out_root: str | Path, *, workers: int = 1, force: bool = False) -> SweepResult:
    """Every ``(N_trg, ell_min < ell_max, seed)`` cell; finished cells are cached and skipped.

    Rows are written in canonical cell order regardless of completion order,
    so the table is byte-identical across reruns and worker counts.
    """
    out_root = Path(out_root)
    cell_dir = out_root / "metrics" / "cells"
    cell_dir.mkdir(parents=True, exist_ok=True)
    base = {"N": exp.N, "L": exp.L, "train": exp.train.to_dict(), "n_test": exp.eval.n_test}
    jobs, done = [], {}
    for n_trg, lo, hi, seed in exp.sweep.cells():
        key = dict(base, N_trg=n_trg, ell_min=lo, ell_max=hi, seed=seed)
        path = cell_dir / f"{_digest(key)[:16]}.json"
        if path.exists() and not force:
            done[path] = json.loads(path.read_text())
            continue
        jobs.append({
            "N": exp.N, "N_trg": n_trg, "L": exp.L, "ell_min": lo, "ell_max": hi, "seed": seed,
            "train": exp.train, "n_test": exp.eval.n_test, "path": str(path),
        })
    failures = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]
    for args, row, err in results:
        if row is None:
            failures.append({k: args[k] for k in ("N_trg", "ell_min", "ell_max", "seed")} | {"error": err})
            continue
        Path(args["path"]).write_text(json.dumps(row, sort_keys=True))
        done[Path(args["path"])] = row

    order = {c: i for i, c in enumerate(exp.sweep.cells())}
    rows = sorted(done.values(), key=lambda r: order[(r["N_trg"], r["ell_min"], r["ell_max"], r["seed"])])
    table = out_root / "metrics" / f"sweep_{exp.digest()[:12]}.csv"
    write_metrics_csv(table, rows)
    if failures:
        with open(table.with_suffix(".failures.jsonl"), "w") as fh:
            for f in failures:
                fh.write(json.dumps(f, sort_keys=True) + "\n")
    return SweepResult(table, rows, failures, len(jobs) - len(failures), len(done) - (len(jobs) - len(failures)))


def write_metrics_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in METRIC_COLUMNS})


def read_metrics_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("ell_min", "ell_max", "N_trg", "seed"):
            r[k] = int(r[k])
        for k in ("ood_accuracy", "pseudo_rate", "leftmost_rate"):
            r[k] = float(r[k])
    return rows


def aggregate(rows: list[dict], key=("N_trg", "ell_min", "ell_max")) -> dict[tuple, dict[str, float]]:
    """Seed-averaged rates per cell."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in key), []).append(r)
    return {
        k: {m: float(np.mean([r[m] for r in g])) for m in ("ood_accuracy", "pseudo_rate", "leftmost_rate")}
        for k, g in sorted(groups.items())
    }


def default_workers() -> int:
    return max(1, int(os.environ.get("TRIGCOPY_WORKERS", "1")))


# ---------------------------------------------------------------------------
# concentration


@dataclass
class ConcentrationReport:
    m_list: list[int]
    err_V: list[float]  # seed-averaged Frobenius errors
    err_KQ: list[float]
    slope_V: float
    slope_KQ: float
    n_seeds: int

    def to_dict(self) -> dict:
        return {
            "M": self.m_list, "err_V": self.err_V, "err_KQ": self.err_KQ,
            "slope_V": self.slope_V, "slope_KQ": self.slope_KQ, "n_seeds": self.n_seeds,
        }


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if (y <= 0).any():
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def concentration(cfg: SamplerConfig, dist: LengthDistribution, m_list: list[int], seeds: list[int],
                  eta_V: float = 1.0, eta_KQ: float = 1.0) -> ConcentrationReport:
    """Frobenius distance between one-step weights from ``M`` samples and the population limit.

    Stage two uses the uniform-prediction gradient, whose expectation the
    oracle evaluates exactly, so the only gap left is sampling noise.
    """
    W_V_pop = population_wv(dist, cfg, eta_V / cfg.N)
    W_KQ_pop = population_wkq_linear(dist, cfg, eta_V, eta_KQ)
    err_V, err_KQ = [], []
    for M in m_list:
        ev, ek = [], []
        for s in seeds:
            bv = SequenceBatch.from_sequences(train_dataset(cfg, dist, M, s, STREAM_V))
            bk = SequenceBatch.from_sequences(train_dataset(cfg, dist, M, s, STREAM_KQ))
            p = one_step(bv, bk, cfg, eta_V, eta_KQ, linearize=True)
            ev.append(np.linalg.norm(p.W_V - W_V_pop))
            ek.append(np.linalg.norm(p.W_KQ - W_KQ_pop))
        err_V.append(float(np.mean(ev)))
        err_KQ.append(float(np.mean(ek)))
    return ConcentrationReport(list(m_list), err_V, err_KQ, loglog_slope(m_list, err_V),
                               loglog_slope(m_list, err_KQ), len(seeds))
