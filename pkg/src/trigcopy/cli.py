"""``trigcopy`` command line.

Subcommands: generate, train, eval, sweep, oracle, concentration, lp, heatmap.
Outputs land under ``--out`` (default ``$TRIGCOPY_OUT`` or ``./runs``)::

    manifests/    run manifests (JSON), named by the hash of config + checkpoint
    checkpoints/  binary checkpoints, named by the hash of their bytes
    metrics/      CSV tables and JSON reports
    heatmaps/     text grids and PGM images
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint, sha256_hex
from .config import ConfigError, ExperimentConfig, build_dist
from .datagen import STREAM_OOD, STREAM_V, ood_dataset, train_dataset, write_jsonl
from .diversity import GridTooLargeError, InvalidInstanceError, lp_report, max_sum_ratio
from .evalkit import BLOCKS, eval_in_distribution, eval_ood, export_heatmap, probe_mechanism
from .experiments import concentration, default_workers, run_sweep, write_metrics_csv
from .model import ModelParams
from .oracle import certify_ood, eta_tilde_from, population_stats, population_wkq, population_wv
from .trainer import run_algorithm1


def _out_root(args) -> Path:
    root = Path(args.out or os.environ.get("TRIGCOPY_OUT", "runs"))
    for sub in ("manifests", "checkpoints", "metrics", "heatmaps"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    return root


def _load_config(args, *, eval_block: bool = False) -> ExperimentConfig:
    exp = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    over = {}
    for name in ("N", "N_trg", "L", "eta_V", "eta_KQ", "M_V", "M_KQ", "seed"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    if getattr(args, "reuse", False):
        over["reuse"] = True
    if getattr(args, "dist", None):
        over["dist"] = json.loads(args.dist)
    exp = exp.with_overrides(**over)
    # the sweep section is checked by cmd_sweep once its list flags are applied
    return exp.validate(eval_block=eval_block, sweep_block=False)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2))


def _write_manifest(root: Path, exp: ExperimentConfig, ckpt_sha: str, kind: str, extra: dict, wall: float) -> Path:
    core = {"kind": kind, "config": exp.to_dict(), "checkpoint_sha256": ckpt_sha}
    digest = hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()
    manifest = dict(core, manifest_hash=digest, wall_time_s=wall, version=__version__, **extra)
    path = root / "manifests" / f"{kind}_{digest[:16]}.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def _save_ckpt(root: Path, params: ModelParams, meta: dict) -> tuple[Path, str]:
    tmp = root / "checkpoints" / ".partial"
    sha = save_checkpoint(tmp, params, meta)
    path = root / "checkpoints" / f"{sha[:16]}.ckpt"
    tmp.replace(path)
    return path, sha


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    exp = _load_config(args, eval_block=args.kind == "ood")
    cfg = exp.sampler
    if args.kind == "train":
        seqs = train_dataset(cfg, exp.length_dist(), args.n, exp.train.seed, STREAM_V)
    else:
        seqs = ood_dataset(cfg, exp.eval.ell_min, exp.eval.ell_max, args.n, exp.train.seed, STREAM_OOD)
    meta = {"config": exp.to_dict(), "kind": args.kind, "n": args.n}
    if args.output == "-":
        for s in seqs:
            print(json.dumps(s.to_dict(), sort_keys=True))
    else:
        write_jsonl(args.output, seqs, meta)
        print(args.output)
    return 0


def cmd_train(args) -> int:
    exp = _load_config(args)
    root = _out_root(args)
    t0 = time.perf_counter()
    params = run_algorithm1(exp.sampler, exp.length_dist(), exp.train)
    path, sha = _save_ckpt(root, params, {"kind": "trained", "config": exp.to_dict()})
    probe = probe_mechanism(params, exp.sampler, exp.length_dist())
    manifest = _write_manifest(root, exp, sha, "train", {"checkpoint": path.name, "probe": probe.to_dict()},
                               time.perf_counter() - t0)
    _emit({"checkpoint": str(path), "manifest": str(manifest), "dominant": probe.dominant})
    return 0


def cmd_eval(args) -> int:
    params, meta = load_checkpoint(args.checkpoint)
    exp = _load_config(args) if args.config else ExperimentConfig.from_dict(meta.get("config", {}))
    if 2 * (args.ell_max or exp.eval.ell_max) + 4 > params.L - 1:
        raise ConfigError(f"eval ell_max does not fit the checkpoint's L={params.L}; pass a smaller --ell-max")
    cfg = params.cfg
    ell_min = args.ell_min if args.ell_min is not None else exp.eval.ell_min
    ell_max = args.ell_max if args.ell_max is not None else exp.eval.ell_max
    n = args.n_test or exp.eval.n_test
    seed = args.seed if args.seed is not None else exp.train.seed
    rec = eval_ood(params, cfg, ell_min, ell_max, n, seed)
    dist = exp.length_dist()
    probe = probe_mechanism(params, cfg, dist)
    out = rec.to_dict() | {"dominant_mechanism": probe.dominant,
                           "in_distribution_accuracy": eval_in_distribution(params, cfg, dist, n, seed)}
    if not args.no_write:
        root = _out_root(args)
        ck = sha256_hex(Path(args.checkpoint).read_bytes())[:16]
        table = root / "metrics" / f"eval_{ck}_{ell_min}_{ell_max}_{seed}.csv"
        write_metrics_csv(table, [{
            "ell_min": ell_min, "ell_max": ell_max, "N_trg": cfg.N_trg, "seed": seed,
            "ood_accuracy": rec.ood_accuracy, "pseudo_rate": rec.pseudo_rate,
            "leftmost_rate": rec.leftmost_rate, "dominant_mechanism": probe.dominant,
        }])
        out["table"] = str(table)
    _emit(out)
    return 0


def cmd_sweep(args) -> int:
    exp = _load_config(args)
    if args.n_trg_list:
        exp.sweep.N_trg = args.n_trg_list
    if args.ell_min_list:
        exp.sweep.ell_min = args.ell_min_list
    if args.ell_max_list:
        exp.sweep.ell_max = args.ell_max_list
    if args.seeds:
        exp.sweep.seeds = args.seeds
    exp.validate(eval_block=False)
    root = _out_root(args)
    workers = args.workers or default_workers()
    res = run_sweep(exp, root, workers=workers, force=args.force)
    _emit({"table": str(res.table), "rows": len(res.rows), "computed": res.computed,
           "reused": res.reused, "failures": len(res.failures)})
    return 1 if res.failures else 0


def cmd_oracle(args) -> int:
    exp = _load_config(args)
    cfg, dist = exp.sampler, exp.length_dist()
    root = _out_root(args)
    t0 = time.perf_counter()
    eta_tilde = eta_tilde_from(dist, cfg, exp.train.eta_V, exp.train.eta_KQ)
    kq = population_wkq(dist, cfg, eta_tilde, corrected=args.corrected)
    params = ModelParams(kq.matrix, population_wv(dist, cfg, exp.train.eta_V / cfg.N), cfg.N_trg, cfg.L)
    path, sha = _save_ckpt(root, params, {"kind": "oracle", "config": exp.to_dict(), "corrected": args.corrected})
    cert = certify_ood(dist, cfg, corrected=args.corrected)
    report = {
        "checkpoint": str(path),
        "max_sum_ratio": max_sum_ratio(dist),
        "max_sum_ratio_T": max_sum_ratio(dist, "T"),
        "expected_inv_T": population_stats(dist, cfg.L).expected_inv_T,
        "eta_tilde": eta_tilde,
        "error_bound": kq.error_bound,
        "certificate": cert.to_dict(),
    }
    rpath = root / "metrics" / f"oracle_{sha[:16]}.json"
    rpath.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    _write_manifest(root, exp, sha, "oracle", {"report": rpath.name}, time.perf_counter() - t0)
    _emit(report)
    return 0


def cmd_concentration(args) -> int:
    exp = _load_config(args)
    rep = concentration(exp.sampler, exp.length_dist(), args.m_list, args.seeds or list(range(5)),
                        exp.train.eta_V, exp.train.eta_KQ)
    out = rep.to_dict()
    if not args.no_write:
        root = _out_root(args)
        path = root / "metrics" / f"concentration_{exp.digest()[:12]}.json"
        path.write_text(json.dumps(out, sort_keys=True, indent=2) + "\n")
        out["report"] = str(path)
    _emit(out)
    return 0


def cmd_lp(args) -> int:
    try:
        rep = lp_report(args.n_trg, args.U, args.resolution)
    except (InvalidInstanceError, GridTooLargeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    _emit(rep)
    return 0


def cmd_heatmap(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    root = _out_root(args)
    stem = sha256_hex(Path(args.checkpoint).read_bytes())[:16]
    paths = export_heatmap(params, args.rows, args.cols, root / "heatmaps", stem=stem, image=not args.no_image)
    _emit({"files": [str(p) for p in paths]})
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, *, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--N", type=int)
        p.add_argument("--N-trg", dest="N_trg", type=int)
        p.add_argument("--L", type=int)
        p.add_argument("--dist", help='JSON dist spec, e.g. \'{"family": "uniform", "lo": 3, "hi": 8}\'')
        p.add_argument("--eta-V", dest="eta_V", type=float)
        p.add_argument("--eta-KQ", dest="eta_KQ", type=float)
        p.add_argument("--M-V", dest="M_V", type=int)
        p.add_argument("--M-KQ", dest="M_KQ", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--reuse", action="store_true", help="use the same sequences for both stages")
    p.add_argument("--out", help="output root (default $TRIGCOPY_OUT or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trigcopy", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write sampled sequences as JSONL")
    _common(p)
    p.add_argument("--kind", choices=("train", "ood"), default="train")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--output", default="-", help="file path or - for stdout")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run the two-stage one-step training")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="OOD and in-distribution metrics for a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ell-min", dest="ell_min", type=int)
    p.add_argument("--ell-max", dest="ell_max", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--no-write", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train and evaluate over the (N_trg, ell_min, ell_max, seed) grid")
    _common(p)
    p.add_argument("--n-trg-list", type=int, nargs="+")
    p.add_argument("--ell-min-list", type=int, nargs="+")
    p.add_argument("--ell-max-list", type=int, nargs="+")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--workers", type=int, help="parallel cells (default $TRIGCOPY_WORKERS or 1)")
    p.add_argument("--force", action="store_true", help="recompute cached cells")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="population-limit checkpoint and OOD certificate")
    _common(p)
    p.add_argument("--corrected", action="store_true", help="include the second-order centring correction")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("concentration", help="finite-sample distance to the population weights")
    _common(p)
    p.add_argument("--m-list", type=int, nargs="+", default=[1000, 10000, 100000])
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--no-write", action="store_true")
    p.set_defaults(func=cmd_concentration)

    p = sub.add_parser("lp", help="closed-form LP optimum, brute force and KKT check")
    p.add_argument("--n-trg", type=int, required=True)
    p.add_argument("--U", type=int, required=True)
    p.add_argument("--resolution", type=int, default=60)
    p.set_defaults(func=cmd_lp)

    p = sub.add_parser("heatmap", help="export a W_KQ block as a text grid and PGM image")
    _common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rows", choices=BLOCKS, default="position")
    p.add_argument("--cols", choices=BLOCKS, default="position")
    p.add_argument("--no-image", action="store_true")
    p.set_defaults(func=cmd_heatmap)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
