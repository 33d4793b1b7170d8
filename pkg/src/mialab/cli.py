"""Command-line harness: train-shadows, attack, eval, compare.

Every command writes its outputs plus a JSON manifest embedding the
resolved configuration and SHA-256 hashes of the produced files. Exit
code is 0 on success; failures print one machine-parseable line of the
form ``error:<ErrorClass>: <message>`` and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .attacks import ScoreTable, run_attack
from .config import ExperimentConfig, load_config, write_manifest
from .errors import ConfigError, FingerprintMismatchError, MialabError, OutputExistsError
from .farm import build_farm, hold_out_target, load_farm, save_farm
from .metrics import read_report_csv, summarize, write_report_csv, write_roc_csv
from .nn import ArchDescriptor
from .rng import TAG_ATTACK, TAG_TARGET_CHOICE, TAG_TARGET_SAMPLE, derive_seed, substream
from .training import record_accuracy

FPR_TARGET = 0.01
METRIC_AUC = "auc"
METRIC_TPR = "tpr_at_fpr_0.01"


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _ensure_out(out_dir, names, force: bool) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in names:
        target = out / name
        if target.exists() and not force:
            raise OutputExistsError(f"{target} exists; pass --force to overwrite")
    return out


def _resolve_arch(cfg: ExperimentConfig, dataset) -> ArchDescriptor:
    return ArchDescriptor(dataset.input_dim, cfg.hidden_dims, dataset.num_classes, cfg.activation)


def cmd_train_shadows(args) -> None:
    cfg = load_config(args.config)
    dataset = cfg.dataset.materialize()
    out = _ensure_out(args.out, ["farm.bin", "train_manifest.json"], args.force)
    arch = _resolve_arch(cfg, dataset)
    start = time.perf_counter()
    farm = build_farm(dataset, cfg.n_models, arch, cfg.train, cfg.master_seed, jobs=args.jobs)
    wall = time.perf_counter() - start
    farm_path = out / "farm.bin"
    save_farm(farm, farm_path)
    models = []
    for i, rec in enumerate(farm.records):
        models.append(
            {
                "index": i,
                "seed": rec.seed,
                "train_accuracy": record_accuracy(rec, dataset, np.flatnonzero(farm.splits[i])),
                "test_accuracy": record_accuracy(rec, dataset, np.flatnonzero(~farm.splits[i])),
            }
        )
    write_manifest(
        out / "train_manifest.json",
        {
            "command": "train-shadows",
            "resolved_config": cfg.to_dict(),
            "dataset_fingerprint": dataset.fingerprint(),
            "models": models,
            "outputs": {"farm.bin": _sha256(farm_path)},
            "wall_time_s": wall,
        },
    )
    print(f"trained {farm.n_models} models -> {farm_path}")


def _run_attack_seed(config_dict: dict, farm_path: str, run_seed: int):
    """One attack run: pick a target model, sample balanced targets, score."""
    cfg = ExperimentConfig.from_dict(config_dict)
    dataset = cfg.dataset.materialize()
    farm = load_farm(farm_path)
    if farm.fingerprint != dataset.fingerprint():
        raise FingerprintMismatchError(
            f"farm fingerprint {farm.fingerprint:#x} does not match dataset "
            f"fingerprint {dataset.fingerprint():#x}"
        )
    target_model = int(substream(cfg.master_seed, TAG_TARGET_CHOICE, run_seed).integers(farm.n_models))
    truth = farm.splits[target_model]
    oracle, shadows = hold_out_target(farm, target_model)

    rng = substream(cfg.master_seed, TAG_TARGET_SAMPLE, run_seed, cfg.targets.seed)
    members = np.flatnonzero(truth)
    nonmembers = np.flatnonzero(~truth)
    n_member = (cfg.targets.count + 1) // 2
    n_nonmember = cfg.targets.count // 2
    if n_member > members.size or n_nonmember > nonmembers.size:
        raise ConfigError(
            f"cannot sample {n_member}/{n_nonmember} member/non-member targets from "
            f"{members.size}/{nonmembers.size} available"
        )
    picked_members = np.sort(rng.choice(members, n_member, replace=False))
    picked_non = np.sort(rng.choice(nonmembers, n_nonmember, replace=False))
    targets = [(int(i), True) for i in picked_members] + [(int(i), False) for i in picked_non]

    table = run_attack(
        dataset, oracle, shadows, targets, cfg.method, cfg.mode, cfg.canary,
        derive_seed(cfg.master_seed, TAG_ATTACK, run_seed),
    )
    info = {
        "seed": run_seed,
        "target_model_index": target_model,
        "n_targets": len(targets),
        "oracle_queries": oracle.query_count,
        "target_param_reads": oracle.hidden_param_reads,
        "in_model_accesses": table.in_model_accesses,
    }
    return table, info


def cmd_attack(args) -> None:
    cfg = load_config(args.config)
    score_names = [f"scores_seed{s}.csv" for s in cfg.seeds]
    out = _ensure_out(args.out, score_names + ["attack_manifest.json"], args.force)
    start = time.perf_counter()
    jobs = max(1, args.jobs)
    runs = []
    if jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_run_attack_seed, cfg.to_dict(), str(args.farm), s) for s in cfg.seeds
            ]
            runs = [f.result() for f in futures]
    else:
        runs = [_run_attack_seed(cfg.to_dict(), str(args.farm), s) for s in cfg.seeds]
    outputs, infos = {}, []
    for (table, info), s, name in zip(runs, cfg.seeds, score_names):
        table.write_csv(out / name)
        outputs[name] = _sha256(out / name)
        infos.append(info)
    write_manifest(
        out / "attack_manifest.json",
        {
            "command": "attack",
            "resolved_config": cfg.to_dict(),
            "farm": {"path": str(args.farm), "sha256": _sha256(args.farm)},
            "runs": infos,
            "outputs": outputs,
            "wall_time_s": time.perf_counter() - start,
        },
    )
    print(f"wrote {len(score_names)} score tables -> {out}")


def _seed_of(path: Path) -> int:
    match = re.search(r"seed(\d+)", path.stem)
    if not match:
        raise ConfigError(f"cannot infer run seed from file name {path.name!r}")
    return int(match.group(1))


def cmd_eval(args) -> None:
    tables = {}
    for raw in args.scores:
        path = Path(raw)
        seed = _seed_of(path)
        if seed in tables:
            raise ConfigError(f"duplicate run seed {seed} among score tables")
        tables[seed] = (path, ScoreTable.read_csv(path))
    roc_names = [f"roc_seed{s}.csv" for s in tables]
    out = _ensure_out(args.out, ["report.csv", "eval_manifest.json"] + roc_names, args.force)
    per_seed = {}
    outputs = {}
    for seed, (path, table) in sorted(tables.items()):
        summary = summarize(table.scores(), table.labels(), (FPR_TARGET,))
        per_seed[seed] = {METRIC_AUC: summary.auc, METRIC_TPR: summary.tpr_at[FPR_TARGET]}
        roc_name = f"roc_seed{seed}.csv"
        write_roc_csv(out / roc_name, summary.fpr, summary.tpr)
        outputs[roc_name] = _sha256(out / roc_name)
    write_report_csv(out / "report.csv", per_seed)
    outputs["report.csv"] = _sha256(out / "report.csv")
    write_manifest(
        out / "eval_manifest.json",
        {
            "command": "eval",
            "inputs": {str(p): _sha256(p) for p, _ in tables.values()},
            "metrics": {str(s): m for s, m in per_seed.items()},
            "outputs": outputs,
        },
    )
    print(f"wrote report.csv and {len(roc_names)} ROC files -> {out}")


def cmd_compare(args) -> None:
    paths = [Path(p) for p in args.reports]
    names = ["lira", "canary", "noise"][: len(paths)]
    out = _ensure_out(args.out, ["compare.csv", "compare_manifest.json"], args.force)
    loaded = {}
    seed_sets = {}
    for name, path in zip(names, paths):
        per_seed, _ = read_report_csv(path)
        loaded[name] = per_seed
        seed_sets[name] = set(per_seed)
    base_seeds = seed_sets["lira"]
    for name, seeds in seed_sets.items():
        if seeds != base_seeds:
            raise ConfigError(
                f"seed sets differ: lira has {sorted(base_seeds)}, {name} has {sorted(seeds)}"
            )
    metrics = sorted({m for per in loaded.values() for vals in per.values() for m in vals})

    def mean_of(name: str, metric: str) -> float:
        vals = [loaded[name][s][metric] for s in sorted(base_seeds)]
        return float(np.mean(vals))

    rows = []
    for metric in metrics:
        lira = mean_of("lira", metric)
        canary = mean_of("canary", metric)
        noise = mean_of("noise", metric) if "noise" in loaded else None
        rows.append(
            {
                "metric": metric,
                "lira": lira,
                "canary": canary,
                "noise": noise,
                "canary_minus_lira": canary - lira,
                "noise_minus_lira": None if noise is None else noise - lira,
            }
        )
    compare_path = out / "compare.csv"
    with open(compare_path, "w", newline="") as fh:
        fh.write("metric,lira,canary,noise,canary_minus_lira,noise_minus_lira\n")
        for r in rows:
            cells = [
                r["metric"],
                repr(r["lira"]),
                repr(r["canary"]),
                "" if r["noise"] is None else repr(r["noise"]),
                repr(r["canary_minus_lira"]),
                "" if r["noise_minus_lira"] is None else repr(r["noise_minus_lira"]),
            ]
            fh.write(",".join(cells) + "\n")
    write_manifest(
        out / "compare_manifest.json",
        {
            "command": "compare",
            "inputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in zip(names, paths)},
            "outputs": {"compare.csv": _sha256(compare_path)},
        },
    )
    print(f"wrote compare.csv -> {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mialab",
        description="Shadow-model membership-inference laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train-shadows", help="build and persist a shadow-model farm")
    train.add_argument("--config", required=True, help="experiment config or manifest JSON")
    train.add_argument("--out", required=True, help="output directory")
    train.add_argument("--jobs", type=int, default=1, help="parallel training workers")
    train.add_argument("--force", action="store_true", help="overwrite existing outputs")
    train.set_defaults(func=cmd_train_shadows)

    attack = sub.add_parser("attack", help="run an attack against a held-out target")
    attack.add_argument("--config", required=True)
    attack.add_argument("--farm", required=True, help="farm store produced by train-shadows")
    attack.add_argument("--out", required=True)
    attack.add_argument("--jobs", type=int, default=1, help="parallel per-seed attack workers")
    attack.add_argument("--force", action="store_true")
    attack.set_defaults(func=cmd_attack)

    ev = sub.add_parser("eval", help="ROC/AUC/TPR report from score tables")
    ev.add_argument("scores", nargs="+", help="score table CSVs (named ...seed<N>...)")
    ev.add_argument("--out", required=True)
    ev.add_argument("--force", action="store_true")
    ev.set_defaults(func=cmd_eval)

    comp = sub.add_parser("compare", help="delta table between attack reports")
    comp.add_argument("reports", nargs="+",
                      help="two or three report CSVs: lira canary [noise]")
    comp.add_argument("--out", required=True)
    comp.add_argument("--force", action="store_true")
    comp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "compare" and not 2 <= len(args.reports) <= 3:
        print("error:ConfigError: compare takes two or three report files", file=sys.stderr)
        return 1
    try:
        args.func(args)
    except (MialabError, ValueError, OSError) as exc:
        print(f"error:{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
