"""Command line interface.

Stages communicate through files in a work directory, so the chain
``reduce -> fit -> transfer -> train -> evaluate`` reproduces exactly what
``pipeline`` computes in memory for a single run with transfer enabled.

Work directory layout:
    split.txt            group-exclusive split of the target domain
    projection.txt       fitted reduction
    target_train.csv     projected target training rows
    target_test.csv      projected held-out target rows
    source_<i>.csv       projected source rows (leakage filtered)
    bank_target.txt      target mixture bank
    bank_source_<i>.txt  source mixture banks
    transferred_<i>.csv  moved source rows
    diag_<i>.txt         per-feature transfer diagnostics
    model.txt            trained classifier
    report.txt/.csv      evaluation of the staged model
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import classify, dataset, evaluation, gmm, reduction, transfer
from .config import PipelineConfig, load_config
from .errors import ConfigError, CostShiftError, DataFormatError


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = int(args.seed)
        cfg.synth = cfg.synth_config(seed=cfg.seed)
    if getattr(args, "threads", None) is not None:
        cfg.threads = int(args.threads)
        if cfg.threads < 1:
            raise ConfigError("threads must be >= 1")
    return cfg


def _load_cfg(args) -> PipelineConfig:
    return _apply_overrides(load_config(args.config), args)


def _domain_paths(data_dir: Path) -> list[Path]:
    paths = sorted(
        data_dir.glob("domain_*.csv"),
        key=lambda p: int(p.stem.split("_")[1]),
    )
    if len(paths) < 2:
        raise DataFormatError(
            f"{data_dir}: need at least two domain_<i>.csv files, found {len(paths)}"
        )
    return paths


def _load_domains(data_dir: Path) -> list[dataset.FeatureSet]:
    paths = _domain_paths(data_dir)
    first = dataset.load_features(paths[0])
    rest = [dataset.load_features(p, class_names=first.class_names) for p in paths[1:]]
    return [first] + rest


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    domains = dataset.generate_synthetic(cfg.synth)
    for d, fs in enumerate(domains):
        dataset.save_features(fs, out / f"domain_{d}.csv")
    print(f"wrote {len(domains)} domain files to {out}")
    return 0


def cmd_reduce(args) -> int:
    cfg = _load_cfg(args)
    work = Path(args.out)
    work.mkdir(parents=True, exist_ok=True)
    domains = _load_domains(Path(args.data))
    target_index = int(args.target)
    if not 0 <= target_index < len(domains):
        raise ConfigError(f"target index {target_index} out of range")
    if cfg.task != "unweighted":
        domains = [evaluation.collapse_to_core(d) for d in domains]

    seeds = evaluation.run_seeds(cfg.seed, 0)
    target = domains[target_index]
    plan = dataset.split_group_aware(target, cfg.test_fraction, seeds.split)
    dataset.save_split(plan, work / "split.txt")
    ttrain = target.subset(plan.train_rows)
    ttest = target.subset(plan.test_rows)
    sources = [
        evaluation.leakage_filter(s, ttest.groups)
        for s in evaluation.select_sources(domains, target_index, cfg)
    ]

    proj = reduction.fit_projection_multi(sources, ttrain, k=cfg.k, eps=cfg.eps)
    reduction.save_projection(proj, work / "projection.txt")
    dataset.save_features(reduction.project(proj, ttrain), work / "target_train.csv")
    dataset.save_features(reduction.project(proj, ttest), work / "target_test.csv")
    for i, src in enumerate(sources):
        dataset.save_features(reduction.project(proj, src), work / f"source_{i}.csv")
    print(f"reduced {len(sources)} source domains into {work}")
    return 0


def _work_sources(work: Path) -> list[Path]:
    paths = sorted(
        work.glob("source_*.csv"), key=lambda p: int(p.stem.split("_")[1])
    )
    if not paths:
        raise DataFormatError(f"{work}: no source_<i>.csv files (run reduce first)")
    return paths


def cmd_fit(args) -> int:
    cfg = _load_cfg(args)
    work = Path(args.work)
    ttrain = dataset.load_features(work / "target_train.csv")
    tar_bank = gmm.fit_class_gmms(
        ttrain, G=cfg.gmm_components, seed=cfg.seed, domain_tag="target"
    )
    gmm.save_bank(tar_bank, work / "bank_target.txt")
    for i, path in enumerate(_work_sources(work)):
        src = dataset.load_features(path, class_names=ttrain.class_names)
        bank = gmm.fit_class_gmms(
            src, G=cfg.gmm_components, seed=cfg.seed, domain_tag="source"
        )
        gmm.save_bank(bank, work / f"bank_source_{i}.txt")
    print(f"fitted mixture banks in {work}")
    return 0


def cmd_transfer(args) -> int:
    cfg = _load_cfg(args)
    work = Path(args.work)
    ttrain = dataset.load_features(work / "target_train.csv")
    tar_bank = gmm.load_bank(work / "bank_target.txt")
    bias = evaluation.protocol_bias(cfg, cfg.task, ttrain.class_names)
    tcfg = cfg.transfer_config()
    for i, path in enumerate(_work_sources(work)):
        src = dataset.load_features(path, class_names=ttrain.class_names)
        src_bank = gmm.load_bank(work / f"bank_source_{i}.txt")
        res = transfer.transfer_with_banks(
            src, src_bank, tar_bank, bias, tcfg, threads=cfg.threads
        )
        dataset.save_features(res.transferred, work / f"transferred_{i}.csv")
        transfer.save_transfer_diagnostics(res, work / f"diag_{i}.txt")
    print(f"transferred source features in {work}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    work = Path(args.work)
    ttrain = dataset.load_features(work / "target_train.csv")
    parts = [ttrain]
    for i, _ in enumerate(_work_sources(work)):
        parts.append(
            dataset.load_features(
                work / f"transferred_{i}.csv", class_names=ttrain.class_names
            )
        )
    train_fs = dataset.concat_feature_sets(parts)
    seeds = evaluation.run_seeds(cfg.seed, 0)
    params = classify.grid_search(
        train_fs, cfg.grid_gamma, cfg.grid_c, folds=cfg.folds, seed=seeds.grid
    )
    mode, phi = evaluation.task_mode_and_cost(cfg.task, train_fs.class_names)
    model = classify.train_multiclass(train_fs, params, mode=mode, phi=phi)
    classify.save_model(model, work / "model.txt")
    print(
        f"trained {mode} model (gamma={params.gamma}, c={params.c}) "
        f"with {len(model.machines)} machines"
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    work = Path(args.work)
    model = classify.load_model(work / "model.txt")
    ttest = dataset.load_features(
        work / "target_test.csv", class_names=model.class_names
    )
    _, phi = evaluation.task_mode_and_cost(cfg.task, ttest.class_names)
    entry = evaluation.evaluate(model, ttest, phi)
    report = evaluation.EvalReport(
        task=cfg.task,
        mode="transfer",
        class_names=list(ttest.class_names),
        per_run=[entry],
    )
    evaluation.save_report(report, work / "report.txt", work / "report.csv")
    print(
        f"task {cfg.task}: accuracy {entry.accuracy:.4f}, "
        f"weighted {entry.weighted_accuracy:.4f}, mean cost {entry.mean_cost:.4f}"
    )
    return 0


def cmd_pipeline(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    domains = _load_domains(Path(args.data))
    target_index = int(args.target)
    result = evaluation.run_protocol(domains, target_index, cfg)
    evaluation.save_report(
        result.with_transfer, out / "report_transfer.txt", out / "report_transfer.csv"
    )
    evaluation.save_report(
        result.without_transfer,
        out / "report_baseline.txt",
        out / "report_baseline.csv",
    )
    wt = result.with_transfer
    wo = result.without_transfer
    delta = wt.mean_weighted_accuracy - wo.mean_weighted_accuracy
    summary = [
        f"task {cfg.task}",
        f"runs {wt.runs}",
        f"baseline_weighted_accuracy {wo.mean_weighted_accuracy!r}",
        f"transfer_weighted_accuracy {wt.mean_weighted_accuracy!r}",
        f"delta {delta!r}",
        f"baseline_mean_cost {wo.mean_cost!r}",
        f"transfer_mean_cost {wt.mean_cost!r}",
    ]
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    for line in summary:
        print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="costshift",
        description="Cost-aware feature transfer between data domains",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="flat key-value config file")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument(
        "--threads", type=int, default=None, help="cap worker count for transfer"
    )

    p = sub.add_parser("synth", parents=[common], help="generate synthetic domains")
    p.add_argument("--out", required=True, help="output data directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser(
        "reduce", parents=[common], help="split the target and fit the reduction"
    )
    p.add_argument("--data", required=True, help="directory of domain_<i>.csv files")
    p.add_argument("--target", required=True, type=int, help="target domain index")
    p.add_argument("--out", required=True, help="work directory")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("fit", parents=[common], help="fit per-class mixture banks")
    p.add_argument("--work", required=True, help="work directory from reduce")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("transfer", parents=[common], help="move source features")
    p.add_argument("--work", required=True, help="work directory from fit")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("train", parents=[common], help="grid search and train")
    p.add_argument("--work", required=True, help="work directory from transfer")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score the staged model")
    p.add_argument("--work", required=True, help="work directory from train")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser(
        "pipeline", parents=[common], help="full protocol with and without transfer"
    )
    p.add_argument("--data", required=True, help="directory of domain_<i>.csv files")
    p.add_argument("--target", required=True, type=int, help="target domain index")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CostShiftError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
