"""Group-aware evaluation protocol and cost-sensitive metrics.

A protocol run splits the target domain by groups, trains once on the target
training rows alone (baseline) and once on those rows pooled with transferred
source rows, and scores both on the held-out target rows. Reports aggregate
a configurable number of independent runs; the two modes of each run share
the same split so their scores are paired.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classify import (
    KernelParams,
    MulticlassModel,
    grid_search,
    predict_many,
    train_multiclass,
)
from .config import PipelineConfig
from .dataset import FeatureSet, SplitPlan, concat_feature_sets, split_group_aware
from .errors import ArtifactError, ConfigError, DataFormatError
from .reduction import Projection, fit_projection, fit_projection_multi, project
from .transfer import CostMatrix, load_cost_matrix, transfer_all
from . import persist

CORE_CLASS_NAMES = ["empty", "adult", "small_child", "large_child"]
TASK_NAMES = ("detection", "childlock", "airbag", "unweighted")


def builtin_cost_matrices() -> dict[str, CostMatrix]:
    """Named 0/1 task tables plus the soft matrix used to bias transfer."""
    names = list(CORE_CLASS_NAMES)
    return {
        "detection": CostMatrix(
            costs=np.array(
                [
                    [0, 1, 1, 1],
                    [1, 0, 0, 0],
                    [1, 0, 0, 0],
                    [1, 0, 0, 0],
                ],
                dtype=float,
            ),
            class_names=names,
        ),
        "childlock": CostMatrix(
            costs=np.array(
                [
                    [0, 0, 0, 0],
                    [0, 0, 1, 1],
                    [1, 1, 0, 0],
                    [1, 1, 0, 0],
                ],
                dtype=float,
            ),
            class_names=names,
        ),
        "airbag": CostMatrix(
            costs=np.array(
                [
                    [0, 0, 0, 0],
                    [1, 0, 1, 0],
                    [0, 1, 0, 1],
                    [1, 0, 1, 0],
                ],
                dtype=float,
            ),
            class_names=names,
        ),
        "transfer_bias": CostMatrix(
            costs=np.array(
                [
                    [0.0, 0.4, 0.2, 0.3],
                    [0.4, 0.0, 0.2, 0.1],
                    [0.2, 0.4, 0.0, 0.1],
                    [0.3, 0.1, 0.1, 0.0],
                ]
            ),
            class_names=names,
        ),
    }


def collapse_to_core(fs: FeatureSet) -> FeatureSet:
    """Merge subclass labels into the four core classes by name prefix."""
    mapping = {}
    for name in fs.class_names:
        hit = None
        for core in CORE_CLASS_NAMES:
            if name == core or name.startswith(core + "_"):
                hit = core
                break
        if hit is None:
            raise DataFormatError(f"cannot collapse class {name!r} to a core class")
        mapping[name] = hit
    new_names = []
    for name in fs.class_names:
        if mapping[name] not in new_names:
            new_names.append(mapping[name])
    index = {c: i for i, c in enumerate(new_names)}
    labels = np.asarray([index[mapping[fs.class_names[l]]] for l in fs.labels])
    return FeatureSet(
        features=fs.features,
        labels=labels,
        groups=fs.groups,
        domain_id=fs.domain_id,
        class_names=new_names,
    )


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class RunEntry:
    accuracy: float
    weighted_accuracy: float
    mean_cost: float
    confusion: np.ndarray


def evaluate_predictions(
    y_true, y_pred, n_classes: int, phi: CostMatrix | None = None
) -> RunEntry:
    """Score a prediction vector.

    ``weighted_accuracy`` is the rate of zero-cost decisions; without a cost
    table it coincides with plain accuracy and ``mean_cost`` with the error
    rate.
    """
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError("need equally sized, non-empty prediction vectors")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    accuracy = float(np.mean(y_true == y_pred))
    if phi is None:
        return RunEntry(
            accuracy=accuracy,
            weighted_accuracy=accuracy,
            mean_cost=1.0 - accuracy,
            confusion=confusion,
        )
    costs = phi.costs[y_true, y_pred]
    return RunEntry(
        accuracy=accuracy,
        weighted_accuracy=float(np.mean(costs == 0.0)),
        mean_cost=float(np.mean(costs)),
        confusion=confusion,
    )


def evaluate(
    model: MulticlassModel, fs: FeatureSet, phi: CostMatrix | None = None
) -> RunEntry:
    if model.class_names != fs.class_names:
        raise ValueError("model and evaluation data disagree on the class list")
    if phi is not None and phi.class_names != fs.class_names:
        phi = phi.reordered(fs.class_names)
    pred = predict_many(model, fs.features)
    return evaluate_predictions(fs.labels, pred, fs.n_classes, phi)


@dataclass
class EvalReport:
    task: str
    mode: str
    class_names: list[str]
    per_run: list[RunEntry]

    @property
    def runs(self) -> int:
        return len(self.per_run)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([e.accuracy for e in self.per_run]))

    @property
    def mean_weighted_accuracy(self) -> float:
        return float(np.mean([e.weighted_accuracy for e in self.per_run]))

    @property
    def mean_cost(self) -> float:
        return float(np.mean([e.mean_cost for e in self.per_run]))


def save_report(report: EvalReport, txt_path, csv_path=None) -> None:
    body = [
        f"task {report.task}",
        f"mode {report.mode}",
        "classes " + " ".join(report.class_names),
        f"runs {report.runs}",
    ]
    n = len(report.class_names)
    for r, e in enumerate(report.per_run):
        body.append(f"run {r}")
        body.append(f"accuracy {persist.fmt_floats([e.accuracy])}")
        body.append(f"weighted_accuracy {persist.fmt_floats([e.weighted_accuracy])}")
        body.append(f"mean_cost {persist.fmt_floats([e.mean_cost])}")
        body.append(f"confusion {n}")
        for i in range(n):
            body.append("crow " + " ".join(str(int(x)) for x in e.confusion[i]))
    body.append(f"mean_accuracy {persist.fmt_floats([report.mean_accuracy])}")
    body.append(
        f"mean_weighted_accuracy {persist.fmt_floats([report.mean_weighted_accuracy])}"
    )
    body.append(f"mean_cost_overall {persist.fmt_floats([report.mean_cost])}")
    persist.write_artifact(txt_path, "eval-report", body)
    if csv_path is not None:
        lines = ["run,accuracy,weighted_accuracy,mean_cost"]
        for r, e in enumerate(report.per_run):
            lines.append(
                f"{r},{e.accuracy!r},{e.weighted_accuracy!r},{e.mean_cost!r}"
            )
        lines.append(
            f"mean,{report.mean_accuracy!r},{report.mean_weighted_accuracy!r},"
            f"{report.mean_cost!r}"
        )
        Path(csv_path).write_text("\n".join(lines) + "\n")


def load_report(path) -> EvalReport:
    rows = persist.read_artifact(path, "eval-report")
    r = persist.BodyReader(rows, path)
    task = r.take_str("task")
    mode = r.take_str("mode")
    names = r.take_tokens("classes")
    runs = r.take_int("runs")
    entries = []
    for idx in range(runs):
        if r.take_int("run") != idx:
            raise ArtifactError(f"{path}: run blocks out of order")
        acc = r.take_float("accuracy")
        wacc = r.take_float("weighted_accuracy")
        mcost = r.take_float("mean_cost")
        n = r.take_int("confusion")
        conf = np.zeros((n, n), dtype=np.int64)
        for i in range(n):
            toks = r.take("crow")
            conf[i] = [int(t) for t in toks]
        entries.append(
            RunEntry(
                accuracy=acc, weighted_accuracy=wacc, mean_cost=mcost, confusion=conf
            )
        )
    return EvalReport(task=task, mode=mode, class_names=names, per_run=entries)


# ---------------------------------------------------------------------------
# Seed derivation

_STAGE_SPLIT = 1
_STAGE_GRID = 2
_STAGE_TRANSFER = 3


def derive_seed(*parts: int) -> int:
    """Stable child seed from integer path components."""
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


@dataclass
class RunSeeds:
    split: int
    grid: int
    _base: int
    _run: int

    def transfer(self, source_pos: int) -> int:
        return derive_seed(self._base, self._run, _STAGE_TRANSFER, source_pos)


def run_seeds(seed: int, run: int) -> RunSeeds:
    return RunSeeds(
        split=derive_seed(seed, run, _STAGE_SPLIT),
        grid=derive_seed(seed, run, _STAGE_GRID),
        _base=int(seed),
        _run=int(run),
    )


# ---------------------------------------------------------------------------
# Protocol


def task_mode_and_cost(task: str, class_names: list[str]):
    """Classifier mode and task cost table aligned to a class order."""
    if task == "unweighted":
        return "ovo", None
    builtins = builtin_cost_matrices()
    if task not in builtins:
        raise ConfigError(f"unknown task {task!r}")
    return "csovo", builtins[task].reordered(class_names)


def protocol_bias(cfg: PipelineConfig, task: str, class_names: list[str]) -> CostMatrix:
    """Transfer bias table for a task: zero for unweighted runs, otherwise
    whatever ``transfer_cost`` names."""
    if task == "unweighted":
        return CostMatrix.zero(class_names)
    return resolve_transfer_bias(cfg.transfer_cost, class_names)


def resolve_transfer_bias(token: str, class_names: list[str]) -> CostMatrix:
    """Cost table used to bias transfer, from a config token.

    Accepts "none", a builtin table name, or "file:<path>".
    """
    if token == "none":
        return CostMatrix.zero(class_names)
    if token.startswith("file:"):
        phi = load_cost_matrix(token[len("file:") :])
        return phi.reordered(class_names)
    builtins = builtin_cost_matrices()
    if token in builtins:
        phi = builtins[token]
        if sorted(phi.class_names) != sorted(class_names):
            raise ConfigError(
                f"builtin cost table {token!r} covers {phi.class_names}, "
                f"data declares {class_names}"
            )
        return phi.reordered(class_names)
    raise ConfigError(f"unknown transfer_cost {token!r}")


def leakage_filter(source: FeatureSet, test_groups) -> FeatureSet:
    """Drop source rows whose group also appears in the held-out target rows."""
    test_groups = set(str(g) for g in test_groups)
    keep = np.asarray([g not in test_groups for g in source.groups])
    if keep.all():
        return source
    return source.subset(np.flatnonzero(keep))


def select_sources(domains: list[FeatureSet], target_index: int, cfg: PipelineConfig):
    others = [i for i in range(len(domains)) if i != target_index]
    if not others:
        raise ConfigError("no source domains: the protocol needs at least two domains")
    if cfg.source_mode == "single":
        if cfg.source_index == target_index or cfg.source_index not in others:
            raise ConfigError(
                f"source_index {cfg.source_index} is not a valid source domain"
            )
        others = [cfg.source_index]
    return [domains[i] for i in others]


@dataclass
class RunData:
    """Everything the two modes of one protocol run share across tasks."""

    plan: SplitPlan
    base_train: FeatureSet
    base_test: FeatureSet
    base_params: KernelParams
    tr_train: FeatureSet
    tr_test: FeatureSet
    tr_params: KernelParams
    projection: Projection


def prepare_run(
    domains: list[FeatureSet],
    target_index: int,
    cfg: PipelineConfig,
    run: int,
    seed: int,
    bias: CostMatrix,
) -> RunData:
    """Split, reduce, transfer, and select kernel parameters for one run."""
    seeds = run_seeds(seed, run)
    target = domains[target_index]
    plan = split_group_aware(target, cfg.test_fraction, seeds.split)
    ttrain = target.subset(plan.train_rows)
    ttest = target.subset(plan.test_rows)
    test_groups = np.unique(ttest.groups)
    sources = [
        leakage_filter(s, test_groups)
        for s in select_sources(domains, target_index, cfg)
    ]

    proj0 = fit_projection(ttrain, ttrain, k=cfg.k, eps=cfg.eps)
    base_train = project(proj0, ttrain)
    base_test = project(proj0, ttest)
    base_params = grid_search(
        base_train, cfg.grid_gamma, cfg.grid_c, folds=cfg.folds, seed=seeds.grid
    )

    proj = fit_projection_multi(sources, ttrain, k=cfg.k, eps=cfg.eps)
    tr_train_target = project(proj, ttrain)
    pooled = [tr_train_target]
    for pos, src in enumerate(sources):
        res = transfer_all(
            project(proj, src),
            tr_train_target,
            bias,
            cfg.transfer_config(),
            G=cfg.gmm_components,
            seed=seeds.transfer(pos),
            threads=cfg.threads,
        )
        pooled.append(res.transferred)
    tr_train = concat_feature_sets(pooled)
    tr_test = project(proj, ttest)
    tr_params = grid_search(
        tr_train, cfg.grid_gamma, cfg.grid_c, folds=cfg.folds, seed=seeds.grid
    )
    return RunData(
        plan=plan,
        base_train=base_train,
        base_test=base_test,
        base_params=base_params,
        tr_train=tr_train,
        tr_test=tr_test,
        tr_params=tr_params,
        projection=proj,
    )


def score_run(data: RunData, task: str) -> tuple[RunEntry, RunEntry]:
    """(transfer entry, baseline entry) for one task on a prepared run."""
    mode, phi = task_mode_and_cost(task, data.base_train.class_names)
    model0 = train_multiclass(data.base_train, data.base_params, mode=mode, phi=phi)
    entry0 = evaluate(model0, data.base_test, phi)
    model1 = train_multiclass(data.tr_train, data.tr_params, mode=mode, phi=phi)
    entry1 = evaluate(model1, data.tr_test, phi)
    return entry1, entry0


@dataclass
class ProtocolResult:
    with_transfer: EvalReport
    without_transfer: EvalReport


def run_protocol_multitask(
    domains: list[FeatureSet],
    target_index: int,
    cfg: PipelineConfig,
    tasks: list[str],
    runs: int | None = None,
    seed: int | None = None,
) -> dict[str, ProtocolResult]:
    """Run the protocol once per seed and score several tasks on shared runs.

    All weighted tasks see identical splits, projections, transfers, and
    kernel parameters, so their results are directly comparable; the
    unweighted task keeps the full class list and runs its own pass.
    """
    runs = cfg.runs if runs is None else int(runs)
    seed = cfg.seed if seed is None else int(seed)
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    for t in tasks:
        if t not in TASK_NAMES:
            raise ConfigError(f"unknown task {t!r}")
    if not 0 <= target_index < len(domains):
        raise ConfigError(f"target index {target_index} out of range")
    if len(domains) < 2:
        raise ConfigError("protocol needs at least two domains")

    collected: dict[str, tuple[list[RunEntry], list[RunEntry]]] = {
        t: ([], []) for t in tasks
    }
    weighted = [t for t in tasks if t != "unweighted"]
    if weighted:
        doms = [collapse_to_core(d) for d in domains]
        bias = protocol_bias(cfg, weighted[0], doms[target_index].class_names)
        for run in range(runs):
            data = prepare_run(doms, target_index, cfg, run, seed, bias)
            for t in weighted:
                with_e, without_e = score_run(data, t)
                collected[t][0].append(with_e)
                collected[t][1].append(without_e)
    if "unweighted" in tasks:
        names = domains[target_index].class_names
        bias = protocol_bias(cfg, "unweighted", names)
        for run in range(runs):
            data = prepare_run(domains, target_index, cfg, run, seed, bias)
            with_e, without_e = score_run(data, "unweighted")
            collected["unweighted"][0].append(with_e)
            collected["unweighted"][1].append(without_e)

    out = {}
    for t in tasks:
        if t == "unweighted":
            mapped = domains[target_index].class_names
        else:
            mapped = collapse_to_core(domains[target_index]).class_names
        out[t] = ProtocolResult(
            with_transfer=EvalReport(
                task=t, mode="transfer", class_names=list(mapped),
                per_run=collected[t][0],
            ),
            without_transfer=EvalReport(
                task=t, mode="baseline", class_names=list(mapped),
                per_run=collected[t][1],
            ),
        )
    return out


def run_protocol(
    domains: list[FeatureSet],
    target_index: int,
    cfg: PipelineConfig,
    runs: int | None = None,
    seed: int | None = None,
) -> ProtocolResult:
    """Evaluate ``cfg.task`` with and without transfer over repeated runs."""
    result = run_protocol_multitask(
        domains, target_index, cfg, [cfg.task], runs=runs, seed=seed
    )
    return result[cfg.task]
