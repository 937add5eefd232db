"""Labeled feature sets: CSV I/O, group-exclusive splits, synthetic multi-domain data.

The on-disk format is a plain CSV with a fixed header
``label,group,domain,f0,...,f{D-1}``. Label and group are unquoted tokens,
domain is a non-negative integer, and features are written with full
precision so that a save/load cycle reproduces the matrix exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import (
    check_feature_matrix,
    check_fraction,
    check_labels,
    is_token,
)
from .errors import DataFormatError, DegenerateInputError

_FIXED_COLUMNS = ("label", "group", "domain")


@dataclass
class FeatureSet:
    """Feature matrix with per-row class, group, and domain annotations.

    Rows that share a group id describe the same underlying subject and must
    never be separated across a train/test boundary. ``labels`` holds indices
    into ``class_names``; the declared class list may be wider than the set
    of classes actually present in the rows.
    """

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    domain_id: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.features = check_feature_matrix(np.asarray(self.features))
        n = self.features.shape[0]
        self.class_names = [str(c) for c in self.class_names]
        if len(self.class_names) < 2:
            raise DataFormatError("a feature set must declare at least 2 classes")
        if len(set(self.class_names)) != len(self.class_names):
            raise DataFormatError("class names must be unique")
        for c in self.class_names:
            if not is_token(c):
                raise DataFormatError(f"class name {c!r} is not a valid token")
        self.labels = check_labels(self.labels, n, len(self.class_names))
        self.groups = np.asarray([str(g) for g in np.asarray(self.groups).ravel()])
        if self.groups.shape[0] != n:
            raise DataFormatError("groups must have one entry per row")
        dom = np.asarray(self.domain_id)
        if dom.ndim == 0:
            dom = np.full(n, int(dom))
        dom = check_labels(dom, n)
        self.domain_id = dom

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, rows) -> "FeatureSet":
        rows = np.asarray(rows)
        return FeatureSet(
            features=self.features[rows],
            labels=self.labels[rows],
            groups=self.groups[rows],
            domain_id=self.domain_id[rows],
            class_names=list(self.class_names),
        )

    def rows_of_class(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def present_classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def with_features(self, features: np.ndarray) -> "FeatureSet":
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] != self.n_samples:
            raise ValueError("replacement features must keep the row count")
        return FeatureSet(
            features=features,
            labels=self.labels,
            groups=self.groups,
            domain_id=self.domain_id,
            class_names=list(self.class_names),
        )


def concat_feature_sets(sets: list[FeatureSet]) -> FeatureSet:
    """Stack feature sets that share a class list and feature width."""
    if not sets:
        raise ValueError("need at least one feature set")
    names = sets[0].class_names
    width = sets[0].n_features
    for fs in sets[1:]:
        if fs.class_names != names:
            raise DataFormatError("cannot concatenate sets with differing class lists")
        if fs.n_features != width:
            raise DataFormatError("cannot concatenate sets with differing widths")
    return FeatureSet(
        features=np.vstack([fs.features for fs in sets]),
        labels=np.concatenate([fs.labels for fs in sets]),
        groups=np.concatenate([fs.groups for fs in sets]),
        domain_id=np.concatenate([fs.domain_id for fs in sets]),
        class_names=list(names),
    )


# ---------------------------------------------------------------------------
# CSV I/O


def save_features(fs: FeatureSet, path) -> None:
    path = Path(path)
    for g in np.unique(fs.groups):
        if not is_token(str(g)):
            raise DataFormatError(f"group id {g!r} is not a valid token")
    header = ",".join(_FIXED_COLUMNS + tuple(f"f{d}" for d in range(fs.n_features)))
    lines = [header]
    for i in range(fs.n_samples):
        vals = ",".join(repr(float(v)) for v in fs.features[i])
        lines.append(
            f"{fs.class_names[fs.labels[i]]},{fs.groups[i]},{int(fs.domain_id[i])},{vals}"
        )
    path.write_text("\n".join(lines) + "\n")


def load_features(
    path, class_names: list[str] | None = None, format: str = "csv"
) -> FeatureSet:
    """Read a feature CSV.

    When ``class_names`` is given it fixes the class index order and any row
    with a label outside the list is an error; otherwise classes are indexed
    by first appearance.
    """
    if format != "csv":
        raise DataFormatError(f"unsupported feature file format {format!r}")
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"feature file not found: {path}")
    text = path.read_text()
    lines = text.splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    header = lines[0].split(",")
    if tuple(header[:3]) != _FIXED_COLUMNS:
        raise DataFormatError(
            f"{path}: header must start with {','.join(_FIXED_COLUMNS)}"
        )
    dim = len(header) - 3
    if dim < 1:
        raise DataFormatError(f"{path}: header declares no feature columns")
    expected = [f"f{d}" for d in range(dim)]
    if header[3:] != expected:
        raise DataFormatError(f"{path}: feature columns must be f0..f{dim - 1}")

    known: dict[str, int] = {}
    if class_names is not None:
        known = {c: i for i, c in enumerate(class_names)}

    feats, labels, groups, domains = [], [], [], []
    order: list[str] = list(class_names) if class_names is not None else []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != dim + 3:
            raise DataFormatError(
                f"{path}: line {lineno}: expected {dim + 3} fields, got {len(parts)}"
            )
        name, group, dom_s = parts[0], parts[1], parts[2]
        if not is_token(name):
            raise DataFormatError(f"{path}: line {lineno}: bad label token {name!r}")
        if not is_token(group):
            raise DataFormatError(f"{path}: line {lineno}: bad group token {group!r}")
        if class_names is None:
            if name not in known:
                known[name] = len(order)
                order.append(name)
        elif name not in known:
            raise DataFormatError(
                f"{path}: line {lineno}: unknown class {name!r} for the supplied class list"
            )
        try:
            dom = int(dom_s)
        except ValueError:
            raise DataFormatError(
                f"{path}: line {lineno}: domain must be an integer, got {dom_s!r}"
            ) from None
        if dom < 0:
            raise DataFormatError(f"{path}: line {lineno}: domain must be >= 0")
        row = np.empty(dim)
        for d, tok in enumerate(parts[3:]):
            try:
                row[d] = float(tok)
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {lineno}: non-numeric feature value {tok!r}"
                ) from None
        if not np.all(np.isfinite(row)):
            raise DataFormatError(f"{path}: line {lineno}: non-finite feature value")
        feats.append(row)
        labels.append(known[name])
        groups.append(group)
        domains.append(dom)

    if not feats:
        raise DataFormatError(f"{path}: no data rows")
    if len(order) < 2:
        # keep the declared list legal even for single-class files
        order = order + ["__absent__"]
    return FeatureSet(
        features=np.vstack(feats),
        labels=np.asarray(labels),
        groups=np.asarray(groups),
        domain_id=np.asarray(domains),
        class_names=order,
    )


# ---------------------------------------------------------------------------
# Group-exclusive splitting


@dataclass
class SplitPlan:
    """Row indices of a group-exclusive train/test partition."""

    train_rows: np.ndarray
    test_rows: np.ndarray
    seed: int

    def __post_init__(self):
        self.train_rows = np.asarray(self.train_rows, dtype=np.int64)
        self.test_rows = np.asarray(self.test_rows, dtype=np.int64)
        self.seed = int(self.seed)


def save_split(plan: SplitPlan, path) -> None:
    from . import persist

    body = [
        f"seed {plan.seed}",
        "train_rows " + " ".join(str(int(i)) for i in plan.train_rows),
        "test_rows " + " ".join(str(int(i)) for i in plan.test_rows),
    ]
    persist.write_artifact(path, "split-plan", body)


def load_split(path) -> SplitPlan:
    from . import persist

    rows = persist.read_artifact(path, "split-plan")
    r = persist.BodyReader(rows, path)
    seed = r.take_int("seed")
    train = [int(t) for t in r.take("train_rows")]
    test = [int(t) for t in r.take("test_rows")]
    return SplitPlan(train_rows=np.asarray(train), test_rows=np.asarray(test), seed=seed)


def split_group_aware(fs: FeatureSet, test_fraction: float, seed: int) -> SplitPlan:
    """Partition rows into train/test keeping every group on one side.

    Groups are visited in a seeded random order; a group joins the test side
    only while that strictly improves the distance to the requested test row
    count. The achieved fraction can therefore deviate from the request by
    at most one group's worth of rows.
    """
    test_fraction = check_fraction(test_fraction, "test_fraction")
    ids, inverse, counts = np.unique(fs.groups, return_inverse=True, return_counts=True)
    if ids.shape[0] < 2:
        raise DegenerateInputError("group-aware split needs at least 2 groups")
    rng = np.random.default_rng(seed)
    order = rng.permutation(ids.shape[0])
    target = test_fraction * fs.n_samples

    picked: list[int] = []
    acc = 0.0
    for g in order:
        if len(picked) + 1 == ids.shape[0]:
            break  # never send every group to test
        if abs(acc + counts[g] - target) < abs(acc - target):
            picked.append(int(g))
            acc += counts[g]
    if not picked:
        best = min((int(g) for g in order), key=lambda g: abs(counts[g] - target))
        picked = [best]

    mask = np.zeros(ids.shape[0], dtype=bool)
    mask[picked] = True
    test_rows = np.flatnonzero(mask[inverse])
    train_rows = np.flatnonzero(~mask[inverse])
    return SplitPlan(train_rows=train_rows, test_rows=test_rows, seed=int(seed))


# ---------------------------------------------------------------------------
# Synthetic multi-domain benchmark data

DEFAULT_CLASS_NAMES = [
    "empty",
    "adult",
    "small_child_booster",
    "small_child_childseat",
    "small_child_unrestrained",
    "large_child_booster",
    "large_child_childseat",
    "large_child_unrestrained",
]


@dataclass
class AffineShift:
    """Per-domain distortion: rotate in the leading plane, rescale, translate."""

    rotation: float = 0.0
    scale: float = 1.0
    translation: float = 0.0

    def __post_init__(self):
        self.rotation = float(self.rotation)
        self.scale = float(self.scale)
        self.translation = float(self.translation)
        if not np.isfinite(self.rotation):
            raise ValueError("rotation must be finite")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError("scale must be a positive number")
        if not (np.isfinite(self.translation) and self.translation >= 0):
            raise ValueError("translation must be >= 0")


@dataclass
class SynthConfig:
    n_classes: int = 8
    dims: int = 16
    n_domains: int = 4
    per_class_modes: int = 2
    shift: AffineShift = field(default_factory=AffineShift)
    noise_sigma: float = 0.5
    samples_per_class_per_domain: int = 50
    groups_per_class: int = 10
    class_spread: float = 2.0
    mode_spread: float = 0.8
    class_names: list[str] | None = None
    seed: int = 0

    def __post_init__(self):
        for name in (
            "n_classes",
            "dims",
            "n_domains",
            "per_class_modes",
            "samples_per_class_per_domain",
            "groups_per_class",
        ):
            v = int(getattr(self, name))
            if v < 1:
                raise ValueError(f"{name} must be >= 1")
            setattr(self, name, v)
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.groups_per_class > self.samples_per_class_per_domain:
            raise ValueError("groups_per_class cannot exceed samples per class")
        self.noise_sigma = float(self.noise_sigma)
        if not (np.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise ValueError("noise_sigma must be >= 0")
        for name in ("class_spread", "mode_spread"):
            v = float(getattr(self, name))
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be > 0")
            setattr(self, name, v)
        if self.class_names is not None:
            if len(self.class_names) != self.n_classes:
                raise ValueError("class_names must list one name per class")
        self.seed = int(self.seed)

    def resolved_class_names(self) -> list[str]:
        if self.class_names is not None:
            return list(self.class_names)
        if self.n_classes == len(DEFAULT_CLASS_NAMES):
            return list(DEFAULT_CLASS_NAMES)
        return [f"class{c}" for c in range(self.n_classes)]


def _rotation_matrix(dims: int, angle: float) -> np.ndarray:
    R = np.eye(dims)
    if dims >= 2 and angle != 0.0:
        c, s = np.cos(angle), np.sin(angle)
        R[0, 0] = c
        R[0, 1] = -s
        R[1, 0] = s
        R[1, 1] = c
    return R


def generate_synthetic(cfg: SynthConfig) -> list[FeatureSet]:
    """Draw one feature set per domain from a shared latent mixture.

    Domain 0 observes the latent modes directly; domain ``d`` sees them
    through ``scale**d * R(d * rotation)`` plus a translation of the
    configured magnitude along a per-domain random unit direction. Noise is
    drawn after all structural draws, so runs that differ only in
    ``noise_sigma`` share modes and directions.
    """
    rng = np.random.default_rng(cfg.seed)
    names = cfg.resolved_class_names()
    D = cfg.dims

    mode_means = rng.normal(0.0, cfg.class_spread, size=(cfg.n_classes, 1, D))
    mode_means = mode_means + rng.normal(
        0.0, cfg.mode_spread, size=(cfg.n_classes, cfg.per_class_modes, D)
    )
    directions = np.zeros((cfg.n_domains, D))
    for d in range(1, cfg.n_domains):
        v = rng.normal(size=D)
        directions[d] = v / np.linalg.norm(v)

    n = cfg.samples_per_class_per_domain
    assignment = np.arange(n) % cfg.per_class_modes
    latent = np.vstack([mode_means[c, assignment] for c in range(cfg.n_classes)])
    labels = np.repeat(np.arange(cfg.n_classes), n)

    groups_tpl = []
    for c in range(cfg.n_classes):
        chunks = np.array_split(np.arange(n), cfg.groups_per_class)
        for j, chunk in enumerate(chunks):
            groups_tpl.extend([(c, j)] * len(chunk))

    out = []
    for d in range(cfg.n_domains):
        if d == 0:
            X = latent.copy()
        else:
            A = (cfg.shift.scale**d) * _rotation_matrix(D, d * cfg.shift.rotation)
            X = latent @ A.T + cfg.shift.translation * directions[d]
        if cfg.noise_sigma > 0:
            X = X + rng.normal(0.0, cfg.noise_sigma, size=X.shape)
        groups = np.asarray([f"d{d}_{names[c]}_o{j}" for c, j in groups_tpl])
        out.append(
            FeatureSet(
                features=X,
                labels=labels.copy(),
                groups=groups,
                domain_id=np.full(labels.shape[0], d),
                class_names=list(names),
            )
        )
    return out
