"""Cost-aware feature transfer by responsibility matching.

Each source feature keeps its label and is moved in feature space until the
target mixture bank explains it the way the source bank explained the
original point. The matched quantity is the joint-normalized responsibility
pattern over all (class, component) pairs; misclassification costs enter as
multiplicative weights on the target-side pattern, which biases the matching
against landing mass on expensive classes. Minimization runs per feature with
a derivative-free simplex search started from a displacement along the
class score direction.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_positive, check_vector
from .dataset import FeatureSet
from .errors import ConvergenceError, DataFormatError, DegenerateInputError
from .gmm import ClassGmmBank, fisher_displacement, fit_class_gmms
from . import persist

PSI_CHOICES = ("exp", "identity_plus_one")
TAU_MODES = ("centroid_match", "fixed")


# ---------------------------------------------------------------------------
# Cost matrices


@dataclass
class CostMatrix:
    """Square misclassification cost table with a zero diagonal.

    ``costs[i, j]`` is the price of deciding class ``j`` when the truth is
    class ``i``.
    """

    costs: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.costs = np.asarray(self.costs, dtype=np.float64)
        self.class_names = [str(c) for c in self.class_names]
        n = len(self.class_names)
        if self.costs.shape != (n, n):
            raise ValueError(
                f"cost matrix shape {self.costs.shape} does not match "
                f"{n} class names"
            )
        if not np.all(np.isfinite(self.costs)):
            raise ValueError("cost matrix contains non-finite entries")
        if np.any(self.costs < 0) or np.any(self.costs > 1):
            raise ValueError("cost matrix entries must lie in [0, 1]")
        if np.any(np.abs(np.diag(self.costs)) > 0):
            raise ValueError("cost matrix diagonal must be zero")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def reordered(self, class_names: list[str]) -> "CostMatrix":
        """Permute rows and columns to match another class order."""
        if sorted(class_names) != sorted(self.class_names):
            raise ValueError(
                f"cannot reorder cost matrix over {self.class_names} "
                f"to class list {class_names}"
            )
        idx = [self.class_names.index(c) for c in class_names]
        return CostMatrix(
            costs=self.costs[np.ix_(idx, idx)], class_names=list(class_names)
        )

    @classmethod
    def zero(cls, class_names: list[str]) -> "CostMatrix":
        n = len(class_names)
        return cls(costs=np.zeros((n, n)), class_names=list(class_names))


def save_cost_matrix(phi: CostMatrix, path) -> None:
    """Write a cost matrix as CSV: class-name header, then N rows of N entries."""
    lines = [",".join(phi.class_names)]
    for i in range(phi.n_classes):
        lines.append(",".join(repr(float(v)) for v in phi.costs[i]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_cost_matrix(path) -> CostMatrix:
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"cost matrix file is missing: {path}")
    lines = path.read_text().splitlines()
    if not lines or not lines[0].strip():
        raise DataFormatError(f"{path}: empty cost matrix file")
    names = [t.strip() for t in lines[0].split(",")]
    n = len(names)
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != n:
        raise DataFormatError(
            f"{path}: expected {n} cost rows after the header, found {len(rows)}"
        )
    mat = np.empty((n, n))
    for i, ln in enumerate(rows):
        cells = ln.split(",")
        if len(cells) != n:
            raise DataFormatError(
                f"{path}: line {i + 2} has {len(cells)} entries, expected {n}"
            )
        for j, cell in enumerate(cells):
            try:
                mat[i, j] = float(cell)
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {i + 2} has a non-numeric entry {cell.strip()!r}"
                ) from None
    return CostMatrix(costs=mat, class_names=names)


def log_psi(psi: str, costs: np.ndarray) -> np.ndarray:
    """Log of the cost amplification function applied elementwise."""
    costs = np.asarray(costs, dtype=np.float64)
    if psi == "exp":
        return costs.copy()
    if psi == "identity_plus_one":
        return np.log1p(costs)
    raise ValueError(f"psi must be one of {PSI_CHOICES}, got {psi!r}")


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class SimplexSettings:
    max_eval_factor: int = 200
    spread_tol: float = 1e-8
    init_step_frac: float = 0.05

    def __post_init__(self):
        self.max_eval_factor = int(self.max_eval_factor)
        if self.max_eval_factor < 1:
            raise ValueError("max_eval_factor must be >= 1")
        self.spread_tol = check_positive(self.spread_tol, "spread_tol")
        self.init_step_frac = check_positive(self.init_step_frac, "init_step_frac")


@dataclass
class TransferConfig:
    psi: str = "exp"
    tau_mode: str = "centroid_match"
    tau_value: float = 0.0
    norm_power: float = 3.0
    simplex: SimplexSettings = field(default_factory=SimplexSettings)

    def __post_init__(self):
        if self.psi not in PSI_CHOICES:
            raise ValueError(f"psi must be one of {PSI_CHOICES}, got {self.psi!r}")
        if self.tau_mode not in TAU_MODES:
            raise ValueError(
                f"tau_mode must be one of {TAU_MODES}, got {self.tau_mode!r}"
            )
        self.tau_value = float(self.tau_value)
        if not np.isfinite(self.tau_value):
            raise ValueError("tau_value must be finite")
        self.norm_power = float(self.norm_power)
        if not (np.isfinite(self.norm_power) and self.norm_power >= 1):
            raise ValueError("norm_power must be >= 1")


# ---------------------------------------------------------------------------
# Responsibility patterns


def _joint_normalize(log_mass: np.ndarray) -> np.ndarray:
    m = log_mass.max()
    if not np.isfinite(m):
        raise DegenerateInputError("responsibility masses all vanished")
    w = np.exp(log_mass - m)
    return w / w.sum()


def responsibilities(bank: ClassGmmBank, f) -> np.ndarray:
    """(N, G) pattern normalized jointly over all class/component pairs."""
    return _joint_normalize(bank.log_joint(f))


def weighted_responsibilities(
    bank: ClassGmmBank, f, label: int, phi: CostMatrix, psi: str = "exp"
) -> np.ndarray:
    """Responsibility pattern with rows amplified by the cost of calling a
    label-``label`` feature each other class.

    The log weights are centered before use, so any constant cost column
    (in particular an all-zero one) reproduces the unweighted pattern
    exactly.
    """
    label = int(label)
    if not 0 <= label < bank.n_classes:
        raise ValueError(f"label {label} out of range")
    if phi.n_classes != bank.n_classes:
        raise ValueError("cost matrix class count does not match the bank")
    lw = log_psi(psi, phi.costs[:, label])
    lw = lw - lw.max()
    return _joint_normalize(bank.log_joint(f) + lw[:, None])


def transfer_objective(F_src: np.ndarray, F_tar: np.ndarray, norm_power: float = 3.0) -> float:
    """Elementwise p-th power distance between two responsibility patterns."""
    F_src = np.asarray(F_src, dtype=np.float64)
    F_tar = np.asarray(F_tar, dtype=np.float64)
    if F_src.shape != F_tar.shape:
        raise ValueError("responsibility patterns must have equal shape")
    if norm_power < 1:
        raise ValueError("norm_power must be >= 1")
    return float(np.sum(np.abs(F_src - F_tar) ** norm_power))


def own_class_mass(bank: ClassGmmBank, fs: FeatureSet) -> np.ndarray:
    """Per row, the unweighted responsibility mass on the row's own class."""
    out = np.empty(fs.n_samples)
    for i in range(fs.n_samples):
        F = responsibilities(bank, fs.features[i])
        out[i] = F[fs.labels[i]].sum()
    return out


# ---------------------------------------------------------------------------
# Initial embedding


def initial_embedding(
    f,
    label: int,
    u,
    src_bank: ClassGmmBank,
    tar_bank: ClassGmmBank,
    tau_mode: str = "centroid_match",
    tau_value: float = 0.0,
) -> np.ndarray:
    """Start point ``f + tau * u`` for the per-feature search.

    In centroid mode tau is the least-squares step length that takes the
    source class mixture mean closest to the target's along ``u``; a
    vanishing ``u`` gives tau = 0.
    """
    f = check_vector(f, name="feature")
    u = check_vector(u, dim=f.shape[0], name="displacement")
    if tau_mode == "fixed":
        tau = float(tau_value)
    elif tau_mode == "centroid_match":
        nu = float(u @ u)
        if nu < 1e-24:
            tau = 0.0
        else:
            gap = tar_bank.mixture_mean(label) - src_bank.mixture_mean(label)
            tau = float(u @ gap / nu)
    else:
        raise ValueError(f"tau_mode must be one of {TAU_MODES}, got {tau_mode!r}")
    return f + tau * u


# ---------------------------------------------------------------------------
# Simplex minimizer


def _nelder_mead(fn, x0, steps, spread_tol, max_evals):
    """Standard reflect/expand/contract/shrink simplex descent.

    Returns (best point, best value, evaluation count, value at x0). The
    start point is a vertex, so the best value never exceeds the start
    value.
    """
    n = x0.shape[0]
    pts = [x0.copy()]
    for d in range(n):
        v = x0.copy()
        v[d] += steps[d]
        pts.append(v)
    vals = [fn(p) for p in pts]
    evals = n + 1
    f_start = vals[0]

    while True:
        order = np.argsort(vals, kind="stable")
        pts = [pts[i] for i in order]
        vals = [vals[i] for i in order]
        if vals[-1] - vals[0] < spread_tol:
            break
        if evals >= max_evals:
            break
        centroid = np.mean(pts[:-1], axis=0)
        worst = pts[-1]
        xr = centroid + (centroid - worst)
        fr = fn(xr)
        evals += 1
        if fr < vals[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = fn(xe)
            evals += 1
            if fe < fr:
                pts[-1], vals[-1] = xe, fe
            else:
                pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-2]:
            pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = fn(xc)
            evals += 1
            if fc <= fr:
                pts[-1], vals[-1] = xc, fc
                continue
        else:
            xc = centroid - 0.5 * (centroid - worst)
            fc = fn(xc)
            evals += 1
            if fc < vals[-1]:
                pts[-1], vals[-1] = xc, fc
                continue
        # shrink toward the best vertex
        for i in range(1, n + 1):
            pts[i] = pts[0] + 0.5 * (pts[i] - pts[0])
            vals[i] = fn(pts[i])
        evals += n

    best = int(np.argmin(vals))
    return pts[best], vals[best], evals, f_start


class _TargetObjective:
    """Vectorized weighted target pattern and matching objective for one label."""

    def __init__(self, tar_bank: ClassGmmBank, label: int, phi: CostMatrix, psi: str,
                 norm_power: float):
        N, G, k = tar_bank._means.shape
        self.means = tar_bank._means.reshape(N * G, k)
        self.inv_std = 1.0 / np.sqrt(tar_bank._vars.reshape(N * G, k))
        lw = log_psi(psi, phi.costs[:, label])
        lw = lw - lw.max()
        self.const = (
            tar_bank._log_w + tar_bank._log_norm + lw[:, None]
        ).reshape(N * G)
        self.norm_power = norm_power
        self.shape = (N, G)

    def pattern(self, x: np.ndarray) -> np.ndarray:
        z = (x[None, :] - self.means) * self.inv_std
        lm = self.const - 0.5 * np.sum(z * z, axis=1)
        m = lm.max()
        if not np.isfinite(m):
            raise DegenerateInputError("responsibility masses all vanished")
        w = np.exp(lm - m)
        return w / w.sum()

    def value(self, x: np.ndarray, F_src_flat: np.ndarray) -> float:
        v = float(np.sum(np.abs(self.pattern(x) - F_src_flat) ** self.norm_power))
        if not np.isfinite(v):
            raise DegenerateInputError(
                f"non-finite transfer objective at vertex {x.tolist()}"
            )
        return v


# ---------------------------------------------------------------------------
# Per-feature and whole-set transfer


def transfer_feature(
    f,
    label: int,
    src_bank: ClassGmmBank,
    tar_bank: ClassGmmBank,
    phi: CostMatrix,
    cfg: TransferConfig,
    u,
) -> tuple[np.ndarray, float, float, int]:
    """Move one feature; returns (new feature, objective at the start point,
    objective at the returned point, evaluation count)."""
    ctx = _TargetObjective(tar_bank, int(label), phi, cfg.psi, cfg.norm_power)
    return _transfer_one(f, int(label), src_bank, tar_bank, ctx, cfg, u)


def _transfer_one(f, label, src_bank, tar_bank, ctx, cfg, u):
    f = check_vector(f, dim=tar_bank.dim, name="feature")
    F_src = responsibilities(src_bank, f).ravel()
    start = initial_embedding(
        f, label, u, src_bank, tar_bank, cfg.tau_mode, cfg.tau_value
    )
    sigma = np.sqrt(tar_bank.mixture_var(label))
    steps = np.maximum(cfg.simplex.init_step_frac * sigma, 1e-12)
    max_evals = cfg.simplex.max_eval_factor * f.shape[0]
    best, f_best, evals, f_start = _nelder_mead(
        lambda x: ctx.value(x, F_src),
        start,
        steps,
        cfg.simplex.spread_tol,
        max_evals,
    )
    return best, float(f_start), float(f_best), int(evals)


@dataclass
class TransferResult:
    transferred: FeatureSet
    objective_before: np.ndarray
    objective_after: np.ndarray
    eval_counts: np.ndarray


def _transfer_block(args):
    src_bank, tar_bank, phi, cfg, X, labels, u_by_class = args
    contexts = {}
    rows = np.empty_like(X)
    before = np.empty(X.shape[0])
    after = np.empty(X.shape[0])
    evals = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        lab = int(labels[i])
        if lab not in contexts:
            contexts[lab] = _TargetObjective(
                tar_bank, lab, phi, cfg.psi, cfg.norm_power
            )
        rows[i], before[i], after[i], evals[i] = _transfer_one(
            X[i], lab, src_bank, tar_bank, contexts[lab], cfg, u_by_class[lab]
        )
    return rows, before, after, evals


def transfer_all(
    source: FeatureSet,
    target: FeatureSet,
    phi: CostMatrix,
    cfg: TransferConfig,
    G: int = 3,
    seed: int = 0,
    threads: int = 1,
) -> TransferResult:
    """Fit both banks and move every source feature toward the target domain.

    Labels, groups, and domain tags of the source rows are preserved; only
    the feature matrix changes. Deterministic for a fixed seed, independent
    of ``threads``.
    """
    if source.class_names != target.class_names:
        raise DegenerateInputError("source and target must share a class list")
    if source.n_features != target.n_features:
        raise DegenerateInputError("source and target must share a feature width")
    src_bank = fit_class_gmms(source, G=G, seed=seed, domain_tag="source")
    tar_bank = fit_class_gmms(target, G=G, seed=seed, domain_tag="target")
    return transfer_with_banks(source, src_bank, tar_bank, phi, cfg, threads=threads)


def transfer_with_banks(
    source: FeatureSet,
    src_bank: ClassGmmBank,
    tar_bank: ClassGmmBank,
    phi: CostMatrix,
    cfg: TransferConfig,
    threads: int = 1,
) -> TransferResult:
    """Transfer with mixture banks fitted elsewhere (for staged runs)."""
    if src_bank.class_names != list(source.class_names):
        raise DegenerateInputError("source bank does not cover the source classes")
    if tar_bank.class_names != list(source.class_names):
        raise DegenerateInputError("target bank does not cover the source classes")
    if src_bank.dim != source.n_features or tar_bank.dim != source.n_features:
        raise DegenerateInputError("bank width does not match the features")
    if phi.n_classes != len(source.class_names):
        raise ValueError("cost matrix does not match the class list")
    threads = int(threads)
    if threads < 1:
        raise ValueError("threads must be >= 1")

    u_by_class = {
        int(c): fisher_displacement(
            tar_bank, int(c), source.features[source.rows_of_class(int(c))]
        )
        for c in source.present_classes()
    }

    if threads == 1:
        rows, before, after, evals = _transfer_block(
            (src_bank, tar_bank, phi, cfg, source.features, source.labels, u_by_class)
        )
    else:
        blocks = np.array_split(np.arange(source.n_samples), threads)
        blocks = [b for b in blocks if b.size]
        payloads = [
            (src_bank, tar_bank, phi, cfg, source.features[b], source.labels[b],
             u_by_class)
            for b in blocks
        ]
        with ProcessPoolExecutor(max_workers=len(payloads)) as pool:
            parts = list(pool.map(_transfer_block, payloads))
        rows = np.vstack([p[0] for p in parts])
        before = np.concatenate([p[1] for p in parts])
        after = np.concatenate([p[2] for p in parts])
        evals = np.concatenate([p[3] for p in parts])

    if np.any(after > before + 1e-12):
        raise ConvergenceError("objective increased during transfer")
    return TransferResult(
        transferred=source.with_features(rows),
        objective_before=before,
        objective_after=after,
        eval_counts=evals,
    )


def save_transfer_diagnostics(result: TransferResult, path) -> None:
    body = [
        f"rows {result.eval_counts.shape[0]}",
        f"objective_before {persist.fmt_floats(result.objective_before)}",
        f"objective_after {persist.fmt_floats(result.objective_after)}",
        "eval_counts " + " ".join(str(int(e)) for e in result.eval_counts),
    ]
    persist.write_artifact(path, "transfer-diagnostics", body)


class CostBiasedTransfer(BaseEstimator):
    """Estimator facade over :func:`transfer_all`.

    ``fit`` learns the source and target banks plus per-class displacement
    directions from the given pair of feature sets; ``transform`` then moves
    the rows of a source-side feature set. Transforming the same set used in
    ``fit`` reproduces ``transfer_all`` exactly.
    """

    def __init__(
        self,
        cost_matrix: CostMatrix | None = None,
        n_components: int = 3,
        config: TransferConfig | None = None,
        seed: int = 0,
        threads: int = 1,
    ):
        self.cost_matrix = cost_matrix
        self.n_components = n_components
        self.config = config
        self.seed = seed
        self.threads = threads

    def fit(self, source: FeatureSet, target: FeatureSet):
        cfg = self.config if self.config is not None else TransferConfig()
        phi = (
            self.cost_matrix
            if self.cost_matrix is not None
            else CostMatrix.zero(source.class_names)
        )
        if phi.class_names != source.class_names:
            phi = phi.reordered(source.class_names)
        self.src_bank_ = fit_class_gmms(
            source, G=self.n_components, seed=self.seed, domain_tag="source"
        )
        self.tar_bank_ = fit_class_gmms(
            target, G=self.n_components, seed=self.seed, domain_tag="target"
        )
        self.u_by_class_ = {
            c: fisher_displacement(
                self.tar_bank_, c, source.features[source.rows_of_class(c)]
            )
            for c in range(source.n_classes)
        }
        self.phi_ = phi
        self.cfg_ = cfg
        return self

    def transform(self, fs: FeatureSet) -> FeatureSet:
        if not hasattr(self, "src_bank_"):
            raise ValueError("CostBiasedTransfer is not fitted yet")
        rows, before, after, evals = _transfer_block(
            (
                self.src_bank_,
                self.tar_bank_,
                self.phi_,
                self.cfg_,
                fs.features,
                fs.labels,
                self.u_by_class_,
            )
        )
        self.transfer_result_ = TransferResult(
            transferred=fs.with_features(rows),
            objective_before=before,
            objective_after=after,
            eval_counts=evals,
        )
        return self.transfer_result_.transferred
