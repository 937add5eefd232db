"""Per-class diagonal Gaussian mixtures and the class displacement vector.

One mixture with G components is fit per declared class by EM. Initialization
is a deterministic farthest-first sweep over the class samples, which keeps
fits reproducible and invariant to duplicating every sample. Variances are
diagonal and floored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ._validation import check_feature_matrix
from .dataset import FeatureSet
from .errors import ArtifactError, ConvergenceError, DegenerateInputError
from . import persist

VAR_FLOOR = 1e-6
_EMPTY_MASS = 1e-10
_MAX_RESEEDS = 3


@dataclass
class GaussianComponent:
    weight: float
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.weight = float(self.weight)
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.var = np.asarray(self.var, dtype=np.float64).ravel()
        if self.var.shape != self.mean.shape:
            raise ValueError("component mean and var must have equal length")
        if not (0.0 <= self.weight <= 1.0 + 1e-12):
            raise ValueError(f"component weight {self.weight} outside [0, 1]")
        if np.any(self.var <= 0):
            raise ValueError("component variances must be positive")


@dataclass
class ClassGmmBank:
    """Stack of per-class mixtures over a common feature space."""

    per_class: list[list[GaussianComponent]]
    domain_tag: str
    class_names: list[str]
    _means: np.ndarray = field(init=False, repr=False)
    _vars: np.ndarray = field(init=False, repr=False)
    _log_w: np.ndarray = field(init=False, repr=False)
    _log_norm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.domain_tag not in ("source", "target"):
            raise ValueError("domain_tag must be 'source' or 'target'")
        if len(self.per_class) != len(self.class_names):
            raise ValueError("need one component list per class name")
        if not self.per_class:
            raise ValueError("bank must cover at least one class")
        G = len(self.per_class[0])
        for c, comps in enumerate(self.per_class):
            if len(comps) != G:
                raise ValueError("all classes must use the same component count")
            total = sum(comp.weight for comp in comps)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(
                    f"class {self.class_names[c]!r} weights sum to {total}, not 1"
                )
        dim = self.per_class[0][0].mean.shape[0]
        N = len(self.per_class)
        self._means = np.empty((N, G, dim))
        self._vars = np.empty((N, G, dim))
        self._log_w = np.empty((N, G))
        for i, comps in enumerate(self.per_class):
            for j, comp in enumerate(comps):
                if comp.mean.shape[0] != dim:
                    raise ValueError("all components must share the feature width")
                self._means[i, j] = comp.mean
                self._vars[i, j] = comp.var
                self._log_w[i, j] = np.log(max(comp.weight, 1e-300))
        self._log_norm = -0.5 * np.sum(np.log(2.0 * np.pi * self._vars), axis=2)

    @property
    def n_classes(self) -> int:
        return len(self.per_class)

    @property
    def n_components(self) -> int:
        return len(self.per_class[0])

    @property
    def dim(self) -> int:
        return self._means.shape[2]

    def log_joint(self, f: np.ndarray) -> np.ndarray:
        """(N, G) array of log(w_ij) + log N(f; mu_ij, var_ij)."""
        f = np.asarray(f, dtype=np.float64).ravel()
        if f.shape[0] != self.dim:
            raise ValueError(f"feature length {f.shape[0]} != bank dim {self.dim}")
        if not np.all(np.isfinite(f)):
            raise DegenerateInputError("feature vector contains non-finite values")
        z = (f[None, None, :] - self._means) / np.sqrt(self._vars)
        with np.errstate(over="ignore"):
            # distant points overflow to -inf joints; callers treat that as
            # degenerate input rather than a numeric fault
            return self._log_w + self._log_norm - 0.5 * np.sum(z * z, axis=2)

    def class_posteriors(self, c: int, X: np.ndarray) -> np.ndarray:
        """(n, G) responsibilities within class c's mixture."""
        X = check_feature_matrix(X, "samples")
        lp = (
            self._log_w[c][None, :]
            + self._log_norm[c][None, :]
            - 0.5
            * np.sum(
                ((X[:, None, :] - self._means[c][None]) ** 2)
                / self._vars[c][None],
                axis=2,
            )
        )
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def mixture_mean(self, c: int) -> np.ndarray:
        w = np.exp(self._log_w[c])
        return np.einsum("g,gd->d", w, self._means[c])

    def mixture_var(self, c: int) -> np.ndarray:
        w = np.exp(self._log_w[c])
        second = np.einsum("g,gd->d", w, self._vars[c] + self._means[c] ** 2)
        return np.maximum(second - self.mixture_mean(c) ** 2, 1e-300)


def _farthest_first_centers(X: np.ndarray, G: int) -> np.ndarray:
    center = X.mean(axis=0)
    d0 = np.sum((X - center) ** 2, axis=1)
    picks = [int(np.argmax(d0))]
    mind = np.sum((X - X[picks[0]]) ** 2, axis=1)
    while len(picks) < G:
        nxt = int(np.argmax(mind))
        picks.append(nxt)
        mind = np.minimum(mind, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[np.asarray(picks)].copy()


def em_fit_single(
    X: np.ndarray,
    G: int,
    seed: int = 0,
    var_floor: float = VAR_FLOOR,
    max_iter: int = 200,
    tol: float = 1e-8,
) -> tuple[list[GaussianComponent], list[float]]:
    """Fit one G-component diagonal mixture; returns components and the
    log-likelihood trace (one entry per E-step).

    Initialization is deterministic, so ``seed`` does not influence the fit;
    it is kept for interface stability.
    """
    del seed
    X = check_feature_matrix(X, "samples")
    S, dim = X.shape
    G = int(G)
    if G < 1:
        raise ValueError("G must be >= 1")
    if S < G:
        raise DegenerateInputError(f"{S} samples cannot support {G} components")

    means = _farthest_first_centers(X, G)
    d2 = np.sum((X[:, None, :] - means[None]) ** 2, axis=2)
    assign = np.argmin(d2, axis=1)
    weights = np.full(G, 1.0 / G)
    variances = np.empty((G, dim))
    global_var = np.maximum(X.var(axis=0), var_floor)
    for j in range(G):
        rows = assign == j
        if rows.sum() == 0:
            variances[j] = global_var
            continue
        means[j] = X[rows].mean(axis=0)
        variances[j] = np.maximum(X[rows].var(axis=0), var_floor)
        weights[j] = rows.sum() / S
    weights = weights / weights.sum()

    trace: list[float] = []
    prev_ll = -np.inf
    reseeds = 0
    it = 0
    while it < max_iter:
        it += 1
        log_norm = -0.5 * np.sum(np.log(2.0 * np.pi * variances), axis=1)
        lp = (
            np.log(weights)[None, :]
            + log_norm[None, :]
            - 0.5
            * np.sum(((X[:, None, :] - means[None]) ** 2) / variances[None], axis=2)
        )
        row_ls = logsumexp(lp, axis=1)
        ll = float(np.sum(row_ls))
        trace.append(ll)
        if ll < prev_ll - 1e-9:
            raise ConvergenceError(
                f"EM log-likelihood decreased from {prev_ll} to {ll}"
            )
        gamma = np.exp(lp - row_ls[:, None])
        mass = gamma.sum(axis=0)
        starved = np.flatnonzero(mass < _EMPTY_MASS)
        if starved.size:
            reseeds += 1
            if reseeds > _MAX_RESEEDS:
                raise ConvergenceError(
                    f"component starved after {_MAX_RESEEDS} reseeds"
                )
            # pull starved components to the points worst explained now
            far = np.argsort(row_ls, kind="stable")[: starved.size]
            for j, p in zip(starved, far):
                means[j] = X[int(p)]
                variances[j] = global_var
                weights[j] = 1.0 / S
            weights = weights / weights.sum()
            prev_ll = -np.inf
            continue
        converged = ll - prev_ll <= tol * (1.0 + abs(ll)) and np.isfinite(prev_ll)
        pre_floor = np.empty_like(variances)
        means = (gamma.T @ X) / mass[:, None]
        pre_floor[:] = (gamma.T @ (X * X)) / mass[:, None] - means**2
        variances = np.maximum(pre_floor, var_floor)
        weights = mass / S
        prev_ll = ll
        if converged:
            break
    comps = [
        GaussianComponent(weight=weights[j], mean=means[j], var=variances[j])
        for j in range(G)
    ]
    return comps, trace


def fit_class_gmms(
    fs: FeatureSet,
    G: int = 3,
    seed: int = 0,
    domain_tag: str = "source",
    var_floor: float = VAR_FLOOR,
    max_iter: int = 200,
    tol: float = 1e-8,
) -> ClassGmmBank:
    """Fit one diagonal mixture per declared class of ``fs``."""
    per_class = []
    for c, name in enumerate(fs.class_names):
        rows = fs.rows_of_class(c)
        if rows.shape[0] < G:
            raise DegenerateInputError(
                f"class {name!r} has {rows.shape[0]} samples, needs at least G={G}"
            )
        comps, _ = em_fit_single(
            fs.features[rows], G, seed=seed, var_floor=var_floor,
            max_iter=max_iter, tol=tol,
        )
        per_class.append(comps)
    return ClassGmmBank(
        per_class=per_class, domain_tag=domain_tag, class_names=list(fs.class_names)
    )


def fisher_displacement(
    bank: ClassGmmBank, class_index: int, features: np.ndarray
) -> np.ndarray:
    """Mean-parameter score of ``features`` under one class of the bank.

    The result points from the sample cloud toward the bank's class
    distribution, so adding it to a feature moves the feature closer to the
    class as the bank sees it.
    """
    X = check_feature_matrix(features, "features")
    c = int(class_index)
    if not 0 <= c < bank.n_classes:
        raise ValueError(f"class index {c} out of range")
    if X.shape[1] != bank.dim:
        raise ValueError("feature width does not match the bank")
    S = X.shape[0]
    gamma = bank.class_posteriors(c, X)
    w = np.exp(bank._log_w[c])
    sigma = np.sqrt(bank._vars[c])
    g = np.einsum("sg,sgd->gd", gamma, (X[:, None, :] - bank._means[c][None]) / sigma)
    g = g / (S * np.sqrt(w))[:, None]
    return -np.sum(g, axis=0)


def save_bank(bank: ClassGmmBank, path) -> None:
    body = [
        f"domain_tag {bank.domain_tag}",
        "classes " + " ".join(bank.class_names),
        f"components {bank.n_components}",
        f"dim {bank.dim}",
    ]
    for c, comps in enumerate(bank.per_class):
        body.append(f"class {c}")
        for comp in comps:
            body.append(f"weight {persist.fmt_floats([comp.weight])}")
            body.append(f"mean {persist.fmt_floats(comp.mean)}")
            body.append(f"var {persist.fmt_floats(comp.var)}")
    persist.write_artifact(path, "gmm-bank", body)


def load_bank(path) -> ClassGmmBank:
    rows = persist.read_artifact(path, "gmm-bank")
    r = persist.BodyReader(rows, path)
    tag = r.take_str("domain_tag")
    names = r.take_tokens("classes")
    G = r.take_int("components")
    dim = r.take_int("dim")
    per_class = []
    for c in range(len(names)):
        if r.take_int("class") != c:
            raise ArtifactError(f"{path}: class blocks out of order")
        comps = []
        for _ in range(G):
            wt = r.take_float("weight")
            mean = r.take_floats("mean")
            var = r.take_floats("var")
            if mean.shape[0] != dim or var.shape[0] != dim:
                raise ArtifactError(f"{path}: component width mismatch")
            comps.append(GaussianComponent(weight=wt, mean=mean, var=var))
        per_class.append(comps)
    return ClassGmmBank(per_class=per_class, domain_tag=tag, class_names=names)
