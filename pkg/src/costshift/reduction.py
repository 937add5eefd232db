"""Shared-subspace reduction that aligns marginal and per-class distributions.

Source and target rows are stacked and a projection basis is found from the
generalized symmetric eigenproblem

    (X M X^T + eps I) a = lambda (X H X^T + eps I) a

where M sums the pooled and per-class discrepancy coefficient matrices, H is
the centering matrix, and the k smallest eigenpairs are kept. The returned
basis is normalized against the right-hand operator, so projected data keeps
unit variance scale under that metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_positive
from .dataset import FeatureSet
from .errors import ArtifactError, DegenerateInputError, EigenSolverError
from . import persist

RESIDUAL_RTOL = 1e-8
BASIS_NORM_TOL = 1e-6


@dataclass
class MmdMatrices:
    """Pooled (m0) and per-class (mc) discrepancy coefficients for one pair.

    All matrices are n x n with n = n_source + n_target, laid out source rows
    first; h is the centering matrix I - (1/n)J. Every row of m0, the mc and
    h sums to zero, so constant offsets in the data do not affect the induced
    quadratic forms.
    """

    m0: np.ndarray
    mc: list[np.ndarray]
    h: np.ndarray
    n_source: int
    n_target: int


def _pair_counts(labels: np.ndarray, n_classes: int) -> np.ndarray:
    return np.bincount(labels, minlength=n_classes)


def build_mmd(source: FeatureSet, target: FeatureSet) -> MmdMatrices:
    """Coefficient matrices for one source/target pair.

    A class with samples in only one of the two domains is an error; a class
    declared but absent from both contributes a zero matrix.
    """
    if source.class_names != target.class_names:
        raise DegenerateInputError("source and target must share a class list")
    ns, nt = source.n_samples, target.n_samples
    n = ns + nt
    m0 = np.empty((n, n))
    m0[:ns, :ns] = 1.0 / (ns * ns)
    m0[ns:, ns:] = 1.0 / (nt * nt)
    m0[:ns, ns:] = -1.0 / (ns * nt)
    m0[ns:, :ns] = -1.0 / (ns * nt)

    cs = _pair_counts(source.labels, source.n_classes)
    ct = _pair_counts(target.labels, target.n_classes)
    mcs = []
    for c in range(source.n_classes):
        mc = np.zeros((n, n))
        if cs[c] == 0 and ct[c] == 0:
            mcs.append(mc)
            continue
        if cs[c] == 0 or ct[c] == 0:
            side = "source" if cs[c] == 0 else "target"
            raise DegenerateInputError(
                f"class {source.class_names[c]!r} has no samples in the {side} domain"
            )
        rs = np.flatnonzero(source.labels == c)
        rt = ns + np.flatnonzero(target.labels == c)
        mc[np.ix_(rs, rs)] = 1.0 / (cs[c] * cs[c])
        mc[np.ix_(rt, rt)] = 1.0 / (ct[c] * ct[c])
        mc[np.ix_(rs, rt)] = -1.0 / (cs[c] * ct[c])
        mc[np.ix_(rt, rs)] = -1.0 / (cs[c] * ct[c])
        mcs.append(mc)
    h = np.eye(n) - np.full((n, n), 1.0 / n)
    return MmdMatrices(m0=m0, mc=mcs, h=h, n_source=ns, n_target=nt)


@dataclass
class Projection:
    """Fitted linear map to the shared subspace."""

    basis: np.ndarray
    eigenvalues: np.ndarray
    mean: np.ndarray
    k: int
    eps: float

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=np.float64)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if self.basis.ndim != 2:
            raise ValueError("basis must be 2-d")
        if self.basis.shape[1] != self.k:
            raise ValueError("basis column count must equal k")
        if self.mean.shape[0] != self.basis.shape[0]:
            raise ValueError("mean length must match basis rows")


def _accumulate_pair(
    M: np.ndarray,
    rows_s: np.ndarray,
    rows_t: np.ndarray,
    labels_s: np.ndarray,
    labels_t: np.ndarray,
    n_classes: int,
    class_names: list[str],
) -> None:
    ns, nt = rows_s.shape[0], rows_t.shape[0]
    M[np.ix_(rows_s, rows_s)] += 1.0 / (ns * ns)
    M[np.ix_(rows_t, rows_t)] += 1.0 / (nt * nt)
    M[np.ix_(rows_s, rows_t)] += -1.0 / (ns * nt)
    M[np.ix_(rows_t, rows_s)] += -1.0 / (ns * nt)
    cs = _pair_counts(labels_s, n_classes)
    ct = _pair_counts(labels_t, n_classes)
    for c in range(n_classes):
        if cs[c] == 0 and ct[c] == 0:
            continue
        if cs[c] == 0 or ct[c] == 0:
            side = "source" if cs[c] == 0 else "target"
            raise DegenerateInputError(
                f"class {class_names[c]!r} has no samples in the {side} domain"
            )
        rs = rows_s[labels_s == c]
        rt = rows_t[labels_t == c]
        M[np.ix_(rs, rs)] += 1.0 / (cs[c] * cs[c])
        M[np.ix_(rt, rt)] += 1.0 / (ct[c] * ct[c])
        M[np.ix_(rs, rt)] += -1.0 / (cs[c] * ct[c])
        M[np.ix_(rt, rs)] += -1.0 / (cs[c] * ct[c])


def fit_projection_multi(
    sources: list[FeatureSet],
    target: FeatureSet,
    k: int = 50,
    eps: float = 1.0,
) -> Projection:
    """Fit one projection aligning every source with the target.

    The discrepancy coefficients of each (source, target) pair are summed on
    the stacked layout [sources..., target], so a single basis serves all
    pairs. With one source this is identical to :func:`fit_projection`.
    """
    if not sources:
        raise ValueError("need at least one source feature set")
    eps = check_positive(eps, "eps")
    k = int(k)
    for s in sources:
        if s.class_names != target.class_names:
            raise DegenerateInputError("all domains must share a class list")
        if s.n_features != target.n_features:
            raise DegenerateInputError("all domains must share a feature width")
    D = target.n_features
    if not 1 <= k <= D:
        raise ValueError(f"k must lie in [1, {D}], got {k}")

    blocks = [s.features for s in sources] + [target.features]
    F = np.vstack(blocks)
    n = F.shape[0]
    M = np.zeros((n, n))
    offsets = np.cumsum([0] + [b.shape[0] for b in blocks])
    rows_t = np.arange(offsets[-2], offsets[-1])
    for i, s in enumerate(sources):
        rows_s = np.arange(offsets[i], offsets[i + 1])
        _accumulate_pair(
            M, rows_s, rows_t, s.labels, target.labels, target.n_classes,
            target.class_names,
        )

    mean = F.mean(axis=0)
    Fc = F - mean
    lhs = Fc.T @ M @ Fc + eps * np.eye(D)
    rhs = Fc.T @ Fc + eps * np.eye(D)
    lhs = 0.5 * (lhs + lhs.T)
    rhs = 0.5 * (rhs + rhs.T)

    try:
        w, v = scipy.linalg.eigh(lhs, rhs)
    except scipy.linalg.LinAlgError as exc:
        raise EigenSolverError(f"generalized eigensolution failed: {exc}") from None

    basis = v[:, :k]
    vals = w[:k]
    if np.any(vals < -1e-10):
        raise EigenSolverError(f"negative eigenvalue {vals.min()} in a definite pencil")

    scale = np.linalg.norm(lhs) + np.abs(vals) * np.linalg.norm(rhs)
    resid = lhs @ basis - rhs @ basis * vals[None, :]
    resid_norm = np.linalg.norm(resid, axis=0)
    bound = RESIDUAL_RTOL * np.linalg.norm(basis, axis=0) * scale
    if np.any(resid_norm > bound):
        worst = int(np.argmax(resid_norm - bound))
        raise EigenSolverError(
            f"eigenpair {worst} residual {resid_norm[worst]:.3e} exceeds "
            f"tolerance {bound[worst]:.3e}"
        )
    gram = basis.T @ rhs @ basis - np.eye(k)
    if np.max(np.abs(gram)) > BASIS_NORM_TOL:
        raise EigenSolverError(
            f"basis normalization error {np.max(np.abs(gram)):.3e} exceeds "
            f"{BASIS_NORM_TOL}"
        )
    return Projection(basis=basis, eigenvalues=vals, mean=mean, k=k, eps=eps)


def fit_projection(
    source: FeatureSet, target: FeatureSet, k: int = 50, eps: float = 1.0
) -> Projection:
    """Fit the shared subspace for a single source/target pair."""
    return fit_projection_multi([source], target, k=k, eps=eps)


def project(projection: Projection, fs: FeatureSet) -> FeatureSet:
    if fs.n_features != projection.basis.shape[0]:
        raise ValueError(
            f"feature width {fs.n_features} does not match projection input "
            f"width {projection.basis.shape[0]}"
        )
    Z = (fs.features - projection.mean) @ projection.basis
    return fs.with_features(Z)


def save_projection(projection: Projection, path) -> None:
    body = [
        f"k {projection.k}",
        f"eps {persist.fmt_floats([projection.eps])}",
        f"dim {projection.basis.shape[0]}",
        f"eigenvalues {persist.fmt_floats(projection.eigenvalues)}",
        f"mean {persist.fmt_floats(projection.mean)}",
    ]
    for d in range(projection.basis.shape[0]):
        body.append(f"basis_row {persist.fmt_floats(projection.basis[d])}")
    persist.write_artifact(path, "projection", body)


def load_projection(path) -> Projection:
    rows = persist.read_artifact(path, "projection")
    r = persist.BodyReader(rows, path)
    k = r.take_int("k")
    eps = r.take_float("eps")
    dim = r.take_int("dim")
    vals = r.take_floats("eigenvalues")
    mean = r.take_floats("mean")
    basis = np.empty((dim, k))
    for d in range(dim):
        row = r.take_floats("basis_row")
        if row.shape[0] != k:
            raise ArtifactError(f"{path}: basis_row {d} has wrong width")
        basis[d] = row
    if vals.shape[0] != k or mean.shape[0] != dim:
        raise ArtifactError(f"{path}: inconsistent projection dimensions")
    return Projection(basis=basis, eigenvalues=vals, mean=mean, k=k, eps=eps)


class SharedSubspace(BaseEstimator, TransformerMixin):
    """Estimator facade over :func:`fit_projection_multi`.

    ``fit`` takes the source feature set (or a list of them) and the target
    feature set; ``transform`` maps any feature set with the same width into
    the shared subspace.
    """

    def __init__(self, k: int = 50, eps: float = 1.0):
        self.k = k
        self.eps = eps

    def fit(self, source, target):
        sources = [source] if isinstance(source, FeatureSet) else list(source)
        self.projection_ = fit_projection_multi(sources, target, k=self.k, eps=self.eps)
        return self

    def transform(self, fs: FeatureSet) -> FeatureSet:
        if not hasattr(self, "projection_"):
            raise ValueError("SharedSubspace is not fitted yet")
        return project(self.projection_, fs)
