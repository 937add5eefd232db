"""RBF-kernel SVMs trained by sequential minimal optimization.

Binary machines accept a per-example weight that scales the box constraint,
so the same solver serves plain one-vs-one and the cost-weighted reduction
where each pair machine is trained on |cost difference| weights and labels
pointing at the cheaper class of the pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from ._validation import check_feature_matrix, check_labels
from .dataset import FeatureSet
from .errors import (
    ArtifactError,
    ConvergenceError,
    DegenerateInputError,
    GridSearchError,
)
from .transfer import CostMatrix
from . import persist

KKT_TOL = 1e-3
DEFAULT_GAMMAS = tuple(float(2.0**p) for p in range(-7, 4))
DEFAULT_CS = tuple(float(2.0**p) for p in range(-3, 8))


@dataclass
class KernelParams:
    gamma: float
    c: float

    def __post_init__(self):
        self.gamma = float(self.gamma)
        self.c = float(self.c)
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError("gamma must be > 0")
        if not (np.isfinite(self.c) and self.c > 0):
            raise ValueError("c must be > 0")


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    a2 = np.sum(A * A, axis=1)[:, None]
    b2 = np.sum(B * B, axis=1)[None, :]
    d2 = np.maximum(a2 + b2 - 2.0 * (A @ B.T), 0.0)
    return np.exp(-gamma * d2)


@dataclass
class BinarySvm:
    support_vectors: np.ndarray
    alphas_signed: np.ndarray
    bias: float
    params: KernelParams
    sv_indices: np.ndarray | None = None


def decision_values(svm: BinarySvm, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if svm.support_vectors.shape[0] == 0:
        return np.full(X.shape[0], svm.bias)
    K = rbf_kernel(X, svm.support_vectors, svm.params.gamma)
    return K @ svm.alphas_signed + svm.bias


def _kkt_vector(alpha, y, E, caps):
    r = y * E
    margin = 1e-8 * np.maximum(caps, 1e-30)
    lo = alpha <= margin
    hi = alpha >= caps - margin
    v = np.abs(r)
    v = np.where(hi & ~lo, np.maximum(0.0, r), v)
    v = np.where(lo, np.maximum(0.0, -r), v)
    return v


def _smo(K, y, caps, tol, max_updates):
    n = y.shape[0]
    alpha = np.zeros(n)
    b = 0.0
    E = -y.astype(np.float64)
    updates = 0
    since_full = 0
    excluded = np.zeros(n, dtype=bool)

    while updates < max_updates:
        viol = _kkt_vector(alpha, y, E, caps)
        if viol.max() <= tol:
            return alpha, b, True
        cand = np.where(excluded, -1.0, viol)
        i = int(np.argmax(cand))
        if cand[i] <= tol:
            # every remaining violator refused to move
            return alpha, b, False
        gap = np.abs(E - E[i])
        gap[i] = -1.0
        order = np.argsort(-gap, kind="stable")
        progressed = False
        for j in order:
            j = int(j)
            if j == i or caps[j] <= 0:
                continue
            if y[i] != y[j]:
                L = max(0.0, alpha[j] - alpha[i])
                H = min(caps[j], caps[i] + alpha[j] - alpha[i])
            else:
                L = max(0.0, alpha[i] + alpha[j] - caps[i])
                H = min(caps[j], alpha[i] + alpha[j])
            if H - L < 1e-12:
                continue
            eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if eta <= 1e-12:
                continue
            aj = alpha[j] + y[j] * (E[i] - E[j]) / eta
            aj = min(max(aj, L), H)
            d_aj = aj - alpha[j]
            if abs(d_aj) < 1e-12:
                continue
            ai = alpha[i] + y[i] * y[j] * (alpha[j] - aj)
            d_ai = ai - alpha[i]
            b1 = b - E[i] - y[i] * d_ai * K[i, i] - y[j] * d_aj * K[i, j]
            b2 = b - E[j] - y[i] * d_ai * K[i, j] - y[j] * d_aj * K[j, j]
            mi = 1e-8 * max(caps[i], 1e-30)
            mj = 1e-8 * max(caps[j], 1e-30)
            if mi < ai < caps[i] - mi:
                b_new = b1
            elif mj < aj < caps[j] - mj:
                b_new = b2
            else:
                b_new = 0.5 * (b1 + b2)
            E = E + y[i] * d_ai * K[:, i] + y[j] * d_aj * K[:, j] + (b_new - b)
            alpha[i] = ai
            alpha[j] = aj
            b = b_new
            updates += 1
            since_full += 1
            if since_full >= n:
                E = (alpha * y) @ K + b - y
                since_full = 0
            excluded[:] = False
            progressed = True
            break
        if not progressed:
            excluded[i] = True
    E = (alpha * y) @ K + b - y
    return alpha, b, bool(_kkt_vector(alpha, y, E, caps).max() <= tol)


def train_binary(
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    params: KernelParams,
    tol: float = KKT_TOL,
    max_updates: int | None = None,
) -> BinarySvm:
    """Train one soft-margin machine with per-example box caps c * weight.

    Zero-weight rows are ignored. Raises if only one side remains or the
    solver cannot reach the KKT tolerance.
    """
    X = check_feature_matrix(X, "features")
    y = np.asarray(y, dtype=np.float64).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0] or weights.shape[0] != X.shape[0]:
        raise ValueError("X, y, and weights must have equal row counts")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("binary labels must be -1 or +1")
    if np.any(~np.isfinite(weights)) or np.any(weights < 0):
        raise ValueError("weights must be finite and non-negative")

    keep = np.flatnonzero(weights > 0)
    if keep.size == 0:
        raise DegenerateInputError("every example has zero weight")
    Xk, yk, wk = X[keep], y[keep], weights[keep]
    if np.unique(yk).shape[0] < 2:
        raise DegenerateInputError("training needs both classes with positive weight")

    caps = params.c * wk
    K = rbf_kernel(Xk, Xk, params.gamma)
    if max_updates is None:
        max_updates = max(2000, 200 * keep.size)
    alpha, bias, ok = _smo(K, yk, caps, tol, max_updates)
    if not ok:
        raise ConvergenceError(
            f"SMO stalled above KKT tolerance {tol} after {max_updates} updates"
        )
    sv = alpha > 1e-12
    return BinarySvm(
        support_vectors=Xk[sv].copy(),
        alphas_signed=(alpha * yk)[sv],
        bias=float(bias),
        params=params,
        sv_indices=keep[sv],
    )


def kkt_violations(
    svm: BinarySvm, X: np.ndarray, y: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Recompute per-example KKT violations of a trained machine.

    Only rows with positive weight are scored; zero-weight rows return 0.
    """
    X = check_feature_matrix(X, "features")
    y = np.asarray(y, dtype=np.float64).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if svm.sv_indices is None:
        raise ValueError("machine does not carry training indices")
    alpha = np.zeros(X.shape[0])
    alpha[svm.sv_indices] = np.abs(svm.alphas_signed)
    caps = svm.params.c * weights
    E = decision_values(svm, X) - y
    out = np.zeros(X.shape[0])
    active = weights > 0
    out[active] = _kkt_vector(alpha[active], y[active], E[active], caps[active])
    return out


# ---------------------------------------------------------------------------
# Multiclass reductions


@dataclass
class PairMachine:
    u: int
    v: int
    svm: BinarySvm


@dataclass
class MulticlassModel:
    mode: str
    class_names: list[str]
    machines: list[PairMachine]
    params: KernelParams
    cost_matrix: CostMatrix | None = None


def _pair_problem(fs: FeatureSet, u: int, v: int, mode: str, phi: CostMatrix | None):
    """Rows, binary labels, and weights for the (u, v) machine."""
    if mode == "ovo":
        rows = np.flatnonzero((fs.labels == u) | (fs.labels == v))
        yb = np.where(fs.labels[rows] == u, 1.0, -1.0)
        w = np.ones(rows.shape[0])
        return rows, yb, w
    cu = phi.costs[fs.labels, u]
    cv = phi.costs[fs.labels, v]
    w = np.abs(cu - cv)
    rows = np.flatnonzero(w > 0)
    yb = np.where(cu[rows] < cv[rows], 1.0, -1.0)
    return rows, yb, w[rows]


def train_multiclass(
    fs: FeatureSet,
    params: KernelParams,
    mode: str = "ovo",
    phi: CostMatrix | None = None,
    tol: float = KKT_TOL,
) -> MulticlassModel:
    """Train all pairwise machines.

    In "csovo" mode each pair machine is trained on every row whose two
    pair costs differ, weighted by that difference and labeled toward the
    cheaper class; ties and zero-cost rows drop out. Pairs with no usable
    rows (or rows on one side only) are skipped.
    """
    if mode not in ("ovo", "csovo"):
        raise ValueError(f"mode must be 'ovo' or 'csovo', got {mode!r}")
    if mode == "csovo":
        if phi is None:
            raise ValueError("csovo mode requires a cost matrix")
        if phi.class_names != fs.class_names:
            phi = phi.reordered(fs.class_names)
    N = fs.n_classes
    machines = []
    for u in range(N):
        for v in range(u + 1, N):
            rows, yb, w = _pair_problem(fs, u, v, mode, phi)
            if rows.shape[0] == 0 or np.unique(yb).shape[0] < 2:
                continue
            svm = train_binary(fs.features[rows], yb, w, params, tol=tol)
            svm.sv_indices = rows[svm.sv_indices]
            machines.append(PairMachine(u=u, v=v, svm=svm))
    if not machines:
        raise DegenerateInputError("no trainable class pairs")
    return MulticlassModel(
        mode=mode,
        class_names=list(fs.class_names),
        machines=machines,
        params=params,
        cost_matrix=phi if mode == "csovo" else None,
    )


def predict_many(model: MulticlassModel, X: np.ndarray) -> np.ndarray:
    """Majority vote over pair machines; ties resolve to the lowest index."""
    X = check_feature_matrix(X, "features")
    if not model.machines:
        raise DegenerateInputError("model has no pairwise machines")
    votes = np.zeros((X.shape[0], len(model.class_names)), dtype=np.int64)
    for pm in model.machines:
        d = decision_values(pm.svm, X)
        votes[d >= 0, pm.u] += 1
        votes[d < 0, pm.v] += 1
    return np.argmax(votes, axis=1)


def predict(model: MulticlassModel, f) -> int:
    f = np.asarray(f, dtype=np.float64).ravel()
    return int(predict_many(model, f[None, :])[0])


# ---------------------------------------------------------------------------
# Group-aware grid search


def group_folds(groups: np.ndarray, n_folds: int, seed: int) -> list[np.ndarray]:
    """Partition rows into folds without splitting any group.

    Groups are shuffled with the seed and dealt greedily to the currently
    smallest fold.
    """
    ids, inverse, counts = np.unique(groups, return_inverse=True, return_counts=True)
    n_folds = int(n_folds)
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    if ids.shape[0] < n_folds:
        raise DegenerateInputError(
            f"{ids.shape[0]} groups cannot fill {n_folds} folds"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(ids.shape[0])
    sizes = np.zeros(n_folds, dtype=np.int64)
    fold_of_group = np.empty(ids.shape[0], dtype=np.int64)
    for g in order:
        f = int(np.argmin(sizes))
        fold_of_group[g] = f
        sizes[f] += counts[g]
    fold_rows = fold_of_group[inverse]
    return [np.flatnonzero(fold_rows == f) for f in range(n_folds)]


def grid_search(
    fs: FeatureSet,
    gammas=None,
    cs=None,
    folds: int = 5,
    seed: int = 0,
    tol: float = KKT_TOL,
) -> KernelParams:
    """Pick (gamma, c) by mean group-aware cross-validated accuracy.

    Scoring trains plain one-vs-one machines. A cell that fails on every
    fold is an error; ties break toward smaller c, then smaller gamma.
    """
    gammas = sorted(float(g) for g in (gammas if gammas is not None else DEFAULT_GAMMAS))
    cs = sorted(float(c) for c in (cs if cs is not None else DEFAULT_CS))
    if not gammas or not cs:
        raise ValueError("grid must contain at least one gamma and one c")
    fold_rows = group_folds(fs.groups, folds, seed)
    all_rows = np.arange(fs.n_samples)

    best_score = -np.inf
    best: KernelParams | None = None
    for c in cs:
        for gamma in gammas:
            params = KernelParams(gamma=gamma, c=c)
            scores = []
            for val_rows in fold_rows:
                train_rows = np.setdiff1d(all_rows, val_rows)
                try:
                    model = train_multiclass(
                        fs.subset(train_rows), params, mode="ovo", tol=tol
                    )
                except (DegenerateInputError, ConvergenceError):
                    continue
                pred = predict_many(model, fs.features[val_rows])
                scores.append(float(np.mean(pred == fs.labels[val_rows])))
            if not scores:
                raise GridSearchError(
                    f"grid cell gamma={gamma} c={c} failed on every fold"
                )
            score = float(np.mean(scores))
            if score > best_score:
                best_score = score
                best = params
    assert best is not None
    return best


# ---------------------------------------------------------------------------
# Persistence


def save_model(model: MulticlassModel, path) -> None:
    body = [
        f"mode {model.mode}",
        "classes " + " ".join(model.class_names),
        f"gamma {persist.fmt_floats([model.params.gamma])}",
        f"c {persist.fmt_floats([model.params.c])}",
    ]
    if model.cost_matrix is None:
        body.append("cost_matrix none")
    else:
        body.append(f"cost_matrix {len(model.cost_matrix.class_names)}")
        for i in range(model.cost_matrix.n_classes):
            body.append(f"cost_row {persist.fmt_floats(model.cost_matrix.costs[i])}")
    body.append(f"machines {len(model.machines)}")
    for pm in model.machines:
        body.append(f"pair {pm.u} {pm.v}")
        body.append(f"bias {persist.fmt_floats([pm.svm.bias])}")
        body.append(f"sv_count {pm.svm.alphas_signed.shape[0]}")
        for a, vec in zip(pm.svm.alphas_signed, pm.svm.support_vectors):
            body.append(f"sv {persist.fmt_floats([a])} {persist.fmt_floats(vec)}")
    persist.write_artifact(path, "svm-model", body)


def load_model(path) -> MulticlassModel:
    rows = persist.read_artifact(path, "svm-model")
    r = persist.BodyReader(rows, path)
    mode = r.take_str("mode")
    names = r.take_tokens("classes")
    gamma = r.take_float("gamma")
    c = r.take_float("c")
    params = KernelParams(gamma=gamma, c=c)
    head = r.take("cost_matrix")
    phi = None
    if head != ["none"]:
        n = int(head[0])
        if n != len(names):
            raise ArtifactError(f"{path}: cost matrix size mismatch")
        mat = [r.take_floats("cost_row") for _ in range(n)]
        phi = CostMatrix(costs=np.vstack(mat), class_names=names)
    count = r.take_int("machines")
    machines = []
    for _ in range(count):
        toks = r.take("pair")
        u, v = int(toks[0]), int(toks[1])
        bias = r.take_float("bias")
        m = r.take_int("sv_count")
        alphas = np.empty(m)
        vecs = []
        for s in range(m):
            toks = r.take("sv")
            vals = persist.parse_floats(toks, f"{path}: sv")
            alphas[s] = vals[0]
            vecs.append(vals[1:])
        svs = np.vstack(vecs) if m else np.zeros((0, 1))
        machines.append(
            PairMachine(
                u=u,
                v=v,
                svm=BinarySvm(
                    support_vectors=svs,
                    alphas_signed=alphas,
                    bias=bias,
                    params=params,
                ),
            )
        )
    return MulticlassModel(
        mode=mode, class_names=names, machines=machines, params=params,
        cost_matrix=phi,
    )


class KernelSvmClassifier(BaseEstimator, ClassifierMixin):
    """Estimator facade over :func:`train_multiclass` for plain arrays."""

    def __init__(self, mode: str = "ovo", gamma: float = 1.0, c: float = 1.0,
                 cost_matrix: CostMatrix | None = None):
        self.mode = mode
        self.gamma = gamma
        self.c = c
        self.cost_matrix = cost_matrix

    def fit(self, X, y):
        X = check_feature_matrix(X, "X")
        y = check_labels(y, X.shape[0])
        n_classes = int(y.max()) + 1 if y.size else 0
        if self.cost_matrix is not None:
            names = list(self.cost_matrix.class_names)
            if n_classes > len(names):
                raise ValueError("labels exceed the cost matrix class list")
        else:
            names = [f"c{i}" for i in range(max(n_classes, 2))]
        fs = FeatureSet(
            features=X,
            labels=y,
            groups=np.asarray([f"r{i}" for i in range(X.shape[0])]),
            domain_id=np.zeros(X.shape[0], dtype=np.int64),
            class_names=names,
        )
        self.model_ = train_multiclass(
            fs,
            KernelParams(gamma=self.gamma, c=self.c),
            mode=self.mode,
            phi=self.cost_matrix,
        )
        self.classes_ = np.arange(len(names))
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise ValueError("KernelSvmClassifier is not fitted yet")
        return predict_many(self.model_, np.asarray(X, dtype=np.float64))
