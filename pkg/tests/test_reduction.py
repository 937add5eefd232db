import numpy as np
import pytest

from costshift.dataset import FeatureSet
from costshift.errors import DegenerateInputError
from costshift.reduction import (
    BASIS_NORM_TOL,
    RESIDUAL_RTOL,
    Projection,
    SharedSubspace,
    build_mmd,
    fit_projection,
    fit_projection_multi,
    load_projection,
    project,
    save_projection,
)

from conftest import blob_fs, make_fs


def _pair(rng, n_s=12, n_t=9, dims=3, n_classes=2):
    names = [f"c{i}" for i in range(n_classes)]
    src = make_fs(
        rng.normal(size=(n_s, dims)),
        [i % n_classes for i in range(n_s)],
        names,
        groups=[f"s{i}" for i in range(n_s)],
    )
    tar = make_fs(
        rng.normal(size=(n_t, dims)) + 1.0,
        [i % n_classes for i in range(n_t)],
        names,
        groups=[f"t{i}" for i in range(n_t)],
    )
    return src, tar


# ---------------------------------------------------------------------------
# MMD coefficient matrices


def test_m0_single_sample_each_side():
    src = make_fs([[1.0]], [0], ["a", "b"], groups=["s"])
    tar = make_fs([[2.0]], [0], ["a", "b"], groups=["t"])
    # class b absent from both sides: zero block, no error
    m = build_mmd(src, tar)
    assert np.array_equal(m.m0, [[1.0, -1.0], [-1.0, 1.0]])
    assert np.array_equal(m.mc[0], m.m0)
    assert np.array_equal(m.mc[1], np.zeros((2, 2)))


def test_m0_quadratic_form_equals_squared_mean_gap(rng):
    src, tar = _pair(rng, n_s=4, n_t=2, dims=1)
    m = build_mmd(src, tar)
    v = rng.normal(size=6)
    direct = v[:4].mean() - v[4:].mean()
    assert np.isclose(v @ m.m0 @ v, direct**2, atol=1e-12)


def test_mc_quadratic_form_equals_class_mean_gap(rng):
    src, tar = _pair(rng, n_s=6, n_t=4, dims=2)
    m = build_mmd(src, tar)
    v = rng.normal(size=10)
    for c in range(2):
        rs = np.flatnonzero(src.labels == c)
        rt = 6 + np.flatnonzero(tar.labels == c)
        direct = v[rs].mean() - v[rt].mean()
        assert np.isclose(v @ m.mc[c] @ v, direct**2, atol=1e-12)


def test_single_class_mc_sum_equals_m0(rng):
    names = ["a", "b"]
    src = make_fs(rng.normal(size=(5, 2)), [0] * 5, names, groups=list("pqrst"))
    tar = make_fs(rng.normal(size=(3, 2)), [0] * 3, names, groups=list("uvw"))
    m = build_mmd(src, tar)
    assert np.allclose(sum(m.mc), m.m0, atol=1e-15)


def test_mmd_rows_sum_to_zero(rng):
    src, tar = _pair(rng)
    m = build_mmd(src, tar)
    assert np.allclose(m.m0.sum(axis=1), 0.0, atol=1e-12)
    for mc in m.mc:
        assert np.allclose(mc.sum(axis=1), 0.0, atol=1e-12)
    assert np.allclose(m.h.sum(axis=1), 0.0, atol=1e-12)
    assert np.allclose(m.h, m.h.T)


def test_mmd_class_absent_one_side_errors(rng):
    names = ["a", "b"]
    src = make_fs(rng.normal(size=(4, 2)), [0, 0, 1, 1], names)
    tar = make_fs(rng.normal(size=(4, 2)), [0, 0, 0, 0], names)
    with pytest.raises(DegenerateInputError, match="'b'.*target"):
        build_mmd(src, tar)


# ---------------------------------------------------------------------------
# Projection fitting


def test_fit_projection_residual_and_normalization(rng):
    src, tar = _pair(rng, n_s=20, n_t=16, dims=5)
    proj = fit_projection(src, tar, k=3, eps=1.0)
    F = np.vstack([src.features, tar.features])
    Fc = F - proj.mean
    m = build_mmd(src, tar)
    M = m.m0 + sum(m.mc)
    lhs = Fc.T @ M @ Fc + proj.eps * np.eye(5)
    rhs = Fc.T @ Fc + proj.eps * np.eye(5)
    lhs = 0.5 * (lhs + lhs.T)
    rhs = 0.5 * (rhs + rhs.T)
    for j in range(3):
        a = proj.basis[:, j]
        lam = proj.eigenvalues[j]
        resid = np.linalg.norm(lhs @ a - lam * rhs @ a)
        bound = RESIDUAL_RTOL * np.linalg.norm(a) * (
            np.linalg.norm(lhs) + abs(lam) * np.linalg.norm(rhs)
        )
        assert resid <= bound
    gram = proj.basis.T @ rhs @ proj.basis
    assert np.max(np.abs(gram - np.eye(3))) <= BASIS_NORM_TOL


def test_fit_projection_eigenvalues_ascending_and_smallest(rng):
    src, tar = _pair(rng, n_s=18, n_t=18, dims=6)
    proj = fit_projection(src, tar, k=4, eps=0.5)
    assert np.all(np.diff(proj.eigenvalues) >= -1e-12)
    full = fit_projection(src, tar, k=6, eps=0.5)
    assert np.allclose(proj.eigenvalues, full.eigenvalues[:4], atol=1e-9)


def test_fit_projection_identical_inputs_projected_mmd_zero(rng):
    names = ["a", "b"]
    X = rng.normal(size=(10, 4))
    labels = [i % 2 for i in range(10)]
    src = make_fs(X, labels, names, groups=[f"g{i}" for i in range(10)])
    tar = make_fs(X, labels, names, groups=[f"h{i}" for i in range(10)])
    proj = fit_projection(src, tar, k=2, eps=1.0)
    ps, pt = project(proj, src), project(proj, tar)
    gap = ps.features.mean(axis=0) - pt.features.mean(axis=0)
    assert float(gap @ gap) <= 1e-10


def test_fit_projection_two_dim_toy_prefers_class_axis(rng):
    # class separation along axis 0, domain shift along axis 1
    n = 40
    names = ["a", "b"]
    x_src = np.concatenate([rng.normal(-3, 0.3, n), rng.normal(3, 0.3, n)])
    x_tar = np.concatenate([rng.normal(-3, 0.3, n), rng.normal(3, 0.3, n)])
    y_src = rng.normal(0.0, 0.3, 2 * n)
    y_tar = rng.normal(4.0, 0.3, 2 * n)
    labels = [0] * n + [1] * n
    src = make_fs(np.column_stack([x_src, y_src]), labels, names)
    tar = make_fs(np.column_stack([x_tar, y_tar]), labels, names)
    proj = fit_projection(src, tar, k=1, eps=1.0)
    v = proj.basis[:, 0]
    assert abs(v[0]) > abs(v[1])

    # brute-force check on the unit circle at 1-degree steps
    F = np.vstack([src.features, tar.features])
    Fc = F - F.mean(axis=0)
    m = build_mmd(src, tar)
    M = m.m0 + sum(m.mc)
    A = Fc.T @ M @ Fc
    B = Fc.T @ Fc
    lam_fit = proj.eigenvalues[0]
    best = np.inf
    for deg in range(180):
        t = np.deg2rad(deg)
        u = np.array([np.cos(t), np.sin(t)])
        ratio = (u @ A @ u + proj.eps) / (u @ B @ u + proj.eps)
        best = min(best, ratio)
    assert lam_fit <= best + 1e-9


def test_fit_projection_better_than_random_frames(rng):
    src, tar = _pair(rng, n_s=24, n_t=20, dims=6)
    proj = fit_projection(src, tar, k=2, eps=1.0)
    F = np.vstack([src.features, tar.features])
    Fc = F - F.mean(axis=0)
    m = build_mmd(src, tar)
    M = m.m0 + sum(m.mc)
    A = Fc.T @ M @ Fc + np.eye(6)
    B = Fc.T @ Fc + np.eye(6)

    def score(V):
        # normalize frame in the B metric, then sum Rayleigh quotients
        L = np.linalg.cholesky(np.linalg.inv(V.T @ B @ V))
        Vn = V @ L
        return float(np.trace(Vn.T @ A @ Vn))

    fitted = score(proj.basis)
    for _ in range(20):
        R = rng.normal(size=(6, 2))
        assert fitted <= score(R) + 1e-9


def test_multi_source_with_one_source_matches_pair(rng):
    src, tar = _pair(rng, n_s=14, n_t=10, dims=4)
    a = fit_projection(src, tar, k=2, eps=1.0)
    b = fit_projection_multi([src], tar, k=2, eps=1.0)
    assert np.array_equal(a.basis, b.basis)
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    assert np.array_equal(a.mean, b.mean)


def test_multi_source_stacks_all_pairs(rng):
    s1, tar = _pair(rng, n_s=10, n_t=8, dims=3)
    s2 = make_fs(
        rng.normal(size=(12, 3)) - 2.0,
        [i % 2 for i in range(12)],
        tar.class_names,
        groups=[f"x{i}" for i in range(12)],
    )
    proj = fit_projection_multi([s1, s2], tar, k=2, eps=1.0)
    assert proj.basis.shape == (3, 2)
    # residual check against the explicitly stacked system
    F = np.vstack([s1.features, s2.features, tar.features])
    assert np.allclose(proj.mean, F.mean(axis=0))


def test_k_larger_than_dims_rejected(rng):
    src, tar = _pair(rng, dims=3)
    with pytest.raises(Exception):
        fit_projection(src, tar, k=4, eps=1.0)


# ---------------------------------------------------------------------------
# project()


def test_project_identity_basis_centers_only(rng):
    X = rng.normal(size=(6, 3))
    fs = make_fs(X, [0, 1, 0, 1, 0, 1], ["a", "b"])
    proj = Projection(
        basis=np.eye(3), eigenvalues=np.zeros(3), mean=np.zeros(3), k=3, eps=1.0
    )
    out = project(proj, fs)
    assert np.array_equal(out.features, X)
    proj2 = Projection(
        basis=np.eye(3), eigenvalues=np.zeros(3), mean=np.full(3, 2.0), k=3, eps=1.0
    )
    out2 = project(proj2, fs)
    assert np.allclose(out2.features, X - 2.0)


def test_project_matches_affine_formula(rng):
    X = rng.normal(size=(5, 4))
    fs = make_fs(X, [0, 1, 0, 1, 0], ["a", "b"])
    B = rng.normal(size=(4, 2))
    mu = rng.normal(size=4)
    proj = Projection(basis=B, eigenvalues=np.zeros(2), mean=mu, k=2, eps=1.0)
    out = project(proj, fs)
    assert np.allclose(out.features, (X - mu) @ B, atol=1e-15)
    assert np.array_equal(out.labels, fs.labels)
    assert np.array_equal(out.groups, fs.groups)


def test_project_composition_is_matrix_product(rng):
    X = rng.normal(size=(6, 5))
    fs = make_fs(X, [0, 1] * 3, ["a", "b"])
    A = rng.normal(size=(5, 3))
    B = rng.normal(size=(3, 2))
    pa = Projection(basis=A, eigenvalues=np.zeros(3), mean=np.zeros(5), k=3, eps=1.0)
    pb = Projection(basis=B, eigenvalues=np.zeros(2), mean=np.zeros(3), k=2, eps=1.0)
    pc = Projection(
        basis=A @ B, eigenvalues=np.zeros(2), mean=np.zeros(5), k=2, eps=1.0
    )
    two_step = project(pb, project(pa, fs))
    one_step = project(pc, fs)
    assert np.allclose(two_step.features, one_step.features, atol=1e-12)


def test_project_dimension_mismatch(rng):
    fs = make_fs(rng.normal(size=(4, 3)), [0, 1, 0, 1], ["a", "b"])
    proj = Projection(
        basis=np.eye(2), eigenvalues=np.zeros(2), mean=np.zeros(2), k=2, eps=1.0
    )
    with pytest.raises(Exception):
        project(proj, fs)


# ---------------------------------------------------------------------------
# Persistence and estimator wrapper


def test_projection_round_trip_bitwise(tmp_path, rng):
    src, tar = _pair(rng, dims=4)
    proj = fit_projection(src, tar, k=2, eps=1.0)
    p = tmp_path / "proj.txt"
    save_projection(proj, p)
    back = load_projection(p)
    assert np.array_equal(back.basis, proj.basis)
    assert np.array_equal(back.eigenvalues, proj.eigenvalues)
    assert np.array_equal(back.mean, proj.mean)
    assert back.k == proj.k and back.eps == proj.eps
    p2 = tmp_path / "proj2.txt"
    save_projection(back, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_shared_subspace_estimator(rng):
    src, tar = _pair(rng, n_s=16, n_t=12, dims=4)
    est = SharedSubspace(k=2, eps=1.0)
    assert est.get_params() == {"k": 2, "eps": 1.0}
    est.fit(src, tar)
    out = est.transform(tar)
    direct = project(est.projection_, tar)
    assert np.array_equal(out.features, direct.features)
