import numpy as np
import pytest

from costshift.errors import ConvergenceError, DegenerateInputError
from costshift.gmm import (
    VAR_FLOOR,
    ClassGmmBank,
    GaussianComponent,
    em_fit_single,
    fisher_displacement,
    fit_class_gmms,
    load_bank,
    save_bank,
)

from conftest import blob_fs, make_bank, make_fs

LOG_NORM_STD = -0.9189385332046727  # log N(0; 0, 1)


# ---------------------------------------------------------------------------
# EM on a single class


def test_g1_closed_form(rng):
    X = rng.normal(size=(40, 3))
    comps, trace = em_fit_single(X, G=1)
    assert len(comps) == 1
    c = comps[0]
    assert c.weight == 1.0
    assert np.allclose(c.mean, X.mean(axis=0), atol=1e-12)
    assert np.allclose(c.var, np.maximum(X.var(axis=0), VAR_FLOOR), atol=1e-12)
    # trace ends at the closed-form log-likelihood
    ll = -0.5 * np.sum(np.log(2 * np.pi * c.var) + (X - c.mean) ** 2 / c.var)
    assert np.isclose(trace[-1], ll, atol=1e-8)


def test_g1_variance_floor():
    X = np.zeros((5, 2))
    comps, _ = em_fit_single(X, G=1)
    assert np.all(comps[0].var == VAR_FLOOR)


def test_em_monotone_loglik(rng):
    for trial in range(20):
        X = rng.normal(size=(rng.integers(12, 40), rng.integers(1, 4)))
        G = int(rng.integers(1, 4))
        if X.shape[0] < G:
            continue
        _, trace = em_fit_single(X, G=G)
        diffs = np.diff(trace)
        assert np.all(diffs >= -1e-9)


def test_em_two_cluster_recovery():
    # well-separated pair; stated tolerances, checked across seeds
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = np.concatenate(
            [
                rng.normal(-5.0, 1.0, size=(500, 1)),
                rng.normal(5.0, 1.0, size=(500, 1)),
            ]
        )
        comps, _ = em_fit_single(X, G=2, seed=seed)
        means = np.sort([float(c.mean[0]) for c in comps])
        weights = [c.weight for c in sorted(comps, key=lambda c: float(c.mean[0]))]
        assert abs(means[0] + 5.0) < 0.2
        assert abs(means[1] - 5.0) < 0.2
        assert abs(weights[0] - 0.5) < 0.05
        assert abs(weights[1] - 0.5) < 0.05


def test_em_duplication_invariance(rng):
    X = np.concatenate(
        [rng.normal(-4.0, 0.5, size=(60, 2)), rng.normal(4.0, 0.5, size=(60, 2))]
    )
    a, _ = em_fit_single(X, G=2)
    b, _ = em_fit_single(np.vstack([X, X]), G=2)
    for ca, cb in zip(a, b):
        assert np.allclose(ca.mean, cb.mean, rtol=1e-6, atol=1e-8)
        assert np.allclose(ca.var, cb.var, rtol=1e-6, atol=1e-8)
        assert np.isclose(ca.weight, cb.weight, atol=1e-9)


def test_em_deterministic(rng):
    X = rng.normal(size=(50, 2))
    a, ta = em_fit_single(X, G=3, seed=1)
    b, tb = em_fit_single(X, G=3, seed=1)
    for ca, cb in zip(a, b):
        assert np.array_equal(ca.mean, cb.mean)
        assert np.array_equal(ca.var, cb.var)
        assert ca.weight == cb.weight
    assert ta == tb


def test_em_weights_sum_to_one(rng):
    X = rng.normal(size=(30, 2))
    comps, _ = em_fit_single(X, G=3)
    assert np.isclose(sum(c.weight for c in comps), 1.0, atol=1e-12)
    assert all(np.all(c.var >= VAR_FLOOR) for c in comps)


# ---------------------------------------------------------------------------
# Bank fitting


def test_fit_class_gmms_requires_enough_samples(rng):
    fs = make_fs(rng.normal(size=(5, 2)), [0, 0, 0, 1, 1], ["a", "b"])
    with pytest.raises(DegenerateInputError, match="'b'"):
        fit_class_gmms(fs, G=3)


def test_fit_class_gmms_declared_but_absent_class(rng):
    fs = make_fs(rng.normal(size=(6, 2)), [0, 0, 0, 0, 0, 0], ["a", "b"])
    with pytest.raises(DegenerateInputError, match="'b'"):
        fit_class_gmms(fs, G=2)


def test_fit_class_gmms_matches_per_class_em(rng):
    fs = blob_fs(rng, centers=[[-3.0, 0.0], [3.0, 0.0]], n_per=30, spread=0.5)
    bank = fit_class_gmms(fs, G=2, seed=0, domain_tag="target")
    assert bank.domain_tag == "target"
    assert bank.n_classes == 2
    assert bank.n_components == 2
    for c in range(2):
        direct, _ = em_fit_single(fs.features[fs.rows_of_class(c)], G=2)
        for cb, cd in zip(bank.per_class[c], direct):
            assert np.array_equal(cb.mean, cd.mean)
            assert np.array_equal(cb.var, cd.var)


def test_bank_rejects_bad_domain_tag():
    with pytest.raises(Exception):
        make_bank([[(1.0, 0.0, 1.0)], [(1.0, 1.0, 1.0)]], domain_tag="middle")


def test_bank_rejects_uneven_components():
    with pytest.raises(Exception):
        ClassGmmBank(
            per_class=[
                [GaussianComponent(1.0, np.zeros(1), np.ones(1))],
                [
                    GaussianComponent(0.5, np.zeros(1), np.ones(1)),
                    GaussianComponent(0.5, np.ones(1), np.ones(1)),
                ],
            ],
            domain_tag="source",
            class_names=["a", "b"],
        )


def test_bank_rejects_weights_not_summing():
    with pytest.raises(Exception):
        make_bank([[(0.7, 0.0, 1.0)], [(1.0, 1.0, 1.0)]])


# ---------------------------------------------------------------------------
# Bank queries


def test_log_joint_standard_normal():
    bank = make_bank([[(1.0, 0.0, 1.0)], [(1.0, 4.0, 1.0)]])
    lj = bank.log_joint(np.array([0.0]))
    assert lj.shape == (2, 1)
    assert np.isclose(lj[0, 0], LOG_NORM_STD, atol=1e-12)
    assert np.isclose(lj[1, 0], LOG_NORM_STD - 8.0, atol=1e-12)


def test_log_joint_translation_invariance(rng):
    shift = rng.normal(size=2)
    b1 = make_bank([[(1.0, [0.0, 0.0], [1.0, 2.0])], [(1.0, [1.0, 1.0], [1.0, 1.0])]])
    b2 = make_bank(
        [[(1.0, shift, [1.0, 2.0])], [(1.0, 1.0 + shift, [1.0, 1.0])]]
    )
    f = rng.normal(size=2)
    assert np.allclose(b1.log_joint(f), b2.log_joint(f + shift), atol=1e-12)


def test_log_joint_k2_matches_direct_density(rng):
    mean = rng.normal(size=2)
    var = rng.uniform(0.5, 2.0, size=2)
    w = 0.6
    bank = make_bank(
        [
            [(w, mean, var), (1 - w, mean + 5, var)],
            [(0.5, mean + 3, var), (0.5, mean - 3, var)],
        ]
    )
    f = rng.normal(size=2)
    direct = np.log(w) - 0.5 * np.sum(
        np.log(2 * np.pi * var) + (f - mean) ** 2 / var
    )
    assert np.isclose(bank.log_joint(f)[0, 0], direct, atol=1e-12)


def test_class_posteriors_rows_sum_to_one(rng):
    bank = make_bank(
        [
            [(0.5, -1.0, 1.0), (0.5, 1.0, 1.0)],
            [(0.3, 3.0, 0.5), (0.7, 5.0, 0.5)],
        ]
    )
    X = rng.normal(size=(20, 1))
    for c in range(2):
        g = bank.class_posteriors(c, X)
        assert g.shape == (20, 2)
        assert np.allclose(g.sum(axis=1), 1.0, atol=1e-9)


def test_mixture_mean_and_var():
    bank = make_bank(
        [
            [(0.25, 0.0, 1.0), (0.75, 4.0, 2.0)],
            [(0.5, 9.0, 1.0), (0.5, 11.0, 1.0)],
        ]
    )
    assert np.isclose(bank.mixture_mean(0)[0], 3.0)
    # law of total variance: mean of vars plus variance of means
    mix_mean = 3.0
    expected = (
        0.25 * (1.0 + (0.0 - mix_mean) ** 2) + 0.75 * (2.0 + (4.0 - mix_mean) ** 2)
    )
    assert np.isclose(bank.mixture_var(0)[0], expected)


# ---------------------------------------------------------------------------
# Fisher displacement


def test_fisher_displacement_g1_oracle():
    # single component at 2 with unit variance; sample at 0 gives u = +2
    bank = make_bank([[(1.0, 2.0, 1.0)], [(1.0, 10.0, 1.0)]])
    u = fisher_displacement(bank, 0, np.array([[0.0]]))
    assert np.allclose(u, [2.0], atol=1e-12)


def test_fisher_displacement_zero_at_target_mean():
    bank = make_bank([[(1.0, [1.0, -2.0], [1.0, 1.0])], [(1.0, [5.0, 5.0], [1.0, 1.0])]])
    u = fisher_displacement(bank, 0, np.array([[1.0, -2.0]]))
    assert np.allclose(u, 0.0, atol=1e-12)


def test_fisher_displacement_scales_inverse_sigma():
    b1 = make_bank([[(1.0, 2.0, 1.0)], [(1.0, 9.0, 1.0)]])
    b2 = make_bank([[(1.0, 2.0, 4.0)], [(1.0, 9.0, 4.0)]])
    X = np.array([[0.0]])
    u1 = fisher_displacement(b1, 0, X)
    u2 = fisher_displacement(b2, 0, X)
    assert np.allclose(u1, 2 * u2, atol=1e-12)


def test_fisher_displacement_g1_matches_direct_sum(rng):
    mean = rng.normal(size=3)
    var = rng.uniform(0.5, 2.0, size=3)
    bank = make_bank([[(1.0, mean, var)], [(1.0, mean + 5, var)]])
    X = rng.normal(size=(7, 3))
    u = fisher_displacement(bank, 0, X)
    direct = -np.mean((X - mean) / np.sqrt(var), axis=0)
    assert np.allclose(u, direct, atol=1e-12)


# ---------------------------------------------------------------------------
# Persistence


def test_bank_round_trip_bitwise(tmp_path, rng):
    fs = blob_fs(rng, centers=[[-2.0, 1.0], [2.0, -1.0]], n_per=25, spread=0.6)
    bank = fit_class_gmms(fs, G=2, seed=3, domain_tag="source")
    p = tmp_path / "bank.txt"
    save_bank(bank, p)
    back = load_bank(p)
    assert back.domain_tag == bank.domain_tag
    assert back.class_names == bank.class_names
    for ca, cb in zip(
        (c for cl in bank.per_class for c in cl),
        (c for cl in back.per_class for c in cl),
    ):
        assert np.array_equal(ca.mean, cb.mean)
        assert np.array_equal(ca.var, cb.var)
        assert ca.weight == cb.weight
    p2 = tmp_path / "bank2.txt"
    save_bank(back, p2)
    assert p.read_bytes() == p2.read_bytes()
