"""k-means, BIC model selection, and cluster covariance fitting."""

import numpy as np
import pytest

from idemc.clustering import (
    ClusterModel,
    bic_score,
    fit_cluster_model,
    kmeans,
    thin_for_clustering,
)
from idemc.errors import ContractError


def two_blobs(rng, n=200, sep=8.0):
    a = rng.normal([0.0, 0.0], 0.5, size=(n // 2, 2))
    b = rng.normal([sep, 0.0], 0.5, size=(n - n // 2, 2))
    return np.vstack([a, b])


def test_thin_counts():
    X = np.arange(1050.0)[:, None]
    out = thin_for_clustering(X, 100)
    # stride ceil(1050/100) = 11 keeps rows 0, 11, 22, ...
    assert out.shape == (96, 1)
    assert out[0, 0] == 0.0 and out[1, 0] == 11.0
    assert thin_for_clustering(X, 2000).shape == (1050, 1)
    assert thin_for_clustering(X, 1050).shape == (1050, 1)
    assert thin_for_clustering(X, 1).shape == (1, 1)
    with pytest.raises(ContractError):
        thin_for_clustering(X, 0)


def test_thin_returns_copy():
    X = np.zeros((10, 2))
    out = thin_for_clustering(X, 5)
    out[0, 0] = 99.0
    assert X[0, 0] == 0.0


def test_kmeans_recovers_separated_blobs():
    rng = np.random.default_rng(0)
    X = two_blobs(rng)
    labels, centers, inertia = kmeans(X, 2, rng)
    order = np.argsort(centers[:, 0])
    assert abs(centers[order[0], 0] - 0.0) < 0.3
    assert abs(centers[order[1], 0] - 8.0) < 0.3
    # the split must match the generating blobs exactly at this separation
    assert len(set(labels[:100])) == 1 and len(set(labels[100:])) == 1
    assert inertia == pytest.approx(((X - centers[labels]) ** 2).sum())


def test_kmeans_k_equals_n():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(6, 2))
    labels, centers, inertia = kmeans(X, 6, rng)
    assert sorted(labels.tolist()) == list(range(6))
    assert inertia == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(ContractError):
        kmeans(X, 7, rng)
    with pytest.raises(ContractError):
        kmeans(X, 0, rng)


def test_bic_prefers_true_k():
    # seeded loop: on clearly separated blobs, BIC must pick k = 2 and
    # single blobs must stay at k = 1
    for seed in range(5):
        rng = np.random.default_rng(seed)
        X = two_blobs(rng)
        model = fit_cluster_model(X, rng, max_k=6)
        assert model.k == 2, f"seed {seed}: k={model.k}"
        blob = np.random.default_rng(seed + 100).normal(size=(150, 2))
        model1 = fit_cluster_model(blob, np.random.default_rng(seed), max_k=6)
        assert model1.k == 1, f"seed {seed}: k={model1.k}"


def test_bic_matches_manual_formula():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(50, 3))
    labels, centers, _ = kmeans(X, 2, rng)
    n, d = X.shape
    sizes = np.bincount(labels, minlength=2).astype(float)
    var = ((X - centers[labels]) ** 2).sum() / (n * d)
    ll = (sizes * np.log(sizes / n)).sum() - 0.5 * n * d * (np.log(2 * np.pi * var) + 1)
    expect = -2.0 * ll + 2 * (d + 1) * np.log(n)
    assert bic_score(X, labels, centers) == pytest.approx(expect, rel=1e-12)


def test_fit_reports_bic_curve():
    rng = np.random.default_rng(3)
    X = two_blobs(rng)
    model = fit_cluster_model(X, rng, max_k=5)
    assert model.bic_by_k.shape == (5,)
    assert np.all(np.isfinite(model.bic_by_k))
    assert model.bic == np.nanmin(model.bic_by_k)
    assert int(np.nanargmin(model.bic_by_k)) + 1 == model.k
    assert model.sizes.sum() == len(X)


def test_fit_handles_tiny_samples():
    rng = np.random.default_rng(4)
    one = np.array([[1.0, 2.0]])
    with pytest.warns(RuntimeWarning):  # a lone point has no spread at all
        model = fit_cluster_model(one, rng, max_k=10)
    assert model.k == 1
    np.linalg.cholesky(model.covs[0])  # still SPD thanks to the ridge
    assert np.allclose(model.means, one)


def test_degenerate_cluster_warns():
    rng = np.random.default_rng(5)
    X = np.zeros((20, 2))  # zero variance everywhere
    with pytest.warns(RuntimeWarning):
        model = fit_cluster_model(X, rng, max_k=1)
    np.linalg.cholesky(model.covs[0])


def test_cluster_covariances_are_ridged():
    rng = np.random.default_rng(6)
    X = two_blobs(rng)
    model = fit_cluster_model(X, rng, max_k=4, ridge=1e-8)
    for j in range(model.k):
        members = X[model.assign(X) == j]
        raw = np.cov(members, rowvar=False)
        # ridge is relative: trace grows by about ridge * trace
        assert np.trace(model.covs[j]) >= np.trace(raw)
        np.linalg.cholesky(model.covs[j])


def test_assign_mahalanobis_ties():
    # two identical components: ties resolve to the lower index
    covs = np.array([np.eye(2), np.eye(2)])
    means = np.array([[-1.0, 0.0], [1.0, 0.0]])
    model = ClusterModel(means, covs, np.array([5, 5]))
    assert model.assign(np.array([0.0, 0.0])) == 0
    assert model.assign(np.array([0.1, 0.0])) == 1
    # anisotropy matters: a point euclidean-closer to component 0 can be
    # mahalanobis-closer to a stretched component 1
    covs = np.array([np.eye(2), np.diag([100.0, 100.0])])
    model = ClusterModel(np.array([[0.0, 0.0], [5.0, 0.0]]), covs, np.array([5, 5]))
    assert model.assign(np.array([3.0, 0.0])) == 1
    lab = model.assign(np.array([[3.0, 0.0], [0.2, 0.0]]))
    assert lab.tolist() == [1, 0]


def test_model_dict_round_trip():
    rng = np.random.default_rng(7)
    X = two_blobs(rng)
    model = fit_cluster_model(X, rng, max_k=3)
    clone = ClusterModel.from_dict(model.to_dict())
    assert np.array_equal(clone.means, model.means)
    assert np.array_equal(clone.covs, model.covs)
    assert np.array_equal(clone.sizes, model.sizes)
    assert clone.bic == model.bic
    assert np.allclose(clone.bic_by_k, model.bic_by_k, equal_nan=True)
    # NaN entries serialize as None and come back as NaN
    sparse = ClusterModel(model.means, model.covs, model.sizes,
                          bic_by_k=np.array([1.0, np.nan]))
    back = ClusterModel.from_dict(sparse.to_dict())
    assert back.to_dict()["bic_by_k"] == [1.0, None]


def test_fit_is_deterministic():
    X = two_blobs(np.random.default_rng(8), n=120)
    a = fit_cluster_model(X, np.random.default_rng(42), max_k=5)
    b = fit_cluster_model(X, np.random.default_rng(42), max_k=5)
    assert np.array_equal(a.means, b.means)
    assert np.array_equal(a.covs, b.covs)
    assert np.array_equal(a.bic_by_k, b.bic_by_k)


def test_kmeans_against_independent_inertia():
    # property loop: our k-means never does worse than a crude baseline
    # (centers at random data points) on the same data
    for seed in range(8):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(60, 2)) + rng.integers(0, 2, size=(60, 1)) * 6.0
        labels, centers, inertia = kmeans(X, 3, np.random.default_rng(seed))
        pick = np.random.default_rng(seed + 1).choice(60, size=3, replace=False)
        crude = X[pick]
        d2 = ((X[:, None, :] - crude[None, :, :]) ** 2).sum(axis=2)
        assert inertia <= d2.min(axis=1).sum() + 1e-9
