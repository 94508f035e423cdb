"""Cluster models for the mixture proposal.

Level samples are summarized by a hard partition: k-means locates the
clusters, a spherical-Gaussian BIC picks k, and each cluster gets a full
(or, when too small, diagonal) covariance with a relative ridge so the
factorizations downstream never fail.  The model is refit from scratch
on every call; nothing here is incremental.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ContractError

__all__ = [
    "ClusterModel",
    "kmeans",
    "bic_score",
    "fit_cluster_model",
    "thin_for_clustering",
]


def thin_for_clustering(samples, cap):
    """Reduce a sample set to at most ``cap`` rows by stride thinning.

    Keeps every ``ceil(n / cap)``-th row starting from the first, which
    preserves temporal coverage of a trajectory.

    Parameters
    ----------
    samples : ndarray, shape (n, d)
    cap : int
        Positive row budget.

    Returns
    -------
    ndarray
        A copy with at most ``cap`` rows, in original order.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if cap < 1:
        raise ContractError("cap must be >= 1")
    n = X.shape[0]
    if n <= cap:
        return X.copy()
    stride = -(-n // cap)
    return X[::stride].copy()


def _kmeanspp_init(X, k, rng):
    """k-means++ seeding: spread the initial centers out."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans(X, k, rng, restarts=5, max_iter=100):
    """Lloyd's algorithm with k-means++ starts; best of ``restarts``.

    Parameters
    ----------
    X : ndarray, shape (n, d)
    k : int
    rng : numpy.random.Generator
    restarts : int
        Independent initializations; the lowest-inertia run wins.
    max_iter : int

    Returns
    -------
    labels : ndarray of int, shape (n,)
    centers : ndarray, shape (k, d)
    inertia : float
        Sum of squared distances to assigned centers.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"need 1 <= k <= n, got k={k}, n={n}")
    best = None
    for _ in range(restarts):
        centers = _kmeanspp_init(X, k, rng)
        labels = np.zeros(n, dtype=int)
        for _ in range(max_iter):
            d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = d2.argmin(axis=1)
            for j in range(k):
                sel = new_labels == j
                if sel.any():
                    centers[j] = X[sel].mean(axis=0)
                else:
                    # revive an empty cluster at the worst-fit point
                    far = d2[np.arange(n), new_labels].argmax()
                    centers[j] = X[far]
                    new_labels[far] = j
            if np.array_equal(new_labels, labels):
                labels = new_labels
                break
            labels = new_labels
        inertia = float(((X - centers[labels]) ** 2).sum())
        if best is None or inertia < best[2]:
            best = (labels.copy(), centers.copy(), inertia)
    return best


def bic_score(X, labels, centers):
    """Spherical-Gaussian BIC of a hard partition (lower is better).

    Uses one shared variance across clusters, so the parameter count is
    ``k * (d + 1)``: k means, k - 1 weights, one variance.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    k = centers.shape[0]
    sizes = np.bincount(labels, minlength=k).astype(float)
    sq = float(((X - centers[labels]) ** 2).sum())
    var = max(sq / (n * d), np.finfo(float).tiny)
    occupied = sizes[sizes > 0]
    loglik = (
        float((occupied * np.log(occupied / n)).sum())
        - 0.5 * n * d * np.log(2.0 * np.pi * var)
        - 0.5 * n * d
    )
    return -2.0 * loglik + k * (d + 1) * np.log(n)


def _cluster_cov(members, ridge):
    """Covariance of one cluster with a relative ridge.

    Clusters with fewer than d + 2 members get a diagonal covariance;
    fully degenerate ones fall back to an absolute ridge (with a
    warning) so the result is always positive definite.
    """
    r, d = members.shape
    if r >= d + 2:
        V = np.atleast_2d(np.cov(members, rowvar=False))
    else:
        v = members.var(axis=0, ddof=1) if r > 1 else np.zeros(d)
        V = np.diag(v)
    tr = float(np.trace(V))
    if not np.isfinite(tr) or tr <= 0.0:
        warnings.warn(
            "degenerate cluster covariance; falling back to absolute ridge",
            RuntimeWarning,
            stacklevel=3,
        )
        lam = ridge
    else:
        lam = ridge * tr / d
    return V + lam * np.eye(d)


@dataclass
class ClusterModel:
    """Hard-partition mixture summary of a sample set.

    Attributes
    ----------
    means : ndarray, shape (k, d)
    covs : ndarray, shape (k, d, d)
        Ridged, symmetric positive definite.
    sizes : ndarray of int, shape (k,)
    bic : float
        Score of the selected k.
    bic_by_k : ndarray
        Score for each candidate k (NaN where not evaluated).
    chol : ndarray, shape (k, d, d)
        Lower Cholesky factors of ``covs``, cached for assignment.
    """

    means: np.ndarray
    covs: np.ndarray
    sizes: np.ndarray
    bic: float = np.nan
    bic_by_k: np.ndarray = field(default_factory=lambda: np.array([]))
    chol: np.ndarray = field(init=False)

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.asarray(self.covs, dtype=float)
        self.sizes = np.asarray(self.sizes, dtype=int)
        self.chol = np.linalg.cholesky(self.covs)

    @property
    def k(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def assign(self, points):
        """Nearest cluster by squared Mahalanobis distance.

        Ties go to the lowest cluster index.

        Parameters
        ----------
        points : ndarray, shape (d,) or (N, d)

        Returns
        -------
        int or ndarray of int
        """
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        X = np.atleast_2d(pts)
        d2 = np.empty((X.shape[0], self.k))
        for j in range(self.k):
            w = solve_triangular(self.chol[j], (X - self.means[j]).T, lower=True)
            d2[:, j] = np.einsum("ij,ij->j", w, w)
        lab = d2.argmin(axis=1)
        return int(lab[0]) if single else lab

    def to_dict(self):
        return {
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
            "sizes": self.sizes.tolist(),
            "bic": None if np.isnan(self.bic) else float(self.bic),
            "bic_by_k": [None if np.isnan(b) else float(b) for b in self.bic_by_k],
        }

    @classmethod
    def from_dict(cls, d):
        bic = d.get("bic")
        by_k = np.array(
            [np.nan if b is None else float(b) for b in d.get("bic_by_k", [])]
        )
        return cls(
            means=np.array(d["means"], dtype=float),
            covs=np.array(d["covs"], dtype=float),
            sizes=np.array(d["sizes"], dtype=int),
            bic=np.nan if bic is None else float(bic),
            bic_by_k=by_k,
        )


def fit_cluster_model(samples, rng, max_k=10, ridge=1e-8, restarts=5):
    """Fit a :class:`ClusterModel`, choosing k by minimum BIC.

    Parameters
    ----------
    samples : ndarray, shape (n, d)
        At least one row; rows beyond any clustering cap should already
        have been thinned away (see :func:`thin_for_clustering`).
    rng : numpy.random.Generator
    max_k : int
        Largest candidate k (capped at n).
    ridge : float
        Relative ridge added to every cluster covariance.
    restarts : int
        k-means restarts per candidate k.

    Returns
    -------
    ClusterModel
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    n = X.shape[0]
    if n < 1:
        raise ContractError("need at least one sample to fit clusters")
    if max_k < 1:
        raise ContractError("max_k must be >= 1")
    if ridge <= 0:
        raise ContractError("ridge must be positive")
    kmax = min(max_k, n)
    bic_by_k = np.full(max_k, np.nan)
    best = None
    for k in range(1, kmax + 1):
        labels, centers, _ = kmeans(X, k, rng, restarts=restarts)
        score = bic_score(X, labels, centers)
        bic_by_k[k - 1] = score
        if best is None or score < best[0]:
            best = (score, labels, centers)
    score, labels, centers = best
    k = centers.shape[0]
    sizes = np.bincount(labels, minlength=k)
    covs = np.empty((k, X.shape[1], X.shape[1]))
    for j in range(k):
        covs[j] = _spd_cov(X[labels == j], ridge)
    return ClusterModel(centers, covs, sizes, bic=score, bic_by_k=bic_by_k)


def _spd_cov(members, ridge):
    """Ridged cluster covariance, escalating the ridge until it factors."""
    V = _cluster_cov(members, ridge)
    for _ in range(8):
        try:
            np.linalg.cholesky(V)
            return V
        except np.linalg.LinAlgError:
            V = V + ridge * max(np.trace(V), 1.0) * np.eye(V.shape[0])
    raise ContractError("could not make a positive definite cluster covariance")
