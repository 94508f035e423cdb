"""Clustered mixture random-walk proposals.

A proposal kernel for one level mixes two centered Gaussian steps: with
probability ``omega`` the covariance of the cluster the current point
sits in, otherwise the covariance of the whole level sample.  Densities
are evaluated in log space, and the optional ``truncated`` variant
renormalizes each component to the search box so proposals never leave
it.

:class:`KernelPack` stacks the kernels of every level into padded
arrays so a mutation round can be carried out for all levels in a few
vectorized operations; it supports the plain (non-truncated) kind,
which is the default everywhere.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import multivariate_normal, norm, truncnorm

from .clustering import ClusterModel, fit_cluster_model, thin_for_clustering
from .errors import ContractError

__all__ = [
    "ProposalKernel",
    "KernelPack",
    "make_kernel",
    "mutation_accept_prob",
]

_LOG2PI = np.log(2.0 * np.pi)

# base draws for the box-probability estimate; fixed so the normalizer
# is a deterministic function of (covariance, center)
_BOX_PROB_DRAWS = 16384
_REJECTION_CAP = 1000
_GIBBS_SWEEPS = 100
_CACHE_MAX = 4096


def _chol_logdet(cov):
    L = np.linalg.cholesky(cov)
    return L, 2.0 * float(np.log(np.diag(L)).sum())


def _log_gauss(dev, chol, logdet):
    """log N(dev; 0, L L^T) for a single deviation vector."""
    w = solve_triangular(chol, dev, lower=True)
    return -0.5 * (dev.shape[0] * _LOG2PI + logdet + float(w @ w))


@dataclass
class ProposalKernel:
    """Mixture random-walk proposal for one level.

    Attributes
    ----------
    model : ClusterModel
        Cluster summary of the level's samples.
    whole_cov : ndarray, shape (d, d)
        Covariance of the whole level sample (ridged).
    omega : float
        Weight of the local-cluster component, in (0, 1].
    scale : float
        Scalar multiplier applied to every proposal covariance.
    kind : {"normal", "truncated"}
        ``truncated`` renormalizes each component to ``bounds``.
    bounds : ndarray, shape (d, 2), optional
        Search box; required for the truncated kind.
    """

    model: ClusterModel
    whole_cov: np.ndarray
    omega: float = 0.9
    scale: float = 1.0
    kind: str = "normal"
    bounds: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.omega <= 1.0:
            raise ContractError("omega must lie in (0, 1]")
        if self.scale <= 0.0:
            raise ContractError("scale must be positive")
        if self.kind not in ("normal", "truncated"):
            raise ContractError(f"unknown proposal kind {self.kind!r}")
        self.whole_cov = np.asarray(self.whole_cov, dtype=float)
        if self.kind == "truncated":
            if self.bounds is None:
                raise ContractError("truncated proposals need bounds")
            self.bounds = np.asarray(self.bounds, dtype=float)
        d = self.model.dim
        k = self.model.k
        self._chols = np.sqrt(self.scale) * self.model.chol
        self._logdets = np.array(
            [2.0 * np.log(np.diag(self._chols[j])).sum() for j in range(k)]
        )
        wch, wld = _chol_logdet(self.scale * self.whole_cov)
        self._whole_chol = wch
        self._whole_logdet = wld
        self._dim = d
        self._zcache = OrderedDict()
        self._box_base = None

    @property
    def dim(self):
        return self._dim

    def assign(self, x):
        """Cluster index used for the local component at ``x``."""
        return self.model.assign(x)

    # -- sampling -----------------------------------------------------------

    def propose(self, x, rng):
        """Draw one proposal from the mixture centered at ``x``.

        Returns
        -------
        ndarray, shape (d,)
        """
        x = np.asarray(x, dtype=float)
        if rng.random() < self.omega:
            chol = self._chols[self.model.assign(x)]
        else:
            chol = self._whole_chol
        if self.kind == "normal":
            return x + chol @ rng.standard_normal(self._dim)
        return self._sample_truncated(x, chol, rng)

    def _sample_truncated(self, x, chol, rng):
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        for _ in range(_REJECTION_CAP):
            y = x + chol @ rng.standard_normal(self._dim)
            if np.all(y >= lo) and np.all(y <= hi):
                return y
        return _gibbs_truncated(x, chol, lo, hi, rng)

    # -- densities ----------------------------------------------------------

    def log_density(self, x, y):
        """log q(y | x) under the mixture (with box renormalization for
        the truncated kind; -inf outside the box there)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        c = self.model.assign(x)
        dev = y - x
        g_loc = _log_gauss(dev, self._chols[c], self._logdets[c])
        g_whole = _log_gauss(dev, self._whole_chol, self._whole_logdet)
        if self.kind == "truncated":
            lo, hi = self.bounds[:, 0], self.bounds[:, 1]
            if np.any(y < lo) or np.any(y > hi):
                return -np.inf
            g_loc -= np.log(self._box_prob(c, x))
            g_whole -= np.log(self._box_prob(-1, x))
        if self.omega >= 1.0:
            return g_loc
        return np.logaddexp(
            np.log(self.omega) + g_loc, np.log1p(-self.omega) + g_whole
        )

    # -- box renormalization ------------------------------------------------

    def _box_prob(self, comp, center):
        """P(step from ``center`` stays in the box) for one component.

        ``comp`` is a cluster index or -1 for the whole-sample
        component.  Exact in one or two dimensions; above that a fixed
        base sample is pushed through the component's factor, which
        makes the estimate deterministic and cacheable.  Cached per
        (component, rounded center).
        """
        key = (comp, tuple(np.round(center, 9)))
        hit = self._zcache.get(key)
        if hit is not None:
            self._zcache.move_to_end(key)
            return hit
        chol = self._whole_chol if comp == -1 else self._chols[comp]
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        if self._dim == 1:
            s = chol[0, 0]
            z = float(norm.cdf((hi[0] - center[0]) / s) - norm.cdf((lo[0] - center[0]) / s))
        elif self._dim == 2:
            cov = chol @ chol.T
            z = float(
                multivariate_normal.cdf(hi, mean=center, cov=cov, lower_limit=lo)
            )
        else:
            if self._box_base is None:
                base_rng = np.random.default_rng(0)
                self._box_base = base_rng.standard_normal((_BOX_PROB_DRAWS, self._dim))
            pts = center + self._box_base @ chol.T
            z = float(((pts >= lo) & (pts <= hi)).all(axis=1).mean())
        z = min(max(z, 1e-300), 1.0)
        self._zcache[key] = z
        if len(self._zcache) > _CACHE_MAX:
            self._zcache.popitem(last=False)
        return z

    # -- serialization ------------------------------------------------------

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "whole_cov": self.whole_cov.tolist(),
            "omega": self.omega,
            "scale": self.scale,
            "kind": self.kind,
            "bounds": None if self.bounds is None else self.bounds.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        bounds = d.get("bounds")
        return cls(
            model=ClusterModel.from_dict(d["model"]),
            whole_cov=np.array(d["whole_cov"], dtype=float),
            omega=float(d["omega"]),
            scale=float(d["scale"]),
            kind=d["kind"],
            bounds=None if bounds is None else np.array(bounds, dtype=float),
        )


def mutation_accept_prob(kernel, x, y):
    """Metropolis-Hastings ratio min(1, q(x|y) / q(y|x)) for a mutation
    proposal whose target is uniform on the level subspace.

    Membership of ``y`` is checked by the caller; this is only the
    proposal-asymmetry part.
    """
    fwd = kernel.log_density(x, y)
    rev = kernel.log_density(y, x)
    if fwd == -np.inf and rev == -np.inf:
        return 0.0
    delta = rev - fwd
    return 1.0 if delta >= 0 else float(np.exp(delta))


def _gibbs_truncated(x, chol, lo, hi, rng, sweeps=_GIBBS_SWEEPS):
    """Coordinate-wise Gibbs fallback for box-truncated Gaussian steps.

    Used only when plain rejection keeps missing the box.  Conditionals
    come from the precision matrix of the step covariance.
    """
    d = x.shape[0]
    cov = chol @ chol.T
    prec = np.linalg.inv(cov)
    y = np.clip(x, lo, hi)
    for _ in range(sweeps):
        for i in range(d):
            var_i = 1.0 / prec[i, i]
            resid = prec[i] @ (y - x) - prec[i, i] * (y[i] - x[i])
            mean_i = x[i] - var_i * resid
            sd_i = np.sqrt(var_i)
            a = (lo[i] - mean_i) / sd_i
            b = (hi[i] - mean_i) / sd_i
            y[i] = truncnorm.rvs(a, b, loc=mean_i, scale=sd_i, random_state=rng)
    return y


def make_kernel(samples, rng, omega=0.9, scale=1.0, kind="normal", bounds=None,
                max_k=10, ridge=1e-8, cap=2000):
    """Fit a proposal kernel to a level's samples.

    Thins to ``cap`` rows, clusters with BIC-selected k, and adds the
    whole-sample covariance (same relative ridge as the clusters).

    Parameters
    ----------
    samples : ndarray, shape (n, d)
    rng : numpy.random.Generator
    omega, scale, kind, bounds
        Passed through to :class:`ProposalKernel`.
    max_k, ridge : clustering controls.
    cap : int
        Clustering row budget.

    Returns
    -------
    ProposalKernel
    """
    X = thin_for_clustering(samples, cap)
    model = fit_cluster_model(X, rng, max_k=max_k, ridge=ridge)
    d = X.shape[1]
    if X.shape[0] >= d + 2:
        W = np.cov(X, rowvar=False)
    else:
        W = np.diag(X.var(axis=0, ddof=1)) if X.shape[0] > 1 else np.zeros((d, d))
    W = np.atleast_2d(W)
    tr = float(np.trace(W))
    lam = ridge * tr / d if tr > 0 else ridge
    W = W + lam * np.eye(d)
    return ProposalKernel(model, W, omega=omega, scale=scale, kind=kind, bounds=bounds)


class KernelPack:
    """Per-level kernels stacked into padded arrays for batch mutation.

    Only the plain Gaussian kind can be packed; levels with truncated
    kernels must use the per-point path.

    Parameters
    ----------
    kernels : sequence of ProposalKernel
        One per constrained level, all with the same dimension.
    """

    def __init__(self, kernels):
        if any(k.kind != "normal" for k in kernels):
            raise ContractError("KernelPack supports the normal kind only")
        L = len(kernels)
        d = kernels[0].dim
        R = max(k.model.k for k in kernels)
        self.n_levels = L
        self.dim = d
        self.max_k = R
        self.omega = np.array([k.omega for k in kernels])
        self.valid = np.zeros((L, R), dtype=bool)
        self.mu = np.zeros((L, R, d))
        self.chol = np.zeros((L, R, d, d))
        self.ichol = np.zeros((L, R, d, d))
        self.logdet = np.full((L, R), np.inf)
        self.wchol = np.zeros((L, d, d))
        self.wichol = np.zeros((L, d, d))
        self.wlogdet = np.zeros(L)
        eye = np.eye(d)
        for l, k in enumerate(kernels):
            r = k.model.k
            self.valid[l, :r] = True
            self.mu[l, :r] = k.model.means
            self.chol[l, :r] = k._chols
            self.logdet[l, :r] = k._logdets
            for j in range(r):
                self.ichol[l, j] = solve_triangular(k._chols[j], eye, lower=True)
            self.wchol[l] = k._whole_chol
            self.wichol[l] = solve_triangular(k._whole_chol, eye, lower=True)
            self.wlogdet[l] = k._whole_logdet
        # padded slots keep identity factors so gathers stay finite
        pad = ~self.valid
        self.chol[pad] = eye
        self.ichol[pad] = eye

    def assign(self, X):
        """Cluster index per level for the (L, d) array of points."""
        dev = X[:, None, :] - self.mu
        w = np.einsum("lrij,lrj->lri", self.ichol, dev)
        d2 = np.einsum("lri,lri->lr", w, w)
        d2[~self.valid] = np.inf
        return d2.argmin(axis=1)

    def local_chol(self, comps):
        """Gather the scaled local factors for one component per level."""
        return self.chol[np.arange(self.n_levels), comps]

    def log_density(self, X, Y, comps):
        """Mixture log q(y | x) per level, local component given.

        Parameters
        ----------
        X, Y : ndarray, shape (L, d)
        comps : ndarray of int, shape (L,)
            Cluster assignment of each ``X`` row.

        Returns
        -------
        ndarray, shape (L,)
        """
        idx = np.arange(self.n_levels)
        dev = Y - X
        w_loc = np.einsum("lij,lj->li", self.ichol[idx, comps], dev)
        g_loc = -0.5 * (
            self.dim * _LOG2PI
            + self.logdet[idx, comps]
            + np.einsum("li,li->l", w_loc, w_loc)
        )
        w_glob = np.einsum("lij,lj->li", self.wichol, dev)
        g_glob = -0.5 * (
            self.dim * _LOG2PI + self.wlogdet + np.einsum("li,li->l", w_glob, w_glob)
        )
        with np.errstate(divide="ignore"):
            return np.logaddexp(
                np.log(self.omega) + g_loc, np.log1p(-self.omega) + g_glob
            )
