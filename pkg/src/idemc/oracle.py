"""Independent checks for sampler output.

Two reference samplers that share nothing with the ladder machinery
(plain rejection from the box, and direct geometric sampling of
ellipsoid unions), plus the distance tests used to compare sample sets.
The test helpers accept an effective sample size so autocorrelated
sampler output is not held to an i.i.d. yardstick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .errors import ContractError, InfeasibleError
from .membership import SampleSet, is_member

__all__ = [
    "rejection_sample",
    "ellipsoid_sample",
    "ks_statistic",
    "ks_two_sample",
    "chi_square_uniform",
    "KSReport",
    "ChiSquareReport",
]

_CHUNK = 200_000


def rejection_sample(evaluator, n, rng, max_attempts=10_000_000):
    """Uniform draws from the target by plain accept/reject.

    Draws uniformly in the box, evaluates in chunks, and keeps points
    whose implausibilities pass the final cutoffs.  Costs about
    ``n / volume_fraction`` evaluations, so only use it where the
    target is not too small.

    Parameters
    ----------
    evaluator : Evaluator
    n : int
        Accepted points wanted.
    rng : numpy.random.Generator
    max_attempts : int
        Attempt cap.

    Returns
    -------
    SampleSet

    Raises
    ------
    InfeasibleError
        If the cap is hit first; carries a rough 95% upper bound on the
        target/box volume ratio implied by the acceptance count.
    """
    if n < 1:
        raise ContractError("n must be >= 1")
    spec = evaluator.spec
    lo, hi = spec.bounds[:, 0], spec.bounds[:, 1]
    pts, imps = [], []
    kept = 0
    attempts = 0
    chunk = 4096
    while kept < n and attempts < max_attempts:
        chunk = min(chunk, max_attempts - attempts)
        X = lo + rng.random((chunk, spec.dim)) * (hi - lo)
        iv = evaluator.evaluate_batch(X)
        keep = is_member(iv, spec.cutoffs)
        attempts += chunk
        if keep.any():
            pts.append(X[keep])
            imps.append(iv[keep])
            kept += int(keep.sum())
        if kept:
            # extrapolate the remaining need from the observed rate,
            # slightly under so the last chunks stay small and the
            # attempt count (the implied-volume diagnostic) is not
            # inflated by one greedy overshoot
            need = 1.05 * (n - kept) * attempts / kept
            chunk = int(min(_CHUNK, max(1024.0, need)))
        else:
            chunk = min(2 * chunk, _CHUNK)
    if kept < n:
        # rule-of-three style bound so callers can report "how empty"
        bound = (kept + 3.0) / attempts
        raise InfeasibleError(
            f"rejection got {kept}/{n} points in {attempts} attempts "
            f"(implied volume fraction <= {bound:.3g})",
            volume_bound=bound,
        )
    pts = np.concatenate(pts, axis=0)[:n]
    imps = np.concatenate(imps, axis=0)[:n]
    return SampleSet(pts, imps)


def ellipsoid_sample(means, covs, radius, n, rng, bounds=None):
    """Uniform draws from a union of ellipsoids, by direct geometry.

    Each ellipsoid is ``(x - mean)^T cov^-1 (x - mean) <= radius**2``.
    A component is picked proportionally to its volume, a point is
    drawn uniformly inside it (sphere direction times a ``u**(1/d)``
    radius through the Cholesky factor), and overlap is corrected by
    accepting with probability 1/(number of ellipsoids containing the
    point).  Points outside ``bounds`` (when given) are rejected, which
    restricts the result to the union's intersection with the box.

    Parameters
    ----------
    means : ndarray, shape (k, d)
    covs : ndarray, shape (k, d, d)
    radius : float
    n : int
    rng : numpy.random.Generator
    bounds : ndarray, shape (d, 2), optional

    Returns
    -------
    ndarray, shape (n, d)
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    covs = np.asarray(covs, dtype=float)
    if covs.ndim == 2:
        covs = covs[None, :, :]
    k, d = means.shape
    if radius <= 0 or n < 1:
        raise ContractError("radius must be positive and n >= 1")
    chols = np.linalg.cholesky(covs)
    ichols = np.linalg.inv(chols)
    logdets = np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(axis=1)
    weights = np.exp(logdets - logdets.max())
    weights = weights / weights.sum()

    out = np.empty((n, d))
    got = 0
    while got < n:
        want = max(2 * (n - got), 1024)
        comp = rng.choice(k, size=want, p=weights)
        z = rng.standard_normal((want, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        r = radius * rng.random(want) ** (1.0 / d)
        X = means[comp] + np.einsum(
            "nij,nj->ni", chols[comp], z * r[:, None]
        )
        inside = np.zeros(want, dtype=int)
        for j in range(k):
            w = np.einsum("ij,nj->ni", ichols[j], X - means[j])
            inside += (np.einsum("ni,ni->n", w, w) <= radius**2 + 1e-12)
        keep = rng.random(want) * inside < 1.0
        if bounds is not None:
            lo, hi = bounds[:, 0], bounds[:, 1]
            keep &= ((X >= lo) & (X <= hi)).all(axis=1)
        X = X[keep]
        take = min(X.shape[0], n - got)
        out[got:got + take] = X[:take]
        got += take
    return out


def ks_statistic(a, b):
    """Two-sample Kolmogorov-Smirnov statistic (1-d)."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ContractError("both samples must be non-empty")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.abs(cdf_a - cdf_b).max())


@dataclass(frozen=True)
class KSReport:
    """Outcome of a two-sample KS test."""

    statistic: float
    critical: float
    alpha: float
    reject: bool


def ks_two_sample(a, b, alpha=0.01, ess_a=None, ess_b=None):
    """Two-sample KS test with the asymptotic critical value.

    ``c(alpha) * sqrt((na + nb) / (na * nb))`` with
    ``c(alpha) = sqrt(-ln(alpha / 2) / 2)``.  Pass effective sizes for
    autocorrelated samples; they replace the raw counts in the
    critical value only.

    Returns
    -------
    KSReport
    """
    if not 0.0 < alpha < 1.0:
        raise ContractError("alpha must lie in (0, 1)")
    na = float(len(np.ravel(a)) if ess_a is None else ess_a)
    nb = float(len(np.ravel(b)) if ess_b is None else ess_b)
    if na <= 0 or nb <= 0:
        raise ContractError("effective sizes must be positive")
    stat = ks_statistic(a, b)
    c = math.sqrt(-math.log(alpha / 2.0) / 2.0)
    crit = c * math.sqrt((na + nb) / (na * nb))
    return KSReport(stat, crit, alpha, stat > crit)


@dataclass(frozen=True)
class ChiSquareReport:
    """Outcome of a chi-square uniformity test."""

    statistic: float
    critical: float
    alpha: float
    dof: int
    reject: bool


def chi_square_uniform(x, lo, hi, bins=20, alpha=0.01, ess=None):
    """Chi-square test of uniformity on ``[lo, hi]`` (1-d).

    With ``ess`` given, the statistic is scaled by ``ess / n`` so
    autocorrelation does not inflate it.

    Returns
    -------
    ChiSquareReport
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ContractError("sample must be non-empty")
    if not lo < hi:
        raise ContractError("need lo < hi")
    if np.any(x < lo) or np.any(x > hi):
        raise ContractError("samples outside the tested interval")
    counts, _ = np.histogram(x, bins=bins, range=(lo, hi))
    expected = x.size / bins
    stat = float(((counts - expected) ** 2 / expected).sum())
    if ess is not None:
        if ess <= 0:
            raise ContractError("ess must be positive")
        stat *= min(float(ess) / x.size, 1.0)
    crit = float(chi2.ppf(1.0 - alpha, bins - 1))
    return ChiSquareReport(stat, crit, alpha, bins - 1, stat > crit)
