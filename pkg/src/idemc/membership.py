"""Implausibility evaluation and membership tests.

The objects here define *what* is being sampled: a d-dimensional search
box, one implausibility value per wave for any point in it, and a vector
of cutoffs.  A point belongs to the target region when every
implausibility is at or below its cutoff.  Everything downstream (moves,
ladder construction, volume estimates) only talks to an
:class:`Evaluator`, so analytic test problems and external simulator
processes are interchangeable.
"""

from __future__ import annotations

import shlex
import subprocess
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError, TransportError

__all__ = [
    "MembershipSpec",
    "SampleSet",
    "Evaluator",
    "AnalyticEvaluator",
    "ExternalEvaluator",
    "in_box",
    "is_member",
    "builtin_problem",
    "BUILTIN_PROBLEMS",
    "plane_components",
    "ellipsoid_components",
]

PROTOCOL_NAME = "IDEMC"
PROTOCOL_VERSION = 1


# ---------------------------------------------------------------------------
# basic geometry helpers
# ---------------------------------------------------------------------------

def in_box(points, bounds):
    """Test whether points lie inside the closed search box.

    Parameters
    ----------
    points : ndarray, shape (d,) or (N, d)
    bounds : ndarray, shape (d, 2)
        Lower and upper edges per coordinate.

    Returns
    -------
    bool or ndarray of bool
    """
    pts = np.asarray(points, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    ok = (pts >= lo) & (pts <= hi)
    return ok.all(axis=-1)


def is_member(imps, cutoffs):
    """Test implausibility vectors against a cutoff row.

    ``inf`` entries in ``cutoffs`` act as "no constraint for this wave".
    NaN implausibilities never pass.

    Parameters
    ----------
    imps : ndarray, shape (m,) or (N, m)
    cutoffs : ndarray, shape (m,)

    Returns
    -------
    bool or ndarray of bool
    """
    iv = np.asarray(imps, dtype=float)
    cut = np.asarray(cutoffs, dtype=float)
    if iv.shape[-1] != cut.shape[0]:
        raise ContractError(
            f"implausibility arity {iv.shape[-1]} != cutoff arity {cut.shape[0]}"
        )
    return (iv <= cut).all(axis=-1)


# ---------------------------------------------------------------------------
# spec and evaluators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MembershipSpec:
    """Declarative description of a membership problem.

    Attributes
    ----------
    dim : int
        Dimension of the search box.
    bounds : ndarray, shape (dim, 2)
        Box edges, ``bounds[:, 0] < bounds[:, 1]``.
    cutoffs : ndarray, shape (n_waves,)
        Final implausibility cutoff per wave.
    name : str
        Built-in problem name, or a descriptor such as
        ``"external: <command>"``.
    """

    dim: int
    bounds: np.ndarray
    cutoffs: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        cutoffs = np.atleast_1d(np.asarray(self.cutoffs, dtype=float))
        if bounds.shape != (self.dim, 2):
            raise ContractError(f"bounds shape {bounds.shape} != ({self.dim}, 2)")
        if not np.all(bounds[:, 0] < bounds[:, 1]):
            raise ContractError("every bounds row must satisfy lower < upper")
        if cutoffs.ndim != 1 or cutoffs.size == 0:
            raise ContractError("cutoffs must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(cutoffs)):
            raise ContractError("final cutoffs must be finite")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "cutoffs", cutoffs)

    @property
    def n_waves(self):
        return int(self.cutoffs.shape[0])

    @property
    def box_volume(self):
        return float(np.prod(self.bounds[:, 1] - self.bounds[:, 0]))


@dataclass
class SampleSet:
    """Points with their cached implausibility vectors.

    Attributes
    ----------
    points : ndarray, shape (N, dim)
    imps : ndarray, shape (N, n_waves)
    """

    points: np.ndarray
    imps: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.imps = np.atleast_2d(np.asarray(self.imps, dtype=float))
        if self.points.shape[0] != self.imps.shape[0]:
            raise ContractError("points and imps must have equal length")

    def __len__(self):
        return self.points.shape[0]


class Evaluator:
    """Base class tying a :class:`MembershipSpec` to an implausibility map.

    Subclasses implement ``_compute(X) -> (N, n_waves)`` for in-box input.
    The public methods validate the box, keep the evaluation counter (one
    count per point, thread safe), and never cache: every call costs.
    """

    def __init__(self, spec):
        self.spec = spec
        self._count = 0
        self._lock = threading.Lock()

    @property
    def eval_count(self):
        """Number of points evaluated so far."""
        return self._count

    def reset_count(self):
        with self._lock:
            self._count = 0

    def evaluate(self, x):
        """Implausibility vector for one point.

        Parameters
        ----------
        x : ndarray, shape (dim,)

        Returns
        -------
        ndarray, shape (n_waves,)

        Raises
        ------
        DomainError
            If ``x`` lies outside the search box.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.spec.dim,):
            raise ContractError(f"point shape {x.shape} != ({self.spec.dim},)")
        return self.evaluate_batch(x[None, :])[0]

    def evaluate_batch(self, X):
        """Implausibility vectors for many points; counts one per point."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.spec.dim:
            raise ContractError(f"points have dim {X.shape[1]}, expected {self.spec.dim}")
        ok = in_box(X, self.spec.bounds)
        if not np.all(ok):
            bad = X[np.flatnonzero(~ok)[0]]
            raise DomainError(f"point outside search box: {bad.tolist()}")
        out = np.atleast_2d(np.asarray(self._compute(X), dtype=float))
        if out.shape != (X.shape[0], self.spec.n_waves):
            raise ContractError(
                f"evaluator returned shape {out.shape}, expected "
                f"({X.shape[0]}, {self.spec.n_waves})"
            )
        if not np.all(np.isfinite(out)):
            raise ContractError("evaluator returned a non-finite implausibility")
        with self._lock:
            self._count += X.shape[0]
        return out

    def _compute(self, X):
        raise NotImplementedError

    def close(self):
        """Release resources; a no-op for in-process evaluators."""

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class AnalyticEvaluator(Evaluator):
    """Evaluator backed by a vectorized python function.

    Parameters
    ----------
    spec : MembershipSpec
    fn : callable
        Maps an (N, dim) array to implausibilities of shape (N, n_waves)
        or (N,) when there is a single wave.
    """

    def __init__(self, spec, fn):
        super().__init__(spec)
        self._fn = fn

    def _compute(self, X):
        out = np.asarray(self._fn(X), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        return out


class ExternalEvaluator(Evaluator):
    """Evaluator that shells out to a child process, one point at a time.

    The child must print a handshake line ``IDEMC 1 <dim> <n_waves>`` on
    stdout at startup.  Each request is one line of ``dim`` reals; each
    response is one line of ``n_waves`` reals.  Only one request is in
    flight at a time, so the child can be a plain read-compute-print loop.

    Parameters
    ----------
    command : str or list of str
        Command line for the child; a string is split with shell
        quoting rules.
    bounds : ndarray, shape (dim, 2)
        Search box; the child itself never sees it.
    cutoffs : ndarray, shape (n_waves,)
        Final cutoffs per wave.

    Raises
    ------
    TransportError
        On a bad handshake, or later on any malformed, non-finite,
        wrong-arity, or missing response line.
    """

    def __init__(self, command, bounds, cutoffs):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not argv:
            raise ContractError("external evaluator command is empty")
        self._command = command if isinstance(command, str) else " ".join(argv)
        self._proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        try:
            dim, n_waves = self._handshake()
        except Exception:
            self._terminate()
            raise
        bounds = np.asarray(bounds, dtype=float)
        if bounds.shape[0] != dim:
            self._terminate()
            raise TransportError(
                f"child reported dim {dim} but configuration has {bounds.shape[0]} bounds"
            )
        cutoffs = np.atleast_1d(np.asarray(cutoffs, dtype=float))
        if cutoffs.shape[0] != n_waves:
            self._terminate()
            raise TransportError(
                f"child reported {n_waves} wave(s) but configuration has "
                f"{cutoffs.shape[0]} cutoff(s)"
            )
        spec = MembershipSpec(dim, bounds, cutoffs, name=f"external: {command}")
        super().__init__(spec)

    def _handshake(self):
        line = self._proc.stdout.readline()
        parts = line.split()
        if len(parts) != 4 or parts[0] != PROTOCOL_NAME:
            raise TransportError(f"bad handshake line: {line!r}")
        try:
            version, dim, n_waves = (int(p) for p in parts[1:])
        except ValueError:
            raise TransportError(f"bad handshake line: {line!r}") from None
        if version != PROTOCOL_VERSION:
            raise TransportError(f"unsupported protocol version {version}")
        if dim < 1 or n_waves < 1:
            raise TransportError(f"bad handshake arity: {line!r}")
        return dim, n_waves

    def _compute(self, X):
        out = np.empty((X.shape[0], self.spec.n_waves))
        for i, x in enumerate(X):
            out[i] = self._round_trip(x)
        return out

    def _round_trip(self, x):
        req = " ".join(format(v, ".17g") for v in x)
        try:
            self._proc.stdin.write(req + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(
                f"child exited before request (returncode {self._proc.poll()})"
            ) from exc
        line = self._proc.stdout.readline()
        if line == "":
            raise TransportError(
                f"child closed stdout mid-run (returncode {self._proc.poll()})"
            )
        try:
            vals = np.array([float(tok) for tok in line.split()])
        except ValueError:
            raise TransportError(f"malformed response line: {line!r}") from None
        if vals.shape[0] != self.spec.n_waves:
            raise TransportError(
                f"expected {self.spec.n_waves} value(s), got {vals.shape[0]}: {line!r}"
            )
        if not np.all(np.isfinite(vals)):
            raise TransportError(f"non-finite response: {line!r}")
        return vals

    def _terminate(self):
        if self._proc.poll() is None:
            self._proc.kill()
        # reap and close pipes so interpreter shutdown stays quiet
        try:
            self._proc.communicate(timeout=5)
        except Exception:
            pass

    def close(self):
        """Close the child's stdin and wait briefly for it to exit."""
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except Exception:
                self._terminate()
        else:
            self._terminate()

    def __del__(self):
        try:
            self._terminate()
        except Exception:
            pass


# ---------------------------------------------------------------------------
# built-in problems
# ---------------------------------------------------------------------------
#
# Three analytic single-wave problems of increasing difficulty plus a
# two-wave variant of the first.  The constants are part of the package
# contract; tests and the direct-sampling oracles reuse them through
# ``plane_components`` and ``ellipsoid_components``.

_PLANE_MEANS = np.array([[1.6, 1.7], [1.0, 3.0]])
_PLANE_COVS = np.array([
    [[0.4, 0.0], [0.0, 0.008]],
    [[0.08, 0.186], [0.186, 0.48]],
])

_FOURMODE_RHO = -0.97
_FOURMODE_PRECISION_SCALE = 4096.0
_FOURMODE_X3_SCALE = 0.04

_ELLIPSOID_GAMMA = 0.5838968
_ELLIPSOID_MEANS = np.array([
    [1.0] * 10,
    [4.0, 3.0, 3.0, 4.0, 3.0, 4.0, 4.0, 4.0, 2.0, 2.0],
])
_ELLIPSOID_V = np.array([
    [0.1, 0.0125, 0.025, 0.04, 0.01] * 2,
    [0.025, 0.1, 0.01, 0.01, 0.05] * 2,
])


def _mahalanobis_batch(X, mean, cov):
    """sqrt((x-m)^T cov^-1 (x-m)) for each row of X."""
    L = np.linalg.cholesky(cov)
    w = np.linalg.solve(L, (X - mean).T)
    return np.sqrt(np.einsum("ij,ij->j", w, w))


def plane_components(which="both"):
    """Means and covariances of the two plane-problem components.

    Parameters
    ----------
    which : {"both", 0, 1}

    Returns
    -------
    means : ndarray, shape (k, 2)
    covs : ndarray, shape (k, 2, 2)
    """
    if which == "both":
        return _PLANE_MEANS.copy(), _PLANE_COVS.copy()
    return _PLANE_MEANS[which].copy(), _PLANE_COVS[which].copy()


def ellipsoid_components(gamma=_ELLIPSOID_GAMMA):
    """Means and covariances of the two 10-d ellipsoid components.

    The covariances share one correlation structure (0.85 off diagonal)
    and differ only in their per-coordinate spreads; ``gamma`` scales
    both, so smaller values shrink the target volume.

    Returns
    -------
    means : ndarray, shape (2, 10)
    covs : ndarray, shape (2, 10, 10)
    """
    if gamma <= 0:
        raise ContractError("gamma must be positive")
    corr = 0.85 + 0.15 * np.eye(10)
    sd = gamma * np.sqrt(_ELLIPSOID_V)
    covs = sd[:, :, None] * sd[:, None, :] * corr
    return _ELLIPSOID_MEANS.copy(), covs


def _plane_imp(X):
    d0 = _mahalanobis_batch(X, _PLANE_MEANS[0], _PLANE_COVS[0])
    d1 = _mahalanobis_batch(X, _PLANE_MEANS[1], _PLANE_COVS[1])
    return np.minimum(d0, d1)


def _plane_two_wave_imp(X):
    d0 = _mahalanobis_batch(X, _PLANE_MEANS[0], _PLANE_COVS[0])
    d1 = _mahalanobis_batch(X, _PLANE_MEANS[1], _PLANE_COVS[1])
    return np.stack([d0, d1], axis=1)


def _fourmode_imp(X):
    u = np.stack([(X[:, 0] - 2.0) ** 2 - 3.0, (X[:, 1] - 2.0) ** 2 - 3.0], axis=1)
    # inverse of [[1, rho], [rho, 1]] / scale
    quad = (u[:, 0] ** 2 - 2.0 * _FOURMODE_RHO * u[:, 0] * u[:, 1] + u[:, 1] ** 2)
    quad *= _FOURMODE_PRECISION_SCALE / (1.0 - _FOURMODE_RHO**2)
    return 0.1 * (np.sqrt(quad) + X[:, 2] ** 2 / _FOURMODE_X3_SCALE**2)


def _make_ellipsoid_imp(gamma):
    means, covs = ellipsoid_components(gamma)

    def imp(X):
        d0 = _mahalanobis_batch(X, means[0], covs[0])
        d1 = _mahalanobis_batch(X, means[1], covs[1])
        return np.minimum(d0, d1)

    return imp


def _make_plane(cutoff=3.0):
    spec = MembershipSpec(2, [[-3.0, 7.0]] * 2, [cutoff], name="plane2d")
    return AnalyticEvaluator(spec, _plane_imp)


def _make_plane_two_wave(cutoffs=(3.0, 3.0)):
    spec = MembershipSpec(2, [[-3.0, 7.0]] * 2, list(cutoffs), name="plane2d_twowave")
    return AnalyticEvaluator(spec, _plane_two_wave_imp)


def _make_fourmode(cutoff=3.0):
    spec = MembershipSpec(3, [[-20.0, 40.0]] * 3, [cutoff], name="fourmode3d")
    return AnalyticEvaluator(spec, _fourmode_imp)


def _make_ellipsoid(cutoff=3.0, gamma=_ELLIPSOID_GAMMA):
    spec = MembershipSpec(10, [[-3.0, 7.0]] * 10, [cutoff], name="ellipsoid10d")
    return AnalyticEvaluator(spec, _make_ellipsoid_imp(gamma))


BUILTIN_PROBLEMS = {
    "plane2d": _make_plane,
    "plane2d_twowave": _make_plane_two_wave,
    "fourmode3d": _make_fourmode,
    "ellipsoid10d": _make_ellipsoid,
}


def builtin_problem(name, **kwargs):
    """Construct a built-in problem evaluator by name.

    Parameters
    ----------
    name : str
        One of ``plane2d`` (two thin correlated components in a 2-d box),
        ``plane2d_twowave`` (same geometry split into one wave per
        component), ``fourmode3d`` (four symmetric modes in a 3-d box),
        or ``ellipsoid10d`` (two tiny ellipsoids in a 10-d box, with an
        optional ``gamma`` scale).
    **kwargs
        Problem-specific overrides, e.g. ``cutoff`` or ``gamma``.

    Returns
    -------
    Evaluator
    """
    try:
        factory = BUILTIN_PROBLEMS[name]
    except KeyError:
        known = ", ".join(sorted(BUILTIN_PROBLEMS))
        raise ContractError(f"unknown problem {name!r} (known: {known})") from None
    return factory(**kwargs)
