"""Exception types shared across the package."""


class IdemcError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(IdemcError):
    """An argument violated a documented precondition."""


class DomainError(IdemcError):
    """A point outside the search box was handed to an evaluator."""


class ConfigError(IdemcError):
    """A run configuration file could not be parsed or validated."""


class TransportError(IdemcError):
    """The external evaluator process misbehaved (bad handshake, malformed
    response, non-finite value, or unexpected exit)."""


class InfeasibleError(IdemcError):
    """Rejection sampling hit its attempt cap without enough acceptances.

    Parameters
    ----------
    msg : str
        Human-readable description.
    volume_bound : float, optional
        Upper bound on the target/box volume ratio implied by the
        observed acceptance count.
    """

    def __init__(self, msg, volume_bound=None):
        super().__init__(msg)
        self.volume_bound = volume_bound


class EmptyTargetError(IdemcError):
    """Ladder construction hit the rung cap, so the target region may be
    empty at the requested cutoff.

    Parameters
    ----------
    msg : str
        Human-readable description.
    levels : list, optional
        The rung levels reached before giving up, for diagnostics.
    """

    def __init__(self, msg, levels=None):
        super().__init__(msg)
        self.levels = levels


class InvariantError(IdemcError):
    """A chromosome left its subspace, which indicates a bookkeeping bug.

    Carries a ``diagnostics`` dict with the offending level, point and
    cached implausibility so the failure can be reported before aborting.
    """

    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}
