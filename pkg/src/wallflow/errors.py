"""Exception hierarchy shared by all wallflow modules."""


class WallflowError(Exception):
    """Base class for all failures raised by this package."""


class UnderResolved(WallflowError):
    """Grid spacing too coarse to represent a wall (need h <= 1/(8*eta))."""


class DegenerateSplit(WallflowError):
    """Split position sits on a level crossing p/(p+q); ideal ordering is ambiguous."""


class ConvergenceFailure(WallflowError):
    """Eigensolve did not meet its residual / gap targets."""


class LinearSolveFailure(WallflowError):
    """Tridiagonal Crank-Nicolson solve produced non-finite values."""


class ZeroNorm(WallflowError):
    """Operation on a state whose norm is numerically zero."""


class CrossingInside(WallflowError):
    """A nominally adiabatic sweep would pass through a tracked level crossing."""


class SpeedInfeasible(WallflowError):
    """Requested crossing time is incompatible with the rate bound kappa."""


class Discontinuity(WallflowError):
    """Stage concatenation with mismatched parameter values at a junction."""


class InfeasibleLengths(WallflowError):
    """No subinterval length assignment satisfies the ratio < 2 constraint."""


class BisectionFailure(WallflowError):
    """Speed-to-amplitude tuning could not bracket the requested amplitude."""


class RationalResonance(WallflowError):
    """Eigenvalue ratios too close to low-order rationals for phase tuning."""


class WaitExceeded(WallflowError):
    """Phase targets not reached within the allotted waiting time."""


class NormMismatch(WallflowError):
    """Initial and target states of a transfer have different norms."""


class ClosureExceeded(WallflowError):
    """Tracked-label closure (or an orbit) left the computable mode cap."""
