"""Exception types shared across the package.

Every failure raised by this package derives from :class:`YamabeFlowError`.
Exceptions may carry structured context (e.g. the flow time at which a step
failed, or the exponent at which a continuation stage diverged) in the
``context`` dict; :meth:`YamabeFlowError.at_time` returns a copy of the
exception enriched with the failing time, which is how integrators propagate
per-step errors.
"""

from __future__ import annotations


class YamabeFlowError(Exception):
    """Base class for all library failures."""

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = dict(context)

    @property
    def time(self):
        return self.context.get("time")

    def at_time(self, t: float) -> "YamabeFlowError":
        """Return a same-type copy annotated with the failing flow time."""
        err = type(self)(f"{self.args[0]} (at t={t:.10g})", **self.context)
        err.context["time"] = t
        return err


# -- geometry ---------------------------------------------------------------

class NonPositiveWarp(YamabeFlowError):
    """Warping function is non-positive at an interior grid point."""


class PoleClosureViolated(YamabeFlowError):
    """dphi/ds at a pole deviates from +-1 beyond tolerance."""


class GridMismatch(YamabeFlowError):
    """A grid function has the wrong length for the metric's grid."""


class NeckpinchDetected(YamabeFlowError):
    """Interior warp minimum fell below the neckpinch threshold."""


# -- yamabe solver ----------------------------------------------------------

class NonPositiveTestFunction(YamabeFlowError):
    """Quotient evaluated on a function that is not strictly positive."""


class SolverDiverged(YamabeFlowError):
    """Fixed-point iteration hit its cap without meeting tolerances."""


class IndefiniteOperator(YamabeFlowError):
    """No spectral shift made the linearized operator usable."""


# -- ricci flow -------------------------------------------------------------

class ParameterBlowup(YamabeFlowError):
    """A homogeneous metric eigenvalue left the trusted range."""


class CFLViolated(YamabeFlowError):
    """Explicit step size exceeds the parabolic stability bound."""


class InsufficientSnapshots(YamabeFlowError):
    """Too few or non-uniform snapshots for finite differencing."""


# -- verifier ---------------------------------------------------------------

class NormalizationViolated(YamabeFlowError):
    """Conformal factor does not satisfy the unit-mass constraint."""


# -- spectral ---------------------------------------------------------------

class GridTooCoarse(YamabeFlowError):
    """Discrete eigenvalue error estimate exceeds the trust threshold."""


class Inapplicable(YamabeFlowError):
    """Eigenvalue-matching check requires spatially constant curvature."""


# -- cli --------------------------------------------------------------------

class ConfigError(YamabeFlowError):
    """Malformed or inconsistent experiment configuration."""
