"""Metric backends and curvature/measure kernels.

Two symmetric geometry backends are supported:

* :class:`HomogeneousMetric` — a left-invariant metric on SU(2) given by its
  three eigenvalues ``(a, b, c)`` in a fixed Milnor frame with bracket
  convention ``[e1, e2] = 2 e3`` (cyclic).  All curvature quantities are
  algebraic in ``(a, b, c)``; with ``a = b = c = k`` the metric is the round
  3-sphere of radius ``sqrt(k)``.
* :class:`WarpedMetric` — a rotationally symmetric metric
  ``psi(x)^2 dx^2 + phi(x)^2 g_{S^{n-1}}`` on the n-sphere, sampled on a fixed
  uniform coordinate grid ``x in [0, 1]``.  Arclength is derived, never the
  primary variable.  The warp ``phi`` vanishes exactly at the two poles and
  must close smoothly there (``dphi/ds = +1`` on the left, ``-1`` on the
  right, within tolerance).

Conventions
-----------
The Laplacian is the divergence of the gradient, so ``-Laplacian`` has
non-negative eigenvalues; every eigenvalue statement in this package refers
to eigenvalues ``lambda > 0`` of ``-Laplacian``.  Scalar curvature of the
round unit n-sphere is ``n(n-1)``.

Pole treatment (warped backend): ghost points by parity — ``phi`` odd, ``psi``
and rotationally symmetric grid functions even across each pole — and the
``phi'/phi``-type singularities resolved by their parity limits.  Operators
on grid functions assume the input is rotationally symmetric (even at the
poles); pole values of non-symmetric inputs are meaningless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    GridMismatch,
    NeckpinchDetected,
    NonPositiveWarp,
    PoleClosureViolated,
)

__all__ = [
    "Backend",
    "ModelParams",
    "HomogeneousMetric",
    "WarpedMetric",
    "HomogeneousCurvature",
    "WarpedCurvature",
    "compute_curvature",
    "ricci_sq",
    "radial_derivative",
    "volume",
    "integrate_scalar",
    "quadrature_weights",
    "laplacian_apply",
    "laplacian_coefficients",
    "gradient_sq",
    "conformal_metric",
    "unit_sphere_area",
    "NECKPINCH_FRACTION",
    "DEFAULT_POLE_TOL",
]

#: Interior phi below this fraction of the total arclength is treated as an
#: incipient neckpinch rather than silently continued.
NECKPINCH_FRACTION = 1e-6

#: Default tolerance on |dphi/ds -+ 1| at the poles.  Generous relative to the
#: O(h^2) closure defect of smooth profiles at production resolutions, tight
#: enough to catch genuinely non-closing profiles.
DEFAULT_POLE_TOL = 1e-2

#: Volume of the unit round 3-sphere; the homogeneous backend's (1,1,1) metric.
_UNIT_SU2_VOLUME = 2.0 * math.pi**2


def unit_sphere_area(m: int) -> float:
    """Area of the unit m-sphere, 2 pi^((m+1)/2) / Gamma((m+1)/2)."""
    return 2.0 * math.pi ** ((m + 1) / 2.0) / math.gamma((m + 1) / 2.0)


class Backend:
    """Backend tags for :class:`ModelParams`."""

    HOMOGENEOUS3 = "homogeneous3"
    WARPED_SPHERE = "warped-sphere"


@dataclass(frozen=True)
class ModelParams:
    """Dimension and backend selector.

    ``n >= 3`` so the exponents (n+2)/(n-2) and 4(n-1)/(n-2) are finite and
    the critical exponent is well-defined; the homogeneous backend forces
    ``n == 3``.
    """

    n: int
    backend: str

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"dimension must be >= 3, got n={self.n}")
        if self.backend not in (Backend.HOMOGENEOUS3, Backend.WARPED_SPHERE):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == Backend.HOMOGENEOUS3 and self.n != 3:
            raise ValueError("homogeneous backend requires n = 3")


# ---------------------------------------------------------------------------
# homogeneous backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HomogeneousMetric:
    """Left-invariant SU(2) metric with frame eigenvalues a, b, c > 0.

    Frame convention: Milnor frame with ``[e1, e2] = 2 e3`` cyclic, so that
    ``a = b = c = 1`` is the unit round 3-sphere (scalar curvature 6, volume
    2 pi^2).  The frame formulas below were derived once from the Koszul
    formula and are validated in the test suite against a brute-force
    coordinate-chart computation.
    """

    a: float
    b: float
    c: float

    n = 3

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.c > 0):
            raise ValueError(f"frame eigenvalues must be positive, got {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.a, self.b, self.c)

    @property
    def is_round(self) -> bool:
        return self.a == self.b == self.c

    def scaled(self, factor: float) -> "HomogeneousMetric":
        """The metric g -> factor * g."""
        return HomogeneousMetric(factor * self.a, factor * self.b, factor * self.c)


@dataclass(frozen=True)
class HomogeneousCurvature:
    """Pointwise curvature data of a homogeneous metric (spatially constant)."""

    ric_1: float
    ric_2: float
    ric_3: float
    R: float
    traceless_ricci_sq: float
    laplacian_r: float   # identically zero
    volume_weight: float  # density of dV against the (1,1,1)-metric Haar measure

    @property
    def ricci_eigenvalues(self) -> tuple[float, float, float]:
        return (self.ric_1, self.ric_2, self.ric_3)

    @property
    def ricci_sq(self) -> float:
        return self.ric_1**2 + self.ric_2**2 + self.ric_3**2


def _homogeneous_curvature(metric: HomogeneousMetric) -> HomogeneousCurvature:
    a, b, c = metric.as_tuple()
    s = math.sqrt(a * b * c)
    mu1 = (-a + b + c) / s
    mu2 = (a - b + c) / s
    mu3 = (a + b - c) / s
    ric = (2.0 * mu2 * mu3, 2.0 * mu1 * mu3, 2.0 * mu1 * mu2)
    R = ric[0] + ric[1] + ric[2]
    # Difference form: algebraically |Rc|^2 - R^2/3, but exactly zero (and
    # exactly non-negative) when the eigencomponents are bit-equal.
    tr0 = ((ric[0] - ric[1]) ** 2 + (ric[1] - ric[2]) ** 2 + (ric[0] - ric[2]) ** 2) / 3.0
    return HomogeneousCurvature(
        ric_1=ric[0], ric_2=ric[1], ric_3=ric[2],
        R=R, traceless_ricci_sq=tr0, laplacian_r=0.0,
        volume_weight=s,
    )


# ---------------------------------------------------------------------------
# warped backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WarpedMetric:
    """Rotationally symmetric metric psi(x)^2 dx^2 + phi(x)^2 g_{S^{n-1}}.

    ``psi`` and ``phi`` are sampled on the uniform grid ``x_i = i/(N-1)``.
    ``phi`` is exactly zero at the two poles (indices 0 and N-1) and positive
    in between; ``psi`` is positive everywhere.  Instances are treated as
    immutable values.
    """

    n: int
    psi: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        psi = np.ascontiguousarray(self.psi, dtype=float)
        phi = np.ascontiguousarray(self.phi, dtype=float)
        if psi.ndim != 1 or phi.shape != psi.shape:
            raise ValueError("psi and phi must be 1-D arrays of equal length")
        if len(psi) < 7:
            raise ValueError("grid too small; need at least 7 points")
        if self.n < 3:
            raise ValueError(f"dimension must be >= 3, got n={self.n}")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "phi", phi)

    # -- construction -------------------------------------------------------

    @classmethod
    def round_sphere(cls, n: int, grid_points: int, radius: float = 1.0) -> "WarpedMetric":
        """The round n-sphere of the given radius, phi(s) = r sin(s/r)."""
        return cls.bumpy_sphere(n, grid_points, wave=2, amplitude=0.0, radius=radius)

    @classmethod
    def bumpy_sphere(cls, n: int, grid_points: int, wave: int = 2,
                     amplitude: float = 0.1, radius: float = 1.0) -> "WarpedMetric":
        """A perturbed sphere with warp profile sin + amplitude * sin(wave * .).

        ``phi(x) = sin(pi x) + amplitude * sin(wave pi x)`` on the coordinate
        grid, with ``psi(x) = A + B cos(pi x)`` chosen as the unique
        cosine profile, even across both poles, that closes the metric
        smoothly (dphi/ds = +-1 exactly at the poles); the whole metric is
        then rescaled so the total arclength is pi * radius.
        """
        if wave < 1:
            raise ValueError("wave number must be >= 1")
        x = np.linspace(0.0, 1.0, grid_points)
        eps, k = float(amplitude), int(wave)
        phi = np.sin(np.pi * x) + eps * np.sin(k * np.pi * x)
        ck = math.cos(k * math.pi)  # +-1
        A = math.pi * (1.0 + eps * k * (1.0 - ck) / 2.0)
        B = math.pi * eps * k * (1.0 + ck) / 2.0
        psi = A + B * np.cos(np.pi * x)
        scale = math.pi * radius / A  # arc-normalization: L = pi * radius
        phi = scale * phi
        psi = scale * psi
        phi[0] = 0.0
        phi[-1] = 0.0
        return cls(n=n, psi=psi, phi=phi)

    @classmethod
    def from_arrays(cls, n: int, psi: np.ndarray, phi: np.ndarray) -> "WarpedMetric":
        """Build from raw samples; pole values of phi are snapped to zero."""
        phi = np.array(phi, dtype=float)
        scale = float(np.max(np.abs(phi))) or 1.0
        if abs(phi[0]) > 1e-8 * scale or abs(phi[-1]) > 1e-8 * scale:
            raise NonPositiveWarp("phi must vanish at both poles")
        phi[0] = 0.0
        phi[-1] = 0.0
        return cls(n=n, psi=np.array(psi, dtype=float), phi=phi)

    # -- grid geometry --------------------------------------------------------

    @property
    def grid_points(self) -> int:
        return len(self.psi)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.grid_points)

    @property
    def h(self) -> float:
        return 1.0 / (self.grid_points - 1)

    def arclength(self) -> np.ndarray:
        """Cumulative arclength s(x) = int_0^x psi (composite trapezoid)."""
        h = self.h
        ds = 0.5 * h * (self.psi[:-1] + self.psi[1:])
        return np.concatenate(([0.0], np.cumsum(ds)))

    @property
    def total_arclength(self) -> float:
        return float(self.arclength()[-1])

    def min_spacing(self) -> float:
        """Smallest arclength spacing between adjacent grid points."""
        return float(self.h * np.min(0.5 * (self.psi[:-1] + self.psi[1:])))

    # -- validation / transforms ---------------------------------------------

    def validate(self, pole_tol: float = DEFAULT_POLE_TOL) -> None:
        """Raise if the metric invariants do not hold.

        Checks positivity of psi, exact pole zeros and interior positivity of
        phi, the neckpinch threshold, and smooth pole closure within
        ``pole_tol``.
        """
        if np.any(self.psi <= 0.0):
            raise NonPositiveWarp("psi must be positive everywhere")
        if self.phi[0] != 0.0 or self.phi[-1] != 0.0:
            raise NonPositiveWarp("phi must vanish exactly at both poles")
        interior = self.phi[1:-1]
        if np.any(interior <= 0.0):
            i = 1 + int(np.argmin(interior))
            raise NonPositiveWarp(f"phi <= 0 at interior grid point {i}", index=i)
        L = self.total_arclength
        phi_min = float(np.min(interior))
        if phi_min < NECKPINCH_FRACTION * L:
            raise NeckpinchDetected(
                f"interior phi_min={phi_min:.3e} below {NECKPINCH_FRACTION:g} * L",
                phi_min=phi_min, arclength=L,
            )
        left, right = self.pole_slopes()
        if abs(left - 1.0) > pole_tol or abs(right + 1.0) > pole_tol:
            raise PoleClosureViolated(
                f"dphi/ds at poles = ({left:.6f}, {right:.6f}), expected (+1, -1)",
                left=left, right=right, tolerance=pole_tol,
            )

    def pole_slopes(self) -> tuple[float, float]:
        """(dphi/ds at left pole, at right pole), 4th-order ghost stencils."""
        h = self.h
        phi = self.phi
        left = (16.0 * phi[1] - 2.0 * phi[2]) / (12.0 * h) / self.psi[0]
        right = -(16.0 * phi[-2] - 2.0 * phi[-3]) / (12.0 * h) / self.psi[-1]
        return float(left), float(right)

    def scaled(self, factor: float) -> "WarpedMetric":
        """The metric g -> factor * g (psi, phi scale by sqrt(factor))."""
        root = math.sqrt(factor)
        return WarpedMetric(n=self.n, psi=root * self.psi, phi=root * self.phi)


@dataclass(frozen=True, eq=False)
class WarpedCurvature:
    """Pointwise curvature data of a warped metric on its grid."""

    ric_radial: np.ndarray
    ric_spherical: np.ndarray
    R: np.ndarray
    traceless_ricci_sq: np.ndarray
    laplacian_r: np.ndarray
    volume_weight: np.ndarray  # density of dV against dx, sphere area included


def ricci_sq(curv, n: int):
    """|Rc|^2 pointwise, with eigen-multiplicities (radial x1, spherical x(n-1))."""
    if isinstance(curv, HomogeneousCurvature):
        return curv.ric_1**2 + curv.ric_2**2 + curv.ric_3**2
    return curv.ric_radial**2 + (n - 1) * curv.ric_spherical**2


# -- parity ghost machinery ---------------------------------------------------

def _pad_parity(arr: np.ndarray, left_sign: int, right_sign: int) -> np.ndarray:
    """Extend by two ghost points per side, mirroring across each pole."""
    out = np.empty(len(arr) + 4)
    out[2:-2] = arr
    out[0] = left_sign * arr[2]
    out[1] = left_sign * arr[1]
    out[-2] = right_sign * arr[-2]
    out[-1] = right_sign * arr[-3]
    return out


def _pad_even(arr):
    return _pad_parity(arr, 1, 1)


def _pad_odd(arr):
    return _pad_parity(arr, -1, -1)


def _d1(p: np.ndarray, h: float) -> np.ndarray:
    """Centered first derivative of a padded array (2nd order)."""
    return (p[3:-1] - p[1:-3]) / (2.0 * h)


def _d1_wide(p: np.ndarray, h: float) -> np.ndarray:
    """Centered first derivative of a padded array (4th order, 5 points)."""
    return (-p[4:] + 8.0 * p[3:-1] - 8.0 * p[1:-3] + p[:-4]) / (12.0 * h)


def _d2(p: np.ndarray, h: float) -> np.ndarray:
    """Centered second derivative of a padded array (2nd order)."""
    return (p[3:-1] - 2.0 * p[2:-2] + p[1:-3]) / (h * h)


def _warped_curvature(metric: WarpedMetric, pole_tol: float) -> WarpedCurvature:
    metric.validate(pole_tol)
    n = metric.n
    h = metric.h
    psi, phi = metric.psi, metric.phi

    p_phi = _pad_odd(phi)
    p_psi = _pad_even(psi)
    phi_x = _d1(p_phi, h)
    phi_xx = _d2(p_phi, h)
    psi_x = _d1(p_psi, h)
    # 4th-order slope: the (1 - phi_s^2)/phi^2 term needs phi_s to O(h^4)
    # near the poles or its relative error is O(1) at the adjacent points.
    phi_s4 = _d1_wide(p_phi, h) / psi
    phi_ss = phi_xx / psi**2 - phi_x * psi_x / psi**3

    # q = phi''/phi in arclength.  The centered-stencil truncation error of
    # phi'' vanishes like phi near the poles (parity), so the raw ratio is
    # uniformly 2nd order; the pole value is the parity limit, which agrees
    # with the adjacent interior value to O(h^2).
    q = np.empty_like(phi)
    q[1:-1] = phi_ss[1:-1] / phi[1:-1]
    q[0] = q[1]
    q[-1] = q[-2]

    # v = (1 - phi_s^2)/phi^2; at the poles v = -q (l'Hopital).  The same
    # identity is used at the first interior point off each pole: v + q
    # vanishes like s^2 there, so this stays O(h^2)-consistent, and it is
    # what keeps the semi-discrete flow stable — the direct quotient's
    # 1/phi^2 feedback at that point turns the analytically neutral
    # pole-slope mode into an exponentially unstable discrete mode.
    v = np.empty_like(phi)
    v[2:-2] = (1.0 - phi_s4[2:-2] ** 2) / phi[2:-2] ** 2
    v[:2] = -q[:2]
    v[-2:] = -q[-2:]

    ric_radial = -(n - 1) * q
    ric_spherical = -q + (n - 2) * v
    # R assembled as the trace so the trace identity holds to machine precision.
    R = ric_radial + (n - 1) * ric_spherical
    # Difference form of |R0|^2: exactly >= 0, algebraically |Rc|^2 - R^2/n.
    tr0 = ((n - 1) / n) * (ric_radial - ric_spherical) ** 2

    lap_r = laplacian_apply(metric, R)
    weight = unit_sphere_area(n - 1) * phi ** (n - 1) * psi
    return WarpedCurvature(
        ric_radial=ric_radial, ric_spherical=ric_spherical, R=R,
        traceless_ricci_sq=tr0, laplacian_r=lap_r, volume_weight=weight,
    )


# ---------------------------------------------------------------------------
# public kernels
# ---------------------------------------------------------------------------

def compute_curvature(metric, pole_tol: float = DEFAULT_POLE_TOL):
    """Curvature data of a metric on either backend.

    Parameters
    ----------
    metric : HomogeneousMetric | WarpedMetric
    pole_tol : float
        Tolerance for the warped pole-closure check.

    Returns
    -------
    HomogeneousCurvature | WarpedCurvature
        Scalar curvature, Ricci eigen-components, pointwise traceless Ricci
        squared, Laplacian of R, and the volume-form density.  Warped kernels:
        ``Ric(ds, ds) = -(n-1) phi''/phi``, spherical eigenvalue
        ``-phi''/phi + (n-2)(1 - phi'^2)/phi^2``, with pole values obtained by
        the parity limits.

    Raises
    ------
    NonPositiveWarp, NeckpinchDetected, PoleClosureViolated
        When the warped metric invariants fail.
    """
    if isinstance(metric, HomogeneousMetric):
        return _homogeneous_curvature(metric)
    if isinstance(metric, WarpedMetric):
        return _warped_curvature(metric, pole_tol)
    raise TypeError(f"unsupported metric type {type(metric).__name__}")


def quadrature_weights(metric: WarpedMetric) -> np.ndarray:
    """Node weights W with  int f dV ~= sum_i W_i f_i.

    Composite trapezoid in arclength against the dV density
    ``omega_{n-1} phi^{n-1}``; the pole weights vanish with phi.
    """
    s = metric.arclength()
    ds = np.diff(s)
    w = np.zeros(metric.grid_points)
    w[:-1] += 0.5 * ds
    w[1:] += 0.5 * ds
    return w * unit_sphere_area(metric.n - 1) * metric.phi ** (metric.n - 1)


def integrate_scalar(metric, values) -> float:
    """Integrate a pointwise quantity against dV."""
    if isinstance(metric, HomogeneousMetric):
        return float(values) * volume(metric)
    values = np.asarray(values, dtype=float)
    if values.shape != metric.psi.shape:
        raise GridMismatch(f"expected {metric.grid_points} values, got {values.shape}")
    return float(np.dot(quadrature_weights(metric), values))


def volume(metric) -> float:
    """Total volume int dV of the metric."""
    if isinstance(metric, HomogeneousMetric):
        return _UNIT_SU2_VOLUME * math.sqrt(metric.a * metric.b * metric.c)
    return float(np.sum(quadrature_weights(metric)))


def laplacian_coefficients(metric: WarpedMetric):
    """Tridiagonal coefficients (lower, diag, upper) of the grid Laplacian.

    The operator is ``u'' + (n-1)(phi'/phi) u'`` in arclength on symmetric
    grid functions, with pole rows ``n * u''(pole)`` via the parity limit.
    Row i of the operator reads ``lower[i] u[i-1] + diag[i] u[i] +
    upper[i] u[i+1]`` (lower[0] and upper[-1] are unused).
    """
    n = metric.n
    h = metric.h
    psi, phi = metric.psi, metric.phi
    phi_x = _d1(_pad_odd(phi), h)
    psi_x = _d1(_pad_even(psi), h)

    inv_h2psi2 = 1.0 / (h * h * psi**2)
    drift = np.zeros_like(psi)
    drift[1:-1] = ((n - 1) * phi_x[1:-1] / (phi[1:-1] * psi[1:-1] ** 2)
                   - psi_x[1:-1] / psi[1:-1] ** 3)

    lower = inv_h2psi2 - drift / (2.0 * h)
    diag = -2.0 * inv_h2psi2
    upper = inv_h2psi2 + drift / (2.0 * h)

    # Pole rows: Laplacian(pole) = n u''(pole) = 2n (u[1] - u[0]) / (h psi)^2.
    diag[0] = -2.0 * n * inv_h2psi2[0]
    upper[0] = 2.0 * n * inv_h2psi2[0]
    lower[0] = 0.0
    diag[-1] = -2.0 * n * inv_h2psi2[-1]
    lower[-1] = 2.0 * n * inv_h2psi2[-1]
    upper[-1] = 0.0
    return lower, diag, upper


def laplacian_apply(metric: WarpedMetric, u: np.ndarray) -> np.ndarray:
    """Apply the Laplacian of the warped metric to a symmetric grid function.

    Second-order accurate on smooth symmetric u, including the poles.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != metric.psi.shape:
        raise GridMismatch(f"expected {metric.grid_points} values, got {u.shape}")
    lower, diag, upper = laplacian_coefficients(metric)
    out = diag * u
    out[:-1] += upper[:-1] * u[1:]
    out[1:] += lower[1:] * u[:-1]
    return out


def gradient_sq(metric: WarpedMetric, u: np.ndarray) -> np.ndarray:
    """|grad u|^2 = (du/ds)^2 pointwise; exactly zero at the poles for
    symmetric u (parity)."""
    u = np.asarray(u, dtype=float)
    if u.shape != metric.psi.shape:
        raise GridMismatch(f"expected {metric.grid_points} values, got {u.shape}")
    u_s = _d1(_pad_even(u), metric.h) / metric.psi
    return u_s**2


def radial_derivative(metric: WarpedMetric, u: np.ndarray) -> np.ndarray:
    """du/ds for a symmetric grid function (zero at the poles)."""
    u = np.asarray(u, dtype=float)
    if u.shape != metric.psi.shape:
        raise GridMismatch(f"expected {metric.grid_points} values, got {u.shape}")
    return _d1(_pad_even(u), metric.h) / metric.psi


def conformal_metric(metric, factor):
    """The conformally changed metric v^{4/(n-2)} g.

    For the warped backend ``factor`` is a positive symmetric grid function v
    and the result is again warped, with psi and phi multiplied by
    ``v^{2/(n-2)}``; pole closure is preserved.  For the homogeneous backend
    only constant v makes sense and the metric is scaled by ``v^{4/(n-2)}``.
    """
    n = metric.n
    if isinstance(metric, HomogeneousMetric):
        v = float(factor)
        if v <= 0:
            raise NonPositiveWarp("conformal factor must be positive")
        return metric.scaled(v ** (4.0 / (n - 2)))
    v = np.asarray(factor, dtype=float)
    if v.shape != metric.psi.shape:
        raise GridMismatch(f"expected {metric.grid_points} values, got {v.shape}")
    if np.any(v <= 0):
        raise NonPositiveWarp("conformal factor must be positive everywhere")
    w = v ** (2.0 / (n - 2))
    phi = metric.phi * w
    phi[0] = 0.0
    phi[-1] = 0.0
    return WarpedMetric(n=n, psi=metric.psi * w, phi=phi)
