"""Quotient evaluation and the subcritical conformal solver.

Evaluates the conformally weighted quotient

    [ int ( (4(n-1)/(n-2)) |grad u|^2 + R u^2 ) dV ] / [ int u^{p+1} dV ]^{2/(p+1)}

over positive functions and solves its Euler-Lagrange system

    -(4(n-1)/(n-2)) Laplacian(u) + R u = Y u^p,    int u^{p+1} dV = 1,

for exponents 1 < p <= (n+2)/(n-2), with continuation in p toward the
critical exponent.

On the warped backend the minimization runs over rotationally symmetric u
only; the reported value is the *symmetric* quotient, which is known to equal
the unrestricted one on the round sphere but is not asserted to elsewhere.
The solver tracks whatever critical point its warm start converges to and
does not certify global minimality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import (
    IndefiniteOperator,
    NonPositiveTestFunction,
    SolverDiverged,
)
from .geometry import (
    HomogeneousMetric,
    WarpedMetric,
    compute_curvature,
    gradient_sq,
    integrate_scalar,
    laplacian_apply,
    laplacian_coefficients,
    quadrature_weights,
    volume,
)

__all__ = [
    "ExponentParam",
    "ConformalSolution",
    "SolverOptions",
    "critical_exponent",
    "conformal_coupling",
    "quotient",
    "el_residual",
    "solve_subcritical",
    "continue_to_critical",
    "default_schedule",
]


def critical_exponent(n: int) -> float:
    """The critical exponent (n+2)/(n-2)."""
    return (n + 2.0) / (n - 2.0)


def conformal_coupling(n: int) -> float:
    """The coupling 4(n-1)/(n-2) in front of the Laplacian."""
    return 4.0 * (n - 1.0) / (n - 2.0)


@dataclass(frozen=True)
class ExponentParam:
    """A nonlinearity exponent p in (1, (n+2)/(n-2)]."""

    p: float
    is_critical: bool = False

    @classmethod
    def critical(cls, n: int) -> "ExponentParam":
        return cls(p=critical_exponent(n), is_critical=True)

    @classmethod
    def for_dimension(cls, p: float, n: int) -> "ExponentParam":
        """Validated exponent; flags the critical endpoint exactly."""
        crit = critical_exponent(n)
        if not (1.0 < p <= crit):
            raise ValueError(f"p={p} outside (1, {crit}] for n={n}")
        return cls(p=float(p), is_critical=(p == crit))

    def validate(self, n: int) -> None:
        crit = critical_exponent(n)
        if not (1.0 < self.p <= crit):
            raise ValueError(f"p={self.p} outside (1, {crit}] for n={n}")


def _as_exponent(p, n: int) -> ExponentParam:
    if isinstance(p, ExponentParam):
        p.validate(n)
        return p
    return ExponentParam.for_dimension(float(p), n)


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and controls for :func:`solve_subcritical`.

    ``residual_tol`` is checked on the L2 norm of the Euler-Lagrange defect;
    defaults are well below the O(h^2) discretization floor at production
    resolutions.  ``warm_start`` (grid function) seeds the iteration.
    """

    residual_tol: float = 1e-8
    normalization_tol: float = 1e-10
    max_iterations: int = 500
    fixed_point_tol: float = 1e-13
    damping: float = 1.0
    positivity_clamp: float = 1e-12
    newton_polish: bool = True
    warm_start: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True, eq=False)
class ConformalSolution:
    """A positive solution of the Euler-Lagrange system with its certificate.

    ``u`` is a positive grid function (warped) or a positive constant
    (homogeneous); ``y_tilde`` is the constant of the Euler-Lagrange system
    the returned u satisfies (it agrees with ``quotient(metric, u, p)`` up to
    the O(h^2) discrete integration-by-parts defect, exactly so for constant
    u); ``residual_l2`` the L2 norm of the pointwise Euler-Lagrange defect at
    (u, y_tilde); ``warm_start_distance`` the max-norm distance from the warm
    start (None for cold starts) — a monitor for suspected branch jumps, not
    a decision.
    """

    u: np.ndarray | float
    p: ExponentParam
    y_tilde: float
    residual_l2: float
    normalization_defect: float
    iterations: int
    warm_start_distance: float | None = None


# ---------------------------------------------------------------------------
# quotient and residual
# ---------------------------------------------------------------------------

def quotient(metric, u, p) -> float:
    """The subcritical quotient of a positive test function.

    Homogeneous of degree zero in u; at the critical exponent it is invariant
    under metric scaling and conformal change.
    """
    p = _as_exponent(p, metric.n)
    kappa = conformal_coupling(metric.n)
    if isinstance(metric, HomogeneousMetric):
        u = float(u)
        if u <= 0:
            raise NonPositiveTestFunction("constant test function must be positive")
        curv = compute_curvature(metric)
        V = volume(metric)
        num = curv.R * u * u * V
        den = (u ** (p.p + 1.0) * V) ** (2.0 / (p.p + 1.0))
        return num / den
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise NonPositiveTestFunction("test function must be positive everywhere")
    curv = compute_curvature(metric)
    num = integrate_scalar(metric, kappa * gradient_sq(metric, u) + curv.R * u * u)
    mass = integrate_scalar(metric, u ** (p.p + 1.0))
    if mass <= 0:
        raise NonPositiveTestFunction("test function has non-positive mass")
    return num / mass ** (2.0 / (p.p + 1.0))


def el_residual(metric, u, p, y_tilde: float, curvature=None):
    """Pointwise Euler-Lagrange defect -kappa * Lap(u) + R u - y_tilde u^p."""
    p = _as_exponent(p, metric.n)
    kappa = conformal_coupling(metric.n)
    curv = curvature if curvature is not None else compute_curvature(metric)
    if isinstance(metric, HomogeneousMetric):
        u = float(u)
        return curv.R * u - y_tilde * u ** p.p
    u = np.asarray(u, dtype=float)
    return -kappa * laplacian_apply(metric, u) + curv.R * u - y_tilde * u ** p.p


def _residual_l2(metric, u, p, y_tilde, curvature=None) -> float:
    r = el_residual(metric, u, p, y_tilde, curvature)
    if isinstance(metric, HomogeneousMetric):
        return abs(float(r)) * math.sqrt(volume(metric))
    return math.sqrt(max(integrate_scalar(metric, np.asarray(r) ** 2), 0.0))


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

def _homogeneous_solution(metric: HomogeneousMetric, p: ExponentParam) -> ConformalSolution:
    # Constant scalar curvature: the exact normalized constant solves the
    # system in closed form with zero defect.
    V = volume(metric)
    curv = compute_curvature(metric)
    u = V ** (-1.0 / (p.p + 1.0))
    y_tilde = curv.R * V ** ((p.p - 1.0) / (p.p + 1.0))
    return ConformalSolution(
        u=u, p=p, y_tilde=y_tilde, residual_l2=0.0,
        normalization_defect=abs(u ** (p.p + 1.0) * V - 1.0),
        iterations=0,
    )


def _build_banded(metric, curv, sigma: float, kappa: float):
    """LAPACK-banded form of  -kappa * Laplacian + diag(R + sigma)."""
    lower, diag, upper = laplacian_coefficients(metric)
    n_pts = metric.grid_points
    ab = np.zeros((3, n_pts))
    ab[0, 1:] = -kappa * upper[:-1]
    ab[1, :] = -kappa * diag + curv.R + sigma
    ab[2, :-1] = -kappa * lower[1:]
    return ab


def _normalize(metric, u: np.ndarray, p: ExponentParam) -> np.ndarray:
    mass = integrate_scalar(metric, u ** (p.p + 1.0))
    return u / mass ** (1.0 / (p.p + 1.0))


class _ElSystem:
    """Discrete EL system F(u, y) = 0 with the unit-mass row appended."""

    def __init__(self, metric, curv, weights, p: ExponentParam, kappa: float):
        self.metric = metric
        self.curv = curv
        self.weights = weights
        self.p = p.p
        self.kappa = kappa
        lower, diag, upper = laplacian_coefficients(metric)
        self._lower, self._diag, self._upper = lower, diag, upper

    def defect(self, u, y):
        resid = (-self.kappa * laplacian_apply(self.metric, u)
                 + self.curv.R * u - y * u ** self.p)
        mass = float(np.dot(self.weights, u ** (self.p + 1.0))) - 1.0
        return resid, mass, max(float(np.max(np.abs(resid))), abs(mass))

    def jacobian(self, u, y):
        main = -self.kappa * self._diag + self.curv.R - self.p * y * u ** (self.p - 1.0)
        A = scipy.sparse.diags(
            [-self.kappa * self._lower[1:], main, -self.kappa * self._upper[:-1]],
            offsets=[-1, 0, 1])
        return scipy.sparse.bmat(
            [[A, -(u ** self.p).reshape(-1, 1)],
             [((self.p + 1.0) * self.weights * u ** self.p).reshape(1, -1),
              np.zeros((1, 1))]],
            format="csc",
        )

    def ls_multiplier(self, u):
        lhs = -self.kappa * laplacian_apply(self.metric, u) + self.curv.R * u
        up = u ** self.p
        return float(np.dot(self.weights, lhs * up) / np.dot(self.weights, up * up))


def _valley_search(system: _ElSystem, u, y, score):
    """1-D defect minimization along the Jacobian's near-null direction.

    Near the critical exponent the defect surface is a curved, nearly flat
    valley (the linearization has a tiny eigenvalue in the lowest
    nonconstant mode), along which capped Newton crawls; an explicit line
    minimization along that direction, found by a few inverse-iteration
    sweeps, walks the valley in one move.  The multiplier is refit by least
    squares at every trial point.
    """
    J = system.jacobian(u, y)
    lu = scipy.sparse.linalg.splu(J.tocsc())
    rng = np.random.default_rng(7)
    w = rng.standard_normal(len(u) + 1)
    for _ in range(4):
        w = lu.solve(w)
        w /= np.linalg.norm(w)
    direction = w[:-1]
    scale = float(np.max(np.abs(direction)))
    if scale == 0.0:
        return u, y, score
    direction = direction / scale

    def eval_at(t):
        u_try = u + t * direction
        if np.any(u_try <= 0):
            return None, None, math.inf
        y_try = system.ls_multiplier(u_try)
        _, _, s = system.defect(u_try, y_try)
        return u_try, y_try, s

    # coarse bracket, then golden-section refinement
    span = 0.2 * float(np.max(u))
    ts = np.linspace(-span, span, 41)
    scores = np.array([eval_at(t)[2] for t in ts])
    k = int(np.argmin(scores))
    lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, len(ts) - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = eval_at(c)[2], eval_at(d)[2]
    for _ in range(60):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = eval_at(c)[2]
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = eval_at(d)[2]
    t_best = c if fc < fd else d
    u_try, y_try, s_try = eval_at(t_best)
    if s_try < score:
        return u_try, y_try, s_try
    return u, y, score


def _newton_polish(metric, curv, weights, u, y, p: ExponentParam,
                   kappa: float, sweeps: int = 60):
    """Trust-capped Newton on the discrete EL system, with valley search.

    Plain Newton near the critical exponent slides along the nearly null
    lowest mode (it can leave the positive cone or change branch), so steps
    are capped in max norm and must decrease the pointwise defect; when
    progress stalls, a 1-D minimization along the near-null direction takes
    over.  Starting from a converged fixed-point iterate the moves are
    local: the polish refines the branch the fixed point tracked.
    """
    system = _ElSystem(metric, curv, weights, p, kappa)
    resid, mass_defect, score = system.defect(u, y)
    best = (u, float(y), score)
    radius = 0.05 * float(np.max(u))
    stalls = 0
    for _ in range(sweeps):
        if score < 1e-14 * max(abs(y), 1.0):
            break
        step = scipy.sparse.linalg.spsolve(
            system.jacobian(u, y), np.concatenate([-resid, [-mass_defect]]))
        step_size = float(np.max(np.abs(step[:-1])))
        t = min(1.0, radius / step_size) if step_size > 0 else 1.0
        accepted = False
        while t > 1e-7:
            u_try = u + t * step[:-1]
            if np.all(u_try > 0):
                y_try = float(y + t * step[-1])
                resid_try, mass_try, score_try = system.defect(u_try, y_try)
                if score_try < 0.9 * score:
                    u, y = u_try, y_try
                    resid, mass_defect, score = resid_try, mass_try, score_try
                    accepted = True
                    break
            t *= 0.5
        if accepted:
            stalls = 0
            if t * step_size >= 0.99 * radius:
                radius = min(2.0 * radius, 0.2 * float(np.max(u)))
        else:
            stalls += 1
            radius *= 0.5
            if stalls >= 2:
                u, y, score = _valley_search(system, u, y, score)
                resid, mass_defect, score = system.defect(u, y)
                radius = 0.05 * float(np.max(u))
                stalls = 0
                if score >= best[2] and best[2] < math.inf:
                    # no further progress in either regime
                    if score <= best[2]:
                        best = (u, float(y), score)
                    break
        if score < best[2]:
            best = (u, float(y), score)
    return best[0], best[1]


def _ls_multiplier(metric, curv, weights, u, p: ExponentParam, kappa: float) -> float:
    """Least-squares Euler-Lagrange constant at u.

    The value of y minimizing the L2(dV) norm of the pointwise defect; at an
    exact discrete solution it equals the system's multiplier.
    """
    lhs = -kappa * laplacian_apply(metric, u) + curv.R * u
    up = u ** p.p
    return float(np.dot(weights, lhs * up) / np.dot(weights, up * up))


def solve_subcritical(metric, p, opts: SolverOptions = SolverOptions()) -> ConformalSolution:
    """Solve the Euler-Lagrange system at exponent p.

    Damped fixed-point inverse iteration: given (u_k, y_k), solve the shifted
    linear problem ``(-kappa Lap + R + sigma) v = y_k u_k^p + sigma u_k``,
    renormalize to unit (p+1)-mass, and damp; sigma >= 0 is the smallest
    shift making the operator positive, estimated from the most negative
    value of R and grown if a solve leaves the positive cone.  y_k is the
    least-squares Euler-Lagrange constant at u_k, so the exact discrete
    solution is a fixed point for every sigma.  An optional Newton polish
    refines the converged iterate on the same branch to machine-level
    residuals.  The homogeneous backend returns the exact constant solution
    in closed form.

    Raises
    ------
    SolverDiverged
        Iteration cap hit without meeting tolerances, or an iterate touched
        the positivity clamp.
    IndefiniteOperator
        No spectral shift produced a usable linear operator.
    """
    p = _as_exponent(p, metric.n)
    if isinstance(metric, HomogeneousMetric):
        return _homogeneous_solution(metric, p)

    kappa = conformal_coupling(metric.n)
    curv = compute_curvature(metric)
    weights = quadrature_weights(metric)
    r_min = float(np.min(curv.R))
    sigma = 0.0 if r_min > 0 else -r_min + 0.01 * (float(np.max(np.abs(curv.R))) + 1.0)

    if opts.warm_start is not None:
        u = np.array(opts.warm_start, dtype=float)
        if np.any(u <= 0):
            raise NonPositiveTestFunction("warm start must be positive")
        u0 = u.copy()
    else:
        u = np.full(metric.grid_points, 1.0)
        u0 = None
    u = _normalize(metric, u, p)

    ab = _build_banded(metric, curv, sigma, kappa)
    damping = opts.damping
    shift_retries = 0
    stalled = 0
    prev_delta = math.inf
    best_delta = math.inf
    since_improvement = 0
    iterations = 0
    for iterations in range(1, opts.max_iterations + 1):
        y_k = _ls_multiplier(metric, curv, weights, u, p, kappa)
        rhs = y_k * u ** p.p + sigma * u
        v = scipy.linalg.solve_banded((1, 1), ab, rhs)
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            # shift search: grow sigma until the solve stays in the cone
            shift_retries += 1
            if shift_retries > 8:
                raise IndefiniteOperator(
                    f"no usable spectral shift found (last sigma={sigma:.3e})")
            sigma = 10.0 * (sigma + 1.0)
            ab = _build_banded(metric, curv, sigma, kappa)
            continue
        v = _normalize(metric, v, p)
        u_new = (1.0 - damping) * u + damping * v
        if np.min(u_new) < opts.positivity_clamp:
            raise SolverDiverged(
                "iterate touched the positivity clamp", p=p.p, iterations=iterations)
        delta = float(np.max(np.abs(u_new - u)) / max(1.0, float(np.max(np.abs(u_new)))))
        u = u_new
        if delta < opts.fixed_point_tol:
            break
        # Near the critical exponent the map has a neutral mode and delta
        # plateaus; hand over to the polish instead of burning iterations.
        if delta < 0.5 * best_delta:
            best_delta = delta
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= 50:
                break
        if delta > prev_delta:
            stalled += 1
            if stalled >= 5 and damping > 0.125:
                damping *= 0.5   # slow oscillation: damp harder
                stalled = 0
        prev_delta = delta

    y_tilde = _ls_multiplier(metric, curv, weights, u, p, kappa)
    if opts.newton_polish:
        try:
            u, y_tilde = _newton_polish(metric, curv, weights, u, y_tilde, p, kappa)
            u = _normalize(metric, u, p)
            y_tilde = _ls_multiplier(metric, curv, weights, u, p, kappa)
        except SolverDiverged:
            pass  # keep the fixed-point iterate; certificate below decides
    residual = _residual_l2(metric, u, p, y_tilde, curv)
    norm_defect = abs(integrate_scalar(metric, u ** (p.p + 1.0)) - 1.0)

    if residual > opts.residual_tol or norm_defect > opts.normalization_tol:
        raise SolverDiverged(
            f"residual {residual:.3e} / normalization defect {norm_defect:.3e} "
            f"exceed tolerances after {iterations} iterations",
            p=p.p, residual=residual, normalization_defect=norm_defect,
        )
    distance = None if u0 is None else float(np.max(np.abs(u - u0)))
    return ConformalSolution(
        u=u, p=p, y_tilde=y_tilde, residual_l2=residual,
        normalization_defect=norm_defect, iterations=iterations,
        warm_start_distance=distance,
    )


def default_schedule(n: int, p_start: float = 2.0, stages: int = 6) -> list[float]:
    """Geometric approach to the critical exponent, ending exactly there."""
    crit = critical_exponent(n)
    if not (1.0 < p_start < crit):
        raise ValueError(f"p_start must lie in (1, {crit})")
    values = [crit - (crit - p_start) * 0.5**k for k in range(max(stages - 1, 1))]
    values.append(crit)
    return values


def continue_to_critical(metric, schedule=None,
                         opts: SolverOptions = SolverOptions()) -> list[ConformalSolution]:
    """Warm-started continuation along an increasing p-schedule.

    The schedule must be strictly increasing and end at the critical
    exponent; each solution warm-starts the next.  No monotonicity of the
    reported values in p is asserted.  A stage failure propagates
    :class:`SolverDiverged` with the failing p attached.
    """
    n = metric.n
    if schedule is None:
        schedule = default_schedule(n)
    schedule = [float(p) for p in schedule]
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly increasing")
    if schedule[-1] != critical_exponent(n):
        raise ValueError("schedule must end at the critical exponent")

    solutions: list[ConformalSolution] = []
    warm = opts.warm_start
    for p_val in schedule:
        stage_opts = replace(opts, warm_start=warm)
        try:
            sol = solve_subcritical(metric, ExponentParam.for_dimension(p_val, n), stage_opts)
        except SolverDiverged as err:
            err.context.setdefault("p", p_val)
            raise
        solutions.append(sol)
        if not isinstance(metric, HomogeneousMetric):
            warm = np.asarray(sol.u)
    return solutions
