"""Single-state ergodic Bellman problem via its linearised eigenvalue form.

With ``phi = exp(v / delta)`` the ergodic HJB equation for one state becomes
the linear problem

    delta * (A/2 phi'' + d phi') + V phi = lambda phi,

where ``d = b - q Ups Sigma^{-1} mu`` and ``V = p r - (q/2) mu'Sigma^{-1} mu``.
The generalised principal eigenvalue is the limit of principal Dirichlet
eigenvalues on an increasing family of truncated domains, which gives a
monotone stopping rule.

Computations run in a coordinate ``x`` with ``y = x`` for OU states and
``y = x**2`` for CIR states, which makes the square-root diffusion constant.  Speed and scale measures are invariant under
this change of variables, so the tightness integrals can be evaluated in ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, linalg
from scipy.optimize import minimize_scalar

from .errors import (
    Inconclusive,
    NoConvergence,
    NonPositiveEigenvector,
    QuadratureFailure,
    RegionViolation,
    SingularDelta,
)
from .model import (
    CirModel,
    KimOmbergModel,
    Preferences,
    coefficients_at,
    delta_of,
    ergodic_hjb_lhs,
    potential_at,
)


@dataclass(frozen=True)
class Eigen1dProblem:
    """Coefficients of the linearised problem in the original state ``y``.

    ``family`` is ``"ou"`` (domain the real line) or ``"cir"`` (positive
    half-line).  ``drift_affine = (c0, c1)`` records ``d(y) = c0 - c1 y`` when
    known, which enables the closed-form speed density.
    """

    family: str
    A: Callable[[float], float]
    drift: Callable[[float], float]
    V: Callable[[float], float]
    delta: float
    y_ref: float
    scale: float
    a: float = 1.0
    drift_affine: tuple | None = None

    def __post_init__(self):
        if self.family not in ("ou", "cir"):
            raise ValueError("family must be 'ou' or 'cir'")
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise SingularDelta(f"delta must be finite and positive, got {self.delta}")

    @property
    def domain(self) -> tuple[float, float]:
        return (-math.inf, math.inf) if self.family == "ou" else (0.0, math.inf)

    @classmethod
    def from_model(cls, model, prefs: Preferences) -> "Eigen1dProblem":
        delta = delta_of(prefs, model.rho_sq)
        if delta <= 0:
            raise SingularDelta("q rho'rho > 1 gives a negative delta")
        q = prefs.q

        def drift(y):
            c = coefficients_at(model, y)
            return float(c.drift[0] - q * (c.Ups.T @ np.linalg.solve(c.Sigma, c.mu))[0])

        def V(y):
            return potential_at(model, prefs, y)

        if isinstance(model, KimOmbergModel):
            c1 = model.b * (1.0 + q * float(model.rho @ model.nu1))
            c0 = -q * float(model.rho @ model.nu0)
            return cls(
                "ou",
                lambda y: 1.0,
                drift,
                V,
                delta,
                y_ref=0.0,
                scale=1.0 / math.sqrt(2.0 * max(abs(c1), 1e-8)),
                drift_affine=(c0, c1),
            )
        if isinstance(model, CirModel):
            a = model.a
            c1 = model.b + q * a * float(model.rho @ model.nu1)
            c0 = model.b * model.theta - q * a * float(model.rho @ model.nu0)
            return cls(
                "cir",
                lambda y: a * a * y,
                drift,
                V,
                delta,
                y_ref=model.theta,
                scale=math.sqrt(model.theta * a * a / (2.0 * max(abs(c1), 1e-8))),
                a=a,
                drift_affine=(c0, c1),
            )
        raise TypeError("eigen1d supports KimOmbergModel and CirModel")

    # coordinate change ------------------------------------------------------

    def to_y(self, x):
        x = np.asarray(x, dtype=float)
        return x * x if self.family == "cir" else x

    def to_x(self, y):
        y = np.asarray(y, dtype=float)
        return np.sqrt(y) if self.family == "cir" else y

    def coefficients_x(self, x: np.ndarray):
        """``(A, d, V)`` of the operator in the computational coordinate."""
        y = self.to_y(x)
        A = np.array([self.A(t) for t in y])
        d = np.array([self.drift(t) for t in y])
        V = np.array([self.V(t) for t in y])
        if self.family == "cir":
            # x = sqrt(y): A_x = A / (4y), d_x = d / (2x) - A / (8 x^3)
            return A / (4.0 * y), d / (2.0 * x) - A / (8.0 * x**3), V
        return A, d, V


@dataclass(frozen=True)
class GridConfig:
    """Truncation controls.

    OU: domain ``y_ref +/- half_width`` with spacing ``step``.  CIR: ``sqrt(y)``
    runs from ``sqrt(eps * theta)`` to ``sqrt(upper)`` with ``points`` nodes.  Unset
    values are scaled from the problem's natural width.
    """

    half_width: float | None = None
    step: float | None = None
    upper: float | None = None
    points: int = 2000
    eps: float = 1e-6
    tol: float = 1e-6
    max_doublings: int = 10


@dataclass
class Eigen1dSolution:
    lambda_c: float
    grid: np.ndarray
    phi: np.ndarray
    v: np.ndarray
    convergence_history: list = field(default_factory=list)
    x: np.ndarray | None = None
    log_phi: np.ndarray | None = None
    problem: Eigen1dProblem | None = None
    grid_cfg: GridConfig | None = None
    level: int = 0

    @property
    def trusted(self) -> np.ndarray:
        """Mask of nodes unaffected by the outer truncation."""
        return _trusted_mask(self.problem, self.grid_cfg, self.level, self.x)


def _tridiagonal(problem: Eigen1dProblem, x: np.ndarray):
    h = x[1] - x[0]
    A, d, V = problem.coefficients_x(x)
    if np.any(A <= 0):
        raise NonPositiveEigenvector("diffusion coefficient must be positive on the grid")
    delta = problem.delta
    lower = delta * (0.5 * A / h**2 - 0.5 * d / h)
    upper = delta * (0.5 * A / h**2 + 0.5 * d / h)
    diag = -delta * A / h**2 + V
    # upwind the drift where central differences would lose positivity (far tails only)
    up = np.abs(d) * h >= A
    if np.any(up):
        dp, dm = np.maximum(d[up], 0.0), np.minimum(d[up], 0.0)
        lower[up] = delta * (0.5 * A[up] / h**2 - dm / h)
        upper[up] = delta * (0.5 * A[up] / h**2 + dp / h)
        diag[up] = -delta * A[up] / h**2 - delta * np.abs(d[up]) / h + V[up]
    return lower, diag, upper


def _dirichlet_eigen(problem: Eigen1dProblem, x: np.ndarray):
    """Principal Dirichlet eigenpair on the interior nodes ``x`` (uniform spacing).

    The eigenvalue comes from the symmetrised tridiagonal matrix.  ``log phi``
    is rebuilt from two-sided ratio recursions matched at the peak, which keeps
    full relative accuracy in the tails where the eigenvector itself underflows.
    """
    lower, diag, upper = _tridiagonal(problem, x)
    prod = upper[:-1] * lower[1:]
    if np.any(prod <= 0):
        raise NonPositiveEigenvector("grid too coarse: off-diagonal couplings change sign")
    # D M D^{-1} is symmetric for a diagonal D
    w, vec = linalg.eigh_tridiagonal(
        diag, np.sqrt(prod), select="i", select_range=(len(x) - 1, len(x) - 1)
    )
    lam = float(w[0])
    psi = vec[:, 0] * np.sign(vec[np.argmax(np.abs(vec[:, 0])), 0])
    if np.any(psi < -1e-10 * psi.max()):
        raise NonPositiveEigenvector("principal eigenvector changes sign")
    return lam, _log_eigenfunction(lower, diag - lam, upper, int(np.argmax(psi)))


def _log_eigenfunction(lower, dshift, upper, peak):
    n = len(dshift)
    log_phi = np.zeros(n)
    # forward ratios phi[i+1]/phi[i] from the left boundary
    r = -dshift[0] / upper[0]
    for i in range(peak):
        if r <= 0:
            raise NonPositiveEigenvector("eigenfunction ratio turned non-positive")
        log_phi[i + 1] = log_phi[i] + math.log(r)
        r = -(lower[i + 1] / r + dshift[i + 1]) / upper[i + 1]
    # backward ratios phi[i-1]/phi[i] from the right boundary
    s = -dshift[n - 1] / lower[n - 1]
    tail = np.zeros(n)
    for i in range(n - 1, peak, -1):
        if s <= 0:
            raise NonPositiveEigenvector("eigenfunction ratio turned non-positive")
        tail[i - 1] = tail[i] + math.log(s)
        s = -(upper[i - 1] / s + dshift[i - 1]) / lower[i - 1]
    # tail holds log phi[i] - log phi[n-1]; align it with the forward part at the peak
    log_phi[peak + 1 :] = tail[peak + 1 :] - tail[peak] + log_phi[peak]
    return log_phi


def _ou_step(problem, cfg):
    return cfg.step or problem.scale / 25.0


def _ou_nodes(problem, cfg, level):
    """Half-count of nodes; spacing is fixed so truncations nest node for node."""
    h = _ou_step(problem, cfg)
    base = cfg.half_width or 6.0 * problem.scale + 1.0
    return int(math.ceil(base / h)) * 2**level, h


def _cir_layout(problem, cfg):
    """``(lo, h)``: ``sqrt(y)`` nodes ``lo + j h``."""
    lo = math.sqrt(cfg.eps * problem.y_ref)
    return lo, (math.sqrt(_cir_upper(problem, cfg, 0)) - lo) / cfg.points


def _cir_upper(problem, cfg, level):
    return (cfg.upper or problem.y_ref + 8.0 * problem.scale) * 2.0**level


def _cir_count(problem, cfg, level):
    lo, h = _cir_layout(problem, cfg)
    return int(round((math.sqrt(_cir_upper(problem, cfg, level)) - lo) / h))


def _grid(problem: Eigen1dProblem, cfg: GridConfig, level: int) -> np.ndarray:
    if problem.family == "ou":
        J, h = _ou_nodes(problem, cfg, level)
        return problem.y_ref + h * np.arange(-J + 1, J)
    lo, h = _cir_layout(problem, cfg)
    return lo + h * np.arange(1, _cir_count(problem, cfg, level))


def _trusted_mask(problem: Eigen1dProblem, cfg: GridConfig, level: int, x: np.ndarray) -> np.ndarray:
    """Nodes inside the previous (half-size) truncation, where Dirichlet effects have died out."""
    if problem.family == "ou":
        J, h = _ou_nodes(problem, cfg, level - 1)
        return np.abs(x - problem.y_ref) <= J * h * (1 + 1e-12)
    lo, h = _cir_layout(problem, cfg)
    return x <= lo + h * _cir_count(problem, cfg, level - 1) + 1e-12


def _solve_level(problem, cfg, level):
    x = _grid(problem, cfg, level)
    lam, log_phi = _dirichlet_eigen(problem, x)
    xr = float(problem.to_x(problem.y_ref))
    return x, lam, log_phi - np.interp(xr, x, log_phi)


def principal_eigenvalue(problem: Eigen1dProblem, grid_cfg: GridConfig | None = None) -> Eigen1dSolution:
    """Principal eigenvalue by Dirichlet truncation with domain doubling.

    Stops once two successive truncations agree to ``tol`` (relative to
    ``max(1, |lambda|)``); the eigenvalues increase with the domain.
    """
    cfg = grid_cfg or GridConfig()
    history = []
    prev = None
    for level in range(cfg.max_doublings + 1):
        x, lam, log_phi = _solve_level(problem, cfg, level)
        size = (x[-1] - x[0]) if problem.family == "ou" else float(problem.to_y(x[-1]))
        history.append((size, float(x[1] - x[0]), lam))
        if prev is not None and abs(lam - prev) < cfg.tol * max(1.0, abs(lam)):
            return Eigen1dSolution(
                lambda_c=lam,
                grid=problem.to_y(x),
                phi=np.exp(log_phi),
                v=problem.delta * log_phi,
                convergence_history=history,
                x=x,
                log_phi=log_phi,
                problem=problem,
                grid_cfg=cfg,
                level=level,
            )
        prev = lam
    raise NoConvergence(f"principal eigenvalue not settled after {cfg.max_doublings} doublings: {history}")


def discrete_hjb_residual(sol: Eigen1dSolution, model, prefs: Preferences) -> np.ndarray:
    """Ergodic HJB residual of ``v = delta log phi`` at interior nodes.

    Derivatives are central differences on the uniform solver grid, mapped to
    ``y`` by the chain rule when the grid is in ``sqrt(y)``.
    """
    x, v = sol.x, sol.v
    h = x[1] - x[0]
    vx = (v[2:] - v[:-2]) / (2.0 * h)
    vxx = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
    xi = x[1:-1]
    if sol.problem.family == "cir":
        vy = vx / (2.0 * xi)
        vyy = (vxx - vx / xi) / (4.0 * xi * xi)
    else:
        vy, vyy = vx, vxx
    y = sol.problem.to_y(xi)
    return np.array(
        [ergodic_hjb_lhs(model, prefs, yi, [g], [[hs]]) - sol.lambda_c for yi, g, hs in zip(y, vy, vyy)]
    )


# ---------------------------------------------------------------------------
# Speed density and tightness
# ---------------------------------------------------------------------------


def _log_m_closed(problem: Eigen1dProblem, y, y0):
    c0, c1 = problem.drift_affine
    y = np.asarray(y, dtype=float)
    if problem.family == "ou":
        return 2.0 * c0 * (y - y0) - c1 * (y * y - y0 * y0) - math.log(problem.A(1.0))
    a2 = problem.a**2
    return 2.0 * c0 / a2 * np.log(y / y0) - 2.0 * c1 * (y - y0) / a2 - np.log(a2 * y)


def m_nu_density(problem: Eigen1dProblem, y, y0: float | None = None, *, method: str = "auto") -> float:
    """Speed density ``(1/A(y)) exp(int_{y0}^y 2 d(z)/A(z) dz)``.

    ``method="quad"`` forces adaptive quadrature even when a closed form exists.
    """
    y0 = problem.y_ref if y0 is None else y0
    if problem.family == "cir" and (y <= 0 or y0 <= 0):
        raise ValueError("CIR speed density needs positive states")
    if method != "quad" and problem.drift_affine is not None:
        return float(np.exp(_log_m_closed(problem, y, y0)))
    val, err = integrate.quad(lambda z: 2.0 * problem.drift(z) / problem.A(z), y0, y, limit=200)
    if not math.isfinite(val) or err > 1e-8 * (1.0 + abs(val)):
        raise QuadratureFailure(f"speed-density integral failed (value {val}, error {err})")
    return float(math.exp(val) / problem.A(y))


def _log_speed_x(problem: Eigen1dProblem, x: np.ndarray) -> np.ndarray:
    """Log speed density in the computational coordinate, zero-referenced at ``y_ref``."""
    A, d, _ = problem.coefficients_x(x)
    cum = integrate.cumulative_trapezoid(2.0 * d / A, x, initial=0.0)
    out = cum - np.log(A)
    return out - np.interp(float(problem.to_x(problem.y_ref)), x, out)


def _log_trapz(x, g):
    mx = g.max()
    return mx + math.log(np.trapezoid(np.exp(g - mx), x))


@dataclass(frozen=True)
class TightnessReport:
    tight: bool
    speed_rel_change: float
    scale_growth: tuple
    levels: int
    left_power_laws: tuple | None = None


def _tightness_integrals(problem, x, log_phi, mask):
    xs, lp = x[mask], log_phi[mask]
    A, _, _ = problem.coefficients_x(xs)
    lm = _log_speed_x(problem, xs)
    speed = 2.0 * lp + lm
    scale = -(speed + np.log(A))
    c = int(np.argmax(speed))
    return (
        _log_trapz(xs, speed),
        _log_trapz(xs[: c + 1], scale[: c + 1]),
        _log_trapz(xs[c:], scale[c:]),
        xs,
        speed,
        scale,
        c,
    )


def _left_power_laws(xs, speed, scale, c):
    """Exponents of the speed and scale densities in ``y`` near ``y = 0`` (CIR).

    Returns ``(beta, alpha)`` with speed ~ ``y**beta`` and scale ~ ``y**-alpha``,
    fitted between 10% and 50% of the way from the left end to the peak.
    """
    i_far, i_half = max(1, int(round(0.1 * c))), max(2, int(round(0.5 * c)))
    sel = slice(i_far, i_half + 1)
    ly = np.log(xs[sel] ** 2)
    jac = np.log(2.0 * xs[sel])
    beta = np.polyfit(ly, speed[sel] - jac, 1)[0]
    alpha = -np.polyfit(ly, scale[sel] - jac, 1)[0]
    return float(beta), float(alpha)


def feller_tightness_test(
    problem: Eigen1dProblem, solution: Eigen1dSolution, *, max_extra: int = 4, report: bool = False
):
    """Endpoint test for tightness of the state under the myopic measure.

    Both scale integrals ``int 1/(phi^2 A m)`` must diverge toward the
    endpoints and the speed integral ``int phi^2 m`` must converge.  Truncated
    integrals over the trusted part of successive doubled domains are compared:
    divergence means growth beyond ``1e6``, convergence a relative change below
    ``1e-8``.  The CIR left endpoint is fixed, so there the densities are
    classified by their power-law exponent in ``y`` near zero instead.
    """
    cfg, level = solution.grid_cfg, solution.level
    prev = None
    for lev in range(level, level + max_extra + 1):
        x, _, log_phi = _solve_level(problem, cfg, lev)
        S, CL, CR, xs, speed, scale, c = _tightness_integrals(
            problem, x, log_phi, _trusted_mask(problem, cfg, lev, x)
        )
        laws = _left_power_laws(xs, speed, scale, c) if problem.family == "cir" else None
        if prev is not None:
            rel = abs(math.expm1(S - prev[0]))
            if laws is None:
                log_growth = (CL - prev[1], CR - prev[2])
            else:
                # speed integrable and scale non-integrable at 0 stand in for the growth test
                left = math.inf if (laws[0] > -1.0 and laws[1] >= 1.0) else -math.inf
                log_growth = (left, CR - prev[2])
            if rel < 1e-8 and min(log_growth) > math.log(1e6):
                out = True
            elif S - prev[0] > math.log(2.0) or min(log_growth) < 1e-6:
                out = False
            else:
                prev = (S, CL, CR)
                continue
            if report:
                growth = tuple(math.exp(min(g, 700.0)) if math.isfinite(g) else math.nan for g in log_growth)
                return TightnessReport(out, rel, growth, lev - level + 1, laws)
            return out
        prev = (S, CL, CR)
    raise Inconclusive(f"tightness integrals unresolved after {max_extra} extra doublings")


def bulk_mask(solution: Eigen1dSolution, level: float = 1e-6) -> np.ndarray:
    """Nodes where the invariant density ``phi^2 m`` of the myopic measure exceeds
    ``level`` times its peak."""
    g = 2.0 * solution.log_phi + _log_speed_x(solution.problem, solution.x)
    return g >= g.max() + math.log(level)


def cel_decay_constant(problem: Eigen1dProblem, solution: Eigen1dSolution, prefs: Preferences) -> float:
    """Constant ``K`` with ``T * l_T -> K`` for the long-run policy.

    ``K = (1/p) [(1-p) log(K2/Z) - log(K1/Z)]`` where ``Z = int phi^2 m``,
    ``K1 = int phi^{2-delta} m`` and ``K2 = int phi^{2-delta/(1-p)} m``.
    """
    p, delta = prefs.p, problem.delta
    e1, e2 = 2.0 - delta, 2.0 - delta / (1.0 - p)
    if e1 <= 0 or e2 <= 0:
        raise RegionViolation(f"exponents 2 - delta = {e1:.6g}, 2 - delta/(1-p) = {e2:.6g} must be positive")
    mask = solution.trusted
    x, lp = solution.x[mask], solution.log_phi[mask]
    lm = _log_speed_x(problem, x)

    def log_int(e):
        g = e * lp + lm
        mx = g.max()
        return mx + math.log(integrate.simpson(np.exp(g - mx), x=x))

    lz = log_int(2.0)
    return ((1.0 - p) * (log_int(e2) - lz) - (log_int(e1) - lz)) / p


def closed_form_cel_constant(model, sol, prefs: Preferences) -> float:
    """Same constant from the closed-form value function, by adaptive quadrature."""
    problem = Eigen1dProblem.from_model(model, prefs)
    p, delta = prefs.p, problem.delta
    e1, e2 = 2.0 - delta, 2.0 - delta / (1.0 - p)
    if e1 <= 0 or e2 <= 0:
        raise RegionViolation("exponent conditions fail")
    lo, hi = (-math.inf, math.inf) if problem.family == "ou" else (0.0, math.inf)
    y_ref = problem.y_ref

    def logf(y, e):
        return e * float(sol.value(y)) / delta + float(_log_m_closed(problem, y, y_ref))

    # centre the integrand at its mode for numerical stability
    def integral(e):
        if problem.family == "ou":
            res = minimize_scalar(lambda y: -logf(y, e))
        else:
            res = minimize_scalar(lambda t: -logf(math.exp(t), e))
            res.x = math.exp(res.x)
        peak = logf(res.x, e)
        val, err = integrate.quad(lambda y: math.exp(logf(y, e) - peak), lo, hi, limit=400)
        if not math.isfinite(val) or val <= 0:
            raise QuadratureFailure("K integral failed")
        return peak + math.log(val)

    lz = integral(2.0)
    return ((1.0 - p) * (integral(e2) - lz) - (integral(e1) - lz)) / p
