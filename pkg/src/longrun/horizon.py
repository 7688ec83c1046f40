"""Finite-horizon performance of long-run and myopic policies.

Two independent evaluators of the power moment ``E_P[(X_T)^p]`` are provided:

* the closed Gaussian formula under the myopic measure, valid for the
  long-run policy of the OU model;
* a Feynman-Kac Riccati ODE, valid for any policy affine in the state.

Expected-utility bounds and certainty-equivalent losses are built on top.  All
horizons are in months.  Infinite moments are legitimate values: for ``p < 0``
a moment of ``+inf`` means expected utility ``-inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .closed_form import Measure, OuSolution, solve_ou_1d
from .errors import DomainError, NoBracket, StepTooCoarse
from .model import CirModel, KimOmbergModel, Policy, Preferences, as_linear, long_run_policy, myopic_policy
from .simulate import SimConfig, mc_estimate, sample_state_terminal, simulate_wealth_and_sdf

_BLOWUP_REMAINING = 1e-10
_LIMITER = 0.01


# ---------------------------------------------------------------------------
# Gaussian exponential-quadratic moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianLaw:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance >= 0:
            raise DomainError(f"variance must be non-negative, got {self.variance}")


def log_gaussian_exp_quad_moment(law: GaussianLaw, A: float, B: float) -> float:
    """``log E[exp(A X^2 + B X)]`` for ``X ~ N(mean, variance)``; ``+inf`` when ``A >= 1/(2 var)``."""
    m, s2 = law.mean, law.variance
    d = 1.0 - 2.0 * A * s2
    if d <= 0.0:
        return math.inf
    return -0.5 * math.log(d) + (m * m * A + m * B + 0.5 * s2 * B * B) / d


def gaussian_exp_quad_moment(law: GaussianLaw, A: float, B: float) -> float:
    lg = log_gaussian_exp_quad_moment(law, A, B)
    return math.exp(lg) if lg < 709.0 else math.inf


def ou_hatp_law(sol: OuSolution, model: KimOmbergModel, y0: float, T: float) -> GaussianLaw:
    """Law of ``Y_T`` under the myopic measure, started at ``y0``."""
    if T < 0:
        raise DomainError("T must be non-negative")
    k = sol.hat_kappa
    e = math.exp(-k * T)
    mean = y0 * e + sol.hat_mean * (1.0 - e)
    var = -math.expm1(-2.0 * k * T) / (2.0 * k)
    return GaussianLaw(mean, var)


# ---------------------------------------------------------------------------
# Finite-horizon identities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteHorizonBounds:
    """Power moment of the long-run wealth (``primal``) and the dual bound.

    Logs are kept to avoid overflow; ``*_log_se`` are Monte Carlo standard
    errors of the logs (zero for closed-form evaluations).  Unpacks as
    ``(primal, dual)``.
    """

    log_primal: float
    log_dual: float
    log_primal_se: float = 0.0
    log_dual_se: float = 0.0

    @property
    def primal(self) -> float:
        return _exp(self.log_primal)

    @property
    def dual(self) -> float:
        return _exp(self.log_dual)

    def __iter__(self):
        return iter((self.primal, self.dual))


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def finite_horizon_bounds(
    model, sol, prefs: Preferences, y0: float, T: float, *, cfg: SimConfig | None = None
) -> FiniteHorizonBounds:
    """``E_P[(X_T)^p]`` under the long-run policy and the matching dual quantity.

    Both equal ``exp(lambda T + v(y0))`` times a myopic-measure expectation of
    ``exp(-v(Y_T))`` (primal) or ``exp(-v(Y_T)/(1-p))`` raised to ``1-p``
    (dual).  OU uses the Gaussian formula; CIR samples the exact transition
    with ``cfg``.
    """
    if T < 0:
        raise DomainError("T must be non-negative")
    p = prefs.p
    base = sol.lam * T + float(sol.value(y0))
    if isinstance(model, KimOmbergModel):
        law = ou_hatp_law(sol, model, y0, T)
        lp = log_gaussian_exp_quad_moment(law, 0.5 * sol.v1, -sol.v0)
        ld = log_gaussian_exp_quad_moment(law, 0.5 * sol.v1 / (1.0 - p), -sol.v0 / (1.0 - p))
        return FiniteHorizonBounds(base + lp, base + (1.0 - p) * ld)
    if isinstance(model, CirModel):
        if cfg is None:
            raise DomainError("CIR bounds are Monte Carlo estimates and need a SimConfig")
        if T == 0:
            return FiniteHorizonBounds(base, base)
        ys = sample_state_terminal(model, Measure.MYOPIC, y0, T, cfg, solution=sol)
        lv = -np.asarray(sol.value(ys))
        shift_p, shift_d = lv.max(), lv.max() / (1.0 - p)
        ep = mc_estimate(np.exp(lv - shift_p))
        ed = mc_estimate(np.exp(lv / (1.0 - p) - shift_d))
        return FiniteHorizonBounds(
            base + shift_p + math.log(ep.mean),
            base + (1.0 - p) * (shift_d + math.log(ed.mean)),
            ep.std_error / ep.mean,
            (1.0 - p) * ed.std_error / ed.mean,
        )
    raise TypeError(f"unsupported model {type(model).__name__}")


# ---------------------------------------------------------------------------
# Feynman-Kac evaluator for affine policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _FkSystem:
    """``u = exp(alpha + beta y + c y^2)`` with autonomous coefficient ODEs."""

    a2: float
    M0: float
    M1: float
    g0: float
    g1: float
    g2: float

    def rhs(self, s):
        al, be, c = s
        a2 = self.a2
        return (
            a2 * c + 0.5 * a2 * be * be + self.M0 * be + self.g0,
            2.0 * a2 * be * c + self.M1 * be + 2.0 * self.M0 * c + self.g1,
            2.0 * a2 * c * c + 2.0 * self.M1 * c + self.g2,
        )

    def rk4(self, s, h):
        k1 = self.rhs(s)
        k2 = self.rhs(tuple(x + 0.5 * h * k for x, k in zip(s, k1)))
        k3 = self.rhs(tuple(x + 0.5 * h * k for x, k in zip(s, k2)))
        k4 = self.rhs(tuple(x + h * k for x, k in zip(s, k3)))
        return tuple(x + h / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4) for x, d1, d2, d3, d4 in zip(s, k1, k2, k3, k4))

    def advance(self, s, t, tau, h):
        """Integrate from ``s`` at time ``t`` over ``tau``; returns ``(state, blow_up_time or None)``.

        The step is capped at ``_LIMITER / (rate of c)`` so the approach to a
        blow-up is resolved geometrically; once the remaining time ``1/(2 a^2 c)``
        is negligible the blow-up time is reported.
        """
        end = t + tau
        while t < end:
            c = s[2]
            rate = 2.0 * self.a2 * abs(c) + 2.0 * abs(self.M1)
            step = min(h, end - t, _LIMITER / rate if rate > 0 else h)
            s = self.rk4(s, step)
            t += step
            c = s[2]
            if not math.isfinite(c) or (c > 0 and 1.0 / (2.0 * self.a2 * c) < _BLOWUP_REMAINING * max(1.0, t)):
                rem = 1.0 / (2.0 * self.a2 * c) if math.isfinite(c) and c > 0 else 0.0
                return s, t + rem
            if end - t < 1e-12 * max(1.0, end):
                break
        return s, None


def _fk_system(model, policy: Policy, prefs: Preferences) -> _FkSystem:
    if isinstance(model, CirModel):
        raise TypeError("the Feynman-Kac evaluator needs a Gaussian (OU) state")
    lin = as_linear(model)
    if lin.k != 1:
        raise DomainError("the Feynman-Kac evaluator handles a single state")
    if policy.positive_domain:
        raise DomainError("policy must be affine in the state")
    p = prefs.p
    sig = lin.sigma
    S = lin.Sigma
    rho = lin.rho[:, 0]
    a = float(lin.a[0, 0])
    b = float(lin.b[0, 0])
    pi0 = policy.pi_const
    pi1 = policy.pi_lin[:, 0]
    mu0 = lin.mu0
    mu1 = lin.mu1[:, 0]
    # the exponential martingale of p pi' sigma dZ shifts dW by p rho' sigma' pi dt
    M0 = a * p * float(pi0 @ sig @ rho)
    M1 = -b + a * p * float(pi1 @ sig @ rho)
    g0 = p * lin.r0 + p * float(pi0 @ mu0) - 0.5 * p * (1.0 - p) * float(pi0 @ S @ pi0)
    g1 = p * float(lin.r1[0]) + p * float(pi0 @ mu1 + pi1 @ mu0) - p * (1.0 - p) * float(pi0 @ S @ pi1)
    g2 = p * float(pi1 @ mu1) - 0.5 * p * (1.0 - p) * float(pi1 @ S @ pi1)
    return _FkSystem(a * a, M0, M1, g0, g1, g2)


@dataclass(frozen=True)
class PowerMoment:
    """``E_P[(X_T)^p]`` with its log and the blow-up time of the ODE (if reached)."""

    log_value: float
    blow_up_time: float | None = None
    steps: int = 0

    @property
    def value(self) -> float:
        return _exp(self.log_value)

    def __float__(self) -> float:
        return self.value


def _log_moments(system: _FkSystem, y0: float, horizons, h: float):
    """Log moments at increasing ``horizons`` from one integration pass."""
    out = np.empty(len(horizons))
    s, t, blow = (0.0, 0.0, 0.0), 0.0, None
    for i, T in enumerate(horizons):
        if blow is None and T > t:
            s, blow = system.advance(s, t, T - t, h)
            t = T if blow is None else blow
        if blow is not None and T >= blow:
            out[i] = math.inf
        else:
            out[i] = s[0] + s[1] * y0 + s[2] * y0 * y0
    return out, blow


def expected_power_utility_affine(
    model, policy: Policy, prefs: Preferences, y0: float, T: float, steps: int | None = None
) -> PowerMoment:
    """``E_P[(X^pi_T)^p]`` for an affine policy via the Feynman-Kac Riccati ODE.

    Classical RK4 with ``steps`` uniform steps (default ten per month, at
    least 1000), refined only near a blow-up.  The run is repeated with half
    the step; a relative change above ``1e-6`` raises :class:`StepTooCoarse`.
    """
    if T < 0:
        raise DomainError("T must be non-negative")
    if steps is None:
        steps = max(1000, int(math.ceil(10.0 * T)))
    if steps < max(100, T):
        raise DomainError(f"need at least max(100, T) = {max(100, math.ceil(T))} steps")
    system = _fk_system(model, policy, prefs)
    if T == 0:
        return PowerMoment(0.0, None, steps)
    h = T / steps
    (lv,), blow = _log_moments(system, y0, [T], h)
    (lv2,), blow2 = _log_moments(system, y0, [T], 0.5 * h)
    if math.isfinite(lv) != math.isfinite(lv2):
        raise StepTooCoarse("halving the step changed whether the moment is finite")
    if blow is not None and blow2 is not None and abs(blow - blow2) > 1e-6 * blow2:
        raise StepTooCoarse(f"halving the step moved the blow-up time from {blow:.6g} to {blow2:.6g}")
    if math.isfinite(lv) and abs(math.expm1(lv - lv2)) > 1e-6:
        raise StepTooCoarse(f"halving the step moved the result by {abs(math.expm1(lv - lv2)):.3g} (relative)")
    return PowerMoment(lv2, blow2 if blow2 is not None else blow, steps)


def power_moment_blow_up_time(model, policy: Policy, prefs: Preferences, t_max: float, h: float = 0.05) -> float | None:
    """First time the power moment of ``policy`` becomes infinite, or None before ``t_max``."""
    _, blow = _fk_system(model, policy, prefs).advance((0.0, 0.0, 0.0), 0.0, t_max, h)
    return blow


# ---------------------------------------------------------------------------
# Certainty-equivalent loss curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HorizonCurve:
    horizons: np.ndarray
    primal_log_growth: np.ndarray
    dual_log_growth: np.ndarray
    cel_bound: np.ndarray
    policy_name: str
    blow_up_at: float | None = None
    cel_bound_annual: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "cel_bound_annual", 12.0 * np.asarray(self.cel_bound))

    def rows(self):
        for i, T in enumerate(self.horizons):
            yield dict(
                T_months=float(T),
                T_years=float(T) / 12.0,
                primal_log=float(self.primal_log_growth[i]),
                dual_log=float(self.dual_log_growth[i]),
                cel_monthly=float(self.cel_bound[i]),
                cel_annual_pct=100.0 * float(self.cel_bound_annual[i]),
                policy=self.policy_name,
            )


def _horizons(horizons) -> np.ndarray:
    hs = np.asarray(horizons, dtype=float).reshape(-1)
    if hs.size == 0 or np.any(hs <= 0) or np.any(np.diff(hs) <= 0):
        raise DomainError("horizons must be positive and strictly increasing")
    return hs


def _cel(prefs, dual_log, primal_log, hs):
    with np.errstate(invalid="ignore"):
        return (dual_log - primal_log) / (prefs.p * hs)


def _ou_dual_logs(model, sol, prefs, y0, hs):
    return np.array([finite_horizon_bounds(model, sol, prefs, y0, T).log_dual for T in hs])


def _ou_primal_logs(model, policy, prefs, y0, hs, per_month):
    system = _fk_system(model, policy, prefs)
    h = 1.0 / per_month
    lv, blow = _log_moments(system, y0, hs, h)
    lv2, blow2 = _log_moments(system, y0, hs, 0.5 * h)
    if np.any(np.isfinite(lv) != np.isfinite(lv2)):
        raise StepTooCoarse("halving the step changed where the moment is finite")
    if blow is not None and blow2 is not None and abs(blow - blow2) > 1e-6 * blow2:
        raise StepTooCoarse(f"halving the step moved the blow-up time from {blow:.6g} to {blow2:.6g}")
    both = np.isfinite(lv) & np.isfinite(lv2)
    if np.any(both):
        worst = float(np.max(np.abs(np.expm1(lv[both] - lv2[both]))))
        if worst > 1e-6:
            raise StepTooCoarse(f"halving the step moved the curve by {worst:.3g} (relative)")
    return lv2, blow2 if blow2 is not None else blow


def cel_curve(
    model,
    sol,
    prefs: Preferences,
    y0: float,
    horizons,
    policy: Policy,
    *,
    cfg: SimConfig | None = None,
    steps_per_month: int = 10,
) -> HorizonCurve:
    """Certainty-equivalent loss bound of ``policy`` against the long-run dual.

    ``l_T = ((1/T) log dual - (1/T) log primal) / p`` per month.  OU curves are
    deterministic; CIR curves are Monte Carlo estimates and need ``cfg``.
    """
    hs = _horizons(horizons)
    if isinstance(model, CirModel):
        if cfg is None:
            raise DomainError("CIR curves are Monte Carlo estimates and need a SimConfig")
        eta = long_run_policy(model, prefs, sol)
        primal, dual = [], []
        for T in hs:
            w = simulate_wealth_and_sdf(model, policy, prefs, y0, T, cfg, eta_policy=eta)
            lx = prefs.p * w.log_wealth
            shift = lx.max()
            primal.append(shift + math.log(np.mean(np.exp(lx - shift))))
            dual.append(finite_horizon_bounds(model, sol, prefs, y0, T, cfg=cfg).log_dual)
        primal_log, dual_log, blow = np.array(primal), np.array(dual), None
    else:
        primal_log, blow = _ou_primal_logs(model, policy, prefs, y0, hs, steps_per_month)
        dual_log = _ou_dual_logs(model, sol, prefs, y0, hs)
    return HorizonCurve(
        horizons=hs,
        primal_log_growth=primal_log / hs,
        dual_log_growth=dual_log / hs,
        cel_bound=_cel(prefs, dual_log, primal_log, hs),
        policy_name=policy.name,
        blow_up_at=blow,
    )


def break_even_horizon(
    model: KimOmbergModel,
    prefs: Preferences,
    y0: float = 0.0,
    *,
    t_max: float = 1200.0,
    steps_per_month: int = 10,
    xtol: float = 1e-6,
) -> float:
    """Smallest horizon (months) at which the long-run policy's loss bound is at
    most the myopic policy's.

    Both bounds share the long-run dual, so the comparison reduces to the two
    primal power moments.  A monthly scan brackets the crossing; Brent's method
    refines it inside the bracketing month.
    """
    sol = solve_ou_1d(model, prefs)
    lr = _fk_system(model, long_run_policy(model, prefs, sol), prefs)
    my = _fk_system(model, myopic_policy(model, prefs), prefs)
    h = 1.0 / steps_per_month
    hs = np.arange(1.0, math.floor(t_max) + 1.0)
    lr_log, _ = _log_moments(lr, y0, hs, h)
    my_log, _ = _log_moments(my, y0, hs, h)
    # cel(LR) - cel(myopic) = (log primal_myopic - log primal_LR) / (p T)
    with np.errstate(invalid="ignore"):
        diff = (my_log - lr_log) / (prefs.p * hs)
    hit = np.flatnonzero(diff <= 0)
    if hit.size == 0:
        raise NoBracket(f"no break-even horizon in [1, {t_max:g}] months")
    i = int(hit[0])
    if i == 0 or diff[i] == 0:
        return float(hs[i])
    t0 = float(hs[i - 1])

    def gap(T):
        (a,), _ = _log_moments(my, y0, [T], h)
        (b,), _ = _log_moments(lr, y0, [T], h)
        return (a - b) / (prefs.p * T)

    return float(optimize.brentq(gap, t0, float(hs[i]), xtol=xtol))
