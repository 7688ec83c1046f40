"""Long-run optimality certificates.

The parameter conditions checked here are sufficient, except in the
``kappa = 1`` Kim-Omberg case where the classification is sharp.  Verdicts
therefore distinguish a condition that is not implied from a failure that
is proven.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import (
    CirModel,
    KimOmbergModel,
    LinearDiffusionModel,
    Preferences,
    as_linear,
    coefficients_at,
    is_positive_definite,
    potential_at,
)

_EDGE_TOL = 1e-12


class VerdictStatus(str, Enum):
    HOLDS = "SufficientConditionHolds"
    FAILURE = "FailureProven"
    NOT_IMPLIED = "NotImplied"


@dataclass(frozen=True)
class OptimalityVerdict:
    status: VerdictStatus
    condition_values: dict = field(default_factory=dict)
    blow_up_time: float | None = None
    note: str = ""

    @property
    def holds(self) -> bool:
        return self.status is VerdictStatus.HOLDS

    def to_dict(self) -> dict:
        return dict(
            status=self.status.value,
            condition_values=dict(self.condition_values),
            blow_up_time=self.blow_up_time,
            note=self.note,
        )


def _verdict(ok: bool, values: dict, note: str = "") -> OptimalityVerdict:
    return OptimalityVerdict(VerdictStatus.HOLDS if ok else VerdictStatus.NOT_IMPLIED, values, None, note)


# ---------------------------------------------------------------------------
# Kim-Omberg conditions
# ---------------------------------------------------------------------------


def check_ou_general(sol, model: KimOmbergModel, prefs: Preferences) -> OptimalityVerdict:
    """Sufficient condition ``(1 - 2 q rho'rho) sqrt(Theta) + 1 + q rho'nu1 > 0``."""
    q = prefs.q
    rr = model.rho_sq
    lhs = (1.0 - 2.0 * q * rr) * math.sqrt(sol.Theta) + 1.0 + q * float(model.rho @ model.nu1)
    values = {"lhs": lhs, "q_rho_sq": q * rr, "Theta": sol.Theta}
    if prefs.p > 0:
        return OptimalityVerdict(
            VerdictStatus.NOT_IMPLIED, values, note="no sufficient condition is available for 0 < p < 1"
        )
    return _verdict(lhs > 0, values)


def kappa_bound(q_rho_sq: float) -> float:
    """Largest admissible ``kappa`` for ``nu1 = -kappa rho``; ``inf`` when ``q rho'rho <= 1/4``."""
    if q_rho_sq <= 0.25:
        return math.inf
    return 2.0 / (4.0 * q_rho_sq - 1.0)


def _blow_up_time(delta: float, b: float) -> float:
    s = math.sqrt(delta)
    g = s * (s - 1.0)
    return -(s / (2.0 * b)) * math.log((g - 2.0) / g)


def _classify_unit_kappa(q_rho_sq: float, b: float | None, nu0_zero: bool | None) -> OptimalityVerdict:
    values = {"q_rho_sq": q_rho_sq, "threshold": 0.75}
    if q_rho_sq < 0.75 - _EDGE_TOL:
        return OptimalityVerdict(VerdictStatus.HOLDS, values, note="kappa = 1 and q rho'rho < 3/4")
    delta = 1.0 / (1.0 - q_rho_sq)
    values["delta"] = delta
    if q_rho_sq <= 0.75 + _EDGE_TOL:
        if nu0_zero is None:
            note = "q rho'rho = 3/4: long-run optimality fails; CEL behaviour depends on nu0"
        elif nu0_zero:
            note = "q rho'rho = 3/4 with nu0 = 0: long-run optimality fails, CEL bounded by -b/(2p)"
        else:
            note = "q rho'rho = 3/4 with nu0 != 0: long-run optimality fails, CEL diverges"
        return OptimalityVerdict(VerdictStatus.FAILURE, values, note=note)
    t_hat = _blow_up_time(delta, b) if b is not None else None
    values["blow_up_time"] = t_hat
    return OptimalityVerdict(
        VerdictStatus.FAILURE,
        values,
        blow_up_time=t_hat,
        note="q rho'rho > 3/4: expected utility of the long-run policy is -inf beyond a finite horizon",
    )


def check_ou_kappa(
    kappa: float, q_rho_sq: float, *, b: float | None = None, nu0_zero: bool | None = None
) -> OptimalityVerdict:
    """Condition on ``kappa`` for the ``nu1 = -kappa rho`` family.

    At ``kappa = 1`` the sharp classification is used; pass ``b`` to obtain the
    blow-up time and ``nu0_zero`` to qualify the boundary case.
    """
    if not 0.0 <= q_rho_sq < 1.0:
        raise ValueError("q rho'rho must lie in [0, 1)")
    if kappa == 1.0:
        return _classify_unit_kappa(q_rho_sq, b, nu0_zero)
    bound = kappa_bound(q_rho_sq)
    return _verdict(kappa < bound, {"kappa": kappa, "q_rho_sq": q_rho_sq, "kappa_bound": bound})


def classify_kappa1(model: KimOmbergModel, prefs: Preferences) -> OptimalityVerdict:
    """Sharp classification when ``nu1 = -rho``."""
    if prefs.p >= 0:
        raise ValueError("classification is stated for p < 0")
    kap = model.kappa
    if kap is None or abs(kap - 1.0) > 1e-12:
        raise ValueError("model does not satisfy nu1 = -rho")
    return _classify_unit_kappa(prefs.q * model.rho_sq, model.b, not np.any(model.nu0))


def kappa_threshold_p(kappa: float, rho_sq: float, *, lo: float = -1000.0, hi: float = -1e-9, tol: float = 1e-10):
    """Most negative ``p`` for which the ``kappa`` condition holds, by bisection.

    Returns ``-inf`` when the condition holds on the whole bracket.
    """

    def ok(p):
        return check_ou_kappa(kappa, Preferences(p).q * rho_sq).holds

    if not ok(hi):
        raise ValueError("condition fails already at the upper end of the bracket")
    if ok(lo):
        return -math.inf
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# CIR and region conditions
# ---------------------------------------------------------------------------


def check_cir(sol, model: CirModel, prefs: Preferences) -> OptimalityVerdict:
    q, a = prefs.q, model.a
    f = 1.0 - 2.0 * q * model.rho_sq
    lhs_lambda = f * math.sqrt(sol.Lambda) + model.c - q * a * float(model.rho @ model.nu0)
    lhs_theta = f * math.sqrt(sol.Theta) + model.b + q * a * float(model.rho @ model.nu1)
    values = {"lhs_lambda": lhs_lambda, "lhs_theta": lhs_theta}
    if prefs.p > 0:
        return OptimalityVerdict(VerdictStatus.NOT_IMPLIED, values, note="condition stated for p < 0")
    return _verdict(lhs_lambda > 0 and lhs_theta > 0, values)


def rho_region(q: float, rho_sq: float) -> tuple[float, float]:
    """Interval of ``rho'rho`` allowed for conjugate exponent ``q``."""
    if 0.5 < q < 1.0:
        return 0.0, 1.0 / (2.0 * q)
    if -1.0 <= q <= 0.5:
        return 0.0, 1.0
    if q < -1.0:
        return (1.0 + q) / (2.0 * q), 1.0
    raise ValueError(f"q = {q} outside the range of the conjugate exponent")


def check_rho_region(prefs: Preferences, rho_sq: float) -> OptimalityVerdict:
    """Single-state sufficient condition on ``(q, rho'rho)``."""
    lo, hi = rho_region(prefs.q, rho_sq)
    inside = lo - _EDGE_TOL <= rho_sq <= hi + _EDGE_TOL
    values = {"q": prefs.q, "rho_sq": rho_sq, "rho_sq_min": lo, "rho_sq_max": hi}
    note = "CEL decays like K/T for some constant K > 0" if inside else ""
    return _verdict(inside, values, note)


# ---------------------------------------------------------------------------
# F criterion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FProfile:
    sup_estimate: float
    argmax: float
    bounded_heuristic: bool
    leading_coefficient: float
    values: np.ndarray


def _f_prefactor(model, prefs: Preferences, solution, y: float) -> float:
    c = coefficients_at(model, y)
    q = prefs.q
    g = np.atleast_1d(solution.gradient(y)).astype(float)
    base = potential_at(model, prefs, y) - solution.lam
    UtSiU = c.Ups.T @ np.linalg.solve(c.Sigma, c.Ups)
    if prefs.p < 0:
        return float(base + 0.5 * q * g @ UtSiU @ g)
    return float(base - 0.5 * q * g @ (c.A - UtSiU) @ g)


def f_condition_profile(model, solution, prefs: Preferences, grid) -> FProfile:
    """Evaluate the function whose boundedness from above certifies long-run optimality.

    ``bounded_heuristic`` is grid evidence only.  The leading coefficient of the
    prefactor (``y^2`` for OU, ``y`` for CIR) is returned as the analytic check:
    a negative value means ``F -> -inf`` in the tails.
    """
    grid = np.asarray(grid, dtype=float)
    scale = 1.0 if prefs.p < 0 else 1.0 / (1.0 - prefs.p)
    pre = np.array([_f_prefactor(model, prefs, solution, y) for y in grid])
    v = np.array([float(np.asarray(solution.value(y)).sum()) for y in grid])
    log_abs = np.log(np.abs(pre) + 1e-300) - scale * v
    F = np.sign(pre) * np.exp(np.minimum(log_abs, 700.0))
    i = int(np.argmax(F))
    if isinstance(model, CirModel):
        # y * prefactor is quadratic in y
        ys = np.array([1.0, 2.0, 3.0])
        yp = ys * np.array([_f_prefactor(model, prefs, solution, y) for y in ys])
        lead = float(np.polyfit(ys, yp, 2)[0])
    else:
        ys = np.array([-1.0, 0.0, 1.0])
        pp = np.array([_f_prefactor(model, prefs, solution, y) for y in ys])
        lead = float(0.5 * (pp[0] + pp[2] - 2.0 * pp[1]))
    tol = 1e-12 * (1.0 + np.max(np.abs(F[np.isfinite(F)]))) if np.any(np.isfinite(F)) else 0.0
    bounded = bool(F[0] <= F[1] + tol and F[-1] <= F[-2] + tol)
    return FProfile(float(F[i]), float(grid[i]), bounded, lead, F)


# ---------------------------------------------------------------------------
# Assumption report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    detail: str = ""


def _linear_checks(lin: LinearDiffusionModel, prefs: Preferences) -> list[AssumptionCheck]:
    mats = {
        "Sigma": lin.Sigma,
        "mu1'mu1": lin.mu1.T @ lin.mu1,
        "b + b'": lin.b + lin.b.T,
        "a": lin.a,
    }
    failed = [name for name, m in mats.items() if not is_positive_definite(m)]
    if not np.allclose(lin.a, lin.a.T):
        failed.append("a (not symmetric)")
    out = [
        AssumptionCheck(
            "linear_model",
            not failed,
            "all four matrices positive definite" if not failed else "not positive definite: " + ", ".join(failed),
        )
    ]
    q = prefs.q
    Si_mu1 = np.linalg.solve(lin.Sigma, lin.mu1)
    H = -0.5 * q * lin.mu1.T @ Si_mu1
    H = 0.5 * (H + H.T)
    lin_term = prefs.p * lin.r1 - q * lin.mu1.T @ np.linalg.solve(lin.Sigma, lin.mu0)
    w, V = np.linalg.eigh(H)
    scale = 1.0 + np.abs(w).max()
    null = V[:, np.abs(w) <= 1e-12 * scale]
    if np.any(w > 1e-12 * scale):
        bounded = False
    else:
        bounded = bool(np.all(np.abs(null.T @ lin_term) <= 1e-12 * (1.0 + np.abs(lin_term).max())))
    drop = bool(np.all(w < -1e-12 * scale))
    out.append(AssumptionCheck("bounded_potential", bounded, f"quadratic form eigenvalues {w.tolist()}"))
    out.append(AssumptionCheck("potential_drop_off", drop, "potential -> -inf in every direction" if drop else ""))
    return out


def _cir_checks(model: CirModel, prefs: Preferences) -> list[AssumptionCheck]:
    ok = model.feller_holds()
    out = [
        AssumptionCheck(
            "cir_model",
            ok,
            f"b*theta = {model.b * model.theta:.6g}, a^2/2 = {0.5 * model.a**2:.6g}; need b, theta, a, r1 >= 0 "
            "and b*theta > a^2/2",
        )
    ]
    q, p = prefs.q, prefs.p
    slope = p * model.r1 - 0.5 * q * float(model.nu1 @ model.nu1)
    near0 = -0.5 * q * float(model.nu0 @ model.nu0)
    out.append(AssumptionCheck("bounded_potential", slope <= 0 and near0 <= 0, f"y-slope {slope:.6g}, 1/y coefficient {near0:.6g}"))
    out.append(AssumptionCheck("potential_drop_off", slope < 0 and near0 < 0, ""))
    return out


def validate_assumptions(model, prefs: Preferences) -> list[AssumptionCheck]:
    """Pass/fail list for the structural model assumptions and the potential conditions.

    The potential ``p r - (q/2) mu'Sigma^{-1} mu`` is classified analytically;
    a tail grid evaluation is attached as a cross-check.
    """
    if isinstance(model, CirModel):
        checks = _cir_checks(model, prefs)
        tail = [1e-3 * model.theta if model.theta > 0 else 1e-3, 10.0, 100.0, 1000.0]
    else:
        checks = _linear_checks(as_linear(model), prefs)
        k = as_linear(model).k
        tail = [s * 10.0**e * np.ones(k) for e in (1, 2, 3) for s in (-1.0, 1.0)]
    vals = [potential_at(model, prefs, y) for y in tail]
    checks.append(AssumptionCheck("potential_tail_grid", True, f"max on tail grid {max(vals):.6g}"))
    return checks


def all_passed(checks, names=("linear_model", "cir_model", "bounded_potential")) -> bool:
    return all(c.passed for c in checks if c.name in names)
