"""Closed-form long-run solutions for the single-state OU and CIR models."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import AssumptionViolation, NegativeDiscriminant
from .model import CirModel, KimOmbergModel, Preferences, delta_of


@dataclass(frozen=True)
class OuSolution:
    """Long-run solution ``v(y) = v0 y - v1 y^2 / 2`` of the Kim-Omberg model."""

    Theta: float
    v1: float
    v0: float
    lam: float
    delta: float
    hat_kappa: float
    hat_mean: float
    verified_tightness: bool = True

    def value(self, y):
        y = np.asarray(y, dtype=float)
        return self.v0 * y - 0.5 * self.v1 * y * y

    def gradient(self, y):
        return self.v0 - self.v1 * np.asarray(y, dtype=float)


@dataclass(frozen=True)
class CirSolution:
    """Long-run solution ``v(y) = v0 log y + v1 y`` of the CIR model."""

    Theta: float
    Lambda: float
    c: float
    v0: float
    v1: float
    lam: float
    delta: float

    def value(self, y):
        y = np.asarray(y, dtype=float)
        return self.v0 * np.log(y) + self.v1 * y

    def gradient(self, y):
        return self.v0 / np.asarray(y, dtype=float) + self.v1


def _root_minus(x: float, disc_excess: float, sqrt_disc: float) -> float:
    """``sqrt(x^2 + e) - x`` without cancellation when ``x > 0``."""
    if x > 0:
        return disc_excess / (sqrt_disc + x)
    return sqrt_disc - x


def solve_ou_1d(model: KimOmbergModel, prefs: Preferences) -> OuSolution:
    q, p = prefs.q, prefs.p
    rho, nu0, nu1, b = model.rho, model.nu0, model.nu1, model.b
    delta = delta_of(prefs, model.rho_sq)
    x = 1.0 + q * float(rho @ nu1)
    excess = q * float(nu1 @ nu1) / delta
    Theta = x * x + excess
    if Theta < 0:
        raise NegativeDiscriminant(f"Theta = {Theta:.6g} < 0")
    sqrt_theta = math.sqrt(Theta)
    if excess >= 0:
        sqrt_theta = math.hypot(x, math.sqrt(excess))
    if sqrt_theta == 0.0:
        raise NegativeDiscriminant("Theta = 0; v0 undefined")
    v1 = delta * b * _root_minus(x, excess, sqrt_theta)
    rn0 = float(rho @ nu0)
    v0 = q * delta * rn0 - (q * float(nu1 @ nu0) + q * delta * rn0 * x) / sqrt_theta
    lam = p * model.r0 - 0.5 * q * float(nu0 @ nu0) + 0.5 * v0 * v0 / delta - q * v0 * rn0 - 0.5 * v1
    hat_kappa = b * sqrt_theta
    hat_mean = (v0 / delta - q * rn0) / hat_kappa if hat_kappa != 0 else math.nan
    return OuSolution(
        Theta=Theta,
        v1=v1,
        v0=v0,
        lam=lam,
        delta=delta,
        hat_kappa=hat_kappa,
        hat_mean=hat_mean,
        verified_tightness=p < 0,
    )


def _cir_parts(model: CirModel, prefs: Preferences):
    q, p = prefs.q, prefs.p
    a = model.a
    delta = delta_of(prefs, model.rho_sq)
    c = model.c
    beta = model.b + q * a * float(model.rho @ model.nu1)
    gam = c - q * a * float(model.rho @ model.nu0)
    th_excess = a * a / delta * (q * float(model.nu1 @ model.nu1) - 2.0 * p * model.r1)
    la_excess = a * a / delta * q * float(model.nu0 @ model.nu0)
    return delta, c, beta, gam, th_excess, la_excess


def _cir_lambda(model, prefs, delta, beta, v0, v1):
    q, a = prefs.q, model.a
    return (
        prefs.p * model.r0
        - q * float(model.nu0 @ model.nu1)
        + a * a / delta * v0 * v1
        - v0 * beta
        + v1 * (model.b * model.theta - q * a * float(model.rho @ model.nu0))
    )


def solve_cir(model: CirModel, prefs: Preferences) -> CirSolution:
    """Tight-making branch (``-sqrt(Theta)``, ``+sqrt(Lambda)``) of the CIR solution."""
    if not model.feller_holds():
        raise AssumptionViolation(
            "CIR assumption violated: need b, theta, a, r1 >= 0 and b*theta > a^2/2"
        )
    if prefs.p >= 0:
        raise AssumptionViolation("CIR closed form is only established for p < 0")
    a = model.a
    delta, c, beta, gam, th_ex, la_ex = _cir_parts(model, prefs)
    Theta = beta * beta + th_ex
    Lambda = gam * gam + la_ex
    if Theta < 0 or Lambda < 0:
        raise NegativeDiscriminant("Theta or Lambda negative")
    sT = math.hypot(beta, math.sqrt(th_ex)) if th_ex >= 0 else math.sqrt(Theta)
    sL = math.hypot(gam, math.sqrt(la_ex)) if la_ex >= 0 else math.sqrt(Lambda)
    # v1 = (delta/a^2)(beta - sqrt Theta), v0 = (delta/a^2)(sqrt Lambda - gam)
    v1 = -(delta / (a * a)) * _root_minus(beta, th_ex, sT)
    v0 = (delta / (a * a)) * _root_minus(gam, la_ex, sL)
    lam = _cir_lambda(model, prefs, delta, beta, v0, v1)
    return CirSolution(Theta=Theta, Lambda=Lambda, c=c, v0=v0, v1=v1, lam=lam, delta=delta)


def cir_candidate_branches(model: CirModel, prefs: Preferences) -> list[dict]:
    """All four sign choices of the CIR quadratic system, for diagnostics only."""
    a = model.a
    delta, c, beta, gam, th_ex, la_ex = _cir_parts(model, prefs)
    sT = math.sqrt(max(beta * beta + th_ex, 0.0))
    sL = math.sqrt(max(gam * gam + la_ex, 0.0))
    out = []
    for s_theta in (-1, 1):
        for s_lambda in (-1, 1):
            v1 = delta / (a * a) * (beta + s_theta * sT)
            v0 = delta / (a * a) * (-gam + s_lambda * sL)
            out.append(
                dict(
                    sign_theta=s_theta,
                    sign_lambda=s_lambda,
                    v0=v0,
                    v1=v1,
                    lam=_cir_lambda(model, prefs, delta, beta, v0, v1),
                    # drift under the myopic measure: a^2/2 + s_L sqrt(Lambda) + s_T sqrt(Theta) y
                    hat_intercept=0.5 * a * a + s_lambda * sL,
                    hat_slope=s_theta * sT,
                    selected=(s_theta == -1 and s_lambda == 1),
                )
            )
    return out


class Measure(str, Enum):
    PHYSICAL = "P"
    MYOPIC = "Phat"
    Q_OPTIMAL = "Q"


@dataclass(frozen=True)
class MeasureDynamics:
    """State drift ``intercept - speed * y``; ``level = intercept / speed``.

    Diffusion is ``dW`` for OU and ``a sqrt(y) dW`` for CIR.
    """

    measure: Measure
    intercept: float
    speed: float

    @property
    def level(self) -> float:
        return self.intercept / self.speed if self.speed != 0 else math.nan

    def drift(self, y):
        return self.intercept - self.speed * np.asarray(y, dtype=float)


def measure_dynamics(model, solution, which) -> MeasureDynamics:
    """Affine drift of the state under ``P``, the myopic measure or the q-optimal measure."""
    which = Measure(which)
    if isinstance(model, KimOmbergModel):
        b = model.b
        rn0 = float(model.rho @ model.nu0)
        rn1 = float(model.rho @ model.nu1)
        if which is Measure.PHYSICAL:
            return MeasureDynamics(which, 0.0, b)
        if which is Measure.MYOPIC:
            return MeasureDynamics(which, solution.hat_kappa * solution.hat_mean, solution.hat_kappa)
        # -bY - rho'(nu0 + b nu1 Y) + (1 - rho'rho)(v0 - v1 Y)
        one_m = 1.0 - model.rho_sq
        return MeasureDynamics(which, one_m * solution.v0 - rn0, b + b * rn1 + one_m * solution.v1)
    if isinstance(model, CirModel):
        a, b = model.a, model.b
        rn0 = float(model.rho @ model.nu0)
        rn1 = float(model.rho @ model.nu1)
        if which is Measure.PHYSICAL:
            return MeasureDynamics(which, b * model.theta, b)
        if which is Measure.MYOPIC:
            return MeasureDynamics(which, 0.5 * a * a + math.sqrt(solution.Lambda), math.sqrt(solution.Theta))
        one_m = 1.0 - model.rho_sq
        return MeasureDynamics(
            which,
            b * model.theta - a * rn0 + a * a * one_m * solution.v0,
            b + a * rn1 - a * a * one_m * solution.v1,
        )
    raise TypeError(f"no closed-form measure dynamics for {type(model).__name__}")
