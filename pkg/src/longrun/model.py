"""Market models, preferences and affine policies.

Three parametric families are supported:

* :class:`LinearDiffusionModel` -- ``k`` Ornstein-Uhlenbeck states driving
  affine excess-return drifts and an affine short rate.
* :class:`KimOmbergModel` -- the single-state special case with
  ``mu(y) = sigma nu0 + b sigma nu1 y`` and unit state volatility.
* :class:`CirModel` -- one square-root state that drives rates, drifts and
  volatilities simultaneously.

All rates, drifts and variances are per month.  Models are frozen value
objects; ``dataclasses.replace`` re-runs validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Union

import numpy as np

from .errors import DomainError, SingularDelta

_RHO_TOL = 1e-12


def _vec(x, name, size=None):
    arr = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    if arr.ndim != 1:
        raise DomainError(f"{name} must be a vector, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise DomainError(f"{name} must have length {size}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def _mat(x, name, shape=None):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1 and shape is not None:
        arr = arr.reshape(shape)
    arr = arr.copy()
    if arr.ndim != 2:
        raise DomainError(f"{name} must be a matrix, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise DomainError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def is_positive_definite(m) -> bool:
    """Cholesky test on the symmetric part of ``m``."""
    m = np.asarray(m, dtype=float)
    try:
        np.linalg.cholesky(0.5 * (m + m.T))
    except np.linalg.LinAlgError:
        return False
    return True


def _check_correlation(rho, name="rho"):
    # spectral norm of rho rho' equals the squared largest singular value
    s = np.linalg.norm(rho, 2) ** 2 if rho.size else 0.0
    if s > 1.0 + _RHO_TOL:
        raise DomainError(f"{name}: spectral norm of rho rho' is {s:.6g} > 1")


# ---------------------------------------------------------------------------
# Preferences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Preferences:
    """Power utility ``x**p / p`` with conjugate exponent ``q = p/(p-1)``."""

    p: float

    def __post_init__(self):
        p = float(self.p)
        if not np.isfinite(p) or p == 0.0 or p >= 1.0:
            raise DomainError(f"risk-aversion exponent must satisfy p < 1, p != 0; got {self.p}")
        object.__setattr__(self, "p", p)

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def gamma(self) -> float:
        """Relative risk aversion ``1 - p``."""
        return 1.0 - self.p


def make_preferences(p: float) -> Preferences:
    return Preferences(p)


def delta_of(prefs: Preferences, rho_sq: float) -> float:
    """Exponent ``1 / (1 - q rho'rho)`` of the linearising transform ``phi = exp(v / delta)``."""
    denom = 1.0 - prefs.q * float(rho_sq)
    if denom == 0.0:
        raise SingularDelta(f"q * rho'rho == 1 (q={prefs.q}, rho'rho={rho_sq})")
    return 1.0 / denom


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearDiffusionModel:
    """``dR = (mu0 + mu1 Y) dt + sigma dZ``, ``dY = -b Y dt + a dW``, ``d<Z,W> = rho dt``,
    ``r = r0 + r1'Y``."""

    mu0: np.ndarray
    mu1: np.ndarray
    sigma: np.ndarray
    b: np.ndarray
    a: np.ndarray
    rho: np.ndarray
    r0: float = 0.0
    r1: np.ndarray | None = None

    def __post_init__(self):
        sigma = _mat(self.sigma, "sigma")
        n = sigma.shape[0]
        if sigma.shape != (n, n):
            raise DomainError("sigma must be square")
        b = _mat(self.b, "b")
        k = b.shape[0]
        if b.shape != (k, k):
            raise DomainError("b must be square")
        a = _mat(self.a, "a", (k, k))
        mu0 = _vec(self.mu0, "mu0", n)
        mu1 = _mat(self.mu1, "mu1", (n, k))
        rho = _mat(self.rho, "rho", (n, k))
        r1 = _vec(np.zeros(k) if self.r1 is None else self.r1, "r1", k)
        if not is_positive_definite(sigma @ sigma.T):
            raise DomainError("Sigma = sigma sigma' is not positive definite")
        if not is_positive_definite(a @ a.T):
            raise DomainError("A = a a' is not positive definite")
        _check_correlation(rho)
        for name, val in dict(mu0=mu0, mu1=mu1, sigma=sigma, b=b, a=a, rho=rho, r1=r1).items():
            object.__setattr__(self, name, val)
        object.__setattr__(self, "r0", float(self.r0))

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    @property
    def k(self) -> int:
        return self.b.shape[0]

    @property
    def Sigma(self) -> np.ndarray:
        return self.sigma @ self.sigma.T

    @property
    def A(self) -> np.ndarray:
        return self.a @ self.a.T

    @property
    def Ups(self) -> np.ndarray:
        """Return/state covariation ``sigma rho a'``."""
        return self.sigma @ self.rho @ self.a.T


@dataclass(frozen=True)
class KimOmbergModel:
    """Single-state model ``dR = (sigma nu0 + b sigma nu1 Y) dt + sigma dZ``,
    ``dY = -b Y dt + dW``, ``r = r0``."""

    sigma: np.ndarray
    nu0: np.ndarray
    nu1: np.ndarray
    b: float
    rho: np.ndarray
    r0: float = 0.0

    def __post_init__(self):
        sigma = _mat(self.sigma, "sigma")
        n = sigma.shape[0]
        if sigma.shape != (n, n):
            raise DomainError("sigma must be square")
        if abs(np.linalg.det(sigma)) == 0.0 or np.linalg.cond(sigma) > 1e14:
            raise DomainError("sigma must be invertible")
        nu0 = _vec(self.nu0, "nu0", n)
        nu1 = _vec(self.nu1, "nu1", n)
        rho = _vec(self.rho, "rho", n)
        if float(rho @ rho) > 1.0 + _RHO_TOL:
            raise DomainError(f"rho'rho = {rho @ rho:.6g} > 1")
        b = float(self.b)
        if not np.isfinite(b):
            raise DomainError("b must be finite")
        for name, val in dict(sigma=sigma, nu0=nu0, nu1=nu1, rho=rho).items():
            object.__setattr__(self, name, val)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "r0", float(self.r0))

    @classmethod
    def from_kappa(cls, sigma, nu0, kappa, b, rho, r0=0.0):
        """Build the ``nu1 = -kappa rho`` specialisation."""
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        return cls(sigma=sigma, nu0=nu0, nu1=-float(kappa) * rho, b=b, rho=rho, r0=r0)

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    @property
    def k(self) -> int:
        return 1

    @property
    def rho_sq(self) -> float:
        return float(self.rho @ self.rho)

    @property
    def kappa(self) -> float | None:
        """``kappa`` with ``nu1 = -kappa rho`` when ``nu1`` is parallel to ``rho``, else None."""
        rr = self.rho_sq
        if rr == 0.0:
            return 0.0 if not np.any(self.nu1) else None
        kap = -float(self.rho @ self.nu1) / rr
        if np.allclose(self.nu1, -kap * self.rho, rtol=1e-12, atol=1e-14):
            return kap
        return None

    def to_linear(self) -> LinearDiffusionModel:
        n = self.n
        return LinearDiffusionModel(
            mu0=self.sigma @ self.nu0,
            mu1=(self.b * self.sigma @ self.nu1).reshape(n, 1),
            sigma=self.sigma,
            b=[[self.b]],
            a=[[1.0]],
            rho=self.rho.reshape(n, 1),
            r0=self.r0,
            r1=[0.0],
        )


@dataclass(frozen=True)
class CirModel:
    """``dR = (sigma nu0 + sigma nu1 Y) dt + sqrt(Y) sigma dZ``,
    ``dY = b (theta - Y) dt + a sqrt(Y) dW``, ``r = r0 + r1 Y``."""

    sigma: np.ndarray
    nu0: np.ndarray
    nu1: np.ndarray
    b: float
    theta: float
    a: float
    rho: np.ndarray
    r0: float = 0.0
    r1: float = 0.0

    def __post_init__(self):
        sigma = _mat(self.sigma, "sigma")
        n = sigma.shape[0]
        if sigma.shape != (n, n):
            raise DomainError("sigma must be square")
        if abs(np.linalg.det(sigma)) == 0.0 or np.linalg.cond(sigma) > 1e14:
            raise DomainError("sigma must be invertible")
        nu0 = _vec(self.nu0, "nu0", n)
        nu1 = _vec(self.nu1, "nu1", n)
        rho = _vec(self.rho, "rho", n)
        if float(rho @ rho) > 1.0 + _RHO_TOL:
            raise DomainError(f"rho'rho = {rho @ rho:.6g} > 1")
        for name in ("b", "theta", "a", "r0", "r1"):
            val = float(getattr(self, name))
            if not np.isfinite(val):
                raise DomainError(f"{name} must be finite")
            object.__setattr__(self, name, val)
        if self.a <= 0.0:
            raise DomainError("state volatility a must be positive")
        for name, val in dict(sigma=sigma, nu0=nu0, nu1=nu1, rho=rho).items():
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    @property
    def k(self) -> int:
        return 1

    @property
    def rho_sq(self) -> float:
        return float(self.rho @ self.rho)

    @property
    def c(self) -> float:
        return self.b * self.theta - 0.5 * self.a**2

    def feller_holds(self) -> bool:
        return (
            min(self.b, self.theta, self.a, self.r1) >= 0.0
            and self.b * self.theta > 0.5 * self.a**2
        )


MarketModel = Union[LinearDiffusionModel, KimOmbergModel, CirModel]


def as_linear(model) -> LinearDiffusionModel:
    if isinstance(model, KimOmbergModel):
        return model.to_linear()
    if isinstance(model, LinearDiffusionModel):
        return model
    raise TypeError(f"expected a linear-diffusion model, got {type(model).__name__}")


# ---------------------------------------------------------------------------
# Coefficient functions and the ergodic HJB operator
# ---------------------------------------------------------------------------


class Coefficients(NamedTuple):
    r: float
    mu: np.ndarray
    Sigma: np.ndarray
    Ups: np.ndarray
    A: np.ndarray
    drift: np.ndarray


def coefficients_at(model: MarketModel, y) -> Coefficients:
    """Evaluate ``r, mu, Sigma, Upsilon, A`` and the state drift at state ``y``."""
    if isinstance(model, CirModel):
        y = float(np.asarray(y).reshape(-1)[0])
        if y <= 0.0:
            raise DomainError("CIR state must be positive")
        S = model.sigma @ model.sigma.T
        return Coefficients(
            r=model.r0 + model.r1 * y,
            mu=model.sigma @ (model.nu0 + model.nu1 * y),
            Sigma=y * S,
            Ups=(y * model.a * model.sigma @ model.rho).reshape(-1, 1),
            A=np.array([[model.a**2 * y]]),
            drift=np.array([model.b * (model.theta - y)]),
        )
    lin = as_linear(model)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return Coefficients(
        r=lin.r0 + float(lin.r1 @ y),
        mu=lin.mu0 + lin.mu1 @ y,
        Sigma=lin.Sigma,
        Ups=lin.Ups,
        A=lin.A,
        drift=-lin.b @ y,
    )


def ergodic_hjb_lhs(model: MarketModel, prefs: Preferences, y, grad, hess) -> float:
    """Left-hand side of the ergodic HJB equation at ``y`` for a value function
    with gradient ``grad`` and Hessian ``hess`` there."""
    c = coefficients_at(model, y)
    q = prefs.q
    grad = np.atleast_1d(np.asarray(grad, dtype=float))
    hess = np.atleast_2d(np.asarray(hess, dtype=float))
    Si_mu = np.linalg.solve(c.Sigma, c.mu)
    Si_ups = np.linalg.solve(c.Sigma, c.Ups)
    G = c.A - q * c.Ups.T @ Si_ups
    return float(
        prefs.p * c.r
        - 0.5 * q * c.mu @ Si_mu
        + 0.5 * grad @ G @ grad
        + grad @ (c.drift - q * c.Ups.T @ Si_mu)
        + 0.5 * np.trace(c.A @ hess)
    )


def potential_at(model: MarketModel, prefs: Preferences, y) -> float:
    """``p r - (q/2) mu' Sigma^{-1} mu``."""
    c = coefficients_at(model, y)
    return float(prefs.p * c.r - 0.5 * prefs.q * c.mu @ np.linalg.solve(c.Sigma, c.mu))


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


class PolicyKind(str, Enum):
    LONG_RUN = "long_run"
    MYOPIC = "myopic"
    AFFINE_CUSTOM = "affine_custom"


@dataclass(frozen=True)
class Policy:
    """Portfolio ``pi(y) = pi_const + pi_lin y + pi_inv / y`` and risk premia
    ``eta(y) = eta_const + eta_lin y + eta_inv / y``.

    The ``1/y`` terms are only meaningful on the positive half-line (CIR).
    """

    kind: PolicyKind
    pi_const: np.ndarray
    pi_lin: np.ndarray
    eta_const: np.ndarray
    eta_lin: np.ndarray
    pi_inv: np.ndarray | None = None
    eta_inv: np.ndarray | None = None
    positive_domain: bool = False
    name: str = field(default="", compare=False)

    def __post_init__(self):
        pi_const = _vec(self.pi_const, "pi_const")
        n = pi_const.shape[0]
        eta_const = _vec(self.eta_const, "eta_const")
        k = eta_const.shape[0]
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        object.__setattr__(self, "pi_const", pi_const)
        object.__setattr__(self, "eta_const", eta_const)
        object.__setattr__(self, "pi_lin", _mat(self.pi_lin, "pi_lin", (n, k)))
        object.__setattr__(self, "eta_lin", _mat(self.eta_lin, "eta_lin", (k, k)))
        pi_inv = np.zeros(n) if self.pi_inv is None else self.pi_inv
        eta_inv = np.zeros(k) if self.eta_inv is None else self.eta_inv
        object.__setattr__(self, "pi_inv", _vec(pi_inv, "pi_inv", n))
        object.__setattr__(self, "eta_inv", _vec(eta_inv, "eta_inv", k))
        if not self.positive_domain and (np.any(self.pi_inv) or np.any(self.eta_inv)):
            raise DomainError("1/y policy terms require a positive state domain")
        if not self.name:
            object.__setattr__(self, "name", self.kind.value)


def evaluate_policy(policy: Policy, y) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(pi(y), eta(y))``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape[0] != policy.eta_const.shape[0]:
        raise DomainError(f"state has dimension {y.shape[0]}, policy expects {policy.eta_const.shape[0]}")
    pi = policy.pi_const + policy.pi_lin @ y
    eta = policy.eta_const + policy.eta_lin @ y
    if policy.positive_domain:
        if np.any(y <= 0.0):
            raise DomainError("state must be positive for this policy")
        yy = float(y[0])
        pi = pi + policy.pi_inv / yy
        eta = eta + policy.eta_inv / yy
    return pi, eta


def myopic_policy(model: MarketModel, prefs: Preferences) -> Policy:
    """``pi(y) = Sigma(y)^{-1} mu(y) / (1 - p)`` with zero risk premia."""
    scale = 1.0 / (1.0 - prefs.p)
    if isinstance(model, CirModel):
        st = model.sigma.T
        return Policy(
            kind=PolicyKind.MYOPIC,
            pi_const=scale * np.linalg.solve(st, model.nu1),
            pi_lin=np.zeros((model.n, 1)),
            pi_inv=scale * np.linalg.solve(st, model.nu0),
            eta_const=[0.0],
            eta_lin=[[0.0]],
            positive_domain=True,
        )
    lin = as_linear(model)
    S = lin.Sigma
    return Policy(
        kind=PolicyKind.MYOPIC,
        pi_const=scale * np.linalg.solve(S, lin.mu0),
        pi_lin=scale * np.linalg.solve(S, lin.mu1),
        eta_const=np.zeros(lin.k),
        eta_lin=np.zeros((lin.k, lin.k)),
    )


def long_run_policy(model: MarketModel, prefs: Preferences, solution) -> Policy:
    """``pi = Sigma^{-1}(mu + Upsilon grad v) / (1 - p)`` and ``eta = grad v``.

    ``solution`` provides ``v0`` and ``v1``: ``v = v0'y - y'v1 y / 2`` for linear
    models, ``v = v0 log y + v1 y`` for CIR.
    """
    scale = 1.0 / (1.0 - prefs.p)
    if isinstance(model, CirModel):
        v0, v1 = float(solution.v0), float(solution.v1)
        st = model.sigma.T
        ra = model.a * model.rho
        return Policy(
            kind=PolicyKind.LONG_RUN,
            pi_const=scale * np.linalg.solve(st, model.nu1 + ra * v1),
            pi_lin=np.zeros((model.n, 1)),
            pi_inv=scale * np.linalg.solve(st, model.nu0 + ra * v0),
            eta_const=[v1],
            eta_lin=[[0.0]],
            eta_inv=[v0],
            positive_domain=True,
        )
    lin = as_linear(model)
    v0 = np.atleast_1d(np.asarray(solution.v0, dtype=float))
    v1 = np.atleast_2d(np.asarray(solution.v1, dtype=float))
    S, U = lin.Sigma, lin.Ups
    return Policy(
        kind=PolicyKind.LONG_RUN,
        pi_const=scale * np.linalg.solve(S, lin.mu0 + U @ v0),
        pi_lin=scale * np.linalg.solve(S, lin.mu1 - U @ v1),
        eta_const=v0,
        eta_lin=-v1,
    )
