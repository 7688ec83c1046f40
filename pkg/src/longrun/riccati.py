"""Long-run solution of the multivariate linear-diffusion model.

With ``v(y) = v0'y - y'v1 y / 2`` the ergodic HJB equation splits into

* the algebraic Riccati equation
  ``v1 G v1 + v1 F + F'v1 - Q = 0`` with ``G = A - q Ups'Sigma^{-1}Ups``,
  ``F = b + q Ups'Sigma^{-1}mu1`` and ``Q = q mu1'Sigma^{-1}mu1``;
* the linear system ``(v1 G + F') v0 = p r1 - q (mu1' - v1 Ups') Sigma^{-1} mu0``;
* the growth rate ``lambda``.

The root we want is the stabilizing one: ``D = F + G v1`` has spectrum in the
open right half-plane, which makes the state ergodic under the myopic measure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import AssumptionViolation, BlowUp, NoStabilizingSolution, SingularSystem
from .model import Preferences, as_linear, ergodic_hjb_lhs

_COND_MAX = 1e14


@dataclass(frozen=True)
class ValueSolution:
    v0: np.ndarray
    v1: np.ndarray
    lam: float
    residual_v1: float
    residual_v0: float
    stabilizing_spectrum: np.ndarray
    condition_number: float
    method: str = "newton"

    def value(self, y) -> float:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return float(self.v0 @ y - 0.5 * y @ self.v1 @ y)

    def gradient(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return self.v0 - self.v1 @ y


@dataclass(frozen=True)
class _Terms:
    G: np.ndarray
    F: np.ndarray
    Q: np.ndarray
    Si_mu0: np.ndarray
    Si_mu1: np.ndarray
    Ups: np.ndarray
    A: np.ndarray


def _terms(model, prefs: Preferences) -> _Terms:
    lin = as_linear(model)
    q = prefs.q
    S = lin.Sigma
    U = lin.Ups
    Si_U = np.linalg.solve(S, U)
    Si_mu0 = np.linalg.solve(S, lin.mu0)
    Si_mu1 = np.linalg.solve(S, lin.mu1)
    G = lin.A - q * U.T @ Si_U
    F = lin.b + q * U.T @ Si_mu1
    Q = q * lin.mu1.T @ Si_mu1
    return _Terms(
        G=0.5 * (G + G.T), F=F, Q=0.5 * (Q + Q.T), Si_mu0=Si_mu0, Si_mu1=Si_mu1, Ups=U, A=lin.A
    )


def riccati_residual(v1, model, prefs: Preferences) -> np.ndarray:
    t = _terms(model, prefs)
    v1 = np.atleast_2d(v1)
    return v1 @ t.G @ v1 + v1 @ t.F + t.F.T @ v1 - t.Q


def closed_loop_matrix(v1, model, prefs: Preferences) -> np.ndarray:
    """Mean-reversion matrix ``D = F + G v1`` of the state under the myopic measure."""
    t = _terms(model, prefs)
    return t.F + t.G @ np.atleast_2d(v1)


def _stabilizing_start(t: _Terms) -> np.ndarray:
    k = t.F.shape[0]
    if np.all(np.linalg.eigvals(t.F).real > 0):
        return np.zeros((k, k))
    # F + c G has positive-definite symmetric part once c exceeds this bound
    L = np.linalg.cholesky(t.G)
    Li = np.linalg.inv(L)
    Fs = 0.5 * (t.F + t.F.T)
    c = max(0.0, -np.linalg.eigvalsh(Li @ Fs @ Li.T).min()) + 1.0
    return c * np.eye(k)


def _newton(t: _Terms, tol: float, max_iter: int) -> np.ndarray:
    X = _stabilizing_start(t)
    for _ in range(max_iter):
        D = t.F + t.G @ X
        # Kleinman step: X+ D + D' X+ = Q + X G X
        X_new = linalg.solve_continuous_lyapunov(D.T, t.Q + X @ t.G @ X)
        X_new = 0.5 * (X_new + X_new.T)
        step = np.linalg.norm(X_new - X)
        X = X_new
        if not np.all(np.isfinite(X)):
            break
        if step <= tol * (1.0 + np.linalg.norm(X)):
            return X
    raise NoStabilizingSolution("Newton iteration did not converge")


def _schur(t: _Terms, stable: bool = True) -> np.ndarray:
    # standard form A_c'X + X A_c - X G X + Q = 0 with A_c = -F
    Ac = -t.F
    H = np.block([[Ac, -t.G], [-t.Q, -Ac.T]])
    k = Ac.shape[0]
    _, Z, sdim = linalg.schur(H, output="real", sort="lhp" if stable else "rhp")
    if sdim != k:
        raise NoStabilizingSolution(f"Hamiltonian has {sdim} eigenvalues on the wanted side, expected {k}")
    U1, U2 = Z[:k, :k], Z[k:, :k]
    if np.linalg.cond(U1) > _COND_MAX:
        raise NoStabilizingSolution("invariant subspace is not a graph")
    X = np.linalg.solve(U1.T, U2.T).T
    return 0.5 * (X + X.T)


def _residual_ok(t: _Terms, X: np.ndarray) -> bool:
    R = X @ t.G @ X + X @ t.F + t.F.T @ X - t.Q
    return np.linalg.norm(R) < 1e-10 * (1.0 + np.linalg.norm(X))


def _spectrum_ok(t: _Terms, X: np.ndarray) -> bool:
    return bool(np.all(np.linalg.eigvals(t.F + t.G @ X).real > 0))


def solve_riccati(model, prefs: Preferences, *, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Stabilizing symmetric root ``v1`` of the algebraic Riccati equation (``p < 0``)."""
    if prefs.p >= 0:
        raise AssumptionViolation("matrix Riccati solver requires p < 0")
    t = _terms(model, prefs)
    if not np.all(np.linalg.eigvalsh(t.G) > 0):
        raise AssumptionViolation("A - q Ups'Sigma^-1 Ups is not positive definite")
    try:
        X = _newton(t, tol, max_iter)
        if _residual_ok(t, X) and _spectrum_ok(t, X):
            return X
    except (NoStabilizingSolution, linalg.LinAlgError, np.linalg.LinAlgError):
        pass
    X = _schur(t)
    # one Newton polish from the Schur root
    D = t.F + t.G @ X
    X = linalg.solve_continuous_lyapunov(D.T, t.Q + X @ t.G @ X)
    X = 0.5 * (X + X.T)
    if not (_residual_ok(t, X) and _spectrum_ok(t, X)):
        raise NoStabilizingSolution("no stabilizing Riccati root found")
    return X


def anti_stabilizing_riccati(model, prefs: Preferences) -> np.ndarray:
    """Riccati root whose closed-loop matrix has spectrum in the left half-plane."""
    return _schur(_terms(model, prefs), stable=False)


def solve_v0(v1, model, prefs: Preferences) -> np.ndarray:
    t = _terms(model, prefs)
    lin = as_linear(model)
    v1 = np.atleast_2d(v1)
    M = v1 @ t.G + t.F.T
    if np.linalg.cond(M) > _COND_MAX:
        raise SingularSystem("v0 system is numerically singular")
    rhs = prefs.p * lin.r1 - prefs.q * (lin.mu1.T @ t.Si_mu0 - v1 @ t.Ups.T @ t.Si_mu0)
    return np.linalg.solve(M, rhs)


def v0_residual(v0, v1, model, prefs: Preferences) -> np.ndarray:
    t = _terms(model, prefs)
    lin = as_linear(model)
    v1 = np.atleast_2d(v1)
    return (v1 @ t.G + t.F.T) @ v0 - prefs.p * lin.r1 + prefs.q * (
        lin.mu1.T @ t.Si_mu0 - v1 @ t.Ups.T @ t.Si_mu0
    )


def growth_rate(v0, v1, model, prefs: Preferences) -> float:
    t = _terms(model, prefs)
    lin = as_linear(model)
    q = prefs.q
    v0 = np.atleast_1d(v0)
    v1 = np.atleast_2d(v1)
    return float(
        prefs.p * lin.r0
        - 0.5 * q * lin.mu0 @ t.Si_mu0
        + 0.5 * v0 @ t.G @ v0
        - q * v0 @ t.Ups.T @ t.Si_mu0
        - 0.5 * np.trace(lin.A @ v1)
    )


def solve_linear(model, prefs: Preferences) -> ValueSolution:
    """Solve for ``(v0, v1, lambda)`` and collect diagnostics."""
    v1 = solve_riccati(model, prefs)
    v0 = solve_v0(v1, model, prefs)
    t = _terms(model, prefs)
    lam = growth_rate(v0, v1, model, prefs)
    D = t.F + t.G @ v1
    return ValueSolution(
        v0=v0,
        v1=v1,
        lam=lam,
        residual_v1=float(np.linalg.norm(riccati_residual(v1, model, prefs))),
        residual_v0=float(np.linalg.norm(v0_residual(v0, v1, model, prefs))),
        stabilizing_spectrum=np.linalg.eigvals(D),
        condition_number=float(np.linalg.cond(D)),
    )


def pde_residual(vsol, model, prefs: Preferences, y) -> float:
    """Absolute residual of the ergodic HJB equation at ``y`` for the quadratic value function."""
    v0 = np.atleast_1d(np.asarray(vsol.v0, dtype=float))
    v1 = np.atleast_2d(np.asarray(vsol.v1, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lhs = ergodic_hjb_lhs(model, prefs, y, v0 - v1 @ y, -v1)
    return abs(lhs - vsol.lam)


def differential_riccati_oracle(model, prefs: Preferences, T: float, steps: int = 1000) -> np.ndarray:
    """Quadratic coefficient of the finite-horizon value function at time-to-go ``T``.

    Integrates ``dV/dtau = -(V G V + V F + F'V - Q)`` from ``V(0) = 0`` with
    classical Runge-Kutta; as ``T`` grows the result approaches the stabilizing
    algebraic root.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if steps < 1000:
        raise ValueError("steps must be at least 1000")
    t = _terms(model, prefs)
    G, F, Q = t.G, t.F, t.Q

    def rhs(V):
        return -(V @ G @ V + V @ F + F.T @ V - Q)

    k = F.shape[0]
    V = np.zeros((k, k))
    h = T / steps
    for i in range(steps):
        k1 = rhs(V)
        k2 = rhs(V + 0.5 * h * k1)
        k3 = rhs(V + 0.5 * h * k2)
        k4 = rhs(V + h * k3)
        V = V + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(V)) or np.abs(V).max() > 1e12:
            raise BlowUp(f"Riccati flow blew up near tau = {(i + 1) * h:.6g}", time=(i + 1) * h)
    return 0.5 * (V + V.T)
