"""Monte Carlo engines used as statistical oracles.

Randomness is counter based: paths are grouped into fixed-size blocks and
block ``j`` draws from a Philox stream keyed by ``seed`` with counter offset
``j``.  A path's draws therefore depend only on ``(seed, path_index)``, and
results are bit-identical for any number of worker threads.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .closed_form import Measure, measure_dynamics
from .errors import ConfigError, DegenerateSample, DomainError, NonFiniteState
from .model import CirModel, KimOmbergModel, LinearDiffusionModel, Policy, Preferences, as_linear

_ABORT_LIMIT = 1e-3


class Scheme(str, Enum):
    EXACT = "exact"
    EULER = "euler"


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    dt: float = 0.1
    seed: int = 0
    scheme: Scheme = Scheme.EXACT
    antithetic: bool = False
    block_size: int = 8192
    threads: int | None = None

    def __post_init__(self):
        if int(self.n_paths) < 1:
            raise ConfigError("n_paths must be at least 1")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if int(self.block_size) < 2 or int(self.block_size) % 2:
            raise ConfigError("block_size must be an even integer >= 2")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "scheme", Scheme(self.scheme))


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n: int
    ci95: tuple
    max_share: float = 0.0

    def within(self, value: float, k: float = 3.0) -> bool:
        return abs(self.mean - value) <= k * self.std_error


class HeavyTailWarning(RuntimeWarning):
    """A single path dominates a Monte Carlo mean."""


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Generator for path block ``block``; disjoint Philox counter ranges per block."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, int(block), 0]))


def worker_count(cfg: SimConfig | None = None) -> int:
    if cfg is not None and cfg.threads:
        return max(1, int(cfg.threads))
    env = os.environ.get("LONGRUN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"LONGRUN_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def _run_blocks(cfg: SimConfig, fn):
    """Apply ``fn(rng, size)`` to every block and stack results in path order."""
    n, B = int(cfg.n_paths), int(cfg.block_size)
    sizes = [min(B, n - s) for s in range(0, n, B)]
    jobs = list(enumerate(sizes))

    def run(job):
        j, size = job
        return fn(block_rng(cfg.seed, j), size)

    workers = min(worker_count(cfg), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(job) for job in jobs]
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate([p[i] for p in parts]) for i in range(len(parts[0])))
    return np.concatenate(parts)


def _normals(rng: np.random.Generator, shape, antithetic: bool) -> np.ndarray:
    """Standard normals; with ``antithetic`` the second half of axis 0 mirrors the first."""
    if not antithetic:
        return rng.standard_normal(shape)
    n = shape[0]
    half = rng.standard_normal((n - n // 2,) + tuple(shape[1:]))
    return np.concatenate([half, -half[: n // 2]])


# ---------------------------------------------------------------------------
# State sampling
# ---------------------------------------------------------------------------


def _dynamics(model, measure, solution):
    measure = Measure(measure)
    if measure is not Measure.PHYSICAL and solution is None:
        raise ValueError(f"sampling under {measure.value} needs the long-run solution")
    if measure is Measure.PHYSICAL:
        if isinstance(model, KimOmbergModel):
            return 0.0, model.b
        if isinstance(model, CirModel):
            return model.b * model.theta, model.b
        raise TypeError("state sampling supports KimOmbergModel and CirModel")
    dyn = measure_dynamics(model, solution, measure)
    return dyn.intercept, dyn.speed


def sample_state_terminal(model, measure, y0: float, T: float, cfg: SimConfig, solution=None) -> np.ndarray:
    """Draws of ``Y_T`` given ``Y_0 = y0`` under ``P``, the myopic measure or ``Q``.

    Exact scheme: Gaussian transition (OU) or scaled noncentral chi-square
    (CIR).  Euler scheme: step ``cfg.dt``; CIR uses full truncation and warns
    with the number of clamped steps.
    """
    if T < 0:
        raise DomainError("T must be non-negative")
    c0, c1 = _dynamics(model, measure, solution)
    cir = isinstance(model, CirModel)
    if cir and y0 <= 0:
        raise DomainError("CIR state must be positive")
    if T == 0:
        return np.full(int(cfg.n_paths), float(y0))
    if cfg.scheme is Scheme.EULER:
        return _euler_state(model, c0, c1, y0, T, cfg)
    if cir:
        if cfg.antithetic:
            raise ConfigError("antithetic sampling is not available for the noncentral chi-square sampler")
        a2 = model.a**2
        e = math.exp(-c1 * T)
        scale = a2 * (1.0 - e) / (4.0 * c1) if c1 != 0 else a2 * T / 4.0
        df = 4.0 * c0 / a2
        nc = y0 * e / scale
        return _run_blocks(cfg, lambda rng, n: scale * rng.noncentral_chisquare(df, nc, size=n))
    if c1 != 0:
        e = math.exp(-c1 * T)
        mean = c0 / c1 + (y0 - c0 / c1) * e
        var = -math.expm1(-2.0 * c1 * T) / (2.0 * c1)
    else:
        mean, var = y0 + c0 * T, T
    sd = math.sqrt(var)
    return _run_blocks(cfg, lambda rng, n: mean + sd * _normals(rng, (n,), cfg.antithetic))


def _euler_state(model, c0, c1, y0, T, cfg):
    steps = max(1, int(math.ceil(T / cfg.dt)))
    h = T / steps
    cir = isinstance(model, CirModel)
    clamps = []

    def run(rng, n):
        y = np.full(n, float(y0))
        count = 0
        for _ in range(steps):
            dw = math.sqrt(h) * _normals(rng, (n,), cfg.antithetic)
            if cir:
                yp = np.maximum(y, 0.0)
                count += int(np.count_nonzero(y < 0))
                y = y + (c0 - c1 * yp) * h + model.a * np.sqrt(yp) * dw
            else:
                y = y + (c0 - c1 * y) * h + dw
        clamps.append(count)
        return np.maximum(y, 0.0) if cir else y

    out = _run_blocks(cfg, run)
    if cir and sum(clamps):
        warnings.warn(f"full truncation clamped {sum(clamps)} negative states", RuntimeWarning, stacklevel=2)
    return out


# ---------------------------------------------------------------------------
# Wealth and stochastic discount factor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WealthSample:
    log_wealth: np.ndarray
    log_sdf: np.ndarray
    aborted: int

    @property
    def wealth(self) -> np.ndarray:
        return np.exp(self.log_wealth)

    @property
    def sdf(self) -> np.ndarray:
        return np.exp(self.log_sdf)


def _rho_bar(rho: np.ndarray) -> np.ndarray:
    """Square root of ``I - rho rho'`` (symmetric, eigenvalues clipped at 0)."""
    n = rho.shape[0]
    w, V = np.linalg.eigh(np.eye(n) - rho @ rho.T)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _affine(policy: Policy, y: np.ndarray):
    """Vectorised policy: ``y`` has shape ``(m, k)``; returns ``pi (m, n)`` and ``eta (m, k)``."""
    pi = policy.pi_const + y @ policy.pi_lin.T
    eta = policy.eta_const + y @ policy.eta_lin.T
    if policy.positive_domain:
        inv = 1.0 / np.maximum(y[:, :1], 1e-300)
        pi = pi + inv * policy.pi_inv
        eta = eta + inv * policy.eta_inv
    return pi, eta


def _cir_implicit_step(y, dW, model: CirModel, h: float) -> np.ndarray:
    # z = sqrt(y): dz = (c/z - b z / 2) dt + a dW / 2 with c = (4 b theta - a^2) / 8;
    # solving the implicit step is a quadratic with one positive root
    c = (4.0 * model.b * model.theta - model.a**2) / 8.0
    u = np.sqrt(y) + 0.5 * model.a * dW
    k = 1.0 + 0.5 * model.b * h
    z = (u + np.sqrt(u * u + 4.0 * k * c * h)) / (2.0 * k)
    return z * z


def simulate_wealth_and_sdf(
    model, policy: Policy, prefs: Preferences, y0, T: float, cfg: SimConfig, eta_policy: Policy | None = None
) -> WealthSample:
    """Joint Euler scheme for ``(Y, log X, log M)``.

    ``policy`` supplies the portfolio; the risk premia come from ``eta_policy``
    when given, else from ``policy``.  Shocks use ``dZ = rho dW + rho_bar dB``.
    """
    if cfg.dt > 0.25:
        raise ConfigError("wealth simulation needs dt <= 0.25")
    eta_src = eta_policy or policy
    cir = isinstance(model, CirModel)
    if cir:
        n, k = model.n, 1
        rho = model.rho.reshape(n, 1)
        sig = model.sigma
        a_mat = np.array([[model.a]])
    else:
        lin: LinearDiffusionModel = as_linear(model)
        n, k = lin.n, lin.k
        rho, sig, a_mat = lin.rho, lin.sigma, lin.a
    rbar = _rho_bar(rho)
    implicit = cir and model.feller_holds()
    steps = max(1, int(math.ceil(T / cfg.dt)))
    h = T / steps
    sh = math.sqrt(h)
    y_init = np.atleast_1d(np.asarray(y0, dtype=float))
    if y_init.shape != (k,):
        raise DomainError(f"initial state must have dimension {k}")
    if cir and y_init[0] <= 0:
        raise DomainError("CIR state must be positive")

    def run(rng, m):
        y = np.tile(y_init, (m, 1))
        lx = np.zeros(m)
        lm = np.zeros(m)
        for _ in range(steps):
            dW = sh * _normals(rng, (m, k), cfg.antithetic)
            dB = sh * _normals(rng, (m, n), cfg.antithetic)
            dZ = dW @ rho.T + dB @ rbar.T
            pi, _ = _affine(policy, y)
            _, eta = _affine(eta_src, y)
            if cir:
                yy = np.maximum(y[:, 0], 1e-300)
                sq = np.sqrt(yy)[:, None]
                r = model.r0 + model.r1 * yy
                # mu = sigma (nu0 + nu1 y), volatility sqrt(y) sigma
                mu = (model.nu0 + yy[:, None] * model.nu1) @ sig.T
                vol_z = sq * (pi @ sig)  # pi' sigma(y)
                lam_z = -(model.nu0 + yy[:, None] * model.nu1) / sq - model.a * sq * eta * model.rho
                w_vec = model.a * sq * eta  # a(y)' eta
            else:
                r = lin.r0 + y @ lin.r1
                mu = lin.mu0 + y @ lin.mu1.T
                vol_z = pi @ sig
                # -(mu + Ups eta)' Sigma^{-1} sigma = -(sigma^{-1} mu + rho a' eta)'
                lam_z = -np.linalg.solve(sig, (mu + eta @ lin.Ups.T).T).T
                w_vec = eta @ a_mat
                dy = -(y @ lin.b.T) * h + dW @ a_mat.T
            pim = np.einsum("ij,ij->i", pi, mu)
            lx += (r + pim - 0.5 * np.einsum("ij,ij->i", vol_z, vol_z)) * h + np.einsum("ij,ij->i", vol_z, dZ)
            qv = (
                np.einsum("ij,ij->i", lam_z, lam_z)
                + np.einsum("ij,ij->i", w_vec, w_vec)
                + 2.0 * np.einsum("ij,ij->i", lam_z @ rho, w_vec)
            )
            lm += (-r - 0.5 * qv) * h + np.einsum("ij,ij->i", lam_z, dZ) + np.einsum("ij,ij->i", w_vec, dW)
            if cir:
                y = _cir_implicit_step(y, dW, model, h) if implicit else np.maximum(
                    y + model.b * (model.theta - y) * h + model.a * np.sqrt(np.maximum(y, 0.0)) * dW, 0.0
                )
            else:
                y = y + dy
        return lx, lm

    lx, lm = _run_blocks(cfg, run)
    bad = ~(np.isfinite(lx) & np.isfinite(lm))
    aborted = int(bad.sum())
    if aborted > _ABORT_LIMIT * len(lx):
        raise NonFiniteState(f"{aborted} of {len(lx)} paths produced non-finite values")
    return WealthSample(lx[~bad], lm[~bad], aborted)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def mc_estimate(draws, transform=None, *, tail_check: bool = False) -> McEstimate:
    """Sample mean, standard error and 95% interval of ``transform(draws)``.

    With ``tail_check`` the largest single contribution to the sum is reported
    and a :class:`HeavyTailWarning` is issued when it exceeds 10%.
    """
    x = np.asarray(draws, dtype=float)
    if transform is not None:
        x = np.asarray(transform(x), dtype=float)
    x = x.reshape(-1)
    n = x.size
    if n < 2:
        raise DegenerateSample("need at least two draws")
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1))
    if var == 0.0 and n < 10:
        raise DegenerateSample("zero sample variance with fewer than ten draws")
    se = math.sqrt(var / n)
    total = float(np.sum(np.abs(x)))
    share = float(np.max(np.abs(x)) / total) if total > 0 else 0.0
    if tail_check and share > 0.1:
        warnings.warn(
            f"one path carries {share:.1%} of the estimate; the Monte Carlo mean is unreliable",
            HeavyTailWarning,
            stacklevel=2,
        )
    return McEstimate(mean, se, n, (mean - 1.96 * se, mean + 1.96 * se), share)
