import math

import numpy as np
import pytest

from longrun.model import CirModel, KimOmbergModel, LinearDiffusionModel, Preferences

CALIBRATION = dict(sigma=0.0436, nu0=0.0788, kappa=0.8944, b=0.0226, rho=-0.935, r0=0.0014)


def calibration_model(**overrides) -> KimOmbergModel:
    c = {**CALIBRATION, **overrides}
    return KimOmbergModel.from_kappa(c["sigma"], c["nu0"], c["kappa"], c["b"], c["rho"], c["r0"])


def cir_sample() -> CirModel:
    return CirModel(sigma=0.2, nu0=0.1, nu1=0.3, b=0.5, theta=0.1, a=0.2, rho=-0.5, r0=0.01, r1=0.02)


def unit_kappa_model(delta: float, p: float = -16.0, b: float = 0.1, nu0: float = 0.0788) -> KimOmbergModel:
    """``nu1 = -rho`` instance with ``q rho'rho = 1 - 1/delta``."""
    q = Preferences(p).q
    rho = -math.sqrt((1.0 - 1.0 / delta) / q)
    return KimOmbergModel.from_kappa(0.0436, nu0, 1.0, b, rho, 0.0014)


def random_linear_model(rng: np.random.Generator, n: int, k: int) -> LinearDiffusionModel:
    """Well-posed random instance: stable ``b``, ``|rho| <= 0.9``, triangular volatilities."""
    sigma = np.tril(rng.normal(0.0, 0.05, (n, n)), -1) + np.diag(rng.uniform(0.1, 0.3, n))
    a = np.tril(rng.normal(0.0, 0.2, (k, k)), -1) + np.diag(rng.uniform(0.5, 1.5, k))
    b = np.tril(rng.normal(0.0, 0.1, (k, k)), -1) + np.diag(rng.uniform(0.2, 1.0, k))
    rho = rng.normal(size=(n, k))
    rho *= rng.uniform(0.1, 0.9) / np.linalg.norm(rho, 2)
    return LinearDiffusionModel(
        mu0=rng.normal(0.0, 0.02, n),
        mu1=rng.normal(0.0, 0.05, (n, k)),
        sigma=sigma,
        b=b,
        a=a,
        rho=rho,
        r0=rng.uniform(0.0, 0.005),
        r1=rng.normal(0.0, 0.002, k),
    )


def random_ou_model(rng: np.random.Generator, n: int = 1) -> KimOmbergModel:
    rho = rng.normal(size=n)
    rho *= rng.uniform(0.05, 0.95) / np.linalg.norm(rho)
    return KimOmbergModel(
        sigma=np.diag(rng.uniform(0.02, 0.3, n)),
        nu0=rng.normal(0.0, 0.1, n),
        nu1=rng.normal(0.0, 0.5, n),
        b=rng.uniform(0.01, 0.5),
        rho=rho,
        r0=rng.uniform(0.0, 0.005),
    )


@pytest.fixture
def calib():
    return calibration_model()


@pytest.fixture
def cir():
    return cir_sample()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
