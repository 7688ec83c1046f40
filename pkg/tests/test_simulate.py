import math
import warnings

import numpy as np
import pytest
from scipy import stats

from longrun.closed_form import Measure, solve_cir, solve_ou_1d
from longrun.errors import ConfigError, DegenerateSample, DomainError
from longrun.horizon import finite_horizon_bounds, gaussian_exp_quad_moment, ou_hatp_law
from longrun.model import Policy, PolicyKind, Preferences, long_run_policy, myopic_policy
from longrun.simulate import (
    HeavyTailWarning,
    Scheme,
    SimConfig,
    block_rng,
    mc_estimate,
    sample_state_terminal,
    simulate_wealth_and_sdf,
    worker_count,
)

from conftest import calibration_model, cir_sample


@pytest.fixture
def ou_setup():
    m = calibration_model()
    prefs = Preferences(-1.0)
    return m, prefs, solve_ou_1d(m, prefs)


def cash_policy(n=1, k=1, positive=False):
    return Policy(PolicyKind.AFFINE_CUSTOM, np.zeros(n), np.zeros((n, k)), np.zeros(k), np.zeros((k, k)),
                  positive_domain=positive)


@pytest.mark.parametrize(
    "kw",
    [dict(n_paths=0), dict(dt=0.0), dict(dt=-1.0), dict(block_size=3), dict(block_size=0), dict(seed=-1)],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        SimConfig(**kw)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("LONGRUN_THREADS", "3")
    assert worker_count(SimConfig()) == 3
    assert worker_count(SimConfig(threads=2)) == 2
    monkeypatch.setenv("LONGRUN_THREADS", "many")
    with pytest.raises(ConfigError):
        worker_count(SimConfig())


def test_block_streams_are_independent_of_order():
    a = block_rng(7, 3).standard_normal(5)
    block_rng(7, 2).standard_normal(100)
    assert np.array_equal(a, block_rng(7, 3).standard_normal(5))
    assert not np.array_equal(a, block_rng(7, 4).standard_normal(5))


@pytest.mark.parametrize("measure", list(Measure))
def test_zero_horizon_returns_initial_state(ou_setup, measure):
    m, _, sol = ou_setup
    ys = sample_state_terminal(m, measure, 0.4, 0.0, SimConfig(n_paths=50), solution=sol)
    assert np.all(ys == 0.4)


def test_bad_inputs(ou_setup):
    m, _, sol = ou_setup
    with pytest.raises(DomainError):
        sample_state_terminal(m, Measure.PHYSICAL, 0.0, -1.0, SimConfig(n_paths=10))
    with pytest.raises(ValueError):
        sample_state_terminal(m, Measure.Q_OPTIMAL, 0.0, 1.0, SimConfig(n_paths=10))
    with pytest.raises(DomainError):
        sample_state_terminal(cir_sample(), Measure.PHYSICAL, 0.0, 1.0, SimConfig(n_paths=10))
    with pytest.raises(ConfigError):
        sample_state_terminal(cir_sample(), Measure.PHYSICAL, 0.1, 1.0, SimConfig(n_paths=10, antithetic=True))


@pytest.mark.parametrize("T", [1.0, 12.0, 120.0])
def test_ou_hatp_moments(ou_setup, T):
    m, _, sol = ou_setup
    law = ou_hatp_law(sol, m, 0.3, T)
    ys = sample_state_terminal(m, Measure.MYOPIC, 0.3, T, SimConfig(n_paths=100_000, seed=11), solution=sol)
    n = ys.size
    assert abs(ys.mean() - law.mean) < 4.0 * math.sqrt(law.variance / n)
    # variance of the sample variance is 2 s^4 / (n - 1) for Gaussian draws
    assert abs(ys.var(ddof=1) - law.variance) < 4.0 * law.variance * math.sqrt(2.0 / (n - 1))


def test_cir_mean_reverts_to_theta():
    m = cir_sample()
    cfg = SimConfig(n_paths=100_000, seed=5)
    for T, y0 in [(0.5, 0.3), (40.0, 0.3)]:
        ys = sample_state_terminal(m, Measure.PHYSICAL, y0, T, cfg)
        mean = m.theta + (y0 - m.theta) * math.exp(-m.b * T)
        assert np.all(ys >= 0.0)
        assert abs(ys.mean() - mean) < 4.0 * ys.std() / math.sqrt(ys.size)


@pytest.mark.parametrize("which", ["ou", "cir"])
def test_euler_matches_exact_transition(ou_setup, which):
    if which == "ou":
        m, _, sol = ou_setup
        y0, measure = 0.2, Measure.MYOPIC
    else:
        m = cir_sample()
        sol, y0, measure = solve_cir(m, Preferences(-2.0)), 0.12, Measure.PHYSICAL
    exact = sample_state_terminal(m, measure, y0, 2.0, SimConfig(n_paths=10_000, seed=1), solution=sol)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        euler = sample_state_terminal(
            m, measure, y0, 2.0, SimConfig(n_paths=10_000, seed=2, dt=1e-3, scheme=Scheme.EULER), solution=sol
        )
    assert stats.ks_2samp(exact, euler).pvalue > 1e-3


def test_cir_euler_warns_on_clamping():
    m = cir_sample()
    with pytest.warns(RuntimeWarning, match="clamped"):
        sample_state_terminal(m, Measure.PHYSICAL, 1e-4, 5.0, SimConfig(n_paths=4000, dt=0.5, scheme="euler"))


@pytest.mark.parametrize("threads", [1, 2, 4])
def test_draws_do_not_depend_on_thread_count(ou_setup, threads):
    m, prefs, sol = ou_setup
    ref = SimConfig(n_paths=5000, seed=3, block_size=512, threads=1)
    cfg = SimConfig(n_paths=5000, seed=3, block_size=512, threads=threads)
    a = sample_state_terminal(m, Measure.PHYSICAL, 0.0, 3.0, ref)
    b = sample_state_terminal(m, Measure.PHYSICAL, 0.0, 3.0, cfg)
    assert np.array_equal(a, b)
    pol = long_run_policy(m, prefs, sol)
    wa = simulate_wealth_and_sdf(m, pol, prefs, 0.0, 2.0, SimConfig(n_paths=3000, seed=3, block_size=256, threads=1))
    wb = simulate_wealth_and_sdf(m, pol, prefs, 0.0, 2.0, SimConfig(n_paths=3000, seed=3, block_size=256, threads=threads))
    assert np.array_equal(wa.log_wealth, wb.log_wealth)
    assert np.array_equal(wa.log_sdf, wb.log_sdf)


def test_antithetic_pairs(ou_setup):
    m, _, _ = ou_setup
    ys = sample_state_terminal(m, Measure.PHYSICAL, 0.0, 1.0, SimConfig(n_paths=1000, seed=0, antithetic=True, block_size=1000))
    assert abs(ys.mean()) < 1e-12


def test_mc_estimate_basics():
    est = mc_estimate(np.full(20, 2.5))
    assert est.mean == 2.5 and est.std_error == 0.0 and est.ci95 == (2.5, 2.5)
    with pytest.raises(DegenerateSample):
        mc_estimate([1.0])
    with pytest.raises(DegenerateSample):
        mc_estimate(np.ones(5))
    est = mc_estimate(np.arange(4.0), transform=np.square)
    assert est.mean == pytest.approx(3.5)
    assert est.std_error == pytest.approx(np.std([0, 1, 4, 9], ddof=1) / 2.0)


def test_mc_estimate_clt_coverage():
    rng = np.random.default_rng(123)
    est = mc_estimate(rng.exponential(2.0, 1_000_000))
    assert est.within(2.0, 4.0)
    assert est.std_error == pytest.approx(2.0 / 1000.0, rel=0.01)
    assert est.ci95[0] < est.mean < est.ci95[1]


def test_heavy_tail_warning():
    draws = np.r_[np.ones(99), 1000.0]
    with pytest.warns(HeavyTailWarning):
        est = mc_estimate(draws, tail_check=True)
    assert est.max_share > 0.9
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        mc_estimate(np.ones(100) + np.arange(100) * 1e-3, tail_check=True)


def test_exp_minus_v_matches_gaussian_moment(ou_setup):
    m, _, sol = ou_setup
    law = ou_hatp_law(sol, m, 0.1, 24.0)
    ys = sample_state_terminal(m, Measure.MYOPIC, 0.1, 24.0, SimConfig(n_paths=100_000, seed=9), solution=sol)
    est = mc_estimate(ys, lambda y: np.exp(-sol.value(y)))
    assert est.within(gaussian_exp_quad_moment(law, 0.5 * sol.v1, -sol.v0), 3.0)


@pytest.mark.parametrize("which", ["ou", "cir"])
def test_cash_only_wealth_grows_at_short_rate(ou_setup, which):
    if which == "ou":
        m, prefs, _ = ou_setup
        pol, y0 = cash_policy(), 0.0
    else:
        m, prefs = cir_sample(), Preferences(-2.0)
        pol, y0 = cash_policy(positive=True), m.theta
    T = 5.0
    cfg = SimConfig(n_paths=200, dt=0.01, seed=1)
    ws = simulate_wealth_and_sdf(m, pol, prefs, y0, T, cfg)
    if which == "ou":
        assert np.allclose(ws.log_wealth, m.r0 * T, rtol=1e-12, atol=1e-14)
    else:
        # r = r0 + r1 y varies, but the sign of the path integral is fixed
        assert np.all(ws.log_wealth > m.r0 * T)
        assert np.all(np.isfinite(ws.log_wealth))


def test_wealth_rejects_coarse_step(ou_setup):
    m, prefs, sol = ou_setup
    with pytest.raises(ConfigError):
        simulate_wealth_and_sdf(m, long_run_policy(m, prefs, sol), prefs, 0.0, 1.0, SimConfig(dt=0.5))
    with pytest.raises(DomainError):
        simulate_wealth_and_sdf(m, long_run_policy(m, prefs, sol), prefs, [0.0, 1.0], 1.0, SimConfig(n_paths=10))


@pytest.mark.parametrize("which", ["ou", "cir"])
def test_budget_constraint(ou_setup, which):
    if which == "ou":
        m, prefs, sol = ou_setup
        y0 = 0.0
    else:
        m, prefs = cir_sample(), Preferences(-2.0)
        sol, y0 = solve_cir(m, prefs), m.theta
    lr = long_run_policy(m, prefs, sol)
    cfg = SimConfig(n_paths=20_000, dt=0.05, seed=4)
    for pol in (lr, myopic_policy(m, prefs)):
        ws = simulate_wealth_and_sdf(m, pol, prefs, y0, 10.0, cfg, eta_policy=lr)
        est = mc_estimate(ws.log_wealth + ws.log_sdf, np.exp)
        assert est.mean <= 1.0 + 3.0 * est.std_error


@pytest.mark.slow
def test_long_run_primal_matches_closed_form(ou_setup):
    m, prefs, sol = ou_setup
    T = 60.0
    ws = simulate_wealth_and_sdf(m, long_run_policy(m, prefs, sol), prefs, 0.0, T, SimConfig(n_paths=100_000, dt=0.1, seed=21))
    est = mc_estimate(ws.log_wealth, lambda lx: np.exp(prefs.p * lx))
    bounds = finite_horizon_bounds(m, sol, prefs, 0.0, T)
    assert est.within(bounds.primal, 4.0)
