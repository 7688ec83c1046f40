import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import longrun.horizon as hz
from longrun.closed_form import solve_ou_1d
from longrun.errors import NoBracket, StepTooCoarse
from longrun.horizon import (
    GaussianLaw,
    break_even_horizon,
    cel_curve,
    expected_power_utility_affine,
    finite_horizon_bounds,
    gaussian_exp_quad_moment,
    ou_hatp_law,
    power_moment_blow_up_time,
)
from longrun.model import KimOmbergModel, Policy, PolicyKind, Preferences, long_run_policy, myopic_policy
from longrun.optimality import check_ou_general

from conftest import calibration_model, random_ou_model, unit_kappa_model


def test_gaussian_moment_trivial():
    law = GaussianLaw(0.3, 2.0)
    assert gaussian_exp_quad_moment(law, 0.0, 0.0) == 1.0
    assert gaussian_exp_quad_moment(law, 0.0, 0.7) == pytest.approx(math.exp(0.3 * 0.7 + 0.5 * 2.0 * 0.49))
    assert gaussian_exp_quad_moment(law, 1.0 / 4.0, 0.0) == math.inf


@settings(max_examples=40, deadline=None)
@given(mean=st.floats(-2, 2), var=st.floats(0.05, 3), A=st.floats(-1, 0.1), B=st.floats(-1, 1))
def test_gaussian_moment_against_hermite_quadrature(mean, var, A, B):
    law = GaussianLaw(mean, var)
    x, w = np.polynomial.hermite_e.hermegauss(120)
    z = mean + math.sqrt(var) * x
    ref = float(w @ np.exp(A * z * z + B * z)) / math.sqrt(2 * math.pi)
    assert gaussian_exp_quad_moment(law, A, B) == pytest.approx(ref, rel=1e-8)


def test_hatp_law_limits():
    m, prefs = calibration_model(), Preferences(-1.0)
    sol = solve_ou_1d(m, prefs)
    law0 = ou_hatp_law(sol, m, 0.4, 0.0)
    assert (law0.mean, law0.variance) == (0.4, 0.0)
    inf = ou_hatp_law(sol, m, 0.4, 1e6)
    assert inf.mean == pytest.approx(sol.hat_mean)
    assert inf.variance == pytest.approx(1.0 / (2.0 * sol.hat_kappa))


def test_unit_kappa_speed():
    m, prefs = unit_kappa_model(5.0, p=-4.0), Preferences(-4.0)
    sol = solve_ou_1d(m, prefs)
    assert sol.hat_kappa == pytest.approx(m.b / math.sqrt(sol.delta), rel=1e-12)


def test_flat_value_bounds_coincide():
    m = KimOmbergModel(sigma=[[0.1]], nu0=[0.2], nu1=[0.0], b=0.1, rho=[-0.5], r0=0.001)
    prefs = Preferences(-2.0)
    sol = solve_ou_1d(m, prefs)
    primal, dual = finite_horizon_bounds(m, sol, prefs, 0.3, 50.0)
    assert primal == pytest.approx(math.exp(sol.lam * 50.0), rel=1e-14)
    assert dual == pytest.approx(primal, rel=1e-14)


def test_primal_infinite_past_blow_up():
    m, prefs = unit_kappa_model(9.0, b=0.1), Preferences(-16.0)
    sol = solve_ou_1d(m, prefs)
    t_hat = 15.0 * math.log(1.5)
    assert math.isfinite(finite_horizon_bounds(m, sol, prefs, 0.0, 0.999 * t_hat).log_primal)
    assert finite_horizon_bounds(m, sol, prefs, 0.0, 1.001 * t_hat).primal == math.inf


def test_zero_policy_is_riskless():
    m, prefs = calibration_model(), Preferences(-3.0)
    zero = Policy(PolicyKind.AFFINE_CUSTOM, [0.0], [[0.0]], [0.0], [[0.0]])
    res = expected_power_utility_affine(m, zero, prefs, 0.5, 120.0)
    assert res.log_value == pytest.approx(-3.0 * m.r0 * 120.0, rel=1e-12)


def _optimal_ou_instances(count, seed=7):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        m = random_ou_model(rng, n=int(rng.integers(1, 3)))
        prefs = Preferences(-rng.uniform(0.2, 8.0))
        sol = solve_ou_1d(m, prefs)
        if check_ou_general(sol, m, prefs).holds:
            out.append((m, prefs, sol, float(rng.normal())))
    return out


@pytest.mark.parametrize("case", _optimal_ou_instances(20), ids=lambda c: f"p{c[1].p:.2f}")
def test_feynman_kac_equals_gaussian_identity(case):
    m, prefs, sol, y0 = case
    pol = long_run_policy(m, prefs, sol)
    for T in (1.0, 12.0, 60.0, 120.0, 240.0):
        ode = expected_power_utility_affine(m, pol, prefs, y0, T)
        ref = finite_horizon_bounds(m, sol, prefs, y0, T)
        assert abs(math.expm1(ode.log_value - ref.log_primal)) < 1e-6
        # utility ordering: (1/p) E[X^p] <= (1/p) dual
        assert ref.log_dual <= ref.log_primal + 1e-9


@pytest.mark.parametrize("delta", [5.0, 9.0, 16.0])
def test_ode_blow_up_matches_t_hat(delta):
    m, prefs = unit_kappa_model(delta), Preferences(-16.0)
    pol = long_run_policy(m, prefs, solve_ou_1d(m, prefs))
    s = math.sqrt(delta)
    t_hat = -(s / 0.2) * math.log((s * (s - 1) - 2) / (s * (s - 1)))
    assert power_moment_blow_up_time(m, pol, prefs, 10 * t_hat) == pytest.approx(t_hat, rel=1e-2)
    assert expected_power_utility_affine(m, pol, prefs, 0.0, 1.01 * t_hat).value == math.inf


def test_step_too_coarse(monkeypatch):
    m = calibration_model(b=5.0)
    prefs = Preferences(-1.0)
    monkeypatch.setattr(hz, "_LIMITER", 1e9)
    with pytest.raises(StepTooCoarse):
        expected_power_utility_affine(m, myopic_policy(m, prefs), prefs, 1.0, 400.0, steps=400)


@pytest.mark.parametrize("p, lo, hi", [(-1.0, 96.0, 120.0), (-4.0, 252.0, 300.0)])
def test_break_even(p, lo, hi):
    assert lo <= break_even_horizon(calibration_model(), Preferences(p)) <= hi


def test_break_even_coinciding_policies():
    m = KimOmbergModel(sigma=[[0.1]], nu0=[0.2], nu1=[0.0], b=0.1, rho=[-0.5])
    assert break_even_horizon(m, Preferences(-2.0)) == 1.0


def test_no_bracket():
    with pytest.raises(NoBracket):
        break_even_horizon(calibration_model(b=0.002), Preferences(-1.0))


@pytest.fixture(scope="module")
def calibration_curves():
    m = calibration_model()
    hs = np.arange(1.0, 361.0)
    out = {}
    for p in (-1.0, -4.0):
        prefs = Preferences(p)
        sol = solve_ou_1d(m, prefs)
        out[p] = (
            cel_curve(m, sol, prefs, 0.0, hs, long_run_policy(m, prefs, sol)),
            cel_curve(m, sol, prefs, 0.0, hs, myopic_policy(m, prefs)),
        )
    return out


def test_curves_nonnegative_and_annualized(calibration_curves):
    for lr, my in calibration_curves.values():
        for c in (lr, my):
            assert np.all(c.cel_bound >= -1e-12)
            np.testing.assert_allclose(c.cel_bound_annual, 12 * c.cel_bound)


def test_short_horizon_myopic_prevails(calibration_curves):
    for lr, my in calibration_curves.values():
        assert lr.cel_bound[0] > my.cel_bound[0]


def test_losses_larger_for_higher_risk_aversion(calibration_curves):
    for a, b in zip(calibration_curves[-1.0], calibration_curves[-4.0]):
        assert np.all(b.cel_bound > a.cel_bound)


def test_long_run_loss_decays_like_one_over_t(calibration_curves):
    lr = calibration_curves[-1.0][0]
    tl = lr.horizons * lr.cel_bound
    assert np.all(np.diff(tl[120:]) > -1e-12) and tl[-1] < 0.05


def test_rows_schema(calibration_curves):
    row = next(calibration_curves[-1.0][0].rows())
    assert list(row) == ["T_months", "T_years", "primal_log", "dual_log", "cel_monthly", "cel_annual_pct", "policy"]
    assert row["cel_annual_pct"] == pytest.approx(1200 * row["cel_monthly"])


def test_blow_up_marked_in_curve():
    m, prefs = unit_kappa_model(9.0), Preferences(-16.0)
    sol = solve_ou_1d(m, prefs)
    c = cel_curve(m, sol, prefs, 0.0, np.arange(1.0, 13.0), long_run_policy(m, prefs, sol))
    assert c.blow_up_at == pytest.approx(15 * math.log(1.5), rel=1e-6)
    assert np.all(np.isinf(c.cel_bound[6:])) and np.all(np.isfinite(c.cel_bound[:6]))
