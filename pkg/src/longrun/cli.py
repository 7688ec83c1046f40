"""Command-line front end.

Exit codes
----------
0   success (``check``: sufficient condition holds)
1   ``calibration-demo`` threshold outside ``[-12.6, -12.2]``
2   invalid configuration, model or assumption violation
3   solver failure
10  ``check``: no sufficient condition applies
11  ``check``: failure of long-run optimality is proven
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .closed_form import Measure, measure_dynamics, solve_cir, solve_ou_1d
from .eigen1d import (
    Eigen1dProblem,
    GridConfig,
    cel_decay_constant,
    feller_tightness_test,
    principal_eigenvalue,
)
from .errors import (
    AssumptionViolation,
    ConfigError,
    DomainError,
    Inconclusive,
    LongRunError,
    NoBracket,
    RegionViolation,
    SingularDelta,
)
from .horizon import break_even_horizon, cel_curve, finite_horizon_bounds
from .model import (
    CirModel,
    KimOmbergModel,
    Preferences,
    ergodic_hjb_lhs,
    long_run_policy,
    myopic_policy,
)
from .optimality import (
    OptimalityVerdict,
    VerdictStatus,
    check_cir,
    check_ou_general,
    check_ou_kappa,
    check_rho_region,
    kappa_threshold_p,
    validate_assumptions,
)
from .riccati import closed_loop_matrix, pde_residual, solve_linear
from .simulate import Scheme, SimConfig, mc_estimate, sample_state_terminal, simulate_wealth_and_sdf

EXIT_OK = 0
EXIT_DEMO_FAIL = 1
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_NOT_IMPLIED = 10
EXIT_FAILURE = 11

CALIBRATION = dict(sigma=0.0436, nu0=0.0788, kappa=0.8944, b=0.0226, rho=-0.935, r0=0.0014)
THRESHOLD_WINDOW = (-12.6, -12.2)
CSV_COLUMNS = ("T_months", "T_years", "primal_log", "dual_log", "cel_monthly", "cel_annual_pct", "policy")

_INVALID = (ConfigError, DomainError, AssumptionViolation, SingularDelta)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def fmt_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def to_json(obj, indent: int = 0) -> str:
    """JSON text with every float written to 17 significant digits.

    Non-finite floats become the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
    """
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{_json_str(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + to_json(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, np.ndarray):
        return to_json(obj.tolist(), indent)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return fmt_float(x) if math.isfinite(x) else _json_str(fmt_float(x))
    if isinstance(obj, complex):
        return to_json([obj.real, obj.imag])
    return _json_str(str(obj))


def _json_str(s: str) -> str:
    out = s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
    return f'"{out}"'


def curves_csv(curves) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for curve in curves:
        for row in curve.rows():
            w.writerow([fmt_float(row[c]) if c != "policy" else row[c] for c in CSV_COLUMNS])
    return buf.getvalue()


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _note(msg: str):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _solve(model, prefs):
    if isinstance(model, KimOmbergModel):
        return solve_ou_1d(model, prefs)
    if isinstance(model, CirModel):
        return solve_cir(model, prefs)
    return solve_linear(model, prefs)


def _y0(run, args):
    y0 = getattr(args, "y0", None)
    if y0 is None:
        y0 = run.y0
    if y0 is None:
        return cfgmod.default_y0(run.model)
    return y0


def _policy_dict(policy):
    d = dict(pi_const=policy.pi_const, pi_lin=policy.pi_lin, eta_const=policy.eta_const, eta_lin=policy.eta_lin)
    if policy.positive_domain:
        d.update(pi_inv=policy.pi_inv, eta_inv=policy.eta_inv)
    return d


def _measures(model, sol):
    out = {}
    for m in Measure:
        dyn = measure_dynamics(model, sol, m)
        out[m.value] = dict(intercept=dyn.intercept, speed=dyn.speed, level=dyn.level)
    return out


def _residuals(model, prefs, sol) -> dict:
    if isinstance(model, CirModel):
        ys = model.theta * np.array([0.25, 1.0, 4.0])
        res = [
            abs(ergodic_hjb_lhs(model, prefs, y, [sol.v0 / y + sol.v1], [[-sol.v0 / y**2]]) - sol.lam) for y in ys
        ]
        return {"pde_max": max(res)}
    if isinstance(model, KimOmbergModel):
        ys = np.array([-1.0, 0.0, 1.0]) / math.sqrt(2.0 * max(model.b, 1e-12))
        return {"pde_max": max(pde_residual(sol, model, prefs, y) for y in ys)}
    k = model.k
    pts = [np.zeros(k), np.ones(k), -np.ones(k)]
    return {
        "riccati": sol.residual_v1,
        "v0_system": sol.residual_v0,
        "pde_max": max(pde_residual(sol, model, prefs, y) for y in pts),
    }


def _horizons(run, args) -> np.ndarray:
    if args.horizons is None:
        return run.horizons
    parts = [float(s) for s in args.horizons.split(":")]
    if len(parts) not in (2, 3):
        raise ConfigError("--horizons must be START:STOP or START:STOP:STEP")
    spec = dict(start=parts[0], stop=parts[1])
    if len(parts) == 3:
        spec["step"] = parts[2]
    return cfgmod._horizons(spec)


def _sim_config(run, args) -> SimConfig:
    sim = run.simulation
    return SimConfig(
        n_paths=int(args.paths if args.paths is not None else sim.get("paths", 100_000)),
        dt=float(args.dt if args.dt is not None else sim.get("dt", 0.1)),
        seed=int(args.seed if args.seed is not None else sim.get("seed", 0)),
        scheme=Scheme(getattr(args, "scheme", None) or "exact"),
        antithetic=bool(getattr(args, "antithetic", False) or sim.get("antithetic", False)),
        block_size=int(sim.get("block_size", 8192)),
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_solve(run, args) -> int:
    model, prefs = run.model, run.prefs
    sol = _solve(model, prefs)
    out = {"model": type(model).__name__, "p": prefs.p, "q": prefs.q}
    if isinstance(model, (KimOmbergModel, CirModel)):
        out.update(delta=sol.delta, Theta=sol.Theta)
        if isinstance(model, CirModel):
            out["Lambda"] = sol.Lambda
    out.update(v0=sol.v0, v1=sol.v1, **{"lambda": sol.lam, "lambda_annual": 12.0 * sol.lam})
    out["residuals"] = _residuals(model, prefs, sol)
    out["policy"] = _policy_dict(long_run_policy(model, prefs, sol))
    if isinstance(model, (KimOmbergModel, CirModel)):
        out["measures"] = _measures(model, sol)
    else:
        out["closed_loop_matrix"] = closed_loop_matrix(sol.v1, model, prefs)
        out["closed_loop_spectrum"] = [complex(z) for z in sol.stabilizing_spectrum]
    _emit(to_json(out), args.out)
    return EXIT_OK


def _combine(verdicts: dict) -> VerdictStatus:
    statuses = [v.status for v in verdicts.values()]
    if VerdictStatus.FAILURE in statuses:
        return VerdictStatus.FAILURE
    if VerdictStatus.HOLDS in statuses:
        return VerdictStatus.HOLDS
    return VerdictStatus.NOT_IMPLIED


def check_report(model, prefs) -> dict:
    """Assumption checks and every applicable optimality verdict."""
    checks = validate_assumptions(model, prefs)
    verdicts: dict[str, OptimalityVerdict] = {}
    if isinstance(model, KimOmbergModel):
        sol = solve_ou_1d(model, prefs)
        verdicts["general_ou"] = check_ou_general(sol, model, prefs)
        kap = model.kappa
        q_rr = prefs.q * model.rho_sq
        if kap is not None and prefs.p < 0 and 0.0 <= q_rr < 1.0:
            verdicts["kappa"] = check_ou_kappa(kap, q_rr, b=model.b, nu0_zero=not np.any(model.nu0))
        verdicts["rho_region"] = check_rho_region(prefs, model.rho_sq)
    elif isinstance(model, CirModel):
        verdicts["cir"] = check_cir(solve_cir(model, prefs), model, prefs)
        verdicts["rho_region"] = check_rho_region(prefs, model.rho_sq)
    else:
        solve_linear(model, prefs)
        verdicts["linear"] = OptimalityVerdict(
            VerdictStatus.NOT_IMPLIED, {}, note="no closed-form sufficient condition for multi-state models"
        )
    status = _combine(verdicts)
    blow = [v.blow_up_time for v in verdicts.values() if v.blow_up_time is not None]
    return {
        "status": status.value,
        "blow_up_time": blow[0] if blow else None,
        "verdicts": {k: v.to_dict() for k, v in verdicts.items()},
        "assumptions": [dict(name=c.name, passed=c.passed, detail=c.detail) for c in checks],
    }


def render_table(report: dict) -> str:
    rows = [("check", "status", "note")]
    for name, v in report["verdicts"].items():
        rows.append((name, v["status"], v.get("note", "")))
    for c in report["assumptions"]:
        rows.append((c["name"], "passed" if c["passed"] else "FAILED", c["detail"]))
    widths = [max(len(str(r[i])) for r in rows) for i in range(2)]
    lines = [f"{r[0]:<{widths[0]}}  {r[1]:<{widths[1]}}  {r[2]}".rstrip() for r in rows]
    lines.insert(1, "-" * max(len(line) for line in lines))
    lines.append(f"overall: {report['status']}")
    if report["blow_up_time"] is not None:
        lines.append(f"blow-up horizon: {fmt_float(report['blow_up_time'])} months")
    return "\n".join(lines)


def cmd_check(run, args) -> int:
    report = check_report(run.model, run.prefs)
    _emit(to_json(report), args.out)
    _note(render_table(report))
    return {
        VerdictStatus.HOLDS.value: EXIT_OK,
        VerdictStatus.NOT_IMPLIED.value: EXIT_NOT_IMPLIED,
        VerdictStatus.FAILURE.value: EXIT_FAILURE,
    }[report["status"]]


def cmd_eigen1d(run, args) -> int:
    model, prefs = run.model, run.prefs
    if not isinstance(model, (KimOmbergModel, CirModel)):
        raise ConfigError("eigen1d needs a single-state model (kim_omberg or cir)")
    opts = dict(run.eigen1d)
    for key in ("half_width", "points", "tol"):
        val = getattr(args, key)
        if val is not None:
            opts[key] = val
    grid = GridConfig(**opts)
    problem = Eigen1dProblem.from_model(model, prefs)
    sol = principal_eigenvalue(problem, grid)
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("y", "phi", "v"))
        for y, ph, v in zip(sol.grid, sol.phi, sol.v):
            w.writerow((fmt_float(y), fmt_float(ph), fmt_float(v)))
        _emit(buf.getvalue(), args.out)
        return EXIT_OK
    out = {
        "lambda_c": sol.lambda_c,
        "convergence": [dict(domain=s, step=h, lambda_c=lam) for s, h, lam in sol.convergence_history],
        "grid_points": len(sol.grid),
    }
    try:
        out["lambda_closed_form"] = _solve(model, prefs).lam
    except LongRunError as exc:
        out["lambda_closed_form"] = None
        out["closed_form_note"] = str(exc)
    try:
        out["tight"] = feller_tightness_test(problem, sol)
    except Inconclusive as exc:
        out["tight"] = None
        out["tightness_note"] = str(exc)
    try:
        out["cel_constant"] = cel_decay_constant(problem, sol, prefs)
    except RegionViolation as exc:
        out["cel_constant"] = None
        out["cel_note"] = str(exc)
    _emit(to_json(out), args.out)
    return EXIT_OK


def _cel_curves(model, prefs, y0, hs, sim_cfg=None):
    sol = _solve(model, prefs)
    return [
        cel_curve(model, sol, prefs, y0, hs, long_run_policy(model, prefs, sol), cfg=sim_cfg),
        cel_curve(model, sol, prefs, y0, hs, myopic_policy(model, prefs), cfg=sim_cfg),
    ]


def cmd_cel(run, args) -> int:
    model, prefs = run.model, run.prefs
    hs = _horizons(run, args)
    y0 = _y0(run, args)
    if isinstance(model, CirModel):
        if args.paths is None and "paths" not in run.simulation:
            raise ConfigError("CIR curves are Monte Carlo estimates: pass --paths")
        curves = _cel_curves(model, prefs, y0, hs, _sim_config(run, args))
    elif isinstance(model, KimOmbergModel):
        curves = _cel_curves(model, prefs, y0, hs)
        try:
            t_star = break_even_horizon(model, prefs, y0)
            _note(f"break-even: T* ≈ {t_star:.0f} months ({t_star / 12.0:.1f} years)")
        except NoBracket as exc:
            _note(f"break-even: {exc}")
    else:
        raise ConfigError("cel needs a kim_omberg or cir model")
    if args.format == "json":
        _emit(to_json([list(c.rows()) for c in curves]), args.out)
    else:
        _emit(curves_csv(curves), args.out)
    return EXIT_OK


def cmd_simulate(run, args) -> int:
    model, prefs = run.model, run.prefs
    cfg = _sim_config(run, args)
    T = float(args.horizon if args.horizon is not None else run.simulation.get("horizon", 60.0))
    y0 = _y0(run, args)
    sol = _solve(model, prefs)
    policy = long_run_policy(model, prefs, sol) if args.policy == "long_run" else myopic_policy(model, prefs)
    out = {"horizon": T, "paths": cfg.n_paths, "seed": cfg.seed, "policy": args.policy}
    if isinstance(model, (KimOmbergModel, CirModel)):
        ys = sample_state_terminal(model, args.measure, y0, T, cfg, solution=sol)
        est = mc_estimate(ys)
        out["state"] = dict(measure=args.measure, mean=est.mean, std_error=est.std_error, ci95=est.ci95)
    wealth_cfg = cfg if cfg.dt <= 0.25 else SimConfig(cfg.n_paths, 0.25, cfg.seed, cfg.scheme, cfg.antithetic)
    w = simulate_wealth_and_sdf(model, policy, prefs, y0, T, wealth_cfg, eta_policy=long_run_policy(model, prefs, sol))
    pm = mc_estimate(prefs.p * w.log_wealth, np.exp, tail_check=True)
    xm = mc_estimate(w.log_wealth + w.log_sdf, np.exp)
    out["power_moment"] = dict(mean=pm.mean, std_error=pm.std_error, ci95=pm.ci95, max_share=pm.max_share)
    out["wealth_times_sdf"] = dict(mean=xm.mean, std_error=xm.std_error, ci95=xm.ci95)
    out["aborted_paths"] = w.aborted
    if isinstance(model, KimOmbergModel) and args.policy == "long_run":
        out["power_moment_closed_form"] = finite_horizon_bounds(model, sol, prefs, y0, T).primal
    _emit(to_json(out), args.out)
    return EXIT_OK


def calibration_model() -> KimOmbergModel:
    c = CALIBRATION
    return KimOmbergModel.from_kappa(c["sigma"], c["nu0"], c["kappa"], c["b"], c["rho"], c["r0"])


def cmd_calibration_demo(args) -> int:
    model = calibration_model()
    threshold = kappa_threshold_p(CALIBRATION["kappa"], model.rho_sq)
    hs = _horizons(cfgmod.RunConfig(model, Preferences(-1.0)), args)
    lines = [
        f"optimality threshold: p > {threshold:.4f} (relative risk aversion < {1.0 - threshold:.4f})",
    ]
    curves = []
    for p in (-1.0, -4.0):
        prefs = Preferences(p)
        sol = solve_ou_1d(model, prefs)
        lines.append(
            f"p = {p:g}: v0 = {fmt_float(sol.v0)}, v1 = {fmt_float(sol.v1)}, "
            f"lambda = {fmt_float(sol.lam)} per month"
        )
        try:
            t_star = break_even_horizon(model, prefs, 0.0)
            lines.append(f"p = {p:g}: break-even T* ≈ {t_star:.1f} months ({t_star / 12.0:.2f} years)")
        except NoBracket as exc:
            lines.append(f"p = {p:g}: {exc}")
        for c in _cel_curves(model, prefs, 0.0, hs):
            curves.append(_renamed(c, f"{c.policy_name}_p{int(p)}"))
    out = args.out or "calibration_cel.csv"
    Path(out).write_text(curves_csv(curves))
    lines.append(f"wrote {len(curves)} curves x {len(hs)} horizons to {out}")
    print("\n".join(lines))
    lo, hi = THRESHOLD_WINDOW
    return EXIT_OK if lo <= threshold <= hi else EXIT_DEMO_FAIL


def _renamed(curve, name):
    return replace(curve, policy_name=name)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="model configuration (JSON)")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"), default=None)
    common.add_argument("--seed", type=int)
    common.add_argument("--paths", type=int)
    common.add_argument("--dt", type=float)
    common.add_argument("--y0", type=float, help="initial state (single-state models)")
    common.add_argument("--horizons", help="START:STOP[:STEP] in months")

    parser = argparse.ArgumentParser(prog="longrun", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="long-run value function, growth rate and policy")
    sub.add_parser("check", parents=[common], help="optimality verdicts")
    p_eig = sub.add_parser("eigen1d", parents=[common], help="principal eigenvalue by finite differences")
    p_eig.add_argument("--half-width", dest="half_width", type=float)
    p_eig.add_argument("--points", type=int)
    p_eig.add_argument("--tol", type=float)
    sub.add_parser("cel", parents=[common], help="certainty-equivalent loss curves")
    p_sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo estimates")
    p_sim.add_argument("--measure", choices=[m.value for m in Measure], default="P")
    p_sim.add_argument("--policy", choices=("long_run", "myopic"), default="long_run")
    p_sim.add_argument("--horizon", type=float, help="months")
    p_sim.add_argument("--scheme", choices=[s.value for s in Scheme])
    p_sim.add_argument("--antithetic", action="store_true")
    sub.add_parser("calibration-demo", parents=[common], help="reproduce the monthly calibration study")
    return parser


_COMMANDS = {
    "solve": cmd_solve,
    "check": cmd_check,
    "eigen1d": cmd_eigen1d,
    "cel": cmd_cel,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "calibration-demo":
            return cmd_calibration_demo(args)
        if not args.config:
            raise ConfigError(f"{args.command} needs --config FILE")
        run = cfgmod.load_config(args.config)
        return _COMMANDS[args.command](run, args)
    except _INVALID as exc:
        _note(f"error: {exc}")
        return EXIT_INVALID
    except (LongRunError, ArithmeticError, np.linalg.LinAlgError) as exc:
        _note(f"solver failure: {exc}")
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
