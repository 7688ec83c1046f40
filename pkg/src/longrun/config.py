"""JSON run configuration.

A configuration file holds a model, preferences and optional command
settings::

    {
      "model": {"kind": "kim_omberg", "sigma": 0.0436, "nu0": 0.0788,
                "kappa": 0.8944, "b": 0.0226, "rho": -0.935, "r0": 0.0014},
      "preferences": {"p": -1},
      "y0": 0.0,
      "horizons": {"start": 1, "stop": 360, "step": 1},
      "eigen1d": {"half_width": null, "points": 2000, "tol": 1e-6},
      "simulation": {"paths": 100000, "dt": 0.1, "seed": 0, "horizon": 60}
    }

Model kinds are ``linear``, ``kim_omberg`` and ``cir``.  Unknown keys are
rejected everywhere.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import CirModel, KimOmbergModel, LinearDiffusionModel, Preferences

_MODEL_KEYS = {
    "linear": ({"mu0", "mu1", "sigma", "b", "a", "rho"}, {"r0", "r1"}),
    "kim_omberg": ({"sigma", "nu0", "b", "rho"}, {"nu1", "kappa", "r0"}),
    "cir": ({"sigma", "nu0", "nu1", "b", "theta", "a", "rho"}, {"r0", "r1"}),
}
_TOP_KEYS = {"model", "preferences", "y0", "horizons", "eigen1d", "simulation"}
_HORIZON_KEYS = {"start", "stop", "step"}
_EIGEN_KEYS = {"half_width", "step", "upper", "points", "eps", "tol", "max_doublings"}
_SIM_KEYS = {"paths", "dt", "seed", "horizon", "antithetic", "block_size"}


@dataclass(frozen=True)
class RunConfig:
    model: object
    prefs: Preferences
    y0: float | None = None
    horizons: np.ndarray = field(default_factory=lambda: np.arange(1.0, 361.0))
    eigen1d: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)


def _check_keys(section: dict, allowed: set, where: str, required: set = frozenset()):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    missing = set(required) - set(section)
    if missing:
        raise ConfigError(f"missing key(s) in {where}: {', '.join(sorted(missing))}")


def build_model(spec: dict):
    """Construct a model from its JSON description."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("model must be an object with a 'kind'")
    kind = spec["kind"]
    if kind not in _MODEL_KEYS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {sorted(_MODEL_KEYS)}")
    required, optional = _MODEL_KEYS[kind]
    body = {k: v for k, v in spec.items() if k != "kind"}
    _check_keys(body, required | optional, f"model ({kind})", required)
    if kind == "linear":
        return LinearDiffusionModel(**body)
    if kind == "cir":
        return CirModel(**body)
    if ("nu1" in body) == ("kappa" in body):
        raise ConfigError("kim_omberg model needs exactly one of 'nu1' or 'kappa'")
    if "kappa" in body:
        return KimOmbergModel.from_kappa(
            body["sigma"], body["nu0"], body["kappa"], body["b"], body["rho"], body.get("r0", 0.0)
        )
    return KimOmbergModel(**body)


def _horizons(spec) -> np.ndarray:
    if isinstance(spec, list):
        hs = np.asarray(spec, dtype=float)
    else:
        _check_keys(spec, _HORIZON_KEYS, "horizons", {"stop"})
        start, stop, step = float(spec.get("start", 1)), float(spec["stop"]), float(spec.get("step", 1))
        if step <= 0:
            raise ConfigError("horizons.step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        hs = start + step * np.arange(max(n, 0))
    if hs.size == 0 or np.any(hs <= 0) or np.any(np.diff(hs) <= 0):
        raise ConfigError("horizons must be positive and strictly increasing")
    return hs


def parse_config(data: dict) -> RunConfig:
    _check_keys(data, _TOP_KEYS, "configuration", {"model", "preferences"})
    _check_keys(data["preferences"], {"p"}, "preferences", {"p"})
    model = build_model(data["model"])
    prefs = Preferences(data["preferences"]["p"])
    eig = data.get("eigen1d", {})
    _check_keys(eig, _EIGEN_KEYS, "eigen1d")
    sim = data.get("simulation", {})
    _check_keys(sim, _SIM_KEYS, "simulation")
    y0 = data.get("y0")
    return RunConfig(
        model=model,
        prefs=prefs,
        y0=None if y0 is None else float(y0),
        horizons=_horizons(data["horizons"]) if "horizons" in data else np.arange(1.0, 361.0),
        eigen1d=dict(eig),
        simulation=dict(sim),
    )


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc
    try:
        return parse_config(data)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def default_y0(model):
    """Stationary mean of the state under the physical measure."""
    if isinstance(model, CirModel):
        return model.theta
    if isinstance(model, LinearDiffusionModel):
        return np.zeros(model.k)
    return 0.0
