"""Simulation configuration: parsing, validation, presets, and builders.

Configs are YAML (JSON is accepted, being a YAML subset).  All keys are
optional except where no preset supplies them; unknown keys are rejected and
every violation is reported at once.  See the README for the key reference.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy.special import erf

from .integrators import DEFAULT_CFL_SAFETY, DEFAULT_FP_MAX_ITER, DEFAULT_FP_TOL
from .kernels import DEFAULT_QUADRATURE_ORDER, kernel_from_dict
from .mesh import Mesh1D, build_graded_mesh, build_uniform_mesh
from .scheme import KernelSet, Model
from .state import State, project_initial_data

INTEGRATORS = ("rk4", "implicit_euler")
IMPLICIT_SOLVERS = ("newton", "picard")

_TOP_KEYS = {
    "preset",
    "domain",
    "mesh",
    "eps",
    "nu",
    "kernels",
    "initial",
    "integrator",
    "cfl_safety",
    "fp_tol",
    "fp_max_iter",
    "implicit_solver",
    "implicit_dt",
    "t_final",
    "dt_report",
    "quadrature_order",
    "study",
    "stationary",
    "output",
    "threads",
}
_KERNEL_SLOTS = ("w11", "w12", "w21", "w22")
# keys that do not change the computed numbers
_HASH_EXCLUDED = ("output", "threads")


class ConfigError(ValueError):
    """Invalid configuration; ``violations`` lists every problem found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


# ------------------------------------------------------------------ presets

_STUDY_LADDER = [2.0**-k for k in range(4, 8)]

_GAUSS_KERNELS = {
    "w11": {"family": "gaussian", "amplitude": 1.0, "exponent": 4, "scale": 0.1},
    "w22": {"family": "gaussian", "amplitude": 1.0, "exponent": 4, "scale": 0.1},
    "w12": {"family": "gaussian", "amplitude": 1.0, "exponent": 2, "scale": 0.1},
    "w21": {"family": "gaussian", "amplitude": -1.0, "exponent": 2, "scale": 0.1},
}


def _diffusive(rho, eta):
    return {
        "domain": {"a": 0.0, "b": 17.0},
        "mesh": {"dx": 2.0**-9},
        "eps": 0.1,
        "nu": 0.5,
        "kernels": {k: {"family": "zero"} for k in _KERNEL_SLOTS},
        "initial": {"rho": rho, "eta": eta},
        "integrator": "implicit_euler",
        "implicit_dt": 0.01,
        "t_final": 2.0,
        "dt_report": 0.05,
        "study": {"grids": list(_STUDY_LADDER), "benchmark": 2.0**-9},
    }


def _gaussian(eps):
    cap = {"kind": "parabola_cap", "lo": 6.5, "hi": 9.5, "mass": 1.0}
    return {
        "domain": {"a": 0.0, "b": 9.0},
        "mesh": {"dx": 2.0**-9},
        "eps": eps,
        "nu": 0.4,
        "kernels": copy.deepcopy(_GAUSS_KERNELS),
        "initial": {"rho": dict(cap), "eta": dict(cap)},
        "integrator": "implicit_euler",
        "implicit_dt": 0.01,
        "t_final": 2.0,
        "dt_report": 0.05,
        "study": {"grids": list(_STUDY_LADDER), "benchmark": 2.0**-9},
    }


def _newtonian(cross_sign, m_rho, m_eta):
    return {
        "domain": {"a": 0.0, "b": 5.0},
        "mesh": {"dx": 2.0**-8},
        "eps": 0.0,
        "nu": 0.05,
        "kernels": {
            "w11": {"family": "quadratic"},
            "w22": {"family": "quadratic"},
            "w12": {"family": "abs", "sign": 1},
            "w21": {"family": "abs", "sign": cross_sign},
        },
        "initial": {
            "rho": {"kind": "parabola_cap", "lo": 3.0, "hi": 5.0, "mass": m_rho},
            "eta": {"kind": "parabola_cap", "lo": 3.0, "hi": 5.0, "mass": m_eta},
        },
        "integrator": "implicit_euler",
        "implicit_dt": 0.05,
        "t_final": 20.0,
        "dt_report": 1.0,
        "stationary": {"tol": 1e-8, "t_max": 1e5, "dt_max": 8.0},
    }


def _full(preset: dict) -> dict:
    out = copy.deepcopy(preset)
    out["mesh"] = {"dx": 2.0**-10}
    out["t_final"] = 10.0
    out["study"]["benchmark"] = 2.0**-10
    return out


PRESETS = {
    "diffusive_symmetric": _diffusive(
        {"kind": "indicator", "lo": 7.0, "hi": 10.0},
        {"kind": "indicator", "lo": 7.0, "hi": 10.0},
    ),
    "diffusive_asymmetric": _diffusive(
        {"kind": "indicator", "lo": 5.0, "hi": 7.0},
        {"kind": "indicator", "lo": 10.0, "hi": 12.0},
    ),
    "gaussian_eps01": _gaussian(0.1),
    "gaussian_eps05": _gaussian(0.5),
    "newtonian_attrep": _newtonian(-1, 1.0, 1.0),
    "newtonian_attratt": _newtonian(1, 0.6, 0.1),
}
for _name in ("diffusive_symmetric", "diffusive_asymmetric", "gaussian_eps01", "gaussian_eps05"):
    PRESETS[_name + "_full"] = _full(PRESETS[_name])

DEFAULTS = {
    "preset": None,
    "mesh": {},
    "kernels": {k: {"family": "zero"} for k in _KERNEL_SLOTS},
    "integrator": "rk4",
    "cfl_safety": DEFAULT_CFL_SAFETY,
    "fp_tol": DEFAULT_FP_TOL,
    "fp_max_iter": DEFAULT_FP_MAX_ITER,
    "implicit_solver": "newton",
    "implicit_dt": None,
    "quadrature_order": DEFAULT_QUADRATURE_ORDER,
    "study": {},
    "stationary": {"tol": 1e-8, "t_max": 1000.0},
    "output": {"dir": "out", "svg": True},
    "threads": 1,
}


# ------------------------------------------------------------ initial data


def _parabola_cap_integral(lo, hi, x0, x1):
    """Integral of ``(x - lo)(hi - x)`` over ``[x0, x1]``."""

    def prim(x):
        return -(x**3) / 3 + (lo + hi) * x**2 / 2 - lo * hi * x

    return prim(x1) - prim(x0)


@dataclass
class InitialProfile:
    """A resolved initial density together with its kinks/jumps."""

    func: object
    breakpoints: tuple
    info: dict = field(default_factory=dict)


def build_profile(spec: dict, a: float, b: float) -> InitialProfile:
    """Turn an initial-data mapping into a callable on ``[a, b]``.

    ``mass`` (when given) is the mass on ``[a, b]`` after truncation to the
    domain; the resulting constant is reported in ``info``.
    """
    kind = spec["kind"]
    if kind == "indicator":
        lo, hi, height = spec["lo"], spec["hi"], spec.get("height", 1.0)
        return InitialProfile(
            lambda x: np.where((x >= lo) & (x < hi), height, 0.0), (lo, hi), {"height": height}
        )
    if kind == "parabola_cap":
        lo, hi = spec["lo"], spec["hi"]
        x0, x1 = max(lo, a), min(hi, b)
        if "mass" in spec:
            c = spec["mass"] / _parabola_cap_integral(lo, hi, x0, x1)
        else:
            c = spec.get("c", 1.0)
        return InitialProfile(
            lambda x: c * np.maximum((x - lo) * (hi - x), 0.0), (lo, hi), {"c": float(c)}
        )
    if kind == "gaussian":
        center, width = spec["center"], spec["width"]
        floor = spec.get("floor", 0.0)
        mass = spec.get("mass", 1.0)
        z = lambda x: (x - center) / (math.sqrt(2.0) * width)  # noqa: E731
        bump = width * math.sqrt(math.pi / 2.0) * (erf(z(b)) - erf(z(a)))
        amp = (mass - floor * (b - a)) / bump
        return InitialProfile(
            lambda x: floor + amp * np.exp(-(((x - center) / width) ** 2) / 2.0),
            (),
            {"amplitude": float(amp)},
        )
    if kind == "constant":
        v = spec["value"]
        return InitialProfile(lambda x: np.full_like(x, v, dtype=float), (), {})
    if kind == "tabulated":
        xs = np.asarray(spec["points"], dtype=float)
        ys = np.asarray(spec["values"], dtype=float)
        return InitialProfile(lambda x: np.interp(x, xs, ys), tuple(xs), {})
    raise ValueError(f"unknown initial-data kind {kind!r}")


_INITIAL_KEYS = {
    "indicator": ({"lo", "hi"}, {"height"}),
    "parabola_cap": ({"lo", "hi"}, {"mass", "c"}),
    "gaussian": ({"center", "width"}, {"floor", "mass"}),
    "constant": ({"value"}, set()),
    "tabulated": ({"points", "values"}, set()),
}


def _check_initial(name, spec, errors):
    if not isinstance(spec, dict):
        errors.append(f"initial.{name}: expected a mapping")
        return
    kind = spec.get("kind")
    if kind not in _INITIAL_KEYS:
        errors.append(f"initial.{name}.kind: unknown kind {kind!r}; choose from {sorted(_INITIAL_KEYS)}")
        return
    required, optional = _INITIAL_KEYS[kind]
    for key in sorted(required - set(spec)):
        errors.append(f"initial.{name}.{key}: missing")
    for key in sorted(set(spec) - required - optional - {"kind"}):
        errors.append(f"initial.{name}.{key}: unknown key")
    if kind in ("indicator", "parabola_cap") and not (required - set(spec)):
        if not spec["lo"] < spec["hi"]:
            errors.append(f"initial.{name}: need lo < hi")
    if kind == "parabola_cap" and "mass" in spec and "c" in spec:
        errors.append(f"initial.{name}: give mass or c, not both")
    if kind == "gaussian" and "width" in spec and not spec["width"] > 0:
        errors.append(f"initial.{name}.width: must be positive")


# ------------------------------------------------------------------ config


@dataclass
class SimulationConfig:
    """Fully resolved configuration of one simulation or study."""

    raw: dict

    # convenient typed views --------------------------------------------
    @property
    def preset(self):
        return self.raw.get("preset")

    @property
    def a(self) -> float:
        return float(self.raw["domain"]["a"])

    @property
    def b(self) -> float:
        return float(self.raw["domain"]["b"])

    @property
    def eps(self) -> float:
        return float(self.raw["eps"])

    @property
    def nu(self) -> float:
        return float(self.raw["nu"])

    @property
    def t_final(self) -> float:
        return float(self.raw["t_final"])

    @property
    def dt_report(self) -> float:
        return float(self.raw["dt_report"])

    @property
    def integrator(self) -> str:
        return self.raw["integrator"]

    @property
    def threads(self) -> int:
        return int(self.raw.get("threads", 1))

    @property
    def output(self) -> dict:
        return self.raw.get("output", {})

    @property
    def kernels(self) -> KernelSet:
        k = self.raw["kernels"]
        return KernelSet(*(kernel_from_dict(k[s]) for s in _KERNEL_SLOTS))

    # builders -----------------------------------------------------------
    def build_mesh(self, dx: float | None = None) -> Mesh1D:
        """Mesh from the config, or a uniform mesh of spacing ``dx``."""
        a, b = self.a, self.b
        if dx is not None:
            return build_uniform_mesh(a, b, _cells_for(dx, a, b))
        m = self.raw["mesh"]
        if "widths" in m:
            return build_graded_mesh(a, b, m["widths"])
        if "cells" in m:
            return build_uniform_mesh(a, b, int(m["cells"]))
        return build_uniform_mesh(a, b, _cells_for(m["dx"], a, b))

    def build_model(self, mesh: Mesh1D) -> Model:
        return Model(mesh, self.eps, self.nu, self.kernels, int(self.raw["quadrature_order"]))

    def profiles(self) -> dict:
        return {
            name: build_profile(self.raw["initial"][name], self.a, self.b)
            for name in ("rho", "eta")
        }

    def initial_state(self, mesh: Mesh1D) -> State:
        p = self.profiles()
        cuts = tuple(sorted(set(p["rho"].breakpoints) | set(p["eta"].breakpoints)))
        return project_initial_data(
            p["rho"].func, p["eta"].func, mesh, int(self.raw["quadrature_order"]), cuts
        )

    def integrator_options(self) -> dict:
        r = self.raw
        if self.integrator == "rk4":
            return {"cfl_safety": float(r["cfl_safety"])}
        return {
            "implicit_dt": None if r["implicit_dt"] is None else float(r["implicit_dt"]),
            "solver": r["implicit_solver"],
            "fp_tol": float(r["fp_tol"]),
            "fp_max_iter": int(r["fp_max_iter"]),
        }

    # identity -----------------------------------------------------------
    def hashed_part(self) -> dict:
        return {k: v for k, v in self.raw.items() if k not in _HASH_EXCLUDED}

    def config_hash(self) -> str:
        blob = json.dumps(self.hashed_part(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def with_overrides(self, **overrides) -> SimulationConfig:
        """Copy with top-level keys replaced (``None`` values are ignored)."""
        raw = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            if key == "cells":
                raw["mesh"] = {"cells": int(value)}
            elif key == "dx":
                raw["mesh"] = {"dx": float(value)}
            else:
                raw[key] = value
        return resolve_config(raw)


def _cells_for(dx: float, a: float, b: float) -> int:
    n = (b - a) / dx
    if not (n >= 2 and abs(n - round(n)) < 1e-9 * max(1.0, n)):
        raise ValueError(f"dx={dx} does not divide the domain [{a}, {b}] into >= 2 cells")
    return int(round(n))


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if key in ("mesh", "initial"):
            out[key] = copy.deepcopy(value)
        elif isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _validate(raw: dict) -> list[str]:
    errors = []
    for key in sorted(set(raw) - _TOP_KEYS):
        errors.append(f"{key}: unknown key")
    for key in ("domain", "eps", "nu", "initial", "t_final", "dt_report"):
        if raw.get(key) is None:
            errors.append(f"{key}: missing")

    dom = raw.get("domain")
    if isinstance(dom, dict):
        extra = set(dom) - {"a", "b"}
        if extra:
            errors.append(f"domain: unknown keys {sorted(extra)}")
        if not {"a", "b"} <= set(dom):
            errors.append("domain: need both a and b")
        elif not _is_number(dom["a"]) or not _is_number(dom["b"]) or not dom["a"] < dom["b"]:
            errors.append("domain: need numbers with a < b")
    elif dom is not None:
        errors.append("domain: expected a mapping {a, b}")

    mesh = raw.get("mesh", {})
    if not isinstance(mesh, dict):
        errors.append("mesh: expected a mapping")
    else:
        given = [k for k in ("cells", "dx", "widths") if k in mesh]
        extra = set(mesh) - {"cells", "dx", "widths"}
        if extra:
            errors.append(f"mesh: unknown keys {sorted(extra)}")
        if len(given) != 1:
            errors.append("mesh: give exactly one of cells, dx, widths")
        elif "cells" in mesh and not (isinstance(mesh["cells"], int) and mesh["cells"] >= 2):
            errors.append("mesh.cells: must be an integer >= 2")
        elif "dx" in mesh and not (_is_number(mesh["dx"]) and mesh["dx"] > 0):
            errors.append("mesh.dx: must be positive")
        elif "dx" in mesh and isinstance(dom, dict) and not errors:
            try:
                _cells_for(mesh["dx"], dom["a"], dom["b"])
            except ValueError as exc:
                errors.append(f"mesh.dx: {exc}")

    for key in ("eps", "nu"):
        v = raw.get(key)
        if v is not None and not (_is_number(v) and v >= 0):
            errors.append(f"{key}: must be a nonnegative number, got {v!r}")
    for key in ("t_final", "dt_report", "cfl_safety", "fp_tol"):
        v = raw.get(key)
        if v is not None and not (_is_number(v) and v > 0):
            errors.append(f"{key}: must be positive, got {v!r}")
    v = raw.get("implicit_dt")
    if v is not None and not (_is_number(v) and v > 0):
        errors.append(f"implicit_dt: must be positive or null, got {v!r}")
    for key in ("fp_max_iter", "quadrature_order", "threads"):
        v = raw.get(key)
        if v is not None and not (isinstance(v, int) and v >= 1):
            errors.append(f"{key}: must be a positive integer, got {v!r}")
    if raw.get("integrator") not in INTEGRATORS:
        errors.append(f"integrator: must be one of {list(INTEGRATORS)}, got {raw.get('integrator')!r}")
    if raw.get("implicit_solver") not in IMPLICIT_SOLVERS:
        errors.append(f"implicit_solver: must be one of {list(IMPLICIT_SOLVERS)}")

    kernels = raw.get("kernels", {})
    if isinstance(kernels, dict):
        for key in sorted(set(kernels) - set(_KERNEL_SLOTS)):
            errors.append(f"kernels.{key}: unknown slot")
        for slot in _KERNEL_SLOTS:
            if slot not in kernels:
                errors.append(f"kernels.{slot}: missing")
                continue
            try:
                k = kernel_from_dict(kernels[slot])
                if not k.even:
                    errors.append(f"kernels.{slot}: kernel must be even")
            except (TypeError, ValueError, KeyError) as exc:
                errors.append(f"kernels.{slot}: {exc}")
    else:
        errors.append("kernels: expected a mapping")

    init = raw.get("initial")
    if isinstance(init, dict):
        for key in sorted(set(init) - {"rho", "eta"}):
            errors.append(f"initial.{key}: unknown key")
        for name in ("rho", "eta"):
            if name not in init:
                errors.append(f"initial.{name}: missing")
            else:
                _check_initial(name, init[name], errors)
    elif init is not None:
        errors.append("initial: expected a mapping with rho and eta")

    study = raw.get("study", {})
    if not isinstance(study, dict) or set(study) - {"grids", "benchmark"}:
        errors.append("study: expected a mapping with keys grids, benchmark")
    stat = raw.get("stationary", {})
    if not isinstance(stat, dict) or set(stat) - {"tol", "t_max", "dt_max"}:
        errors.append("stationary: expected a mapping with keys tol, t_max, dt_max")
    out = raw.get("output", {})
    if not isinstance(out, dict) or set(out) - {"dir", "svg"}:
        errors.append("output: expected a mapping with keys dir, svg")
    return errors


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def resolve_config(data: dict) -> SimulationConfig:
    """Merge defaults, the named preset, and ``data``; validate the result."""
    if not isinstance(data, dict):
        raise ConfigError(["top level: expected a mapping"])
    raw = copy.deepcopy(DEFAULTS)
    preset = data.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError([f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}"])
        raw = _merge(raw, PRESETS[preset])
    raw = _merge(raw, data)
    errors = _validate(raw)
    if errors:
        raise ConfigError(errors)
    return SimulationConfig(raw)


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 reads "1e-10" as a string; accept exponent floats without a dot
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def parse_config_text(text: str):
    """YAML/JSON text to plain data, without validation."""
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError([f"syntax: {exc}"]) from exc
    return {} if data is None else data


def parse_config(text: str) -> SimulationConfig:
    """Parse YAML/JSON config text into a validated :class:`SimulationConfig`."""
    return resolve_config(parse_config_text(text))


def preset_config(name: str, **overrides) -> SimulationConfig:
    return resolve_config({"preset": name}).with_overrides(**overrides)
