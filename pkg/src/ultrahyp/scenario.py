"""Declarative experiment scenarios.

A scenario is a TOML document with a few top-level keys (``name``,
``seed``) and one table per concern::

    name = "elliptic-bump"
    seed = 0

    [grid]
    d = 2
    n = 128
    box_length = 8.0

    [metric]
    profile = "elliptic-bump"
    amplitude = 0.1
    radius = 1.0

    [coefficients.b]
    profile = "bump"
    amplitude = [0.3, 0.15]
    radius = 1.0

Every key has a default (see ``DEFAULTS``), so an empty file is a valid
flat scenario.  Any key can be overridden from the environment with
``ULTRAHYP_<SECTION>__<KEY>`` (double underscore between levels), e.g.
``ULTRAHYP_GRID__N=256`` or ``ULTRAHYP_COEFFICIENTS__B__AMPLITUDE=[0.1,0]``.
Values are parsed as TOML literals, falling back to plain strings.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .grid_core import Grid
from .hamilton_flow import BumpMetric, ConformalTrap, ConstantMetric, Metric
from .renorm_symbols import BumpVector, FrozenCoefficients, RenormParams, VectorField, ZeroVector
from .solver import CoefficientSet, NonlinearConfig, SolverConfig, wave_packet

ENV_PREFIX = "ULTRAHYP_"
PROFILES = ("flat", "elliptic-bump", "ultrahyperbolic-bump", "trapping-annulus")


class ScenarioError(ValueError):
    """Malformed scenario: unknown key, bad value, or a support outside the box's middle third."""


_COEF = {"profile": "zero", "amplitude": None, "amplitude_imag": None, "radius": 1.0, "center": None}

DEFAULTS: Dict[str, Any] = {
    "name": "flat",
    "seed": 0,
    "grid": {"d": 2, "n": 128, "box_length": 8.0},
    "metric": {"profile": "flat", "g_inf": None, "amplitude": None, "radius": 1.0, "center": None,
               "shape": None, "R0": 0.75, "r_c": 2.0, "width": 1.0},
    "coefficients": {"b": dict(_COEF), "b_tilde": dict(_COEF), "f": dict(_COEF), "sigma": 1.0},
    "initial": {"profile": "packet", "xi0": None, "width": 0.5, "center": None},
    "flow": {"R": 2.0, "n_samples": 4096, "T_cap": None, "n_rays": 64, "T": 4.0, "tol": 1e-9, "eps0": 0.1},
    "renorm": {f.name: f.default for f in fields(RenormParams)},
    "solver": {f.name: f.default for f in fields(SolverConfig)},
    "nonlinear": {"kappa": 0.5, "mu": 0.5, "amplitude": 0.2, "xi0": 2.0, "s": 3.0, "tol": 1e-10,
                  "n_max": 12, "R0": 1.0, "M": 0.0, "budget_constant": 1.0, "perturbation": 1e-6},
    "lattice": {"radii": None, "n_phi": 16, "n_dir": 16},
    "probe": {"n": 2048, "shells": [3, 4, 5, 6, 7, 8], "trials": 8, "iters": 20},
    "verify": {"kind": "energy", "sigma": 0.0, "R": 1.0, "max_ratio": None},
    "mizohata": {"beta": None, "k_list": [2, 3], "T": 0.2, "dt": 1e-3},
}


def _merge(base: Dict[str, Any], upd: Mapping[str, Any], path: str = "") -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        where = f"{path}{k}"
        if k not in base:
            raise ScenarioError(f"unknown scenario key {where!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, Mapping):
                raise ScenarioError(f"{where!r} must be a table")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


def _parse_literal(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """Nested override table built from ``ULTRAHYP_*`` variables."""
    environ = os.environ if environ is None else environ
    out: Dict[str, Any] = {}
    for key in sorted(environ):
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX):].split("__")
        node, ref = out, DEFAULTS
        for i, p in enumerate(parts):
            # keys are matched case-insensitively against the defaults tree
            match = [k for k in ref if k.lower() == p.lower()] if isinstance(ref, dict) else []
            if not match:
                raise ScenarioError(f"{key}: no scenario key {'.'.join(parts[:i + 1]).lower()!r}")
            name = match[0]
            if i == len(parts) - 1:
                node[name] = _parse_literal(environ[key])
            else:
                node = node.setdefault(name, {})
                ref = ref[name]
    return out


@dataclass
class Scenario:
    """Resolved scenario (defaults merged, overrides applied, validated)."""

    data: Dict[str, Any]

    # -- construction ------------------------------------------------------
    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], environ: Optional[Mapping[str, str]] = None,
                  seed: Optional[int] = None) -> "Scenario":
        data = _merge(DEFAULTS, raw)
        data = _merge(data, env_overrides(environ))
        if seed is not None:
            data["seed"] = int(seed)
        sc = cls(data)
        sc.validate()
        return sc

    @classmethod
    def load(cls, path: Union[str, Path], environ: Optional[Mapping[str, str]] = None,
             seed: Optional[int] = None) -> "Scenario":
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
        return cls.from_dict(raw, environ, seed)

    @classmethod
    def shipped(cls, name: str, environ: Optional[Mapping[str, str]] = None, seed: Optional[int] = None):
        """One of the scenarios bundled with the package (see ``shipped_names``)."""
        ref = resources.files("ultrahyp") / "scenarios" / f"{name}.toml"
        if not ref.is_file():
            raise ScenarioError(f"no shipped scenario {name!r}")
        with resources.as_file(ref) as p:
            return cls.load(p, environ if environ is not None else {}, seed)

    # -- accessors ---------------------------------------------------------
    def __getitem__(self, key):
        return self.data[key]

    @property
    def name(self) -> str:
        return str(self.data["name"])

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def d(self) -> int:
        return int(self.data["grid"]["d"])

    def fingerprint(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # -- validation --------------------------------------------------------
    def validate(self) -> None:
        g = self.data["grid"]
        try:
            grid = self.grid()
        except ValueError as exc:
            raise ScenarioError(f"grid: {exc}") from exc
        m = self.data["metric"]
        if m["profile"] not in PROFILES:
            raise ScenarioError(f"metric.profile must be one of {PROFILES}, got {m['profile']!r}")
        if m["profile"] == "ultrahyperbolic-bump" and grid.d < 2:
            raise ScenarioError("an ultrahyperbolic metric needs d >= 2")
        limit = g["box_length"] / 6.0
        try:
            metric = self.metric()
        except (ValueError, TypeError) as exc:
            raise ScenarioError(f"metric: {exc}") from exc
        if metric.support_radius > limit + 1e-12:
            raise ScenarioError(f"metric support {metric.support_radius:.3g} leaves the box middle third "
                                f"(|x| <= {limit:.3g})")
        for key in ("b", "b_tilde", "f"):
            c = self.data["coefficients"][key]
            if c["profile"] not in ("zero", "bump", "constant"):
                raise ScenarioError(f"coefficients.{key}.profile must be zero, bump or constant")
            if c["profile"] != "zero" and key != "f":
                if np.asarray(c["amplitude"] if c["amplitude"] is not None else [0.0] * grid.d).size != grid.d:
                    raise ScenarioError(f"coefficients.{key}.amplitude needs {grid.d} components")
            if c["profile"] == "bump":
                r = c["radius"] + float(np.linalg.norm(c["center"] or [0.0]))
                if r > limit + 1e-12:
                    raise ScenarioError(f"coefficients.{key} support {r:.3g} leaves the box middle third")
        try:
            self.solver_config().validate(grid, metric.g_inf)
            self.renorm_params().validate()
        except (ValueError, TypeError) as exc:
            raise ScenarioError(str(exc)) from exc
        if self.data["initial"]["profile"] not in ("packet", "plane"):
            raise ScenarioError("initial.profile must be packet or plane")

    # -- factories ---------------------------------------------------------
    def grid(self) -> Grid:
        g = self.data["grid"]
        return Grid(int(g["d"]), int(g["n"]), float(g["box_length"]))

    def g_inf(self) -> np.ndarray:
        m = self.data["metric"]
        d = self.d
        if m["g_inf"] is not None:
            G = np.asarray(m["g_inf"], dtype=float)
            return np.diag(G) if G.ndim == 1 else G
        if m["profile"] == "ultrahyperbolic-bump":
            return np.diag([1.0] * (d - d // 2) + [-1.0] * (d // 2))
        return np.eye(d)

    def metric(self) -> Metric:
        m = self.data["metric"]
        prof = m["profile"]
        d = self.d
        if prof == "flat":
            return ConstantMetric(self.g_inf())
        if prof == "trapping-annulus":
            amp = 8.0 if m["amplitude"] is None else m["amplitude"]
            return ConformalTrap(d, amp, m["r_c"], m["width"])
        amp = 0.1 if m["amplitude"] is None else m["amplitude"]
        shape = None if m["shape"] is None else np.asarray(m["shape"], dtype=float)
        center = None if m["center"] is None else np.asarray(m["center"], dtype=float)
        return BumpMetric(self.g_inf(), amp, m["radius"], center=center, shape=shape)

    def vector(self, key: str) -> VectorField:
        c = self.data["coefficients"][key]
        d = self.d
        if c["profile"] == "zero":
            return ZeroVector(d)
        if c["profile"] == "constant":
            raise ScenarioError(f"coefficients.{key}: the symbol constructions need compact support")
        amp = self._amplitude(key)
        if amp.size != d:
            raise ScenarioError(f"coefficients.{key}.amplitude needs {d} components")
        return BumpVector(amp, c["radius"], c["center"])

    def _amplitude(self, key: str) -> np.ndarray:
        c = self.data["coefficients"][key]
        d = self.d
        amp = np.asarray(c["amplitude"] if c["amplitude"] is not None else [0.0] * d, dtype=complex)
        if c["amplitude_imag"] is not None:
            amp = amp + 1j * np.asarray(c["amplitude_imag"], dtype=float)
        return amp

    def frozen(self) -> FrozenCoefficients:
        return FrozenCoefficients(self.metric(), self.vector("b"), self.vector("b_tilde"),
                                  float(self.data["coefficients"]["sigma"]))

    def _grid_coef(self, key: str):
        c = self.data["coefficients"][key]
        if c["profile"] == "zero":
            return None
        if c["profile"] == "constant":
            return self._amplitude(key)
        field = self.vector(key)
        return lambda pts: field(pts)

    def coefficients(self) -> CoefficientSet:
        grid = self.grid()
        metric = self.metric()
        met = None if isinstance(metric, ConstantMetric) else metric
        f = self.data["coefficients"]["f"]
        src = None
        if f["profile"] != "zero":
            amp = complex(np.asarray(f["amplitude"] if f["amplitude"] is not None else 1.0).ravel()[0])
            if f["profile"] == "constant":
                src = np.full(grid.shape, amp)
            else:
                r2 = sum((x - c) ** 2 for x, c in zip(grid.coords(), f["center"] or [0.0] * grid.d))
                src = amp * np.exp(-r2 / f["radius"] ** 2)
        return CoefficientSet.from_metric(grid, met, b=self._grid_coef("b"), b_tilde=self._grid_coef("b_tilde"),
                                          f=None if src is None else (lambda t: src), g_inf=metric.g_inf)

    def initial_data(self) -> np.ndarray:
        ini = self.data["initial"]
        grid = self.grid()
        xi0 = ini["xi0"] if ini["xi0"] is not None else [4.0] + [0.0] * (grid.d - 1)
        if ini["profile"] == "plane":
            return wave_packet(grid, xi0, width=math.inf)
        return wave_packet(grid, xi0, ini["width"], ini["center"])

    def renorm_params(self) -> RenormParams:
        return RenormParams(**self.data["renorm"])

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.data["solver"])

    def nonlinear_config(self) -> NonlinearConfig:
        nl = self.data["nonlinear"]
        keep = {k: nl[k] for k in ("s", "tol", "n_max", "R0", "M", "budget_constant")}
        return NonlinearConfig(self.solver_config(), **keep)


def shipped_names():
    root = resources.files("ultrahyp") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))
