"""Run configuration: a TOML file merged over per-command defaults.

Schema (every key optional; unknown keys are rejected):

    [grid]        n (nodes, >= 16)
    [time]        dt (> 0), T, t0
    [model]       kind ("C1".."C4"), clamp, noise_scheme ("averaged" | "left"),
                  jitter, y0 (field spec)
    [coefficients] G, H (coefficient specs), mollify (level, 0 = off)
    [kappa]       kind plus kernel parameters; ell_cells = ell in grid spacings,
                  intensity = scale times grid spacing
    [boundary]    generator plus generator parameters
    [run]         seed, paths (>= 1), out
    [kernel]      times (check times), dump_t, dump_kind
    [verify.<suite>] suite parameters, see DEFAULTS

A field spec is a number, {kind = "sine", k, amp}, {kind = "linear", a, b},
{kind = "constant", c} or {kind = "values", values = [...]}.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli

from stochheat.boundary import BoundarySpec
from stochheat.coefficients import CoefficientPair, make_coefficient, mollify
from stochheat.core import Field, Grid, SeedSpec, TimeGrid
from stochheat.kernels import BoundaryKind
from stochheat.noise import CovKernel, make_kernel
from stochheat.solver import NOISE_SCHEMES, SolveConfig


class ConfigError(ValueError):
    pass


BASE = {
    "grid": {"n": 128},
    "time": {"dt": 1e-3, "T": 0.5, "t0": 0.0},
    "model": {"kind": "C1", "clamp": False, "noise_scheme": "averaged", "jitter": 0.0,
              "y0": {"kind": "sine", "k": 1, "amp": 1.0}},
    "coefficients": {"G": {"kind": "zero"}, "H": {"kind": "zero"}, "mollify": 0},
    "kappa": {"kind": "exponential", "ell": 0.2},
    "boundary": {"generator": "constant", "c": 0.0},
    "run": {"seed": 0, "paths": 1, "out": "out"},
    "kernel": {"times": [0.01, 0.1, 1.0], "dump_t": 0.1, "dump_kind": "C1"},
    "verify": {
        "comparison": {"G2": {"kind": "constant", "c": 0.25}, "y0_2": None, "eps": 1e-8, "limit": 1e-3},
        "positivity": {"dts": [1e-3, 5e-4], "threshold": 10.0, "limit": 1e-3, "factor": [1.2, 1.8]},
        "uniqueness": {"replays": 50, "tol": 1e-8, "starts": [0.0, 1.0], "n_iter": 200, "factor": 10.0,
                       "control_floor": 1e-2},
        "holder": {"p": 2, "space": [0.40, 0.60], "time": [0.20, 0.30], "boundary_check": True,
                   "boundary": {"generator": "brownian", "sigma": 1.0, "sides": "left"}, "boundary_max": 0.60},
        "noise": {"samples": 100_000, "n_se": 4.0, "kernels": [{"kind": "constant"}, {"kind": "exponential", "ell": 0.2}],
                  "phi": {"kind": "sine", "k": 1, "amp": 1.0}, "psi": {"kind": "linear", "a": 1.0, "b": 1.0}},
    },
}

# overlays giving each verification suite its standard setup
SUITE_DEFAULTS = {
    "comparison": {"coefficients": {"G": {"kind": "constant", "c": -0.25}, "H": {"kind": "linear", "a": 0.3, "b": 0.0}},
                   "run": {"paths": 200}},
    "positivity": {"coefficients": {"G": {"kind": "zero"}, "H": {"kind": "sqrt_plus", "c": 1.0}},
                   "run": {"paths": 200}},
    "uniqueness": {"grid": {"n": 64},
                   "coefficients": {"G": {"kind": "linear", "a": -1.0, "b": 0.0},
                                    "H": {"kind": "linear", "a": 0.5, "b": 0.0}}},
    "holder": {"grid": {"n": 512}, "time": {"dt": 1e-3, "T": 1.0}, "model": {"kind": "C2", "y0": 0.0},
               "coefficients": {"G": {"kind": "zero"}, "H": {"kind": "constant", "c": 1.0}},
               "kappa": {"kind": "gaussian", "ell_cells": 0.5, "intensity": 1.0}, "run": {"paths": 500}},
    "noise": {},
}

COMMAND_DEFAULTS = {
    "simulate": {"coefficients": {"G": {"kind": "zero"}, "H": {"kind": "constant", "c": 0.3}}},
    "picard": {"coefficients": {"G": {"kind": "linear", "a": -1.0, "b": 0.0},
                                "H": {"kind": "linear", "a": 0.5, "b": 0.0}}},
}

_KEYS = {
    "grid": {"n"},
    "time": {"dt", "T", "t0"},
    "model": {"kind", "clamp", "noise_scheme", "jitter", "y0"},
    "coefficients": {"G", "H", "mollify"},
    "kappa": None,
    "boundary": None,
    "run": {"seed", "paths", "out"},
    "kernel": {"times", "dump_t", "dump_kind"},
    "verify": None,
}


# spec tables that a new kind or generator replaces as a whole instead of merging into
_SPECS = {"kappa", "boundary", "G", "H", "G2", "y0", "y0_2", "phi", "psi"}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        fresh = k in _SPECS and isinstance(v, dict) and ("kind" in v or "generator" in v)
        if isinstance(v, dict) and isinstance(out.get(k), dict) and not fresh:
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_keys(raw: dict) -> None:
    for section, body in raw.items():
        if section not in _KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        allowed = _KEYS[section]
        if allowed is not None:
            extra = set(body) - allowed
            if extra:
                raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")
    for suite, body in raw.get("verify", {}).items():
        if suite not in BASE["verify"]:
            raise ConfigError(f"unknown verification suite [verify.{suite}]")
        extra = set(body) - set(BASE["verify"][suite])
        if extra:
            raise ConfigError(f"unknown keys in [verify.{suite}]: {sorted(extra)}")


def load_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except (tomli.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    _check_keys(raw)
    return raw


def make_field(grid: Grid, spec) -> Field:
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return grid.field(float(spec))
    if not isinstance(spec, dict):
        raise ConfigError(f"bad field spec {spec!r}")
    spec = dict(spec)
    kind = spec.pop("kind", None)
    x = grid.nodes
    try:
        if kind == "sine":
            return grid.field(float(spec.get("amp", 1.0)) * np.sin(float(spec.get("k", 1)) * np.pi * x))
        if kind == "linear":
            return grid.field(float(spec.get("a", 0.0)) + float(spec.get("b", 0.0)) * x)
        if kind == "constant":
            return grid.field(float(spec.get("c", 0.0)))
        if kind == "values":
            v = np.asarray(spec["values"], dtype=float)
            if v.shape != (grid.n,):
                raise ConfigError(f"field values need {grid.n} entries, got {v.size}")
            return grid.field(v)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad field spec {spec!r}: {exc}") from None
    raise ConfigError(f"unknown field kind {kind!r}; expected sine, linear, constant or values")


def _kappa(grid: Grid, spec: dict) -> CovKernel:
    spec = dict(spec)
    cells = spec.pop("ell_cells", None)
    intensity = spec.pop("intensity", None)
    if cells is not None:
        spec["ell"] = float(cells) * grid.h
    if intensity is not None:
        spec["scale"] = float(intensity) / grid.h
    return make_kernel(spec)


@dataclass
class RunConfig:
    """Validated configuration; `raw` is the merged table that reproduces the run."""

    raw: dict

    def __post_init__(self):
        r = self.raw
        try:
            n = r["grid"]["n"]
            if not isinstance(n, int) or n < 16:
                raise ConfigError(f"grid.n must be an integer >= 16, got {n!r}")
            dt, T, t0 = (float(r["time"][k]) for k in ("dt", "T", "t0"))
            if not dt > 0:
                raise ConfigError(f"time.dt must be positive, got {dt}")
            if not T > t0:
                raise ConfigError(f"time.T must exceed t0, got T = {T}, t0 = {t0}")
            paths = r["run"]["paths"]
            if not isinstance(paths, int) or paths < 1:
                raise ConfigError(f"run.paths must be an integer >= 1, got {paths!r}")
            seed = r["run"]["seed"]
            if not isinstance(seed, int) or seed < 0:
                raise ConfigError(f"run.seed must be a non-negative integer, got {seed!r}")
            if r["model"]["noise_scheme"] not in NOISE_SCHEMES:
                raise ConfigError(f"model.noise_scheme must be one of {NOISE_SCHEMES}")
            self.grid = Grid.uniform(n)
            self.time_grid = TimeGrid.span(T, dt, t0)
            self.kind = BoundaryKind.parse(r["model"]["kind"])
            self.kappa = _kappa(self.grid, r["kappa"])
            self.pair = self.coefficient_pair(r["coefficients"]["G"], r["coefficients"]["H"])
            self.y0 = make_field(self.grid, r["model"]["y0"])
            self.boundary = self.boundary_spec(r["boundary"])
            self.boundary.generate(self.time_grid, SeedSpec(0).generator())
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from None

    @classmethod
    def build(cls, command: str, path=None, seed=None, paths=None, out=None, suite=None) -> "RunConfig":
        raw = copy.deepcopy(BASE)
        if suite is not None:
            raw = deep_merge(raw, SUITE_DEFAULTS[suite])
        raw = deep_merge(raw, COMMAND_DEFAULTS.get(command, {}))
        if path is not None:
            raw = deep_merge(raw, load_file(path))
        if seed is not None:
            raw["run"]["seed"] = seed
        if paths is not None:
            raw["run"]["paths"] = paths
        if out is not None:
            raw["run"]["out"] = str(out)
        return cls(raw)

    @property
    def seed(self) -> int:
        return self.raw["run"]["seed"]

    @property
    def paths(self) -> int:
        return self.raw["run"]["paths"]

    @property
    def out(self) -> Path:
        return Path(self.raw["run"]["out"])

    def suite(self, name: str) -> dict:
        return self.raw["verify"][name]

    def coefficient_pair(self, G, H) -> CoefficientPair:
        try:
            return CoefficientPair(make_coefficient(G), make_coefficient(H))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def boundary_spec(self, spec: dict) -> BoundarySpec:
        spec = dict(spec)
        gen = spec.pop("generator", None)
        if gen not in ("constant", "sinusoid", "brownian", "fbm"):
            raise ConfigError(f"unknown boundary generator {gen!r}")
        return BoundarySpec(gen, spec)

    def solve_config(self, **changes) -> SolveConfig:
        r = self.raw
        coeffs = self.pair
        level = r["coefficients"]["mollify"]
        if level:
            coeffs = mollify(coeffs, level)
        b = self.boundary
        if not b.stochastic:
            b = b.generate(self.time_grid, None)
        cfg = SolveConfig(self.grid, self.time_grid, self.kind, coeffs, self.kappa, self.y0, b,
                          bool(r["model"]["clamp"]), SeedSpec(self.seed), float(r["model"]["jitter"]),
                          r["model"]["noise_scheme"])
        return cfg.replace(**changes) if changes else cfg

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True, default=str).encode()).hexdigest()
