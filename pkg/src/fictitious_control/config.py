"""Run configuration: one TOML file per run.

Example::

    name = "theorem1-benchmark"
    T = 0.25
    mode = "theorem1"            # theorem1 | case_i | case_ii (default: auto)

    [domain]
    interval = [0.0, 1.0]

    [windows]
    omega = [0.3, 0.7]
    omega0 = [0.4, 0.6]
    omega1 = [0.42, 0.58]
    omega2 = [0.45, 0.55]

    [coefficients]               # numbers or expressions in t and x
    d = [1, 1]
    g = [[0, 0], [0, 0]]
    a = [[0, 0], [1, 0]]

    [grid]
    nx = 100
    nt = 200

Optional tables: ``[hum]``, ``[weights]``, ``[pipeline]``, ``[check]``,
``[verify]``, ``[poincare]``, ``[output]`` (see :data:`DEFAULTS`).
"""

from __future__ import annotations

import copy
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import sympy as sp

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .expressions import T_SYM, X_SYM, ExpressionError, parse_expression
from .model import CoefficientSet, ProblemSpec

FORMATS = ("csv", "json", "binary")
MODES = ("auto", "theorem1", "case_i", "case_ii")

DEFAULTS = {
    "hum": {"k": 1e6, "ks": [1e2, 1e4, 1e6], "cg_tol": 1e-8, "cg_max_iter": 500, "K": 0.5, "i0": None},
    "weights": {"lambda": 1.0, "c_cal": 1e-6, "s0": None, "cutoff": "smooth"},
    "pipeline": {"C_bound": 0.0, "initial": None, "target": None, "epsilon": None, "k_max": 1e8},
    "check": {"samples": 64, "C_bound": 0.0, "t_window": None},
    "verify": {"levels": [64, 128, 256], "inputs": None, "zero_input": False},
    "poincare": {"g": 1.0, "a": 0.0, "nx": 200},
    "output": {"formats": ["csv", "json"]},
}


class ConfigError(ValueError):
    """Malformed configuration; the message names the field and, when known, the line."""


@dataclass
class RunConfig:
    spec: ProblemSpec
    mode: str
    nx: int
    nt: int
    hum: dict
    weights: dict
    pipeline: dict
    check: dict
    verify: dict
    poincare: dict
    formats: list
    path: Optional[Path] = None
    raw: dict = field(default_factory=dict)

    def initial_state(self, grid) -> np.ndarray:
        exprs = self.pipeline.get("initial")
        if exprs is None:
            from .benchmarks import initial_state
            return initial_state(self.spec, grid)
        return _eval_profiles(exprs, grid, self.spec.m)

    def target_state(self, grid) -> Optional[np.ndarray]:
        exprs = self.pipeline.get("target")
        return None if exprs is None else _eval_profiles(exprs, grid, self.spec.m)


def _eval_profiles(exprs, grid, m):
    out = np.zeros((m, grid.nx))
    for i, e in enumerate(exprs):
        f = sp.lambdify(X_SYM, e, modules="numpy")
        out[i] = np.broadcast_to(f(grid.x_interior), (grid.nx,))
    return out


def _line_of(text: str, key: str) -> Optional[int]:
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for n, line in enumerate(text.splitlines(), 1):
        if pattern.match(line):
            return n
    return None


class _Reader:
    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source

    def fail(self, path: str, message: str):
        line = _line_of(self.text, path.split(".")[-1].split("[")[0])
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: field '{path}': {message}")

    def number(self, value, path, positive=False, integer=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        if integer and not isinstance(value, int):
            self.fail(path, f"expected an integer, got {value!r}")
        if positive and not value > 0:
            self.fail(path, f"must be positive, got {value!r}")
        return value

    def interval(self, value, path):
        if not (isinstance(value, list) and len(value) == 2):
            self.fail(path, "expected [lo, hi]")
        lo, hi = (float(self.number(v, path)) for v in value)
        if not lo < hi:
            self.fail(path, f"empty interval [{lo}, {hi}]")
        return (lo, hi)

    def coefficient(self, value, path, variables=(T_SYM, X_SYM)):
        if isinstance(value, bool):
            self.fail(path, "expected a number or expression")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                expr = parse_expression(value)
            except ExpressionError as exc:
                self.fail(path, str(exc))
            if not expr.free_symbols <= set(variables):
                self.fail(path, f"expression may only use {', '.join(map(str, variables))}")
            return expr
        self.fail(path, f"expected a number or expression, got {value!r}")

    def matrix(self, value, path, m):
        if not (isinstance(value, list) and len(value) == m and all(isinstance(r, list) and len(r) == m
                                                                     for r in value)):
            self.fail(path, f"expected an {m} x {m} array")
        return tuple(tuple(self.coefficient(v, f"{path}[{i}][{j}]") for j, v in enumerate(row))
                     for i, row in enumerate(value))

    def profiles(self, value, path, m):
        if value is None:
            return None
        if not (isinstance(value, list) and len(value) == m):
            self.fail(path, f"expected {m} expressions in x")
        return [sp.sympify(self.coefficient(v, f"{path}[{i}]", (X_SYM,))) for i, v in enumerate(value)]


def _merge(section: str, given, reader: _Reader) -> dict:
    out = copy.deepcopy(DEFAULTS[section])
    if given is None:
        return out
    if not isinstance(given, dict):
        reader.fail(section, "expected a table")
    for key, value in given.items():
        if key not in out:
            reader.fail(f"{section}.{key}", f"unknown key (allowed: {', '.join(out)})")
        out[key] = value
    return out


def parse_config(data: dict, text: str = "", source: str = "<config>") -> RunConfig:
    r = _Reader(text, source)
    known = {"name", "T", "mode", "domain", "windows", "coefficients", "grid", *DEFAULTS}
    for key in data:
        if key not in known:
            r.fail(key, "unknown top-level key")
    if "T" not in data:
        r.fail("T", "missing time horizon")
    T = float(r.number(data["T"], "T", positive=True))
    mode = data.get("mode", "auto")
    if mode not in MODES:
        r.fail("mode", f"must be one of {MODES}")

    domain = r.interval(data.get("domain", {}).get("interval", [0.0, 1.0]), "domain.interval")
    windows = data.get("windows", {})
    win = {}
    for key, default in (("omega", (0.3, 0.7)), ("omega0", (0.4, 0.6)), ("omega1", (0.42, 0.58)),
                         ("omega2", (0.45, 0.55))):
        win[key] = r.interval(windows[key], f"windows.{key}") if key in windows else default

    coeffs = data.get("coefficients")
    if not isinstance(coeffs, dict) or "d" not in coeffs:
        r.fail("coefficients.d", "missing diffusion coefficients")
    d = coeffs["d"]
    if not isinstance(d, list) or len(d) < 2:
        r.fail("coefficients.d", "expected a list with at least two entries")
    m = len(d)
    d = tuple(r.coefficient(v, f"coefficients.d[{i}]") for i, v in enumerate(d))
    zero = [[0] * m for _ in range(m)]
    g = r.matrix(coeffs.get("g", zero), "coefficients.g", m)
    a = r.matrix(coeffs.get("a", zero), "coefficients.a", m)
    try:
        cset = CoefficientSet(d, g, a)
    except (ValueError, TypeError) as exc:
        r.fail("coefficients", str(exc))
    spec = ProblemSpec(cset, T=T, domain=domain, name=str(data.get("name", "")), **win)

    grid = data.get("grid", {})
    nx = int(r.number(grid.get("nx", 100), "grid.nx", positive=True, integer=True))
    nt = int(r.number(grid.get("nt", 200), "grid.nt", positive=True, integer=True))

    sections = {name: _merge(name, data.get(name), r) for name in DEFAULTS}
    hum = sections["hum"]
    r.number(hum["k"], "hum.k", positive=True)
    ks = hum["ks"]
    if not isinstance(ks, list) or not ks:
        r.fail("hum.ks", "expected a nonempty list")
    for v in ks:
        r.number(v, "hum.ks", positive=True)
    cg_tol = r.number(hum["cg_tol"], "hum.cg_tol", positive=True)
    if cg_tol >= 1:
        r.fail("hum.cg_tol", "must lie in (0, 1)")
    r.number(hum["cg_max_iter"], "hum.cg_max_iter", positive=True, integer=True)
    if hum["i0"] is not None:
        i0 = r.number(hum["i0"], "hum.i0", positive=True, integer=True)
        if i0 >= m:
            r.fail("hum.i0", f"must be between 1 and {m - 1}")
    w = sections["weights"]
    r.number(w["lambda"], "weights.lambda", positive=True)
    r.number(w["c_cal"], "weights.c_cal", positive=True)
    if w["s0"] is not None:
        r.number(w["s0"], "weights.s0", positive=True)
    if w["cutoff"] not in ("quintic", "smooth"):
        r.fail("weights.cutoff", "must be 'quintic' or 'smooth'")
    p = sections["pipeline"]
    p["initial"] = r.profiles(p["initial"], "pipeline.initial", m)
    p["target"] = r.profiles(p["target"], "pipeline.target", m)
    if p["epsilon"] is not None:
        r.number(p["epsilon"], "pipeline.epsilon", positive=True)
    chk = sections["check"]
    r.number(chk["samples"], "check.samples", positive=True, integer=True)
    r.number(chk["C_bound"], "check.C_bound")
    if chk["t_window"] is not None:
        chk["t_window"] = r.interval(chk["t_window"], "check.t_window")
        if chk["t_window"][0] < 0 or chk["t_window"][1] > T:
            r.fail("check.t_window", "must lie inside [0, T]")
    v = sections["verify"]
    if v["inputs"] is not None:
        if not (isinstance(v["inputs"], list) and all(isinstance(row, list) and len(row) == m
                                                      for row in v["inputs"])):
            r.fail("verify.inputs", f"expected a list of {m}-component expression lists")
        v["inputs"] = [[sp.sympify(r.coefficient(e, f"verify.inputs[{i}][{j}]")) for j, e in enumerate(row)]
                       for i, row in enumerate(v["inputs"])]
    formats = sections["output"]["formats"]
    if not isinstance(formats, list) or not set(formats) <= set(FORMATS):
        r.fail("output.formats", f"allowed formats: {', '.join(FORMATS)}")
    return RunConfig(spec, mode, nx, nt, hum, w, p, sections["check"], v, sections["poincare"], formats,
                     raw=data)


def load_config(path) -> RunConfig:
    """Read and validate a TOML run configuration."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = parse_config(data, text, str(path))
    cfg.path = path
    return cfg
