"""INI run configuration: ``[problem]``, ``[nonlinearity]`` and ``[run]`` sections.

Every parse or validation failure raises :class:`ConfigError` carrying the
dotted key (``section.key``) at fault.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .elliptic import CrankNicolson, Domain, EllipticProblem, ImplicitEuler, MatrixExponential
from .errors import ConstructionError, OsgoodLabError
from .nonlinearity import LogOsgood, LogPerturbedPower, Nonlinearity, PowerLaw, Tabulated

__all__ = ["ConfigError", "RunConfig", "COEFFICIENT_CATALOG", "load_config", "parse_config"]

MIN_GRID_N = 33


class ConfigError(OsgoodLabError, ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# Functions of the coordinate arrays (x) in 1-d or (x, y) in 2-d.
COEFFICIENT_CATALOG = {
    "one": lambda *c: np.ones_like(c[0]),
    "zero": lambda *c: np.zeros_like(c[0]),
    "hat": lambda *c: np.maximum(0.0, 1.0 - 4.0 * np.sqrt(sum(v * v for v in c))),
    "sin_pi": lambda *c: np.sin(np.pi * c[0]),
    "variable_a": lambda *c: 1.0 + 0.5 * c[0] ** 2,
    "variable_b": lambda *c: 0.5 * c[0],
    "variable_c": lambda *c: -np.ones_like(c[0]),
}

_STEPPERS = {"expm", "crank_nicolson", "implicit_euler"}
_KINDS = {"power", "log_perturbed", "log_osgood", "tabulated"}

_KNOWN = {
    "problem": {"bounds", "grid_n", "a", "b", "c", "q", "beta", "ellipticity_k"},
    "nonlinearity": {"kind", "p", "amplitude", "rate", "domain_cap", "nodes"},
    "run": {
        "epsilon", "tol", "max_shells", "dt", "r", "t_samples", "times", "stepper",
        "max_iter", "out", "seed", "kernel_stride", "maximal",
    },
}


@dataclass(frozen=True)
class RunConfig:
    problem: EllipticProblem
    nonlinearity: Nonlinearity
    epsilon: float | None
    tol: float
    max_shells: int
    dt: float
    r: float | None
    t_samples: int
    times: tuple
    stepper_name: str
    max_iter: int
    out: str | None
    seed: int
    kernel_stride: int
    maximal: bool

    def stepper(self):
        if self.stepper_name == "expm":
            return MatrixExponential()
        if self.stepper_name == "crank_nicolson":
            return CrankNicolson(self.dt)
        return ImplicitEuler(self.dt)


def _number(raw: str, key: str) -> float:
    try:
        val = float(raw)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {raw!r}") from None
    if not math.isfinite(val):
        raise ConfigError(key, "must be finite")
    return val


def _numbers(raw: str, key: str) -> list[float]:
    parts = [p for p in raw.replace(";", ",").split(",") if p.strip()]
    if not parts:
        raise ConfigError(key, "expected a comma-separated list of numbers")
    return [_number(p.strip(), key) for p in parts]


def _integer(raw: str, key: str) -> int:
    val = _number(raw, key)
    if val != int(val):
        raise ConfigError(key, f"expected an integer, got {raw!r}")
    return int(val)


def _coefficient(raw: str, key: str, components: int = 1):
    """Catalog name, a number, ``poly:c0,c1,...`` in x, or ``|``-separated components."""
    raw = raw.strip()
    if components > 1 and "|" in raw:
        parts = [p.strip() for p in raw.split("|")]
        if len(parts) != components:
            raise ConfigError(key, f"expected {components} '|'-separated components")
        funcs = [_coefficient(p, key) for p in parts]
        return lambda *c: np.stack([np.broadcast_to(np.asarray(g(*c) if callable(g) else g, dtype=float), c[0].shape) for g in funcs])
    if raw in COEFFICIENT_CATALOG:
        return COEFFICIENT_CATALOG[raw]
    if raw.startswith("poly:"):
        coeffs = _numbers(raw[5:], key)
        return lambda *c: np.polynomial.polynomial.polyval(c[0], coeffs)
    try:
        return _number(raw, key)
    except ConfigError:
        names = ", ".join(sorted(COEFFICIENT_CATALOG))
        raise ConfigError(key, f"unknown coefficient {raw!r} (catalog: {names}; or a number, or poly:c0,c1,...)") from None


def _check_keys(parser: configparser.ConfigParser) -> None:
    for section in parser.sections():
        if section not in _KNOWN:
            raise ConfigError(section, "unknown section")
        for key in parser[section]:
            if key not in _KNOWN[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")


def _problem(sec) -> EllipticProblem:
    bounds = _numbers(sec.get("bounds", "-1, 1"), "problem.bounds")
    if len(bounds) not in (2, 4):
        raise ConfigError("problem.bounds", "give lo, hi (1-d) or x_lo, x_hi, y_lo, y_hi (2-d)")
    grid_n = _integer(sec.get("grid_n", "201"), "problem.grid_n")
    if grid_n < MIN_GRID_N:
        raise ConfigError("problem.grid_n", f"must be >= {MIN_GRID_N}")
    try:
        if len(bounds) == 2:
            dom = Domain.interval(bounds[0], bounds[1], grid_n)
        else:
            dom = Domain.rectangle(bounds[:2], bounds[2:], grid_n)
    except (ValueError, ConstructionError) as exc:
        raise ConfigError("problem.bounds", str(exc)) from None
    d = dom.dimension
    kwargs = {
        "a": _coefficient(sec.get("a", "one"), "problem.a", 3 if d == 2 else 1),
        "b": _coefficient(sec.get("b", "zero"), "problem.b", d),
        "c": _coefficient(sec.get("c", "zero"), "problem.c"),
        "q": _coefficient(sec.get("q", "one"), "problem.q"),
        "beta": _numbers(sec.get("beta", "0"), "problem.beta"),
    }
    if "ellipticity_k" in sec:
        kwargs["ellipticity_k"] = _number(sec["ellipticity_k"], "problem.ellipticity_k")
    if d == 2 and not isinstance(kwargs["a"], float) and "|" not in sec.get("a", ""):
        scalar = kwargs["a"]
        kwargs["a"] = lambda *c: np.stack([scalar(*c), np.zeros_like(c[0]), scalar(*c)])
    if d == 2 and callable(kwargs["b"]) and "|" not in sec.get("b", ""):
        drift = kwargs["b"]
        kwargs["b"] = lambda *c: np.stack([drift(*c), drift(*c)])
    try:
        return EllipticProblem(dom, **kwargs)
    except ConstructionError as exc:
        msg = str(exc)
        key = next((f"problem.{k}" for k in ("beta", "q", "a", "b", "c", "ellipticity_k")
                    if re.search(rf"\b{k}\b", msg)), "problem")
        raise ConfigError(key, msg) from None


def _nonlinearity(sec) -> Nonlinearity:
    kind = sec.get("kind", "power").strip()
    if kind not in _KINDS:
        raise ConfigError("nonlinearity.kind", f"unknown kind {kind!r} (one of {', '.join(sorted(_KINDS))})")

    def num(key, default=None):
        if key not in sec:
            if default is None:
                raise ConfigError(f"nonlinearity.{key}", f"required for kind = {kind}")
            return default
        return _number(sec[key], f"nonlinearity.{key}")

    try:
        if kind == "power":
            return PowerLaw(num("p"), num("domain_cap", 10.0))
        if kind == "log_perturbed":
            return LogPerturbedPower(num("p"), num("amplitude"), num("rate"), num("domain_cap", 10.0))
        if kind == "log_osgood":
            return LogOsgood(num("domain_cap", 10.0))
        if "nodes" not in sec:
            raise ConfigError("nonlinearity.nodes", "required for kind = tabulated")
        nodes = []
        for pair in sec["nodes"].split(","):
            if ":" not in pair:
                raise ConfigError("nonlinearity.nodes", "expected u:f pairs separated by commas")
            u, fu = pair.split(":", 1)
            nodes.append((_number(u, "nonlinearity.nodes"), _number(fu, "nonlinearity.nodes")))
        cap = num("domain_cap") if "domain_cap" in sec else None
        return Tabulated(tuple(nodes), cap)
    except ConstructionError as exc:
        raise ConfigError(f"nonlinearity.{kind}", str(exc)) from None


def parse_config(text: str, *, grid_n: int | None = None, dt: float | None = None) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None
    _check_keys(parser)
    for section in ("problem", "nonlinearity"):
        if not parser.has_section(section):
            raise ConfigError(section, "missing section")
    if grid_n is not None:
        parser["problem"]["grid_n"] = str(grid_n)
    run = parser["run"] if parser.has_section("run") else {}
    if dt is not None:
        run = dict(run)
        run["dt"] = repr(float(dt))

    problem = _problem(parser["problem"])
    f = _nonlinearity(parser["nonlinearity"])

    epsilon = _number(run["epsilon"], "run.epsilon") if "epsilon" in run else None
    if epsilon is not None and not 0 < epsilon <= f.domain_cap:
        raise ConfigError("run.epsilon", f"must lie in (0, domain_cap={f.domain_cap}]")
    tol = _number(run.get("tol", "1e-10"), "run.tol")
    if tol <= 0:
        raise ConfigError("run.tol", "must be positive")
    step = _number(run.get("dt", "1e-3"), "run.dt")
    if step <= 0:
        raise ConfigError("run.dt", "must be positive")
    r = _number(run["r"], "run.r") if "r" in run else None
    if r is not None and r <= 0:
        raise ConfigError("run.r", "must be positive")
    times = tuple(_numbers(run.get("times", "0.01, 0.1, 0.5"), "run.times"))
    if any(t <= 0 for t in times):
        raise ConfigError("run.times", "times must be positive")
    stepper = run.get("stepper", "expm").strip()
    if stepper not in _STEPPERS:
        raise ConfigError("run.stepper", f"unknown stepper {stepper!r} (one of {', '.join(sorted(_STEPPERS))})")
    ints = {}
    for key, default, low in (("max_shells", "400", 16), ("t_samples", "16", 2), ("max_iter", "2000", 1),
                              ("seed", "0", 0), ("kernel_stride", "1", 1)):
        ints[key] = _integer(run.get(key, default), f"run.{key}")
        if ints[key] < low:
            raise ConfigError(f"run.{key}", f"must be >= {low}")
    maximal = run.get("maximal", "true").strip().lower()
    if maximal not in ("true", "false", "yes", "no", "1", "0"):
        raise ConfigError("run.maximal", "expected true or false")

    return RunConfig(
        problem=problem,
        nonlinearity=f,
        epsilon=epsilon,
        tol=tol,
        max_shells=ints["max_shells"],
        dt=step,
        r=r,
        t_samples=ints["t_samples"],
        times=times,
        stepper_name=stepper,
        max_iter=ints["max_iter"],
        out=run.get("out"),
        seed=ints["seed"],
        kernel_stride=ints["kernel_stride"],
        maximal=maximal in ("true", "yes", "1"),
    )


def load_config(path, **overrides) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, **overrides)
