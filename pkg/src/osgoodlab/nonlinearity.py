"""Monotone nonlinearities, the Osgood integral test and the comparison ODE.

Every integral of ``1/f`` is taken in the variable ``s = ln u``; on a dyadic
shell ``[2^-k eps, 2^-(k-1) eps]`` the integrand ``e^s / f(e^s)`` is smooth for
all catalog kinds, so fixed Gauss-Legendre rules give near machine accuracy
right down to the singular endpoint.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import ConstructionError, HorizonExceeded, InconclusiveOsgood, OsgoodHolds

__all__ = [
    "Nonlinearity",
    "PowerLaw",
    "LogPerturbedPower",
    "LogOsgood",
    "Tabulated",
    "Shifted",
    "OsgoodClass",
    "OsgoodVerdict",
    "OdeProfile",
    "check_osgood",
    "solve_mu",
    "shift_nonlinearity",
    "primitive_table",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_POINTS_PER_SHELL = 64
_PANEL_WIDTH = 0.25  # in s = ln u
_GEOMETRIC_FIT_TOL = 1e-9
_GEOMETRIC_RATIO_MARGIN = 1e-6
_SMALLEST_NODE = 1e-280
_MONOTONE_SAMPLES = 1000


class Nonlinearity:
    """Base class: a continuous, non-decreasing f on [0, domain_cap] with f(0) = 0."""

    domain_cap: float

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if u.size:
            if np.any(u < 0.0):
                raise ValueError("f evaluated at a negative argument")
            if np.max(u) > self.domain_cap * (1.0 + 1e-12):
                raise ValueError(
                    f"f evaluated at {np.max(u):.6g}, beyond domain_cap={self.domain_cap:.6g}"
                )
        out = self._evaluate(u)
        if not np.all(np.isfinite(out)):
            raise ValueError("non-finite f evaluation")
        return out

    def _evaluate(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def reciprocal_integral(self, lo, hi) -> np.ndarray:
        """Integral of 1/f over [lo, hi] (arrays allowed, 0 < lo <= hi)."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        a, b = np.log(lo), np.log(hi)
        width = b - a
        panels = max(1, math.ceil(float(np.max(width, initial=0.0)) / _PANEL_WIDTH))
        half = 0.5 * width / panels
        starts = a[..., None] + (width / panels)[..., None] * np.arange(panels)
        s = (starts + half[..., None])[..., None] + half[..., None, None] * _GL_NODES
        u = np.exp(s)
        fu = self(u)
        with np.errstate(divide="ignore"):
            integrand = u / fu
        return half * (integrand @ _GL_WEIGHTS).sum(axis=-1)

    def _check_hypotheses(self) -> None:
        cap = self.domain_cap
        if not (np.isfinite(cap) and cap > 0):
            raise ConstructionError("domain_cap must be a positive finite number")
        if float(self._evaluate(np.array([0.0]))[0]) != 0.0:
            raise ConstructionError("f(0) must be 0")
        u = np.unique(
            np.concatenate(
                [
                    cap * np.logspace(-12, 0, _MONOTONE_SAMPLES),
                    np.linspace(0.0, cap, _MONOTONE_SAMPLES),
                ]
            )
        )
        fu = self._evaluate(u)
        if not np.all(np.isfinite(fu)):
            raise ConstructionError("f is not finite on [0, domain_cap]")
        if np.any(fu[u > 0] <= 0):
            raise ConstructionError("f must be positive on (0, domain_cap]")
        drop = np.diff(fu)
        slack = 1e-13 * np.maximum(np.abs(fu[1:]), np.abs(fu[:-1]))
        if np.any(drop < -slack):
            i = int(np.argmin(drop + slack))
            raise ConstructionError(
                f"f is decreasing between u={u[i]:.6g} and u={u[i + 1]:.6g}"
            )


@dataclass(frozen=True)
class PowerLaw(Nonlinearity):
    """f(u) = u**p."""

    p: float
    domain_cap: float = 10.0

    def __post_init__(self):
        if not self.p > 0:
            raise ConstructionError("PowerLaw exponent must be positive")
        self._check_hypotheses()

    def _evaluate(self, u):
        return np.power(u, self.p)


@dataclass(frozen=True)
class LogPerturbedPower(Nonlinearity):
    """f(u) = u**p * (2 + amplitude * sin(rate * ln u)), f(0) = 0.

    Monotone whenever |amplitude| * sqrt(1 + (rate/p)**2) < 2, which the
    constructor insists on. For nonzero amplitude the log-periodic wobble
    makes f neither concave nor convex near zero.
    """

    p: float
    amplitude: float
    rate: float
    domain_cap: float = 10.0

    def __post_init__(self):
        if not self.p > 0:
            raise ConstructionError("LogPerturbedPower exponent must be positive")
        bound = abs(self.amplitude) * math.sqrt(1.0 + (self.rate / self.p) ** 2)
        if not bound < 2.0:
            raise ConstructionError(
                f"|amplitude|*sqrt(1+(rate/p)^2) = {bound:.6g} >= 2; f would not be monotone"
            )
        self._check_hypotheses()

    def _evaluate(self, u):
        out = np.zeros_like(u, dtype=float)
        pos = u > 0
        up = u[pos]
        out[pos] = np.power(up, self.p) * (2.0 + self.amplitude * np.sin(self.rate * np.log(up)))
        return out


@dataclass(frozen=True)
class LogOsgood(Nonlinearity):
    """f(u) = u * (1 + ln(1/u)) on (0, 1], continued as f(u) = u above 1."""

    domain_cap: float = 10.0

    def __post_init__(self):
        self._check_hypotheses()

    def _evaluate(self, u):
        out = np.array(u, dtype=float, copy=True)
        low = (u > 0) & (u <= 1.0)
        out[low] = u[low] * (1.0 - np.log(u[low]))
        return out


@dataclass(frozen=True)
class Tabulated(Nonlinearity):
    """Piecewise-linear f through sorted (u, f(u)) nodes; the first node must be (0, 0)."""

    nodes: tuple
    domain_cap: float | None = None

    def __post_init__(self):
        pts = tuple((float(a), float(b)) for a, b in self.nodes)
        if len(pts) < 2:
            raise ConstructionError("Tabulated needs at least two nodes")
        us = [a for a, _ in pts]
        if pts[0] != (0.0, 0.0):
            raise ConstructionError("Tabulated nodes must start at (0, 0)")
        if any(b <= a for a, b in zip(us, us[1:])):
            raise ConstructionError("Tabulated nodes must be strictly increasing in u")
        object.__setattr__(self, "nodes", pts)
        if self.domain_cap is None:
            object.__setattr__(self, "domain_cap", us[-1])
        if self.domain_cap > us[-1]:
            raise ConstructionError("domain_cap exceeds the last tabulated node")
        self._check_hypotheses()

    @property
    def _u(self):
        return np.array([a for a, _ in self.nodes])

    @property
    def _f(self):
        return np.array([b for _, b in self.nodes])

    def _evaluate(self, u):
        return np.interp(u, self._u, self._f)

    def reciprocal_integral(self, lo, hi):
        # exact: on each linear piece f = f_k + m (u - u_k)
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        knots, vals = self._u, self._f
        out = np.zeros(np.broadcast(lo, hi).shape)
        for k in range(len(knots) - 1):
            a = np.clip(lo, knots[k], knots[k + 1])
            b = np.clip(hi, knots[k], knots[k + 1])
            m = (vals[k + 1] - vals[k]) / (knots[k + 1] - knots[k])
            fa = vals[k] + m * (a - knots[k])
            fb = vals[k] + m * (b - knots[k])
            with np.errstate(divide="ignore", invalid="ignore"):
                if m == 0.0:
                    piece = (b - a) / fa
                else:
                    piece = np.log(fb / fa) / m
            out += np.where(b > a, piece, 0.0)
        return out


@dataclass(frozen=True)
class Shifted(Nonlinearity):
    """f(u) + sigma * u."""

    base: Nonlinearity
    sigma: float
    domain_cap: float = field(init=False)

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ConstructionError("shift sigma must be non-negative")
        object.__setattr__(self, "domain_cap", self.base.domain_cap)
        self._check_hypotheses()

    def _evaluate(self, u):
        return self.base._evaluate(u) + self.sigma * u


def shift_nonlinearity(f: Nonlinearity, sigma: float) -> Nonlinearity:
    """Return u -> f(u) + sigma*u; sigma = 0 hands back f itself."""
    if sigma < 0:
        raise ConstructionError("sigma must be non-negative")
    if sigma == 0:
        return f
    return Shifted(f, float(sigma))


# ---------------------------------------------------------------------------
# Osgood probe


class OsgoodClass(str, enum.Enum):
    DIVERGENT = "Divergent"
    CONVERGENT = "Convergent"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class OsgoodVerdict:
    classification: OsgoodClass
    integral_estimate: float
    probe_trace: tuple
    epsilon: float
    tol: float

    @property
    def osgood_holds(self) -> bool:
        return self.classification is OsgoodClass.DIVERGENT

    def to_dict(self) -> dict:
        est = self.integral_estimate
        return {
            "classification": self.classification.value,
            "integral_estimate": "inf" if math.isinf(est) else est,
            "epsilon": self.epsilon,
            "tol": self.tol,
            "probe_trace": [[d, v] for d, v in self.probe_trace],
        }


def _shell_integrals(f: Nonlinearity, epsilon: float, n_shells: int) -> np.ndarray:
    """Integral of 1/f over each dyadic shell below epsilon, 4 x 16 GL nodes per shell."""
    k = np.arange(1, n_shells + 1, dtype=float)
    edges = epsilon * np.exp2(-(k[:, None] - 1.0) - np.linspace(1.0, 0.0, 5)[None, :])
    with np.errstate(over="ignore"):
        parts = f.reciprocal_integral(edges[:, :-1], edges[:, 1:])
    return parts.sum(axis=1)


def _harmonic_trend(d: np.ndarray, first_index: int) -> tuple[float, float]:
    """Minimum and log-log slope of k*d_k; bounded-below k*d_k forces a divergent sum."""
    k = np.arange(first_index, first_index + len(d), dtype=float)
    g = k * d
    slope = float(np.polyfit(np.log(k), np.log(g), 1)[0])
    return float(g.min()), slope


def _exact_geometric_ratio(d: np.ndarray) -> float | None:
    """Common ratio of d if it is geometric to roundoff with ratio clearly below 1.

    Shell integrals of a pure power law u**-p are exactly geometric with ratio
    2**(p-1), so the tail sums in closed form even when the increments are
    still far above ``tol``. Harmonic-type decay (d_k ~ 1/k) bends in log d_k
    by ~1e-4 across a window and is never mistaken for this.
    """
    if np.any(d <= 0):
        return None
    k = np.arange(len(d), dtype=float)
    logs = np.log(d)
    slope, icept = np.polyfit(k, logs, 1)
    if np.max(np.abs(logs - (slope * k + icept))) > _GEOMETRIC_FIT_TOL:
        return None
    rho = math.exp(slope)
    return rho if rho < 1.0 - _GEOMETRIC_RATIO_MARGIN else None


def check_osgood(
    f: Nonlinearity,
    epsilon: float | None = None,
    tol: float = 1e-10,
    *,
    max_shells: int = 400,
    window: int = 16,
    min_shells: int = 8,
) -> OsgoodVerdict:
    """Probe the integral of 1/f over (delta, epsilon] for delta = epsilon*2**-k.

    Convergent once a shell increment and the geometric estimate of the
    remaining tail both drop below ``tol``, or when the last ``window``
    increments are exactly geometric (then the tail is summed in closed
    form). Divergent when, over the last
    ``window`` (>= 8) shells, the harmonic-scaled increments k*d_k stay above a
    positive floor with no downward trend. Anything else is Inconclusive.
    """
    if epsilon is None:
        epsilon = min(1.0, f.domain_cap)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if epsilon > f.domain_cap:
        raise ValueError(f"epsilon={epsilon} exceeds domain_cap={f.domain_cap}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    window = max(window, min_shells)

    d = _shell_integrals(f, epsilon, max_shells)
    finite = np.isfinite(d)
    if not finite.all():
        # f underflowed to 0 at tiny u: 1/f is astronomically large there
        d = d[: int(np.argmin(finite))]
    partial = np.cumsum(d)
    deltas = epsilon * np.exp2(-np.arange(1, len(d) + 1, dtype=float))

    stop = None
    for k in range(max(min_shells, 2), len(d) + 1):
        dk, prev = d[k - 1], d[k - 2]
        if dk < tol and prev > 0:
            ratio = dk / prev
            if ratio < 1.0 and dk * ratio / (1.0 - ratio) < tol:
                stop = k
                break

    if stop is not None:
        trace = tuple(zip(deltas[:stop].tolist(), partial[:stop].tolist()))
        return OsgoodVerdict(OsgoodClass.CONVERGENT, float(partial[stop - 1]), trace, epsilon, tol)

    trace = tuple(zip(deltas.tolist(), partial.tolist()))
    n = len(d)
    if n >= window:
        rho = _exact_geometric_ratio(d[n - window :])
        if rho is not None:
            tail = float(d[-1] * rho / (1.0 - rho))
            return OsgoodVerdict(OsgoodClass.CONVERGENT, float(partial[-1]) + tail, trace, epsilon, tol)
    if n < min_shells:
        # underflow after a handful of shells: 1/f blew up immediately
        cls = OsgoodClass.DIVERGENT if n < max_shells else OsgoodClass.INCONCLUSIVE
        return OsgoodVerdict(cls, math.inf, trace, epsilon, tol)
    w = min(window, n)
    floor, slope = _harmonic_trend(d[n - w :], n - w + 1)
    if floor > 0 and slope > -0.01:
        return OsgoodVerdict(OsgoodClass.DIVERGENT, math.inf, trace, epsilon, tol)
    return OsgoodVerdict(OsgoodClass.INCONCLUSIVE, float(partial[-1]), trace, epsilon, tol)


# ---------------------------------------------------------------------------
# Comparison ODE  mu' = rate * f(mu),  mu(0) = 0


@dataclass(frozen=True, eq=False)
class _Primitive:
    nodes: np.ndarray  # increasing, nodes[-1] == domain_cap
    values: np.ndarray  # F at nodes, F(mu) = int_0^mu du / f
    tail_exponent: float  # F ~ values[0] * (mu/nodes[0])**tail_exponent below nodes[0]


@functools.lru_cache(maxsize=32)
def primitive_table(f: Nonlinearity) -> _Primitive:
    """Tabulate F(mu) = int_0^mu du/f(u) on 64 log-spaced points per dyadic shell.

    Accumulated from the bottom so small-mu values keep their relative accuracy;
    the part below the deepest node comes from a geometric fit of the last shells.
    """
    cap = f.domain_cap
    n_shells = int(math.floor(math.log2(cap / _SMALLEST_NODE)))
    frac = np.arange(_POINTS_PER_SHELL + 1) / _POINTS_PER_SHELL
    exps = (np.arange(n_shells)[:, None] + frac[None, :])  # 2^-exps * cap, top to bottom
    edges = cap * np.exp2(-exps)
    with np.errstate(over="ignore"):
        pieces = f.reciprocal_integral(edges[:, 1:], edges[:, :-1])
    shell_sums = pieces.sum(axis=1)
    good = np.isfinite(shell_sums)
    if not good.all():
        n_shells = int(np.argmin(good))
        pieces, shell_sums = pieces[:n_shells], shell_sums[:n_shells]
    if n_shells < 4:
        raise OsgoodHolds("1/f is not integrable near 0 on this floating-point range")
    ratio = shell_sums[-1] / shell_sums[-2]
    if not ratio < 1.0:
        raise OsgoodHolds("shell integrals of 1/f are not decaying; F(0+) is infinite")
    tail = shell_sums[-1] * ratio / (1.0 - ratio)
    tail_exponent = -math.log2(ratio)

    # bottom-up ordering: smallest node first
    incr = pieces[::-1, ::-1].ravel()
    nodes = np.concatenate(
        [[edges[n_shells - 1, -1]], edges[:n_shells, :-1][::-1, ::-1].ravel()]
    )
    values = tail + np.concatenate([[0.0], np.cumsum(incr)])
    return _Primitive(nodes, values, tail_exponent)


@dataclass(frozen=True, eq=False)
class OdeProfile:
    """Sampled nontrivial solution of mu' = rate*f(mu), mu(0) = 0."""

    f: Nonlinearity
    rate: float
    horizon: float
    times: np.ndarray
    values: np.ndarray
    table: _Primitive = field(repr=False)

    @property
    def F_table(self) -> tuple[np.ndarray, np.ndarray]:
        return self.table.nodes, self.table.values

    def F(self, mu) -> np.ndarray:
        """F(mu) = int_0^mu du/f(u)."""
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        nodes, vals = self.table.nodes, self.table.values
        out = np.zeros_like(mu)
        for i, m in enumerate(mu):
            if m <= 0:
                continue
            j = int(np.searchsorted(nodes, m, side="right")) - 1
            if j < 0:
                out[i] = vals[0] * (m / nodes[0]) ** self.table.tail_exponent
            else:
                out[i] = vals[j] + float(self.f.reciprocal_integral(nodes[j], m))
        return out

    def mu(self, t) -> np.ndarray:
        return _invert(self.f, self.table, self.rate * np.atleast_1d(np.asarray(t, dtype=float)))


def _invert(f: Nonlinearity, table: _Primitive, targets: np.ndarray) -> np.ndarray:
    nodes, vals = table.nodes, table.values
    if np.any(targets < 0):
        raise ValueError("negative time")
    if np.any(targets > vals[-1] * (1 + 1e-14)):
        raise HorizonExceeded(
            f"F(domain_cap)={vals[-1]:.6g} is smaller than rate*t={targets.max():.6g}"
        )
    out = np.zeros_like(targets)
    for i, target in enumerate(targets):
        if target == 0:
            continue
        if target >= vals[-1]:
            out[i] = nodes[-1]
            continue
        j = int(np.searchsorted(vals, target, side="right")) - 1
        if j < 0:
            out[i] = nodes[0] * (target / vals[0]) ** (1.0 / table.tail_exponent)
            continue
        lo, base = nodes[j], vals[j]

        def resid(s, lo=lo, base=base, target=target):
            return base + float(f.reciprocal_integral(lo, math.exp(s))) - target

        a, b = math.log(lo), math.log(nodes[j + 1])
        if resid(a) >= 0:
            out[i] = lo
            continue
        out[i] = math.exp(brentq(resid, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps))
    return out


def solve_mu(
    f: Nonlinearity,
    rate: float,
    t_grid: Sequence[float],
    *,
    verdict: OsgoodVerdict | None = None,
) -> OdeProfile:
    """Invert F(mu) = rate*t on ``t_grid``; requires f to fail the Osgood test."""
    if not rate > 0:
        raise ValueError("rate must be positive")
    if verdict is None:
        verdict = check_osgood(f)
    if verdict.classification is OsgoodClass.DIVERGENT:
        raise OsgoodHolds("Osgood integral diverges: mu = 0 is the only solution")
    if verdict.classification is OsgoodClass.INCONCLUSIVE:
        raise InconclusiveOsgood("cannot certify that the Osgood integral converges")
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t) < 0):
        raise ValueError("t_grid must be non-decreasing")
    table = primitive_table(f)
    values = _invert(f, table, rate * t)
    return OdeProfile(f, float(rate), float(table.values[-1] / rate), t, values, table)
