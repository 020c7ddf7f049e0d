"""A nontrivial bounded mild solution from zero data when Osgood fails.

Pipeline: locate a ball where q is bounded below, bound the Dirichlet heat
flow of its indicator from below, seed ``v = mu(t) chi_R`` with the
comparison ODE, cap with ``w = t``, then iterate the Duhamel map upward
from ``v``. Every inequality the argument needs is re-checked on the grid
and collected in a :class:`NonUniquenessCertificate`.

The Duhamel map integrates the semigroup exactly over each time step and
interpolates the source ``q f(u)`` linearly in time. Both step weights are
positive operators, so the discrete map stays monotone in ``u``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .elliptic import (
    DiscreteSemigroup,
    EllipticProblem,
    MatrixExponential,
    build_semigroup,
    estimate_kappa,
)
from .errors import (
    InconclusiveOsgood,
    MonotonicityViolation,
    NonConvergence,
    OsgoodHolds,
)
from .nonlinearity import (
    Nonlinearity,
    OsgoodClass,
    OsgoodVerdict,
    check_osgood,
    primitive_table,
    shift_nonlinearity,
    solve_mu,
)

__all__ = [
    "SpaceTimeField",
    "ConstructionParams",
    "DuhamelOperator",
    "IterationResult",
    "NonUniquenessCertificate",
    "Reduction",
    "derive_params",
    "build_subsolution",
    "build_supersolution",
    "duhamel",
    "duhamel_residual",
    "monotone_iterate",
    "certify_nonuniqueness",
    "reduce_indefinite_c",
    "chain_tolerance",
]

_SAFETY_FACTORS = (0.0, 1e-3, 1e-2, 0.05, 0.1, 0.25, 0.5)


def chain_tolerance(w_sup: float) -> float:
    return 1e-8 * (1.0 + w_sup)


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Non-negative values on (uniform time grid) x (space grid), zero at t = 0."""

    times: np.ndarray
    values: np.ndarray  # shape (len(times), N)
    points: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[0] != len(self.times):
            raise ValueError("values must have one row per time")
        if vals.size and vals.min() < 0:
            raise ValueError("fields must be non-negative")
        if np.any(vals[0] != 0):
            raise ValueError("fields must vanish at t = 0")
        object.__setattr__(self, "values", vals)

    @property
    def sup_norm(self) -> float:
        return float(self.values.max()) if self.values.size else 0.0

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def final(self) -> np.ndarray:
        return self.values[-1]

    def replace_values(self, values: np.ndarray) -> "SpaceTimeField":
        return SpaceTimeField(self.times, values, self.points)


@dataclass(frozen=True)
class ConstructionParams:
    x0: tuple
    x0_index: int
    rho: float
    gamma: float
    r: float
    R: float
    kappa_sampled: float  # min over the geometric time sample
    kappa_lags: float  # min over the step lags actually used
    kappa: float  # min of the two
    T_star: float
    T_prime: float
    tau: float
    T: float
    n_steps: int
    dt: float
    q_sup: float
    safety: float = 0.0  # fractional reduction applied to kappa*gamma, if any

    @property
    def rate(self) -> float:
        return self.kappa * self.gamma * (1.0 - self.safety)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["x0"] = list(self.x0)
        out["rate"] = self.rate
        return out


def _ball_radius(problem: EllipticProblem, x0_index: int) -> tuple[float, float]:
    """Largest grid radius 3*rho with B_3rho(x0) strictly inside and q >= q(x0)/2 there."""
    dom = problem.domain
    h = min(dom.spacing)
    x0 = dom.points[x0_index]
    dist = dom.distance(x0)
    q = problem.q_grid
    top = dom.boundary_distance(x0) - h
    k = int(math.floor(top / h + 1e-9))
    while k >= 1:
        rad = min(k * h, top)
        gamma = float(q[dist <= rad + 1e-9 * h].min())
        if gamma >= 0.5 * q[x0_index] and gamma > 0:
            return rad / 3.0, gamma
        k -= 1
    raise ValueError("no interior ball on which q stays positive on this grid")


def _pick_center(problem: EllipticProblem) -> int:
    """argmax q over interior nodes; ties go to the node farthest from the
    boundary, then to the smallest index."""
    dom = problem.domain
    interior = np.flatnonzero(~dom.boundary_mask)
    q = problem.q_grid[interior]
    depth = np.array([dom.boundary_distance(p) for p in dom.points[interior]])
    order = np.lexsort((interior, -np.round(depth, 12), -q))
    return int(interior[order[0]])


def _largest_tau(f: Nonlinearity, q_sup: float) -> float:
    cap = f.domain_cap
    if float(f(cap)) * q_sup <= 1.0:
        return cap
    lo, hi = 0.0, cap
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(f(mid)) * q_sup <= 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return lo


def derive_params(
    problem: EllipticProblem,
    f: Nonlinearity,
    dt: float = 1e-3,
    *,
    r: float | None = None,
    t_samples: int = 16,
    verdict: OsgoodVerdict | None = None,
    stepper=None,
    workers: int | None = None,
) -> ConstructionParams:
    """Choose x0, rho, gamma, R, kappa, tau and T for the subsolution argument.

    ``dt`` is an upper bound; the step actually used is T / ceil(T / dt).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    verdict = verdict or check_osgood(f)
    _require_convergent(verdict)
    if problem.c_grid.max() > 0:
        raise ValueError("derive_params needs c <= 0; use reduce_indefinite_c first")

    dom = problem.domain
    i0 = _pick_center(problem)
    x0 = dom.points[i0]
    rho, gamma = _ball_radius(problem, i0)
    r = min(rho, 0.999) if r is None else float(r)
    R = min(r, rho)

    kap = estimate_kappa(problem, R, t_samples, center=x0, stepper=stepper, workers=workers)
    kappa = kap.kappa
    q_sup = problem.q_sup
    table = primitive_table(f)
    T_star = float(table.values[-1] / (kappa * gamma))
    T_prime = min(T_star, R * R / 8)

    tau = _largest_tau(f, q_sup)
    # shrink tau until mu(t) <= t on [0, tau]
    for _ in range(100):
        top = min(tau, T_star)
        ts = np.unique(np.concatenate([np.geomspace(top * 1e-8, top, 400), np.linspace(0, top, 401)]))
        mu = solve_mu(f, kappa * gamma, ts, verdict=verdict).values
        bad = np.flatnonzero(mu > ts)
        if bad.size == 0:
            break
        tau = 0.9 * ts[bad[0]]
    else:
        raise ValueError("could not find tau with v <= w")

    T = min(tau, T_prime)
    n_steps = max(2, math.ceil(T / dt - 1e-9))
    step = T / n_steps

    # the chain uses S_D at every lag k*step, so the bound must hold there too
    sg_d = build_semigroup(problem.with_beta(0.0), stepper)
    P = sg_d.propagator(step)
    chi = dom.indicator(x0, R)
    ball = np.flatnonzero(chi)
    cur, lag_min = chi, 1.0
    for _ in range(n_steps):
        cur = P @ cur
        lag_min = min(lag_min, float(cur[ball].min()))

    return ConstructionParams(
        x0=tuple(float(v) for v in x0),
        x0_index=i0,
        rho=rho,
        gamma=gamma,
        r=r,
        R=R,
        kappa_sampled=kappa,
        kappa_lags=lag_min,
        kappa=min(kappa, lag_min),
        T_star=T_star,
        T_prime=T_prime,
        tau=tau,
        T=T,
        n_steps=n_steps,
        dt=step,
        q_sup=q_sup,
    )


def _require_convergent(verdict: OsgoodVerdict) -> None:
    if verdict.classification is OsgoodClass.DIVERGENT:
        raise OsgoodHolds(
            "Osgood integral diverges: u = 0 is the unique bounded solution, no certificate exists"
        )
    if verdict.classification is OsgoodClass.INCONCLUSIVE:
        raise InconclusiveOsgood("Osgood probe is inconclusive")


def build_subsolution(params: ConstructionParams, f: Nonlinearity, domain, mu_profile=None) -> SpaceTimeField:
    """v(x, t) = mu(t) chi_R(x) on the params time grid."""
    times = params.times
    if mu_profile is None:
        mu_profile = solve_mu(f, params.rate, times)
    mu = np.asarray(mu_profile.values if hasattr(mu_profile, "values") else mu_profile, dtype=float)
    if mu.shape != times.shape:
        raise ValueError("mu profile must be sampled on the params time grid")
    chi = domain.indicator(np.array(params.x0), params.R)
    return SpaceTimeField(times, mu[:, None] * chi[None, :], domain.points)


def build_supersolution(params: ConstructionParams, domain) -> SpaceTimeField:
    """w(x, t) = t."""
    times = params.times
    return SpaceTimeField(times, np.repeat(times[:, None], domain.size, axis=1), domain.points)


class DuhamelOperator:
    """u -> int_0^t S(t-s) [q f(u(s))] ds on a fixed uniform time grid."""

    def __init__(self, sg: DiscreteSemigroup, q: np.ndarray, f: Nonlinearity, times: np.ndarray):
        times = np.asarray(times, dtype=float)
        steps = np.diff(times)
        if times[0] != 0 or np.any(np.abs(steps - steps[0]) > 1e-9 * steps[0]):
            raise ValueError("Duhamel needs a uniform time grid starting at 0")
        self.sg = sg
        self.q = np.asarray(q, dtype=float)
        self.f = f
        self.times = times
        self.dt = float(steps[0])
        self.P, self.W_old, self.W_new = sg.duhamel_weights(self.dt)

    def source(self, values: np.ndarray) -> np.ndarray:
        u = np.asarray(values, dtype=float)
        if u.min() < 0:
            raise ValueError("Duhamel input must be non-negative")
        if u.max() > self.f.domain_cap:
            raise ValueError("Duhamel input exceeds the nonlinearity's domain_cap")
        return self.q[None, :] * self.f(u)

    def __call__(self, values: np.ndarray) -> np.ndarray:
        g = self.source(values)
        older = g[:-1] @ self.W_old.T
        newer = g[1:] @ self.W_new.T
        out = np.zeros_like(g)
        acc = np.zeros(g.shape[1])
        for m in range(1, len(self.times)):
            acc = self.P @ acc + older[m - 1] + newer[m - 1]
            out[m] = acc
        return out


def duhamel(sg: DiscreteSemigroup, q, f: Nonlinearity, u: SpaceTimeField) -> SpaceTimeField:
    op = DuhamelOperator(sg, q, f, u.times)
    return u.replace_values(op(u.values))


def duhamel_residual(problem: EllipticProblem, f: Nonlinearity, u: SpaceTimeField, stepper=None) -> float:
    """sup |u - Phi(u)| for the Duhamel map of ``problem`` and ``f``."""
    sg = build_semigroup(problem, stepper)
    op = DuhamelOperator(sg, problem.q_grid, f, u.times)
    return float(np.abs(u.values - op(u.values)).max())


@dataclass(frozen=True, eq=False)
class IterationResult:
    field: SpaceTimeField
    iterations: int
    residual: float
    increments: tuple  # sup |u_{n+1} - u_n| per step
    order_margins: tuple  # min (up) or -max (down) of u_{n+1} - u_n per step
    iterates: tuple = ()


def monotone_iterate(
    op: DuhamelOperator,
    start: SpaceTimeField,
    direction: str = "up",
    *,
    max_iter: int = 2000,
    tol_fix: float = 1e-9,
    tol_chain: float | None = None,
    tol_res_rel: float = 1e-6,
    keep_iterates: bool = False,
) -> IterationResult:
    """Picard iteration u_{n+1} = Phi(u_n), monotone from a sub/supersolution.

    Stops once sup|u_{n+1} - u_n| is below both ``tol_fix`` and a tenth of the
    residual target ``tol_res_rel * sup u``.
    """
    if direction not in ("up", "down"):
        raise ValueError("direction must be 'up' or 'down'")
    sign = 1.0 if direction == "up" else -1.0
    u = start.values
    if tol_chain is None:
        tol_chain = chain_tolerance(float(start.times[-1]))

    new = op(u)
    first = float((sign * (new - u)).min())
    if first < -tol_chain:
        kind = "subsolution" if direction == "up" else "supersolution"
        raise MonotonicityViolation(f"start is not a {kind}: margin {first:.3g}")

    increments, margins, kept = [], [], []
    for n in range(1, max_iter + 1):
        delta = new - u
        margin = float((sign * delta).min())
        if margin < -tol_chain:
            raise MonotonicityViolation(f"iterate {n} breaks the ordering by {-margin:.3g}")
        step = float(np.abs(delta).max())
        increments.append(step)
        margins.append(margin)
        if keep_iterates:
            kept.append(new)
        u = new
        target = min(tol_fix, 0.1 * tol_res_rel * max(float(u.max()), 1e-300))
        if step <= target or step == 0.0:
            break
        new = op(u)
    else:
        raise NonConvergence(f"no fixed point within {max_iter} iterations (last step {step:.3g})")

    residual = float(np.abs(u - op(u)).max())
    return IterationResult(
        start.replace_values(u), n, residual, tuple(increments), tuple(margins), tuple(kept)
    )


class Reduction(NamedTuple):
    problem: EllipticProblem
    f: Nonlinearity
    sigma: float


def reduce_indefinite_c(problem: EllipticProblem, f: Nonlinearity) -> Reduction:
    """Shift c by sigma = sup|c| and f by sigma*u; the two problems share solutions."""
    sigma = float(np.abs(problem.c_grid).max())
    if sigma == 0:
        return Reduction(problem, f, 0.0)
    return Reduction(problem.with_c(problem.c_grid - sigma), shift_nonlinearity(f, sigma), sigma)


@dataclass(frozen=True, eq=False)
class NonUniquenessCertificate:
    params: ConstructionParams
    v: SpaceTimeField
    U: SpaceTimeField
    w: SpaceTimeField
    lower_margin: float  # min(U - v)
    upper_margin: float  # min(w - U)
    subsolution_margin: float  # min(Phi(v) - v)
    duhamel_residual: float
    zero_residual: float
    positivity_margin: float
    U_final_sup: float
    mu_final: float
    iterations: int
    tol_chain: float
    tol_res: float
    sigma: float = 0.0
    original_residual: float | None = None
    maximal: IterationResult | None = field(default=None, repr=False)
    iteration: IterationResult | None = field(default=None, repr=False)

    @property
    def chain_margins(self) -> tuple:
        return self.lower_margin, self.upper_margin

    def checks(self) -> dict:
        return {
            "sandwich_lower": self.lower_margin >= -self.tol_chain,
            "sandwich_upper": self.upper_margin >= -self.tol_chain,
            "subsolution": self.subsolution_margin >= -self.tol_chain,
            "duhamel_residual": self.duhamel_residual <= self.tol_res,
            "positivity": self.positivity_margin > 0,
            "nontrivial": self.U_final_sup >= self.mu_final - self.tol_chain and self.U_final_sup > 0,
            "zero_solution": self.zero_residual == 0.0,
        }

    @property
    def valid(self) -> bool:
        return all(self.checks().values())

    def to_dict(self) -> dict:
        out = {
            "result": "NonUniqueness" if self.valid else "CertificateFailed",
            "valid": self.valid,
            "checks": self.checks(),
            "params": self.params.to_dict(),
            "chain_margins": {"U_minus_v": self.lower_margin, "w_minus_U": self.upper_margin},
            "subsolution_margin": self.subsolution_margin,
            "duhamel_residual": self.duhamel_residual,
            "zero_field_residual": self.zero_residual,
            "positivity_margin": self.positivity_margin,
            "norms": {
                "U_sup": self.U.sup_norm,
                "U_final_sup": self.U_final_sup,
                "mu_T": self.mu_final,
                "v_sup": self.v.sup_norm,
                "w_sup": self.w.sup_norm,
            },
            "tolerances": {"tol_chain": self.tol_chain, "tol_res": self.tol_res},
            "iterations": self.iterations,
            "sigma": self.sigma,
        }
        if self.original_residual is not None:
            out["original_formulation_residual"] = self.original_residual
        if self.maximal is not None:
            out["maximal_candidate"] = {
                "U_sup": self.maximal.field.sup_norm,
                "iterations": self.maximal.iterations,
                "residual": self.maximal.residual,
            }
        return out

    def field_rows(self):
        """(x..., t, v, U, w) rows in time-major order."""
        pts = self.U.points
        for m, t in enumerate(self.U.times):
            for i in range(len(pts)):
                yield (*pts[i], t, self.v.values[m, i], self.U.values[m, i], self.w.values[m, i])


def certify_nonuniqueness(
    problem: EllipticProblem,
    f: Nonlinearity,
    dt: float = 1e-3,
    *,
    r: float | None = None,
    t_samples: int = 16,
    stepper=None,
    max_iter: int = 2000,
    with_maximal: bool = True,
    workers: int | None = None,
) -> NonUniquenessCertificate:
    """Build v <= U <= w with U = Phi(U) and U > 0 inside, for non-Osgood f.

    Problems with a positive part in c are first shifted by
    :func:`reduce_indefinite_c`; the certificate then also records the
    residual of U under the original data.
    """
    verdict = check_osgood(f)
    _require_convergent(verdict)

    original = None
    sigma = 0.0
    if problem.c_grid.max() > 0:
        original = (problem, f)
        problem, f, sigma = reduce_indefinite_c(problem, f)
        verdict = check_osgood(f)
        _require_convergent(verdict)

    params = derive_params(
        problem, f, dt, r=r, t_samples=t_samples, verdict=verdict, stepper=stepper, workers=workers
    )
    dom = problem.domain
    sg = build_semigroup(problem, stepper)
    op = DuhamelOperator(sg, problem.q_grid, f, params.times)
    w = build_supersolution(params, dom)
    tol_chain = chain_tolerance(w.sup_norm)

    for safety in _SAFETY_FACTORS:
        trial = _with_safety(params, safety)
        v = build_subsolution(trial, f, dom, solve_mu(f, trial.rate, trial.times, verdict=verdict))
        sub_margin = float((op(v.values) - v.values).min())
        if sub_margin >= -tol_chain and float((w.values - v.values).min()) >= -tol_chain:
            params = trial
            break
    else:
        raise MonotonicityViolation("v fails the discrete subsolution test at every safety factor")

    it = monotone_iterate(op, v, "up", max_iter=max_iter, tol_chain=tol_chain)
    U = it.field
    maximal = None
    if with_maximal:
        try:
            maximal = monotone_iterate(op, w, "down", max_iter=max_iter, tol_chain=tol_chain)
        except (NonConvergence, MonotonicityViolation):
            maximal = None

    interior = ~dom.boundary_mask
    late = params.times >= 0.5 * params.T - 1e-15
    positivity = float(U.values[np.ix_(late, interior)].min())
    original_residual = None
    if original is not None:
        original_residual = duhamel_residual(original[0], original[1], U, stepper)

    return NonUniquenessCertificate(
        params=params,
        v=v,
        U=U,
        w=w,
        lower_margin=float((U.values - v.values).min()),
        upper_margin=float((w.values - U.values).min()),
        subsolution_margin=sub_margin,
        duhamel_residual=it.residual,
        zero_residual=float(np.abs(op(np.zeros_like(U.values))).max()),
        positivity_margin=positivity,
        U_final_sup=float(U.final().max()),
        mu_final=float(v.values[-1].max()),
        iterations=it.iterations,
        tol_chain=tol_chain,
        tol_res=1e-6 * U.sup_norm,
        sigma=sigma,
        original_residual=original_residual,
        maximal=maximal,
        iteration=it,
    )


def _with_safety(params: ConstructionParams, safety: float) -> ConstructionParams:
    from dataclasses import replace

    return replace(params, safety=safety)
