"""Finite-difference elliptic operators with Robin boundary data, their heat
semigroups and kernels, and numerical checks of the two comparison lemmas.

Grid conventions: uniform ``grid_n`` points per axis including the boundary,
flattened in C order (``meshgrid(..., indexing="ij")``). Nodes on an edge
with ``beta == 0`` are Dirichlet nodes held at zero; every other node is an
unknown. Robin/Neumann edges use a ghost point whose value is fixed by the
blended condition ``beta * du/dnu + (1 - beta) * u = 0`` with a centred
conormal difference, then the PDE row is imposed on the edge node itself.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._expm import action_cost, expm_metzler, expm_metzler_action, exponential_trapezoid_weights
from .errors import ConstructionError, KappaNotPositive

__all__ = [
    "Domain",
    "EllipticProblem",
    "MatrixExponential",
    "CrankNicolson",
    "ImplicitEuler",
    "DiscreteSemigroup",
    "KernelMatrix",
    "OrderingReport",
    "KappaEstimate",
    "build_semigroup",
    "kernel_matrix",
    "verify_kernel_ordering",
    "estimate_kappa",
    "default_workers",
]

Coefficient = Union[float, Callable, np.ndarray]

_MAX_EXPM_AXIS = 512
DIRICHLET_BETA = 1e-10
_MAX_DENSE_UNKNOWNS = 4096


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("OSGOODLAB_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True, eq=False)
class Domain:
    """An interval (d=1) or rectangle (d=2) with a uniform grid."""

    bounds: tuple
    grid_n: int

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(bounds) not in (1, 2):
            raise ConstructionError("only d = 1 or d = 2 is supported")
        if any(not hi > lo for lo, hi in bounds):
            raise ConstructionError("domain bounds must satisfy lo < hi")
        if int(self.grid_n) < 3:
            raise ConstructionError("grid_n must be at least 3")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "grid_n", int(self.grid_n))

    @classmethod
    def interval(cls, lo: float, hi: float, grid_n: int) -> "Domain":
        return cls(((lo, hi),), grid_n)

    @classmethod
    def rectangle(cls, x_bounds, y_bounds, grid_n: int) -> "Domain":
        return cls((tuple(x_bounds), tuple(y_bounds)), grid_n)

    @property
    def dimension(self) -> int:
        return len(self.bounds)

    @property
    def shape(self) -> tuple:
        return (self.grid_n,) * self.dimension

    @property
    def size(self) -> int:
        return self.grid_n**self.dimension

    @property
    def spacing(self) -> tuple:
        return tuple((hi - lo) / (self.grid_n - 1) for lo, hi in self.bounds)

    @property
    def h(self) -> float:
        return self.spacing[0]

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def axes(self) -> list:
        return [np.linspace(lo, hi, self.grid_n) for lo, hi in self.bounds]

    @property
    def points(self) -> np.ndarray:
        """(N, d) array of grid coordinates."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def coordinates(self) -> tuple:
        """Per-axis flat coordinate arrays, convenient for coefficient callables."""
        pts = self.points
        return tuple(pts[:, i] for i in range(self.dimension))

    @property
    def boundary_mask(self) -> np.ndarray:
        idx = np.indices(self.shape).reshape(self.dimension, -1)
        return np.any((idx == 0) | (idx == self.grid_n - 1), axis=0)

    @property
    def center(self) -> np.ndarray:
        return np.array([(lo + hi) / 2 for lo, hi in self.bounds])

    def distance(self, center) -> np.ndarray:
        center = np.atleast_1d(np.asarray(center, dtype=float))
        return np.linalg.norm(self.points - center, axis=1)

    def indicator(self, center, r: float) -> np.ndarray:
        """Sharp grid indicator of the closed ball |x - center| <= r."""
        return (self.distance(center) <= r + 1e-9 * self.h).astype(float)

    def boundary_distance(self, center) -> float:
        center = np.atleast_1d(np.asarray(center, dtype=float))
        return float(min(min(c - lo, hi - c) for c, (lo, hi) in zip(center, self.bounds)))

    def contains_ball(self, center, radius: float) -> bool:
        """True when the closed ball stays strictly inside the open domain."""
        return radius < self.boundary_distance(center) - 1e-12 * self.h

    def nearest_index(self, point) -> int:
        return int(np.argmin(self.distance(point)))


# ---------------------------------------------------------------------------
# problem data


def _on_grid(value: Coefficient, domain: Domain, name: str, components: int = 1) -> np.ndarray:
    n = domain.size
    if callable(value):
        raw = value(*domain.coordinates)
    else:
        raw = value
    arr = np.asarray(raw, dtype=float)
    if components == 1:
        arr = np.broadcast_to(arr, (n,)).copy()
    else:
        if arr.ndim == 0:
            arr = np.broadcast_to(arr, (components, n)).copy()
        elif arr.shape[0] == components:
            arr = np.stack([np.broadcast_to(np.asarray(a, dtype=float), (n,)) for a in arr])
        else:
            raise ConstructionError(f"{name} must have {components} components")
    if not np.all(np.isfinite(arr)):
        raise ConstructionError(f"coefficient {name} is not finite on the grid")
    return arr


@dataclass(frozen=True, eq=False)
class EllipticProblem:
    """Data of u_t = L u + q f(u) with L u = a:D^2u + b.Du + c u and B u = 0.

    Coefficients may be numbers, arrays on the grid, or callables of the
    coordinate arrays. In 2-d, ``a`` is a triple (a11, a12, a22) and ``b`` a
    pair; ``beta`` is one value per boundary side, ordered
    (x_lo, x_hi[, y_lo, y_hi]); a scalar means the same value everywhere.
    """

    domain: Domain
    a: Coefficient = 1.0
    b: Coefficient = 0.0
    c: Coefficient = 0.0
    beta: object = 0.0
    q: Coefficient = 1.0
    ellipticity_k: float | None = None

    a_grid: np.ndarray = field(init=False, repr=False)
    b_grid: np.ndarray = field(init=False, repr=False)
    c_grid: np.ndarray = field(init=False, repr=False)
    q_grid: np.ndarray = field(init=False, repr=False)
    beta_sides: tuple = field(init=False, repr=False)

    def __post_init__(self):
        dom, d = self.domain, self.domain.dimension
        if d == 1:
            a = _on_grid(self.a, dom, "a")[None, None, :]
            b = _on_grid(self.b, dom, "b")[None, :]
        else:
            a_in = self.a
            if not callable(a_in) and np.ndim(a_in) == 0:
                a_in = (a_in, 0.0, a_in)
            a3 = _on_grid(a_in, dom, "a", components=3)
            if np.any(a3[1] != 0):
                raise ConstructionError("mixed second derivatives (a12 != 0) are not supported")
            a = np.array([[a3[0], a3[1]], [a3[1], a3[2]]])
            b = _on_grid(self.b, dom, "b", components=2)
        c = _on_grid(self.c, dom, "c")
        q = _on_grid(self.q, dom, "q")

        k = _ellipticity(a)
        if self.ellipticity_k is None:
            object.__setattr__(self, "ellipticity_k", k)
        elif not (0 < self.ellipticity_k <= k + 1e-14):
            raise ConstructionError(
                f"uniform ellipticity fails for k={self.ellipticity_k}: best grid constant is {k:.6g}"
            )
        if k <= 0:
            raise ConstructionError("a is not uniformly elliptic on the grid")

        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if beta.size == 1:
            beta = np.repeat(beta, 2 * d)
        if beta.size != 2 * d:
            raise ConstructionError(f"beta needs {2 * d} side values")
        if np.any(beta < 0) or np.any(beta > 1):
            raise ConstructionError("beta must lie in [0, 1]")
        if np.any(q < 0) or not q.max() > 0:
            raise ConstructionError("q must be non-negative and not identically zero")

        object.__setattr__(self, "a_grid", a)
        object.__setattr__(self, "b_grid", b)
        object.__setattr__(self, "c_grid", c)
        object.__setattr__(self, "q_grid", q)
        # the ghost-node Robin coefficient scales like 1/beta; below this the
        # side is Dirichlet to far better than discretization accuracy
        beta = np.where(beta <= DIRICHLET_BETA, 0.0, beta)
        object.__setattr__(self, "beta_sides", tuple(float(x) for x in beta))

    def with_beta(self, beta) -> "EllipticProblem":
        return self._rebuild(beta=beta)

    def with_c(self, c) -> "EllipticProblem":
        return self._rebuild(c=c)

    def _rebuild(self, **changes) -> "EllipticProblem":
        base = dict(
            domain=self.domain,
            a=self.a_grid[0, 0] if self.domain.dimension == 1 else
              (self.a_grid[0, 0], self.a_grid[0, 1], self.a_grid[1, 1]),
            b=self.b_grid[0] if self.domain.dimension == 1 else self.b_grid,
            c=self.c_grid,
            beta=self.beta_sides,
            q=self.q_grid,
            ellipticity_k=self.ellipticity_k,
        )
        base.update(changes)
        return EllipticProblem(**base)

    @property
    def q_sup(self) -> float:
        return float(self.q_grid.max())

    @property
    def is_dirichlet(self) -> bool:
        return all(b == 0 for b in self.beta_sides)

    def dirichlet_mask(self) -> np.ndarray:
        dom = self.domain
        idx = np.indices(dom.shape).reshape(dom.dimension, -1)
        mask = np.zeros(dom.size, dtype=bool)
        for axis in range(dom.dimension):
            if self.beta_sides[2 * axis] == 0:
                mask |= idx[axis] == 0
            if self.beta_sides[2 * axis + 1] == 0:
                mask |= idx[axis] == dom.grid_n - 1
        return mask


def _ellipticity(a: np.ndarray) -> float:
    """Largest k with k|y|^2 <= y.a.y <= |y|^2/k on axis and diagonal test vectors."""
    d = a.shape[0]
    tests = [np.eye(d)[i] for i in range(d)]
    if d == 2:
        s = 1 / math.sqrt(2)
        tests += [np.array([s, s]), np.array([s, -s])]
    forms = np.array([np.einsum("i,ijn,j->n", y, a, y) for y in tests])
    lo, hi = forms.min(), forms.max()
    if lo <= 0:
        return 0.0
    return float(min(lo, 1.0 / hi))


def assemble_generator(problem: EllipticProblem) -> sp.csr_matrix:
    """Full N x N finite-difference matrix of L with ghost-point Robin rows.

    Rows of Dirichlet nodes are assembled like the rest but are discarded by
    the semigroup, which keeps those nodes at zero.
    """
    dom = problem.domain
    n, d = dom.grid_n, dom.dimension
    idx = np.indices(dom.shape).reshape(d, -1)
    flat = np.arange(dom.size)
    strides = [n ** (d - 1 - ax) for ax in range(d)]
    rows, cols, vals = [flat], [flat], [problem.c_grid.copy()]

    for ax in range(d):
        h = dom.spacing[ax]
        a = problem.a_grid[ax, ax]
        b = problem.b_grid[ax]
        pos = idx[ax]
        st = strides[ax]
        inner = (pos > 0) & (pos < n - 1)
        lo_side, hi_side = pos == 0, pos == n - 1

        i = flat[inner]
        rows += [i, i, i]
        cols += [i - st, i + st, i]
        vals += [
            a[inner] / h**2 - b[inner] / (2 * h),
            a[inner] / h**2 + b[inner] / (2 * h),
            -2 * a[inner] / h**2,
        ]
        for side, mask, sign in ((2 * ax, lo_side, +1), (2 * ax + 1, hi_side, -1)):
            beta = problem.beta_sides[side]
            if beta == 0:
                continue
            i = flat[mask]
            am, bm = a[mask], b[mask]
            # ghost: u_out = u_in - 2h (1-beta)/(a beta) u ; sign flips the drift term
            robin = (1 - beta) / beta
            rows += [i, i]
            cols += [i + sign * st, i]
            vals += [2 * am / h**2, -2 * am / h**2 - 2 * robin / h + sign * bm * robin / am]
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dom.size, dom.size),
    )
    A.sum_duplicates()
    return A


# ---------------------------------------------------------------------------
# time steppers


@dataclass(frozen=True)
class MatrixExponential:
    """Exact-in-time propagation exp(A t)."""


@dataclass(frozen=True)
class CrankNicolson:
    dt: float


@dataclass(frozen=True)
class ImplicitEuler:
    dt: float


Stepper = Union[MatrixExponential, CrankNicolson, ImplicitEuler]


class DiscreteSemigroup:
    """S(t) on the full grid; Dirichlet nodes stay zero, the rest evolve by the
    reduced generator restricted to the unknowns."""

    tol_pos_factor = 1e-12

    def __init__(self, problem: EllipticProblem, stepper: Stepper, full_generator: sp.csr_matrix):
        self.problem = problem
        self.stepper = stepper
        self.full_generator = full_generator
        self.active = ~problem.dirichlet_mask()
        self.generator = full_generator[self.active][:, self.active].tocsr()
        self._cache: dict = {}

    @property
    def domain(self) -> Domain:
        return self.problem.domain

    @property
    def n_unknowns(self) -> int:
        return int(self.active.sum())

    def _embed_matrix(self, P: np.ndarray) -> np.ndarray:
        N = self.domain.size
        full = np.zeros((N, N))
        full[np.ix_(self.active, self.active)] = P
        return full

    def _steps(self, t: float) -> tuple[int, float]:
        dt = self.stepper.dt
        k = max(1, math.ceil(t / dt - 1e-9))
        return k, t / k

    def _step_matrix(self, tau: float) -> np.ndarray:
        key = ("step", tau)
        if key not in self._cache:
            A = self.generator.toarray()
            I = np.eye(A.shape[0])
            if isinstance(self.stepper, ImplicitEuler):
                M = np.linalg.solve(I - tau * A, I)
            else:
                M = np.linalg.solve(I - 0.5 * tau * A, I + 0.5 * tau * A)
            self._cache[key] = M
        return self._cache[key]

    def propagator(self, t: float) -> np.ndarray:
        """Dense N x N matrix of S(t) (zero rows/columns at Dirichlet nodes)."""
        t = float(t)
        if t < 0:
            raise ValueError("t must be non-negative")
        if self.n_unknowns > _MAX_DENSE_UNKNOWNS:
            raise ValueError("too many unknowns for a dense propagator")
        key = ("P", t)
        if key not in self._cache:
            if isinstance(self.stepper, MatrixExponential):
                P = expm_metzler(self.generator.toarray(), t)
            elif t == 0:
                P = np.eye(self.n_unknowns)
            else:
                k, tau = self._steps(t)
                P = np.linalg.matrix_power(self._step_matrix(tau), k)
            self._cache[key] = self._embed_matrix(P)
        return self._cache[key]

    def duhamel_weights(self, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(P, W_old, W_new) on the full grid for one step of length dt.

        int_{t}^{t+dt} S(t+dt-s) g(s) ds = W_old g(t) + W_new g(t+dt)
        when g is linear in time. The exponential stepper integrates the
        semigroup exactly; the implicit steppers fall back to the trapezoid
        rule (dt/2) (P g(t) + g(t+dt)).
        """
        dt = float(dt)
        key = ("W", dt)
        if key not in self._cache:
            if isinstance(self.stepper, MatrixExponential):
                P, W0, W1 = exponential_trapezoid_weights(self.generator.toarray(), dt)
                self._cache[("P", dt)] = self._embed_matrix(P)
                parts = (self._cache[("P", dt)], self._embed_matrix(W0), self._embed_matrix(W1))
            else:
                P = self.propagator(dt)
                parts = (P, 0.5 * dt * P, 0.5 * dt * self._embed_matrix(np.eye(self.n_unknowns)))
            self._cache[key] = parts
        return self._cache[key]

    def apply(self, psi: np.ndarray, t: float) -> np.ndarray:
        """S(t) psi for psi of shape (N,) or (N, m)."""
        psi = np.asarray(psi, dtype=float)
        t = float(t)
        if ("P", t) in self._cache:
            return self._cache[("P", t)] @ psi
        sub = psi[self.active]
        if isinstance(self.stepper, MatrixExponential):
            B = self.generator
            norm_t = float(abs(B).sum(axis=1).max()) * t + 2 * float(np.abs(B.diagonal()).max()) * t
            action, dense = action_cost(B.nnz, self.n_unknowns, norm_t)
            if action < dense or self.n_unknowns > _MAX_DENSE_UNKNOWNS:
                out_sub = expm_metzler_action(B, t, sub)
            else:
                return self.propagator(t) @ psi
        elif t == 0:
            out_sub = sub.copy()
        else:
            k, tau = self._steps(t)
            A = self.generator.tocsc()
            I = sp.identity(A.shape[0], format="csc")
            if isinstance(self.stepper, ImplicitEuler):
                lu, rhs = spla.splu(I - tau * A), None
            else:
                lu, rhs = spla.splu(I - 0.5 * tau * A), (I + 0.5 * tau * A).tocsr()
            out_sub = sub
            for _ in range(k):
                out_sub = lu.solve(out_sub if rhs is None else rhs @ out_sub)
        out = np.zeros_like(psi)
        out[self.active] = out_sub
        return out

    def boundary_residual(self, u: np.ndarray) -> float:
        """max |beta du/dnu + (1-beta) u| over boundary nodes, using one-sided
        second-order differences for the conormal derivative."""
        dom, prob = self.domain, self.problem
        n, d = dom.grid_n, dom.dimension
        U = np.asarray(u, dtype=float).reshape(dom.shape)
        worst = 0.0
        for ax in range(d):
            h = dom.spacing[ax]
            a = prob.a_grid[ax, ax].reshape(dom.shape)
            for side in (0, 1):
                beta = prob.beta_sides[2 * ax + side]
                i0, i1, i2 = (0, 1, 2) if side == 0 else (n - 1, n - 2, n - 3)
                take = lambda i: np.take(U, i, axis=ax)
                # outward derivative; the outward normal points away from the interior
                dudn = (3 * take(i0) - 4 * take(i1) + take(i2)) / (2 * h)
                res = beta * np.take(a, i0, axis=ax) * dudn + (1 - beta) * take(i0)
                worst = max(worst, float(np.abs(res).max()))
        return worst


def _half_indicator(domain: Domain) -> np.ndarray:
    x0 = domain.coordinates[0]
    lo, hi = domain.bounds[0]
    return (x0 <= (lo + hi) / 2).astype(float)


def build_semigroup(problem: EllipticProblem, stepper: Stepper | None = None) -> DiscreteSemigroup:
    """Discretize L with its boundary operator and wrap the chosen time stepper."""
    stepper = stepper or MatrixExponential()
    dom = problem.domain
    if isinstance(stepper, MatrixExponential):
        if dom.grid_n > _MAX_EXPM_AXIS:
            raise ValueError(f"MatrixExponential needs grid_n <= {_MAX_EXPM_AXIS}")
    elif not stepper.dt > 0:
        raise ValueError("stepper dt must be positive")
    A = assemble_generator(problem)
    sg = DiscreteSemigroup(problem, stepper, A)
    off = sg.generator - sp.diags(sg.generator.diagonal())
    if off.nnz and off.min() < 0:
        raise ConstructionError(
            "negative off-diagonal entry in the generator: drift too strong for this grid "
            "(need h*|b| <= 2a)"
        )
    if isinstance(stepper, CrankNicolson):
        psi = _half_indicator(dom)
        dt = stepper.dt
        for _ in range(60):
            trial = DiscreteSemigroup(problem, CrankNicolson(dt), A)
            out = trial.apply(psi, dt)
            if out.min() >= -DiscreteSemigroup.tol_pos_factor * np.abs(psi).max():
                break
            dt /= 2
        else:
            raise ConstructionError("Crank-Nicolson positivity could not be restored")
        if dt != stepper.dt:
            warnings.warn(
                f"Crank-Nicolson dt={stepper.dt:g} breaks positivity; using dt={dt:g}",
                RuntimeWarning,
                stacklevel=2,
            )
            sg = trial
    return sg


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """K(x_i, y_j; t) with [S(t)psi](x_i) = sum_j K_ij psi_j h^d."""

    t: float
    points: np.ndarray
    values: np.ndarray
    cell_volume: float

    def apply(self, psi: np.ndarray) -> np.ndarray:
        return self.values @ np.asarray(psi, dtype=float) * self.cell_volume

    def rows(self, stride: int = 1):
        """(x, y, t, K) tuples, x and y being the first coordinate in 1-d."""
        idx = np.arange(0, len(self.points), stride)
        for i in idx:
            for j in idx:
                yield (*self.points[i], *self.points[j], self.t, self.values[i, j])


def kernel_matrix(sg: DiscreteSemigroup, t: float) -> KernelMatrix:
    if not t > 0:
        raise ValueError("kernel time must be positive")
    P = sg.propagator(t)
    return KernelMatrix(float(t), sg.domain.points, P / sg.domain.cell_volume, sg.domain.cell_volume)


@dataclass(frozen=True)
class OrderingReport:
    min_gap: float
    max_dirichlet: float
    tol_order: float
    worst: tuple  # (x, y, t) of the smallest K_beta - K_D
    semigroup_min_gap: float
    per_time: tuple  # (t, min gap) pairs

    @property
    def kernel_passed(self) -> bool:
        return self.min_gap >= -self.tol_order

    @property
    def semigroup_passed(self) -> bool:
        return self.semigroup_min_gap >= -self.tol_order

    @property
    def passed(self) -> bool:
        return self.kernel_passed and self.semigroup_passed

    def to_dict(self) -> dict:
        return {
            "min_ordering_gap": self.min_gap,
            "max_dirichlet_kernel": self.max_dirichlet,
            "tol_order": self.tol_order,
            "worst": list(self.worst),
            "semigroup_min_gap": self.semigroup_min_gap,
            "per_time": [list(p) for p in self.per_time],
            "passed": self.passed,
        }


def verify_kernel_ordering(
    problem: EllipticProblem,
    times: Sequence[float],
    stepper: Stepper | None = None,
    *,
    n_random: int = 5,
    seed: int = 0,
) -> OrderingReport:
    """Check K_beta >= K_D entrywise at each time, plus S_beta psi >= S_D psi."""
    sg_b = build_semigroup(problem, stepper)
    sg_d = build_semigroup(problem.with_beta(0.0), stepper)
    rng = np.random.default_rng(seed)
    psis = rng.random((problem.domain.size, n_random))
    pts = problem.domain.points

    per_time, worst, gap_min, kd_max, sg_gap = [], None, math.inf, 0.0, math.inf
    for t in times:
        Kb = kernel_matrix(sg_b, t).values
        Kd = kernel_matrix(sg_d, t).values
        diff = Kb - Kd
        i, j = np.unravel_index(int(np.argmin(diff)), diff.shape)
        g = float(diff[i, j])
        per_time.append((float(t), g))
        kd_max = max(kd_max, float(Kd.max()))
        if g < gap_min:
            gap_min = g
            worst = (*pts[i].tolist(), *pts[j].tolist(), float(t))
        sgap = (sg_b.apply(psis, t) - sg_d.apply(psis, t)).min() / psis.max()
        sg_gap = min(sg_gap, float(sgap))
    return OrderingReport(gap_min, kd_max, 1e-6 * kd_max, worst, sg_gap, tuple(per_time))


# ---------------------------------------------------------------------------
# Dirichlet lower bound on balls


@dataclass(frozen=True, eq=False)
class KappaEstimate:
    r: float
    center: np.ndarray
    window: tuple  # (t_min, r^2/8)
    kappa: float
    argmin_point: np.ndarray
    argmin_time: float
    times: np.ndarray
    ball_index: np.ndarray  # grid indices inside B_r
    values: np.ndarray  # [S_D(t)chi_r](x) for times x ball nodes

    @property
    def argmin_radius_fraction(self) -> float:
        """|argmin - center| / r; the minimum is expected near the ball edge."""
        return float(np.linalg.norm(self.argmin_point - self.center) / self.r)

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "center": self.center.tolist(),
            "window": list(self.window),
            "kappa": self.kappa,
            "argmin_point": self.argmin_point.tolist(),
            "argmin_time": self.argmin_time,
            "argmin_radius_fraction": self.argmin_radius_fraction,
            "times": self.times.tolist(),
        }


def estimate_kappa(
    problem: EllipticProblem,
    r: float,
    t_samples: int = 16,
    *,
    center=None,
    extra_times: Sequence[float] = (),
    stepper: Stepper | None = None,
    workers: int | None = None,
) -> KappaEstimate:
    """kappa = min of [S_D(t) chi_r](x) over grid points of B_r and sampled t.

    Times are geometric on [t_min, r^2/8] with t_min = (r^2/8) 2^-10, plus any
    ``extra_times`` inside that window.
    """
    dom = problem.domain
    if not r > 0:
        raise ValueError("r must be positive (empty ball)")
    if not r < 1:
        raise ValueError("r must be below 1")
    center = dom.center if center is None else np.atleast_1d(np.asarray(center, dtype=float))
    if not dom.contains_ball(center, 3 * r):
        raise ValueError(f"B_3r with r={r} does not fit inside the domain")
    if problem.c_grid.max() > 0:
        raise ValueError("the Dirichlet lower bound needs c <= 0")
    if t_samples < 1:
        raise ValueError("t_samples must be positive")

    t_max = r * r / 8
    t_min = t_max * 2.0**-10
    times = np.geomspace(t_min, t_max, t_samples) if t_samples > 1 else np.array([t_max])
    extra = [t for t in extra_times if 0 < t <= t_max]
    times = np.unique(np.concatenate([times, extra]))

    sg = build_semigroup(problem.with_beta(0.0), stepper)
    chi = dom.indicator(center, r)
    ball = np.flatnonzero(chi)
    if ball.size == 0:
        raise ValueError("no grid point inside B_r; refine the grid")

    def one(t):
        return sg.apply(chi, t)[ball]

    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = np.array(list(pool.map(one, times)))
    else:
        values = np.array([one(t) for t in times])

    it, ix = np.unravel_index(int(np.argmin(values)), values.shape)
    kappa = float(values[it, ix])
    if not kappa > 0:
        raise KappaNotPositive(f"kappa={kappa:.3g} <= 0; grid too coarse for r={r}")
    return KappaEstimate(
        r=float(r),
        center=center,
        window=(t_min, t_max),
        kappa=kappa,
        argmin_point=dom.points[ball[ix]],
        argmin_time=float(times[it]),
        times=times,
        ball_index=ball,
        values=values,
    )
