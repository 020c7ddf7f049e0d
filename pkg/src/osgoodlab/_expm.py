"""Exponentials of Metzler matrices that are non-negative by construction.

For A with non-negative off-diagonal entries, B = A + sigma*I is entrywise
non-negative, and exp(At) = exp(-sigma t) exp(Bt). A Taylor series of a
non-negative matrix involves no cancellation, so no entry can come out
negative; accuracy is ~1e-16 relative to the largest entry, and far-field
entries the truncated series never reaches are exact zeros. Pade based expm
has the same absolute accuracy but lets tiny far-field entries drift below
zero, which the comparison lemmas cannot tolerate.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

_TAYLOR_MAX_TERMS = 60


def _shift(A):
    diag = A.diagonal()
    sigma = max(0.0, -float(np.min(diag))) if diag.size else 0.0
    if sp.issparse(A):
        B = (A + sigma * sp.identity(A.shape[0], format="csr")).tocsr()
        off = B - sp.diags(B.diagonal())
        neg = off.min() if off.nnz else 0.0
        norm = float(abs(B).sum(axis=1).max()) if B.nnz else 0.0
    else:
        B = A + sigma * np.eye(A.shape[0])
        off = B - np.diag(np.diag(B))
        neg = float(off.min()) if off.size else 0.0
        norm = float(np.abs(B).sum(axis=1).max()) if B.size else 0.0
    if neg < 0:
        raise ValueError("matrix is not Metzler (negative off-diagonal entry)")
    return B, sigma, norm


def expm_metzler(A: np.ndarray, t: float) -> np.ndarray:
    """Dense exp(A t) for a Metzler matrix A, entrywise >= 0."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0 or n == 0:
        return np.eye(n)
    B, sigma, norm = _shift(A)
    squarings = max(0, math.ceil(math.log2(max(norm * t, 1.0))))
    tau = t / 2.0**squarings
    Bt = B * tau
    E = np.eye(n)
    term = np.eye(n)
    for k in range(1, _TAYLOR_MAX_TERMS):
        term = term @ Bt / k
        E += term
        if term.max() <= 1e-18 * E.max():
            break
    E *= math.exp(-sigma * tau)
    for _ in range(squarings):
        E = E @ E
    return E


def expm_metzler_action(A, t: float, V: np.ndarray) -> np.ndarray:
    """exp(A t) @ V by sub-stepped Taylor series; non-negative V stays non-negative."""
    V = np.array(V, dtype=float, copy=True)
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return V
    B, sigma, norm = _shift(A)
    steps = max(1, math.ceil(norm * t))
    tau = t / steps
    damp = math.exp(-sigma * tau)
    for _ in range(steps):
        acc = V.copy()
        term = V
        for k in range(1, _TAYLOR_MAX_TERMS):
            term = (B @ term) * (tau / k)
            acc += term
            if np.abs(term).max() <= 1e-18 * max(np.abs(acc).max(), 1e-300):
                break
        V = acc * damp
    return V


def action_cost(nnz: int, n: int, norm_t: float) -> tuple[float, float]:
    """Rough flop counts (action, dense) used to pick a route."""
    action = 20.0 * max(norm_t, 1.0) * nnz
    dense = (math.log2(max(norm_t, 2.0)) + 20.0) * 2.0 * n**3
    return action, dense


_GL24_X, _GL24_W = np.polynomial.legendre.leggauss(24)


def exponential_trapezoid_weights(A: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Propagator and source weights for a source that is linear on [0, dt].

    Returns (P, W_old, W_new) with

        P     = exp(A dt)
        W_old = (1/dt) int_0^dt exp(A r) r        dr
        W_new = (1/dt) int_0^dt exp(A r) (dt - r) dr

    so that int_0^dt exp(A (dt - s)) g(s) ds = W_old g(0) + W_new g(dt) for
    linear g. All three are built from non-negative Taylor blocks and the
    doubling identities (E = exp(A tau), I1 = int e^{Ar}, I2 = int e^{Ar} r,
    J = int e^{Ar}(tau - r), all over [0, tau]):

        I2 <- I2 + E (I2 + tau I1),   J <- J + tau I1 + E J,
        I1 <- I1 + E I1,              E <- E E.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if not dt > 0:
        raise ValueError("dt must be positive")
    if n == 0:
        z = np.zeros((0, 0))
        return z, z, z
    B, sigma, norm = _shift(A)
    doublings = max(0, math.ceil(math.log2(max(norm * dt, 1.0))))
    tau = dt / 2.0**doublings

    rho = 0.5 * tau * (_GL24_X + 1.0)
    wq = 0.5 * tau * _GL24_W * np.exp(-sigma * rho)
    E = np.zeros((n, n))
    I1 = np.zeros((n, n))
    I2 = np.zeros((n, n))
    J = np.zeros((n, n))
    power = np.eye(n)
    fact = 1.0
    e0 = math.exp(-sigma * tau)
    for k in range(_TAYLOR_MAX_TERMS):
        if k:
            power = power @ B
            fact *= k
        rk = rho**k / fact
        ce = e0 * tau**k / fact
        E += ce * power
        I1 += float(wq @ rk) * power
        I2 += float(wq @ (rk * rho)) * power
        J += float(wq @ (rk * (tau - rho))) * power
        if k > 2 and ce * power.max() <= 1e-18 * E.max():
            break
    for _ in range(doublings):
        I2 = I2 + E @ (I2 + tau * I1)
        J = J + tau * I1 + E @ J
        I1 = I1 + E @ I1
        E = E @ E
        tau *= 2
    return E, I2 / dt, J / dt
