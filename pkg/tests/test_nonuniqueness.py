import dataclasses
import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import power_mu
from osgoodlab import (
    CrankNicolson,
    Domain,
    DuhamelOperator,
    EllipticProblem,
    ImplicitEuler,
    LogPerturbedPower,
    MonotonicityViolation,
    NonConvergence,
    OsgoodHolds,
    PowerLaw,
    SpaceTimeField,
    build_semigroup,
    build_subsolution,
    build_supersolution,
    certify_nonuniqueness,
    derive_params,
    duhamel,
    monotone_iterate,
    reduce_indefinite_c,
    solve_mu,
)
from osgoodlab.io import to_jsonable
from osgoodlab.nonuniqueness import chain_tolerance, duhamel_residual

SQRT = PowerLaw(0.5)


def interval(n=201, **kw):
    return EllipticProblem(Domain.interval(-1, 1, n), **kw)


@pytest.fixture(scope="module")
def reference():
    return certify_nonuniqueness(interval(), SQRT, 1e-3)


# fields


def test_space_time_field_invariants():
    times = np.linspace(0, 1, 3)
    pts = np.zeros((2, 1))
    with pytest.raises(ValueError):
        SpaceTimeField(times, -np.ones((3, 2)), pts)
    with pytest.raises(ValueError):
        SpaceTimeField(times, np.ones((3, 2)), pts)
    with pytest.raises(ValueError):
        SpaceTimeField(times, np.zeros((2, 2)), pts)
    f = SpaceTimeField(times, np.array([[0, 0], [1, 2], [3, 1]]), pts)
    assert f.sup_norm == 3.0


# parameters


def test_params_constant_q():
    p = interval()
    params = derive_params(p, SQRT)
    h = p.domain.h
    assert params.x0 == (0.0,)
    assert params.gamma == 1.0
    assert params.rho == pytest.approx((1 - h) / 3, abs=1e-12)
    assert params.tau == pytest.approx(1.0, abs=1e-12)  # f(1)*1 = 1
    assert float(SQRT(params.tau)) * params.q_sup <= 1.0
    assert 0 < params.T <= min(params.tau, params.R**2 / 8)
    assert params.n_steps * params.dt == pytest.approx(params.T)
    assert params.dt <= 1e-3
    assert 0 < params.kappa <= min(params.kappa_sampled, params.kappa_lags) + 1e-15


def test_params_hat_q():
    p = interval(q=lambda x: np.maximum(0.0, 1 - 4 * np.abs(x)))
    params = derive_params(p, SQRT)
    assert 3 * params.rho <= 1 / 8 + 1e-12
    assert params.gamma >= 0.5
    dist = p.domain.distance(np.array(params.x0))
    assert p.q_grid[dist <= 3 * params.rho + 1e-12].min() >= params.gamma


def test_params_tie_break_prefers_deepest_node():
    # q = 1 everywhere: every node ties on q, the midpoint is deepest
    p = EllipticProblem(Domain.interval(0, 2, 101))
    assert derive_params(p, SQRT).x0 == (1.0,)


def test_params_no_interior_ball():
    p = interval(q=lambda x: np.maximum(0.0, 1 - 100 * np.abs(x - 1)))
    with pytest.raises(ValueError, match="interior ball"):
        derive_params(p, SQRT)


def test_params_tau_from_large_q():
    # ||q|| = 4: f(tau) * 4 <= 1 gives tau = 1/16, then v <= w may shrink it further
    p = interval(q=4.0)
    params = derive_params(p, SQRT)
    assert params.tau <= 1 / 16 + 1e-12
    assert float(SQRT(params.tau)) * 4 <= 1


def test_params_reject_divergent_and_positive_c():
    with pytest.raises(OsgoodHolds):
        derive_params(interval(), PowerLaw(1.0))
    with pytest.raises(ValueError):
        derive_params(interval(c=1.0), SQRT)


# sub- and supersolution


def test_subsolution_closed_form():
    p = interval()
    params = dataclasses.replace(derive_params(p, SQRT), kappa=1.0, kappa_sampled=1.0, kappa_lags=1.0, gamma=1.0)
    v = build_subsolution(params, SQRT, p.domain)
    chi = p.domain.indicator(np.array(params.x0), params.R)
    expected = power_mu(0.5, 1.0, params.times)[:, None] * chi[None, :]
    assert np.allclose(v.values, expected, rtol=1e-12, atol=0)
    assert np.all(v.values[:, chi == 0] == 0)
    assert np.all(v.values[0] == 0)
    assert np.all(np.diff(v.values, axis=0) >= 0)


def test_supersolution():
    p = interval()
    params = derive_params(p, SQRT)
    w = build_supersolution(params, p.domain)
    assert np.allclose(w.values, params.times[:, None])
    op = DuhamelOperator(build_semigroup(p), p.q_grid, SQRT, params.times)
    assert (w.values - op(w.values)).min() >= 0
    v = build_subsolution(params, SQRT, p.domain)
    assert (w.values - v.values).min() >= 0


def test_subsolution_rejects_mismatched_profile():
    p = interval()
    params = derive_params(p, SQRT)
    with pytest.raises(ValueError):
        build_subsolution(params, SQRT, p.domain, solve_mu(SQRT, params.rate, [0.0, 1e-3]))


# Duhamel map


def test_duhamel_zero_is_fixed():
    p = interval()
    op = DuhamelOperator(build_semigroup(p), p.q_grid, SQRT, np.linspace(0, 0.01, 11))
    assert np.array_equal(op(np.zeros((11, 201))), np.zeros((11, 201)))


def test_duhamel_flat_neumann_fixed_point():
    p = interval(beta=1.0)
    times = np.linspace(0, 0.5, 51)
    u = SpaceTimeField(times, np.repeat((times**2 / 4)[:, None], 201, axis=1), p.domain.points)
    out = duhamel(build_semigroup(p), p.q_grid, SQRT, u)
    assert np.abs(out.values - u.values).max() <= 1e-12


def test_duhamel_subsolution_chain():
    p = interval()
    params = derive_params(p, SQRT)
    v = build_subsolution(params, SQRT, p.domain)
    op = DuhamelOperator(build_semigroup(p), p.q_grid, SQRT, params.times)
    assert (op(v.values) - v.values).min() >= -chain_tolerance(params.T)
    assert np.all(op(v.values)[0] == 0)


def test_duhamel_guards():
    p = interval()
    sg = build_semigroup(p)
    with pytest.raises(ValueError):
        DuhamelOperator(sg, p.q_grid, SQRT, [0.0, 0.1, 0.3])
    op = DuhamelOperator(sg, p.q_grid, SQRT, np.linspace(0, 0.1, 3))
    with pytest.raises(ValueError):
        op(-np.ones((3, 201)))
    with pytest.raises(ValueError):
        op(np.full((3, 201), 11.0))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), beta=st.sampled_from([0.0, 0.5, 1.0]))
def test_duhamel_monotone(seed, beta):
    p = interval(n=65, beta=beta)
    rng = np.random.default_rng(seed)
    times = np.linspace(0, 0.05, 6)
    u1 = rng.random((6, 65))
    u2 = u1 + rng.random((6, 65))
    op = DuhamelOperator(build_semigroup(p), p.q_grid, SQRT, times)
    assert (op(u2) - op(u1)).min() >= 0


# iteration


def test_iteration_trace_is_monotone(reference):
    it = reference.iteration
    assert min(it.order_margins) >= -reference.tol_chain
    assert it.increments[-1] <= 1e-9
    assert it.residual <= reference.tol_res


def test_iteration_keeps_iterates():
    p = interval(n=101)
    cert = certify_nonuniqueness(p, SQRT, with_maximal=False)
    op = DuhamelOperator(build_semigroup(p), p.q_grid, SQRT, cert.params.times)
    it = monotone_iterate(op, cert.v, "up", keep_iterates=True)
    stack = np.array(it.iterates)
    assert np.all(np.diff(stack, axis=0) >= -cert.tol_chain)


def test_down_iteration_dominates(reference):
    assert reference.maximal is not None
    assert (reference.maximal.field.values - reference.U.values).min() >= -reference.tol_chain


def test_zero_start_stays_zero(reference):
    p = interval()
    op = DuhamelOperator(build_semigroup(p), p.q_grid, SQRT, reference.params.times)
    zero = reference.U.replace_values(np.zeros_like(reference.U.values))
    it = monotone_iterate(op, zero, "up")
    assert np.all(it.field.values == 0) and it.iterations == 1


def test_iteration_errors(reference):
    p = interval()
    op = DuhamelOperator(build_semigroup(p), p.q_grid, SQRT, reference.params.times)
    with pytest.raises(MonotonicityViolation):
        monotone_iterate(op, reference.w, "up")
    with pytest.raises(NonConvergence):
        monotone_iterate(op, reference.v, "up", max_iter=2)
    with pytest.raises(ValueError):
        monotone_iterate(op, reference.v, "sideways")


# certificates


def test_reference_certificate(reference):
    c = reference
    assert c.valid, c.checks()
    assert c.duhamel_residual <= 1e-6 * c.U.sup_norm
    assert min(c.chain_margins) >= -1e-8
    assert c.U_final_sup >= c.mu_final - 1e-8 > 0
    assert c.zero_residual == 0.0
    assert c.positivity_margin > 0
    payload = json.dumps(to_jsonable(c.to_dict()), allow_nan=False)
    assert '"NonUniqueness"' in payload


def test_field_rows(reference):
    rows = list(reference.field_rows())
    assert len(rows) == len(reference.U.times) * 201
    x, t, v, U, w = rows[-1]
    assert t == reference.params.T and w == t and v <= U <= w


def test_lipschitz_nonlinearity_has_no_certificate():
    with pytest.raises(OsgoodHolds):
        certify_nonuniqueness(interval(), PowerLaw(1.0))


def test_neumann_flat_certificate():
    c = certify_nonuniqueness(interval(beta=1.0), SQRT)
    assert c.valid
    assert np.abs(c.U.values - (c.U.times**2 / 4)[:, None]).max() <= 1e-6
    assert c.duhamel_residual <= 1e-6 * c.U.sup_norm


def test_non_concave_certificate():
    c = certify_nonuniqueness(interval(), LogPerturbedPower(0.5, 0.5, 1.0))
    assert c.valid, c.checks()


def test_variable_coefficients_robin_certificate():
    p = interval(a=lambda x: 1 + x**2 / 2, b=lambda x: x / 2, c=-1.0, beta=0.5)
    assert certify_nonuniqueness(p, SQRT).valid


@pytest.mark.parametrize("stepper", [CrankNicolson(1e-3), ImplicitEuler(1e-3)], ids=repr)
def test_implicit_stepper_certificates(stepper):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        c = certify_nonuniqueness(interval(n=101), SQRT, stepper=stepper, with_maximal=False)
    assert c.valid, c.checks()


def test_ordering_transfer(reference):
    # same seed v, Neumann semigroup: the limit dominates the Dirichlet one
    p = interval(beta=1.0)
    op = DuhamelOperator(build_semigroup(p), p.q_grid, SQRT, reference.params.times)
    U_n = monotone_iterate(op, reference.v, "up").field
    assert (U_n.values - reference.U.values).min() >= -reference.tol_chain


def test_refinement_stability(reference):
    fine = certify_nonuniqueness(interval(401), SQRT, 5e-4, with_maximal=False)
    a, b = reference.U.sup_norm, fine.U.sup_norm
    assert abs(a - b) / b < 0.05


def test_certificate_in_two_dimensions():
    p = EllipticProblem(Domain.rectangle((-1, 1), (-1, 1), 33))
    c = certify_nonuniqueness(p, SQRT, 2e-3, with_maximal=False)
    assert c.valid, c.checks()


# reduction


def test_reduction_identity_for_zero_c():
    p = interval()
    red = reduce_indefinite_c(p, SQRT)
    assert red.sigma == 0.0 and red.problem is p and red.f is SQRT


def test_reduction_constant_c():
    red = reduce_indefinite_c(interval(c=1.0), SQRT)
    assert red.sigma == 1.0
    assert np.all(red.problem.c_grid == 0.0)
    assert float(red.f(4.0)) == pytest.approx(6.0)


def test_reduction_sine_c():
    dom = Domain.interval(-1, 1, 201)
    p = EllipticProblem(dom, c=lambda x: np.sin(np.pi * x))
    red = reduce_indefinite_c(p, SQRT)
    assert red.sigma == pytest.approx(np.abs(np.sin(np.pi * dom.points[:, 0])).max())
    assert red.problem.c_grid.max() <= 0
    cert = certify_nonuniqueness(p, SQRT)
    assert cert.valid and cert.sigma == red.sigma
    original = duhamel_residual(p, SQRT, cert.U)
    reduced = duhamel_residual(red.problem, red.f, cert.U)
    assert abs(original - reduced) <= 1e-6
    assert original == pytest.approx(cert.original_residual)
