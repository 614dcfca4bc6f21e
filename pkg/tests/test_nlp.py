import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magrestore.core import normalize
from magrestore.nlp import (
    DomainError,
    InfeasibleIterateError,
    ProblemData,
    barrier,
    barrier_gradient,
    barrier_hessian,
    barrier_value,
    build_P,
    constraint_jacobian,
    constraints,
    cost,
    cost_gradient,
    cost_hessian,
    derivatives,
    lagrangian_hessian,
    null_space_dim,
    residuals,
    substitution_vector,
)

from conftest import consistent_problem, unit


def random_feasible(rng, data):
    """Interior point with unit m, rejection-sampled against the mD and k bounds."""
    while True:
        m = unit(rng)
        mD = abs(float(data.a @ m))
        if data.gamma_mD_minus < mD < data.gamma_mD_plus and math.sqrt(1 - mD * mD) > 1e-2:
            k = rng.uniform(data.gamma_k_minus, data.gamma_k_plus) * rng.choice([-1.0, 1.0])
            return np.array([*m, k])


def random_problem(rng):
    a = unit(rng)
    lo = rng.uniform(0.01, 0.4)
    return ProblemData(a, unit(rng, 4), lo, rng.uniform(lo + 0.1, 0.99), 0.01, 5.0)


def central_difference(fun, y, h=1e-6):
    cols = []
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        cols.append((np.asarray(fun(y + e)) - np.asarray(fun(y - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def test_cost_zero_at_consistent_point():
    q = normalize([0.9, 0.1, -0.2, 0.35])
    data, m, k = consistent_problem(q)
    y = np.array([*m, k])
    assert cost(y, data) <= 1e-24
    np.testing.assert_allclose(residuals(y, data), 0.0, atol=1e-12)
    np.testing.assert_allclose(cost_gradient(y, data), 0.0, atol=1e-10)


def test_cost_of_scale_perturbation():
    data, m, k = consistent_problem(normalize([0.9, 0.1, -0.2, 0.35]))
    assert cost(np.array([*m, k + 0.1]), data) == pytest.approx(0.01, rel=1e-12)


def test_cost_sign_symmetry():
    data, m, k = consistent_problem(normalize([0.9, 0.1, -0.2, 0.35]))
    flipped = ProblemData(data.a, -data.q_ref, data.gamma_mD_minus, data.gamma_mD_plus,
                          data.gamma_k_minus, data.gamma_k_plus)
    assert cost(np.array([*m, -k]), flipped) <= 1e-24


def test_cost_domain_error():
    data = ProblemData([0.0, 0.0, -1.0], [1.0, 0.0, 0.0, 0.0], 0.1, 0.9, 0.1, 10.0)
    with pytest.raises(DomainError):
        cost([0.0, 0.0, 1.5, 1.0], data)


def test_near_singular_warning():
    data = ProblemData([0.0, 0.0, -1.0], [1.0, 0.0, 0.0, 0.0], 0.1, 0.9, 0.1, 10.0)
    with pytest.warns(RuntimeWarning, match="near zero"), np.errstate(divide="ignore", invalid="ignore"):
        cost_gradient([0.0, 0.0, 1.0, 1.0], data)


class TestDerivativesAgainstFiniteDifferences:
    def test_cost_gradient_and_hessian(self, rng):
        for _ in range(300):
            data = random_problem(rng)
            y = random_feasible(rng, data)
            g = cost_gradient(y, data)
            np.testing.assert_allclose(g, central_difference(lambda v: cost(v, data), y), rtol=1e-4, atol=1e-5)
            H = cost_hessian(y, data)
            np.testing.assert_allclose(H, central_difference(lambda v: cost_gradient(v, data), y),
                                       rtol=1e-4, atol=1e-5)

    def test_constraint_jacobian(self, rng):
        for _ in range(300):
            data = random_problem(rng)
            y = random_feasible(rng, data)
            np.testing.assert_allclose(constraint_jacobian(y, data),
                                       central_difference(lambda v: constraints(v, data), y), atol=1e-6)

    def test_barrier_hessian(self, rng):
        for _ in range(100):
            data = random_problem(rng)
            y = random_feasible(rng, data)
            np.testing.assert_allclose(barrier_hessian(y, data, 1e-2),
                                       central_difference(lambda v: barrier_gradient(v, data, 1e-2), y),
                                       rtol=1e-4, atol=1e-5)

    def test_hessian_symmetric(self, rng):
        for _ in range(100):
            data = random_problem(rng)
            y = random_feasible(rng, data)
            H = cost_hessian(y, data)
            assert np.max(np.abs(H - H.T)) <= 1e-12
            L = lagrangian_hessian(y, data, rng.uniform(0.1, 1, 5))
            assert np.max(np.abs(L - L.T)) <= 1e-12

    def test_bundled_derivatives_agree(self, rng):
        data = random_problem(rng)
        y = random_feasible(rng, data)
        f, g, H, c, G = derivatives(y, data)
        assert f == cost(y, data)
        np.testing.assert_array_equal(g, cost_gradient(y, data))
        np.testing.assert_array_equal(H, cost_hessian(y, data))
        np.testing.assert_array_equal(c, constraints(y, data))
        np.testing.assert_array_equal(G, constraint_jacobian(y, data))


class TestConstraints:
    def test_unit_field(self, rng):
        data = random_problem(rng)
        assert constraints([*unit(rng), 1.0], data)[4] == pytest.approx(1.0, abs=1e-15)

    def test_experiment_bounds_arithmetic(self):
        data = ProblemData([0.0, 0.0, -1.0], [1.0, 0.0, 0.0, 0.0], 0.05, 0.95, 0.1, 10.0)
        c = constraints([0.6, 0.0, -0.8, 1.0], data)
        assert c[0] == pytest.approx(0.2625, abs=1e-15)
        assert c[1] == pytest.approx(0.6375, abs=1e-15)

    @pytest.mark.parametrize("bounds", [(0.0, 0.5, 0.1, 1.0), (0.5, 0.5, 0.1, 1.0), (0.1, 1.0, 0.1, 1.0),
                                        (0.1, 0.5, 0.0, 1.0), (0.1, 0.5, 1.0, 1.0)])
    def test_bound_validation(self, bounds):
        with pytest.raises(ValueError):
            ProblemData([0.0, 0.0, -1.0], [1.0, 0.0, 0.0, 0.0], *bounds)


class TestBarrier:
    def test_unit_field_adds_nothing(self, rng):
        data = random_problem(rng)
        y = random_feasible(rng, data)
        c = constraints(y, data)
        expected = cost(y, data) - 1e-3 * sum(math.log(v) for v in c[:4])
        assert barrier_value(y, data, 1e-3) == pytest.approx(expected, rel=1e-14, abs=1e-16)

    def test_centred_multipliers_give_exact_gradient(self, rng):
        for _ in range(50):
            data = random_problem(rng)
            y = random_feasible(rng, data)
            rho = 10 ** rng.uniform(-6, -1)
            _, g = barrier(y, data, rho, rho / constraints(y, data))
            assert np.max(np.abs(g - barrier_gradient(y, data, rho))) <= 1e-12

    def test_zero_parameter_is_cost(self, rng):
        data = random_problem(rng)
        y = random_feasible(rng, data)
        assert barrier_value(y, data, 0.0) == cost(y, data)

    def test_diverges_at_boundary(self):
        # tiny k lower bound so that c4 = k^2 - kl^2 can sit 1e-300 below its value at k = 1
        data = ProblemData([0.0, 0.0, -1.0], [0.0, 1.0, 0.0, 0.0], 0.1, 0.9, 1e-150, 10.0)
        inside, edge = [0.6, 0.0, -0.8, 1.0], [0.6, 0.0, -0.8, math.sqrt(2.0) * 1e-150]
        assert constraints(edge, data)[3] == pytest.approx(1e-300 * constraints(inside, data)[3], rel=1e-12)
        assert barrier_value(edge, data, 1e4) > 1e6
        rise = barrier_value(edge, data, 1e-4) - barrier_value(inside, data, 1e-4)
        # c4 falls by 1e-300 while c3 rises from 99 to 100
        expected = cost(edge, data) - cost(inside, data) + 1e-4 * (300 * math.log(10.0) - math.log(100 / 99))
        assert rise == pytest.approx(expected, rel=1e-9)

    def test_outside_raises(self):
        data = ProblemData([0.0, 0.0, -1.0], [1.0, 0.0, 0.0, 0.0], 0.1, 0.9, 0.1, 10.0)
        with pytest.raises(InfeasibleIterateError):
            barrier_value([0.0, 0.0, 1.0, 1.0], data, 1e-4)


class TestUniqueness:
    def test_consistent_pairs_have_two_dimensional_null_space(self, rng):
        for _ in range(200):
            data, m, k = consistent_problem(normalize(rng.normal(size=4)), margin=0.2)
            P = build_P(data.a, data.q_ref)
            assert null_space_dim(P, 1e-9) == 2
            assert np.linalg.norm(P @ substitution_vector(m, k, data.a)) < 1e-12

    def test_random_reference_loses_a_dimension(self, rng):
        # the field columns of P have rank 2 for any unit a, so one null direction always exists;
        # the second appears only when the reference is reachable from a
        dims = [null_space_dim(build_P(unit(rng), unit(rng, 4)), 1e-9) for _ in range(200)]
        assert set(dims) == {1}

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_residual_equals_P_times_substitution(self, seed):
        rng = np.random.default_rng(seed)
        data = random_problem(rng)
        y = np.array([*unit(rng), rng.normal()])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            r = residuals(y, data)
        x = substitution_vector(y[:3], y[3], data.a)
        np.testing.assert_allclose(r, build_P(data.a, data.q_ref) @ x, atol=1e-12)

    def test_zero_matrix(self):
        assert null_space_dim(np.zeros((4, 4)), 1e-9) == 4
