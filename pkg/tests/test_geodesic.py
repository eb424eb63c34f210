import math

import numpy as np
import pytest

from src.errors import InputError, PreconditionError
from src.fields import Polynomial, guillemin_field, smooth_field
from src.geodesic import GeodesicRay, ProblemData, velocity_from_kahler_data
from tests.conftest import bump, make_problem


def softplus(x):
    return math.log1p(math.exp(x))


def test_problem_data_requires_guillemin_u0(segment):
    with pytest.raises(InputError):
        ProblemData(segment, smooth_field(segment, bump()), smooth_field(segment, bump()))
    with pytest.raises(InputError):
        ProblemData(segment, guillemin_field(segment), guillemin_field(segment))


def test_problem_data_requires_strictly_convex_u0(segment):
    # u_G + 3y(1 - y) has u'' = 1/(y(1 - y)) - 6 < 0 near y = 1/2
    u0 = guillemin_field(segment, Polynomial.from_table(1, [[3.0, [1]], [-3.0, [2]]]))
    with pytest.raises(PreconditionError):
        ProblemData(segment, u0, smooth_field(segment, bump()))
    mild = guillemin_field(segment, Polynomial.from_table(1, [[1.0, [1]], [-1.0, [2]]]))
    assert ProblemData(segment, mild, smooth_field(segment, bump())).u0 is mild


def test_ray_cache_evicts_least_recent(linear_problem):
    ray = GeodesicRay(linear_problem)
    ray.cache_size = 2
    ray.psi(0.0, 0.0)
    ray.psi(1.0, 0.0)
    ray.psi(0.0, 0.0)
    ray.psi(2.0, 0.0)
    assert list(ray._cache) == [(0.0, (0.0,)), (2.0, (0.0,))]
    assert ray.psi(1.0, 0.0)[0] == pytest.approx(softplus(-1.0), abs=1e-11)
    assert len(ray._cache) == 2


def test_flagship_lifespan_is_cached(flagship):
    assert flagship.t_cvx == pytest.approx(2.0, abs=1e-3)
    assert flagship.lifespan is flagship.lifespan


def test_velocity_from_kahler_data(segment):
    assert velocity_from_kahler_data(segment, Polynomial.affine([0.0], 0.4)).value(0.3) == pytest.approx(-0.4)
    flagship = velocity_from_kahler_data(segment, -bump())
    assert flagship.value(0.5) == pytest.approx(0.25)
    linear = velocity_from_kahler_data(segment, Polynomial.affine([2.0]))
    assert linear.value(0.5) == pytest.approx(-1.0)


def test_linear_velocity_shift_identity(linear_problem):
    ray = linear_problem.ray
    assert ray.psi(1.0, 1.0)[0] == pytest.approx(math.log(2), abs=1e-11)
    for s, x in ((0.5, -2.0), (2.0, 0.3), (4.0, 6.0)):
        assert ray.psi(s, x)[0] == pytest.approx(softplus(x - s), abs=1e-11)


def test_psi_at_zero_is_psi0(flagship):
    ray = flagship.ray
    for x in (-3.0, 0.0, 1.7):
        assert ray.psi(0.0, x)[0] == pytest.approx(softplus(x), abs=1e-11)
        assert flagship.psi0(x) == ray.psi0(x)
    with pytest.raises(InputError):
        ray.psi(-0.1, 0.0)


def test_phi(linear_problem, flagship):
    assert flagship.ray.phi(0.0, 0.7) == 0.0
    x = 30.0
    assert linear_problem.ray.phi(1.5, x) == pytest.approx(-1.5, abs=1e-9)
    assert flagship.ray.phi(1.0, 0.0) == pytest.approx(flagship.ray.psi(1.0, 0.0)[0] - math.log(2), abs=1e-14)


def test_flagship_has_two_maximizers_past_lifespan(flagship):
    value, maximizers = flagship.ray.psi(3.0, 0.0)
    assert len(maximizers) == 2
    g = flagship.u_s(3.0)
    fine = np.linspace(1e-9, 1 - 1e-9, 100001)
    assert value == pytest.approx(np.max(-g.value(fine[:, None])), abs=1e-8)


def test_singular_indicator(flagship, linear_problem):
    ray = flagship.ray
    assert ray.singular_indicator(3.0, 0.0)[0]
    assert not ray.singular_indicator(1.0, 0.0)[0]
    assert not ray.singular_indicator(3.0, 1.5)[0]
    for s, x in ((0.5, 0.0), (3.0, 0.0), (5.0, -2.0)):
        assert not linear_problem.ray.singular_indicator(s, x)[0]


def test_singular_indicator_neighbourhood(flagship):
    ray = flagship.ray
    # x = 0.01 is off the kink but within a radius of 0.02 of it
    assert not ray.singular_indicator(3.0, 0.01)[0]
    assert ray.singular_indicator(3.0, 0.01, radius=0.02)[0]
    assert not ray.singular_indicator(1.0, 0.01, radius=0.02)[0]
    flags, _ = ray.singular_mask(3.0, np.array([-1.0, -0.01, 0.0, 0.01, 1.0]), radius=0.02)
    assert flags.tolist() == [False, True, True, True, False]


def test_hrma_residual_vanishes_on_linear_ray(linear_problem):
    assert abs(linear_problem.ray.hrma_residual(1.0, 0.5, 1e-3)) <= 1e-6


def test_hrma_residual_small_in_smooth_region(flagship):
    ray = flagship.ray
    coarse = abs(ray.hrma_residual(1.5, 0.8, 4e-3))
    fine = abs(ray.hrma_residual(1.5, 0.8, 2e-3))
    assert fine <= 1e-4
    assert fine <= coarse + 1e-6


def test_hrma_residual_uses_forward_stencil_at_zero(linear_problem):
    assert abs(linear_problem.ray.hrma_residual(0.0, 0.2, 1e-3)) <= 1e-3


def test_psi_grid_matches_pointwise(flagship):
    ray = flagship.ray
    s_values, xs = [0.0, 1.0, 3.0], np.array([-1.0, 0.0, 2.0])
    table = ray.psi_grid(s_values, xs)
    assert table.shape == (3, 3)
    for i, s in enumerate(s_values):
        for j, x in enumerate(xs):
            assert table[i, j] == pytest.approx(ray.psi(s, x)[0], abs=1e-13)


def test_psi_grid_is_independent_of_workers(flagship):
    ray = flagship.ray
    s_values, xs = [0.0, 2.5], np.linspace(-2, 2, 5)
    np.testing.assert_array_equal(ray.psi_grid(s_values, xs, n_jobs=1), ray.psi_grid(s_values, xs, n_jobs=2))


def test_lipschitz_constants(flagship):
    assert flagship.ray.lipschitz_constants() == pytest.approx((1.0, 0.25))


def test_singular_locus_scan(flagship):
    frame = flagship.ray.singular_locus_scan([1.0, 3.0], np.array([-0.5, 0.0, 0.5]))
    assert list(frame.columns) == ["s", "x", "singular", "diameter"]
    assert frame["singular"].tolist() == [False, False, False, False, True, False]


def test_two_dimensional_ray(simplex2):
    velocity = Polynomial.affine([1.0, -1.0])
    problem = ProblemData(simplex2, guillemin_field(simplex2), smooth_field(simplex2, velocity), resolution=64)
    ray = GeodesicRay(problem)
    x = np.array([0.3, 0.1])
    s = 0.8
    shifted = x - s * np.array([1.0, -1.0])
    expected = math.log(1 + math.exp(shifted[0]) + math.exp(shifted[1]))
    assert ray.psi(s, x)[0] == pytest.approx(expected, abs=1e-9)
    assert not ray.singular_indicator(s, x)[0]


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def test_x_derivatives_of_closed_forms(flagship, linear_problem):
    for x in (-2.0, 0.0, 0.7):
        grad, hess = flagship.ray.x_derivatives(0.0, x)
        assert grad[0] == pytest.approx(sigmoid(x), abs=1e-6)
        assert hess[0, 0] == pytest.approx(sigmoid(x) * (1 - sigmoid(x)), abs=1e-6)
    grad, hess = linear_problem.ray.x_derivatives(1.5, 0.3)
    assert grad[0] == pytest.approx(sigmoid(-1.2), abs=1e-6)
    assert hess[0, 0] == pytest.approx(sigmoid(-1.2) * (1 - sigmoid(-1.2)), abs=1e-6)


def test_derivative_grid_matches_pointwise(flagship):
    ray = flagship.ray
    s_values, xs = [0.0, 1.0], np.array([-1.0, 0.5])
    grads, hesses = ray.derivative_grid(s_values, xs)
    assert grads.shape == (2, 2, 1) and hesses.shape == (2, 2, 1, 1)
    grad, hess = ray.x_derivatives(1.0, 0.5)
    np.testing.assert_array_equal(grads[1, 1], grad)
    np.testing.assert_array_equal(hesses[1, 1], hess)
    parallel = ray.derivative_grid(s_values, xs, n_jobs=2)
    np.testing.assert_array_equal(parallel[1], hesses)


@pytest.mark.slow
def test_hrma_residual_quarters_with_step(flagship):
    ray = flagship.ray
    for s in (0.2, 0.6, 1.0, 1.4, 1.8):
        for x in (-4.0, -2.0, 0.0, 2.0, 4.0):
            coarse = abs(ray.hrma_residual(s, x, 1e-3))
            fine = abs(ray.hrma_residual(s, x, 5e-4))
            assert coarse <= 1e-4
            assert 3.0 <= coarse / fine <= 5.0


def test_psi_is_jointly_convex(flagship):
    ray = flagship.ray
    rng = np.random.default_rng(7)
    for _ in range(30):
        (s1, s2), (x1, x2) = rng.uniform(0.0, 3.0, 2), rng.uniform(-4.0, 4.0, 2)
        middle = ray.psi(0.5 * (s1 + s2), 0.5 * (x1 + x2))[0]
        assert middle <= 0.5 * (ray.psi(s1, x1)[0] + ray.psi(s2, x2)[0]) + 1e-9


def test_psi_respects_lipschitz_constants(flagship):
    ray = flagship.ray
    lip_x, lip_s = ray.lipschitz_constants()
    rng = np.random.default_rng(11)
    for _ in range(20):
        s1, s2 = rng.uniform(0.0, 3.0, 2)
        x1, x2 = rng.uniform(-5.0, 5.0, 2)
        assert abs(ray.psi(s1, x1)[0] - ray.psi(s1, x2)[0]) <= lip_x * abs(x1 - x2) + 1e-12
        assert abs(ray.psi(s1, x1)[0] - ray.psi(s2, x1)[0]) <= lip_s * abs(s1 - s2) + 1e-12


def test_larger_velocity_gives_smaller_psi(segment):
    # udot0 <= vdot0 on P implies psi_u >= psi_v
    slow = make_problem(segment, bump())
    fast = make_problem(segment, bump() + Polynomial.affine([0.1]))
    for s, x in ((0.5, -1.0), (1.0, 0.0), (2.5, 0.3), (3.0, 2.0)):
        assert slow.ray.psi(s, x)[0] >= fast.ray.psi(s, x)[0] - 1e-12
    assert slow.ray.psi(0.0, 0.4)[0] == pytest.approx(fast.ray.psi(0.0, 0.4)[0], abs=1e-14)
