#conftest.py
import pytest

from src.fields import Polynomial, guillemin_field, smooth_field
from src.geodesic import ProblemData
from src.polytope import DelzantPolytope


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full pipeline runs at production resolution")


@pytest.fixture
def segment():
    return DelzantPolytope.preset("segment")


@pytest.fixture
def square():
    return DelzantPolytope.preset("square")


@pytest.fixture
def simplex2():
    return DelzantPolytope.preset("simplex2")


def make_problem(polytope, velocity: Polynomial, resolution=None) -> ProblemData:
    return ProblemData(polytope, guillemin_field(polytope), smooth_field(polytope, velocity), resolution)


def bump(n: int = 1) -> Polynomial:
    terms = []
    for i in range(n):
        e = tuple(int(k == i) for k in range(n))
        terms += [(e, 1.0), (tuple(2 * v for v in e), -1.0)]
    return Polynomial(n, tuple(terms))


@pytest.fixture
def flagship(segment):
    """u0 = u_G on [0, 1] with udot0 = y(1 - y); T_cvx = 2."""
    return make_problem(segment, bump())


@pytest.fixture
def linear_problem(segment):
    """udot0 = y: psi(s, x) = log(1 + e^(x - s))."""
    return make_problem(segment, Polynomial.affine([1.0]))


@pytest.fixture
def constant_problem(segment):
    return make_problem(segment, Polynomial.affine([0.0], 0.7))


@pytest.fixture
def zero_problem(segment):
    return make_problem(segment, Polynomial.zero(1))
