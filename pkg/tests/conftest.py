import numpy as np
import pytest

from parastab.discrete import DiscreteProblem
from parastab.fixtures import semilinear_problem, lq_problem
from parastab.grid import MeshQ
from parastab.kkt import solve_ocp
from parastab.model import SpatialDomain


def make(spec, nx=16, nt=16):
    prob = DiscreteProblem(spec, MeshQ(spec.domain, spec.T, nx, nt))
    return prob, prob.parameter()


@pytest.fixture
def unit():
    return SpatialDomain.interval()


@pytest.fixture(scope="session")
def lq_solved():
    prob, w = make(lq_problem())
    return prob, w, solve_ocp(prob, w)


@pytest.fixture(scope="session")
def semilinear_solved():
    prob, w = make(semilinear_problem())
    return prob, w, solve_ocp(prob, w)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
