import numpy as np
import pytest

from degenparab.coefficients import CoefficientPair, PowerPrototype
from degenparab.fem import assemble, build_mesh, default_grading
from degenparab.hardy import best_constant


def power_pair(k1, k2, lam=-1.0, x0=0.5):
    return CoefficientPair(x0=x0, a=PowerPrototype(k1), b=PowerPrototype(k2), lam=lam)


def wwd_operator(n=256, lam_fraction=0.5, x0=0.5):
    """WWD benchmark: K1 = K2 = 0.5, lambda = lam_fraction / C*_h."""
    mesh = build_mesh(n, x0, grading=default_grading(0.5, 0.5))
    probe = assemble(power_pair(0.5, 0.5, lam=-1.0, x0=x0), mesh)
    cstar = best_constant(probe).cstar_h
    pair = power_pair(0.5, 0.5, lam=lam_fraction / cstar, x0=x0)
    return assemble(pair, mesh), pair, cstar


@pytest.fixture(scope="session")
def wwd256():
    return wwd_operator(256)


@pytest.fixture(scope="session")
def heat_op():
    """Classical heat operator a = 1, b = (x - 0.5)^2, lambda = 0."""
    mesh = build_mesh(256, 0.5, grading=1.0)
    return assemble(power_pair(0.0, 2.0, lam=0.0), mesh)


@pytest.fixture
def rng():
    return np.random.default_rng(20260826)
