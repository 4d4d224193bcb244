import json

import numpy as np
import pytest

from degenparab.control import (
    HUMProblem,
    J_eps,
    grad_J_eps,
    gramian_apply,
    hum_control,
    observability_constant,
    verify_cost_bound,
)
from degenparab.evolution import ControlPattern, TimeGrid, solve_forward
from tests.conftest import heat_op  # noqa: F401


@pytest.fixture(scope="module")
def heat_setup():
    from tests.conftest import power_pair
    from degenparab.fem import assemble, build_mesh

    op = assemble(power_pair(0.0, 2.0, lam=0.0), build_mesh(128, 0.5, grading=1.0))
    tg = TimeGrid(T=0.5, n_steps=64)
    omega = ControlPattern(0.3, 0.7, 0.5)
    return op, tg, omega


def test_problem_validation(heat_setup):
    op = heat_setup[0]
    u0 = np.sin(np.pi * op.dof_x)
    omega = ControlPattern(0.3, 0.7, 0.5)
    with pytest.raises(ValueError):
        HUMProblem(u0=u0, omega=omega, epsilon=0.0)
    with pytest.raises(ValueError):
        HUMProblem(u0=u0, omega=omega, epsilon=2.0)
    with pytest.raises(ValueError):
        HUMProblem(u0=u0, omega=omega, cg_tol=1.0)


def test_hum_zero_initial_state(heat_setup):
    op, tg, omega = heat_setup
    res = hum_control(op, tg, HUMProblem(u0=np.zeros(op.n_dof), omega=omega))
    assert res.terminal_norm == pytest.approx(0.0, abs=1e-14)
    assert res.cost == pytest.approx(0.0, abs=1e-14)


def test_hum_heat_null_control(heat_setup):
    op, tg, omega = heat_setup
    u0 = np.sin(np.pi * op.dof_x)
    res = hum_control(op, tg, HUMProblem(u0=u0, omega=omega, epsilon=1e-8))
    assert res.converged
    # terminal state driven far below the free evolution
    assert res.terminal_norm / op.m_norm(u0) < 1e-2
    # optimality identity ||u(T)||_M = eps * ||pT||_M
    assert res.terminal_norm == pytest.approx(res.epsilon * op.m_norm(res.pT), rel=1e-6)
    # penalized functional decreases monotonically along CG
    hist = np.array(res.J_history)
    assert np.all(np.diff(hist) <= 1e-12 * np.abs(hist[0]))
    # the control is supported in omega
    outside = (op.dof_x < 0.29) | (op.dof_x > 0.71)
    assert np.max(np.abs(res.h.values[:, outside])) == 0.0
    # replaying the control reproduces the reported terminal norm
    u = solve_forward(op, tg, u0, h=res.h.values, omega=omega)
    assert op.m_norm(u.values[-1]) == pytest.approx(res.terminal_norm, rel=1e-8)
    assert verify_cost_bound(res, u0, op) == pytest.approx(res.cost_ratio)
    json.loads(res.to_json())


def test_gramian_symmetric_psd(heat_setup, rng):
    op, tg, omega = heat_setup
    x = rng.standard_normal(op.n_dof)
    y = rng.standard_normal(op.n_dof)
    Gx, qx = gramian_apply(op, tg, omega, x)
    Gy, _ = gramian_apply(op, tg, omega, y)
    assert qx >= 0.0
    assert qx == pytest.approx(float(x @ op.M.matvec(Gx)), rel=1e-10)
    # M-self-adjoint: <Gx, y>_M = <x, Gy>_M
    assert float(y @ op.M.matvec(Gx)) == pytest.approx(float(x @ op.M.matvec(Gy)), rel=1e-10)


def test_gradient_matches_finite_differences(heat_setup, rng):
    op, tg, omega = heat_setup
    u0 = np.sin(np.pi * op.dof_x)
    prob = HUMProblem(u0=u0, omega=omega, epsilon=1e-4)
    pT = rng.standard_normal(op.n_dof)
    g = grad_J_eps(op, tg, prob, pT)
    for _ in range(2):
        d = rng.standard_normal(op.n_dof)
        eps = 1e-6
        fd = (J_eps(op, tg, prob, pT + eps * d) - J_eps(op, tg, prob, pT - eps * d)) / (2 * eps)
        assert fd == pytest.approx(float(d @ op.M.matvec(g)), rel=1e-6)


def test_observability_heat_converges(heat_setup):
    op, tg, _ = heat_setup
    rep = observability_constant(op, tg, ControlPattern(0.0, 1.0, 0.5))
    assert rep.converged
    assert np.isfinite(rep.c_T) and rep.c_T > 0.0
    json.loads(rep.to_json())
