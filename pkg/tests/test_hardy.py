import json

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from degenparab.fem import assemble, build_mesh, default_grading
from degenparab.hardy import (
    analytic_hardy_bound,
    best_constant,
    best_constant_for,
    coercivity,
    verify_hp_weight,
)
from tests.conftest import power_pair


def to_sparse(B):
    return sp.diags([B.off, B.diag, B.off], [-1, 0, 1]).tocsc()


def test_best_constant_against_scipy_oracle(wwd256):
    op, _, cstar = wwd256
    mu = spla.eigsh(
        to_sparse(op.M_b), k=1, M=to_sparse(op.K_a), which="LA",
        return_eigenvectors=False, maxiter=20000,
    )[0]
    assert cstar == pytest.approx(float(mu), rel=1e-8)


def test_analytic_bound_conjugate_pairs():
    assert analytic_hardy_bound(power_pair(0.0, 2.0)) == pytest.approx(4.0)
    assert analytic_hardy_bound(power_pair(0.5, 1.5)) == pytest.approx(16.0)
    assert analytic_hardy_bound(power_pair(1.5, 0.5)) == pytest.approx(16.0)
    assert analytic_hardy_bound(power_pair(0.5, 0.5)) is None  # not conjugate


def test_classical_inverse_square_constant():
    """a = 1, b = (x-0.5)^2: discrete constant below the sharp prefactor 4."""
    pair = power_pair(0.0, 2.0)
    mesh = build_mesh(512, 0.5, grading=4.0)
    rep = best_constant_for(pair, assemble(pair, mesh))
    assert rep.analytic_bound == pytest.approx(4.0)
    assert 0.0 < rep.cstar_h <= 4.0 * (1 + 1e-6)
    assert rep.cstar_h == pytest.approx(1.0 / rep.mu_min)
    assert rep.mesh_n == 512


def test_report_serialization(tmp_path, wwd256):
    op, pair, _ = wwd256
    rep = best_constant_for(pair, op)
    data = json.loads(rep.to_json())
    assert set(data) >= {"cstar_h", "mu_min", "analytic_bound", "mesh_n"}
    path = tmp_path / "eigvec.csv"
    rep.eigvec_to_csv(path)
    assert np.loadtxt(path).size == rep.eigvec.size


def test_extremal_eigvec_is_extremal(wwd256):
    op, _, cstar = wwd256
    rep = best_constant(op)
    v = rep.eigvec
    assert op.M_b.quadform(v) / op.K_a.quadform(v) == pytest.approx(cstar, rel=1e-8)


def test_coercivity_thresholds(wwd256):
    _, _, cstar = wwd256
    mesh = build_mesh(256, 0.5, grading=default_grading(0.5, 0.5))
    neg = coercivity(assemble(power_pair(0.5, 0.5, lam=-2.0), mesh), cstar)
    assert neg.Lambda_h == 1.0
    assert neg.admissible
    sub = coercivity(assemble(power_pair(0.5, 0.5, lam=0.5 / cstar), mesh), cstar)
    assert sub.Lambda_h == pytest.approx(0.5, rel=1e-10)
    assert sub.min_eig_shifted > 0.0
    sup = coercivity(assemble(power_pair(0.5, 0.5, lam=1.5 / cstar), mesh), cstar)
    assert sup.min_eig_shifted < 0.0
    assert not sup.admissible


def test_verify_hp_weight():
    mesh = build_mesh(128, 0.5, grading=2.0)
    # b = t^0.5: p = t^2/b = t^1.5, so p/t^q grows away from x0 for q < 1.5
    assert verify_hp_weight(power_pair(0.5, 0.5), 1.4, mesh, kind="singular")
    assert not verify_hp_weight(power_pair(0.5, 0.5), 1.6, mesh, kind="singular")
    # a = t^0.5: p = (a t^4)^(1/3) = t^1.5, same threshold
    assert verify_hp_weight(power_pair(0.5, 0.5), 1.4, mesh, kind="energy")
    with pytest.raises(ValueError):
        verify_hp_weight(power_pair(0.5, 0.5), 0.5, mesh)
