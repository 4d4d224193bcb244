"""Discrete Hardy-Poincare constants and coercivity certification.

The best constant C* of  int u^2/b <= C int a (u')^2  is approximated from
below by the smallest generalized eigenvalue mu of K_a u = mu M_b u
(cstar_h = 1/mu_min).  For conjugate powers b-exponent = 2 - alpha the
analytic bound 4/(1-alpha)^2 is attached for cross-checking.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientPair, PowerPrototype
from .fem import BandedSPD, DiscreteOperator, Mesh, TridiagCholesky


class EigenConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"inverse iteration stagnated after {iterations} steps (residual {residual:.3e})"
        )
        self.residual = residual


@dataclass(frozen=True)
class HardyReport:
    cstar_h: float
    mu_min: float
    analytic_bound: float | None
    eigvec: np.ndarray
    mesh_n: int
    iterations: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "cstar_h": self.cstar_h,
                "mu_min": self.mu_min,
                "analytic_bound": self.analytic_bound,
                "mesh_n": self.mesh_n,
            }
        )

    def eigvec_to_csv(self, path) -> None:
        np.savetxt(path, self.eigvec, fmt="%.17g")


@dataclass(frozen=True)
class CoercivityReport:
    lam: float
    Lambda_h: float
    min_eig_shifted: float
    admissible: bool


def analytic_hardy_bound(pair: CoefficientPair) -> float | None:
    """4/(1-alpha)^2 for conjugate power pairs (b exponent = 2 - alpha), else None.

    Absent for alpha = 1, where the analytic prefactor degenerates.
    """
    if not (isinstance(pair.a, PowerPrototype) and isinstance(pair.b, PowerPrototype)):
        return None
    alpha = pair.a.exponent
    if abs(pair.b.exponent - (2.0 - alpha)) > 1e-12 or abs(alpha - 1.0) < 1e-12:
        return None
    return 4.0 / (1.0 - alpha) ** 2


def _largest_pencil_eig(
    K: BandedSPD,
    M_b: BandedSPD,
    seed: np.ndarray,
    rtol: float = 1e-10,
    max_iters: int = 500,
):
    """Largest eigenvalue of K^{-1} M_b by inverse iteration with K-Cholesky.

    Returns (sigma_max, eigvec, iterations); sigma_max = 1/mu_min of the
    pencil K u = mu M_b u.  The Rayleigh quotient u'M_b u / u'K u increases
    monotonically along the iteration, so truncation only under-estimates.
    """
    if np.all(M_b.diag == 0.0) and np.all(M_b.off == 0.0):
        raise ValueError("singular mass M_b is identically zero; no singularity to weigh")
    chol = TridiagCholesky(K)
    u = seed / np.sqrt(max(M_b.quadform(seed), 1e-300))
    sigma = 0.0
    for it in range(1, max_iters + 1):
        w = chol.solve(M_b.matvec(u))
        nrm = np.sqrt(max(M_b.quadform(w), 1e-300))
        u = w / nrm
        sigma_new = M_b.quadform(u) / K.quadform(u)
        if it > 1 and abs(sigma_new - sigma) <= rtol * abs(sigma_new):
            return sigma_new, u, it
        sigma = sigma_new
    resid = np.linalg.norm(K.matvec(u) * sigma - M_b.matvec(u))
    raise EigenConvergenceError(resid, max_iters)


def _default_seed(op: DiscreteOperator) -> np.ndarray:
    # concentrated near the singularity, where the extremizer lives
    return np.exp(-np.abs(op.dof_x - op.mesh.x0) / 0.1)


def best_constant(op: DiscreteOperator, rtol: float = 1e-10, max_iters: int = 500) -> HardyReport:
    """Best discrete Hardy constant cstar_h = 1/mu_min of K_a u = mu M_b u."""
    sigma, u, iters = _largest_pencil_eig(op.K_a, op.M_b, _default_seed(op), rtol, max_iters)
    return HardyReport(
        cstar_h=float(sigma),
        mu_min=float(1.0 / sigma),
        analytic_bound=None,
        eigvec=u,
        mesh_n=op.mesh.n_cells,
        iterations=iters,
    )


def best_constant_for(pair: CoefficientPair, op: DiscreteOperator, **kw) -> HardyReport:
    """best_constant with the conjugate-power analytic bound attached."""
    rep = best_constant(op, **kw)
    bound = analytic_hardy_bound(pair)
    return HardyReport(
        cstar_h=rep.cstar_h,
        mu_min=rep.mu_min,
        analytic_bound=bound,
        eigvec=rep.eigvec,
        mesh_n=rep.mesh_n,
        iterations=rep.iterations,
    )


def coercivity(op: DiscreteOperator, cstar_h: float) -> CoercivityReport:
    """Coercivity constant of K_a - lambda M_b relative to K_a.

    Lambda_h = 1 for lambda <= 0, else 1 - lambda*cstar_h.  min_eig_shifted is
    recomputed from a fresh eigensolve of the pencil (the smallest eigenvalue
    of (K_a - lambda M_b, K_a) equals 1 - lambda * sigma_max(K_a^{-1} M_b) for
    lambda > 0); for lambda <= 0 the pencil is bounded below by 1.
    """
    lam = op.lam
    if lam <= 0.0:
        return CoercivityReport(lam=lam, Lambda_h=1.0, min_eig_shifted=1.0, admissible=True)
    sigma, _, _ = _largest_pencil_eig(op.K_a, op.M_b, _default_seed(op))
    min_eig = 1.0 - lam * sigma
    Lambda_h = 1.0 - lam * cstar_h
    return CoercivityReport(
        lam=lam, Lambda_h=float(Lambda_h), min_eig_shifted=float(min_eig),
        admissible=bool(min_eig > 0.0),
    )


def verify_hp_weight(
    pair: CoefficientPair,
    q: float,
    mesh: Mesh,
    kind: str = "singular",
) -> bool:
    """Check the auxiliary-weight monotonicity p(x)/|x-x0|^q about x0.

    kind "singular" uses p = (x-x0)^2/b (the Hardy route); kind "energy" uses
    p = (a |x-x0|^4)^(1/3) (the energy-monotonicity route).
    """
    if q <= 1.0:
        raise ValueError(f"q={q} must exceed 1")
    x0 = mesh.x0
    nodes = mesh.nodes
    i0 = mesh.x0_index
    left = nodes[1:i0]
    right = nodes[i0 + 1 : -1]

    def p(x):
        if kind == "singular":
            return (x - x0) ** 2 / pair.b_val(x)
        if kind == "energy":
            return (pair.a_val(x) * np.abs(x - x0) ** 4) ** (1.0 / 3.0)
        raise ValueError(f"unknown weight kind {kind!r}")

    fl = p(left) / np.abs(left - x0) ** q
    fr = p(right) / np.abs(right - x0) ** q
    scale = max(fl.max(initial=0.0), fr.max(initial=0.0), 1e-300)
    return bool(
        np.all(np.diff(fl) <= 1e-9 * scale) and np.all(np.diff(fr) >= -1e-9 * scale)
    )
