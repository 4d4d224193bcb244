"""Carleman weights and empirical evaluation of the weighted inequalities.

The weight is phi(t,x) = Theta(t) psi(x) with Theta = 1/[t(T-t)]^4 and
psi = c1 [int_{x0}^x (y-x0)/a dy - c2] < 0.  Both sides of the weighted
energy inequality and of the interior Caccioppoli inequality are evaluated on
discrete adjoint trajectories by trapezoid-in-time, Gauss-in-space
quadrature; exponentials are taken in log space so that the blow-up of Theta
at the time endpoints yields exact zeros rather than over/underflow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientPair, PowerPrototype
from .evolution import ControlPattern, TimeGrid, Trajectory
from .fem import DiscreteOperator, Mesh, TridiagCholesky, _GW, _GX

_LOG_FLOOR = -700.0  # below this, e^{2 s phi} is an exact 0


class WeightError(ValueError):
    pass


def theta_factor(t, T):
    """Theta(t) = 1/[t(T-t)]^4, minimal at t = T/2."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return 1.0 / (t * (T - t)) ** 4


def _psi_integral_fn(pair: CoefficientPair, mesh: Mesh):
    """x -> int_{x0}^x (y-x0)/a dy, >= 0 on both sides of x0."""
    if isinstance(pair.a, PowerPrototype):
        k1 = pair.a.exponent
        if k1 >= 2.0:
            raise WeightError("psi integrand is non-integrable for K1 >= 2")

        def fn(x):
            return np.abs(np.asarray(x, dtype=float) - pair.x0) ** (2.0 - k1) / (2.0 - k1)

        return fn
    # tabulated: cumulative composite Gauss on a fine grid, then interpolation
    xs = np.unique(np.concatenate([mesh.nodes, np.linspace(0, 1, 4097)]))
    vals = np.zeros_like(xs)
    i0 = int(np.argmin(np.abs(xs - pair.x0)))
    for i in range(i0, xs.size - 1):
        xg = xs[i] + (xs[i + 1] - xs[i]) * _GX
        vals[i + 1] = vals[i] + (xs[i + 1] - xs[i]) * np.sum(
            _GW * (xg - pair.x0) / pair.a_val(xg)
        )
    for i in range(i0, 0, -1):
        xg = xs[i - 1] + (xs[i] - xs[i - 1]) * _GX
        vals[i - 1] = vals[i] + (xs[i] - xs[i - 1]) * np.sum(
            _GW * (pair.x0 - xg) / pair.a_val(xg)
        )
    return lambda x: np.interp(x, xs, vals)


@dataclass(frozen=True)
class CarlemanWeight:
    c1: float
    c2: float
    s: float
    T: float
    mesh: Mesh
    psi_nodes: np.ndarray
    _psi_fn: object

    def psi(self, x):
        return self.c1 * (self._psi_fn(x) - self.c2)

    def theta(self, t):
        return theta_factor(t, self.T)

    def log_weight(self, t, x):
        """log e^{2 s phi} = 2 s Theta(t) psi(x); -inf at t in {0, T}."""
        t = np.asarray(t, dtype=float)
        out = 2.0 * self.s * np.multiply.outer(self.theta(t), self.psi(x))
        return out

    def weight(self, t, x):
        lw = self.log_weight(t, x)
        w = np.where(lw > _LOG_FLOOR, np.exp(np.maximum(lw, _LOG_FLOOR)), 0.0)
        return w

    def with_s(self, s: float) -> "CarlemanWeight":
        return CarlemanWeight(self.c1, self.c2, s, self.T, self.mesh,
                              self.psi_nodes, self._psi_fn)

    def default_s0(self) -> float:
        """s chosen so max_x e^{2 s phi(T/2, x)} = 1/2: the onset of attenuation.

        Smaller s leaves the weight essentially inactive; much larger s pushes
        the whole functional into the exponential-decay regime where every term
        is dominated by the boundary neighbourhood.
        """
        psi_max = float(np.max(self.psi_nodes))  # < 0
        return float(np.log(0.5) / (2.0 * self.theta(self.T / 2.0) * psi_max))


def make_weight(
    pair: CoefficientPair,
    mesh: Mesh,
    c1: float = 1.0,
    c2_margin: float = 0.1,
    s: float = 1.0,
) -> CarlemanWeight:
    if c1 <= 0 or c2_margin <= 0 or s <= 0:
        raise WeightError("c1, c2_margin and s must be positive")
    fn = _psi_integral_fn(pair, mesh)
    node_ints = fn(mesh.nodes)
    c2 = float(np.max(node_ints) + c2_margin)
    psi_nodes = c1 * (node_ints - c2)
    if np.any(psi_nodes >= 0):
        raise WeightError("psi must be negative on [0, 1]")
    return CarlemanWeight(
        c1=float(c1), c2=c2, s=float(s), T=pair.T, mesh=mesh,
        psi_nodes=psi_nodes, _psi_fn=fn,
    )


@dataclass(frozen=True)
class NondegWeight:
    """Carleman weight data on an interval [A, B] away from the degeneracy."""

    A: float
    B: float
    variant: str  # "a1" | "a2"
    r: float
    frak_c: float
    frak_d: float
    xs: np.ndarray
    rho: np.ndarray
    zeta: np.ndarray
    T: float

    def phi(self, t, x):
        return np.multiply.outer(theta_factor(t, self.T), np.interp(x, self.xs, self.rho))


def make_nondeg_weight(
    pair: CoefficientPair,
    mesh: Mesh,
    A: float,
    B: float,
    variant: str = "a2",
    r: float = 1.0,
    margin: float = 0.1,
) -> NondegWeight:
    """Weight for the nondegenerate, nonsingular estimate on [A, B].

    Variant "a1" uses the prototype auxiliary data (unit interior function and
    unit offset); variant "a2" exponentiates zeta(x) = d int_x^B 1/a with
    d = sup |a'| on [A, B] and shifts by frak_c so max rho < 0.
    """
    if not (0.0 <= A < B <= 1.0) or (A <= pair.x0 <= B):
        raise WeightError(f"[{A}, {B}] must avoid the degeneracy point {pair.x0}")
    if variant not in ("a1", "a2"):
        raise WeightError(f"unknown variant {variant!r}")
    if r <= 0 or margin <= 0:
        raise WeightError("r and margin must be positive")
    xs = np.unique(np.concatenate([[A, B], mesh.nodes[(mesh.nodes > A) & (mesh.nodes < B)]]))
    fine = np.linspace(A, B, 2049)
    frak_d = float(np.max(np.abs(pair.a_deriv(fine))))

    def cumulative(f):
        vals = np.zeros(xs.size)
        for i in range(xs.size - 1):
            xg = xs[i] + (xs[i + 1] - xs[i]) * _GX
            vals[i + 1] = vals[i] + (xs[i + 1] - xs[i]) * np.sum(_GW * f(xg))
        return vals

    zeta_rev = cumulative(lambda x: 1.0 / pair.a_val(x))  # int_A^x 1/a
    zeta = frak_d * (zeta_rev[-1] - zeta_rev)  # d * int_x^B 1/a
    if variant == "a1":
        integ = cumulative(lambda x: (B - x + 1.0) / np.sqrt(pair.a_val(x)))
        frak_c = float(margin)
        rho = -r * integ - frak_c
    else:
        e = np.exp(r * zeta)
        frak_c = float(np.max(e) + margin)
        rho = e - frak_c
    if np.any(rho >= 0):
        raise WeightError("rho must be negative on [A, B]")
    return NondegWeight(
        A=float(A), B=float(B), variant=variant, r=float(r), frak_c=frak_c,
        frak_d=frak_d, xs=xs, rho=rho, zeta=zeta, T=pair.T,
    )


@dataclass(frozen=True)
class CarlemanReport:
    s: float
    lhs: float
    rhs_source: float
    rhs_boundary: float

    @property
    def ratio(self) -> float:
        den = self.rhs_source + self.rhs_boundary
        return self.lhs / den if den != 0.0 else float("inf")

    def csv_row(self) -> str:
        return f"{self.s:.17g},{self.lhs:.17g},{self.rhs_source:.17g},{self.rhs_boundary:.17g},{self.ratio:.17g}"


def _gauss_geometry(op: DiscreteOperator, pair: CoefficientPair):
    """Per-cell Gauss points with cached coefficient values."""
    nodes = op.mesh.nodes
    xl = nodes[:-1][:, None]
    xr = nodes[1:][:, None]
    h = xr - xl
    xg = xl + h * _GX[None, :]
    wq = h * _GW[None, :]
    a_g = pair.a_val(xg)
    t_g = np.abs(xg - op.mesh.x0)
    sing_g = t_g**2 / a_g  # (x-x0)^2/a, vanishes at x0 for K1 < 2
    return xg, wq, a_g, sing_g, h[:, 0]


def _one_sided_gradient(nodes: np.ndarray, vals: np.ndarray, at_left: bool) -> float:
    """Second-order one-sided derivative from three boundary nodes."""
    if at_left:
        x0_, x1, x2 = nodes[0], nodes[1], nodes[2]
        f0, f1, f2 = vals[0], vals[1], vals[2]
        xq = x0_
    else:
        x0_, x1, x2 = nodes[-3], nodes[-2], nodes[-1]
        f0, f1, f2 = vals[-3], vals[-2], vals[-1]
        xq = x2
    # derivative of the quadratic Lagrange interpolant at xq
    d0 = (2 * xq - x1 - x2) / ((x0_ - x1) * (x0_ - x2))
    d1 = (2 * xq - x0_ - x2) / ((x1 - x0_) * (x1 - x2))
    d2 = (2 * xq - x0_ - x1) / ((x2 - x0_) * (x2 - x1))
    return float(f0 * d0 + f1 * d1 + f2 * d2)


def manufactured_solution(op: DiscreteOperator, tg: TimeGrid, v_fn):
    """Nodal trajectory of a smooth v and its discrete adjoint residual source.

    h := v_t + (a v_x)_x + lambda v / b evaluated discretely: central time
    differences and -M^{-1} (K_a - lambda M_b) v in space.
    """
    from .evolution import Trajectory

    vals = np.empty((tg.n_steps + 1, op.n_dof))
    for n, t in enumerate(tg.times):
        vals[n] = np.asarray(v_fn(t, op.dof_x), dtype=float)
    chol = TridiagCholesky(op.M)
    A = op.stiffness_shifted
    h = np.empty_like(vals)
    dt = tg.dt
    for n in range(tg.n_steps + 1):
        if n == 0:
            dvdt = (vals[1] - vals[0]) / dt
        elif n == tg.n_steps:
            dvdt = (vals[-1] - vals[-2]) / dt
        else:
            dvdt = (vals[n + 1] - vals[n - 1]) / (2.0 * dt)
        h[n] = dvdt - chol.solve(A.matvec(vals[n]))
    return Trajectory(values=vals, kind="adjoint"), h


def evaluate(
    op: DiscreteOperator,
    w: CarlemanWeight,
    v: Trajectory,
    h: np.ndarray,
    pair: CoefficientPair,
    tg: TimeGrid,
) -> CarlemanReport:
    """Evaluate both sides of the weighted energy inequality on a trajectory."""
    if v.values.shape != (tg.n_steps + 1, op.n_dof):
        raise ValueError("trajectory does not conform to the operator/time grid")
    xg, wq, a_g, sing_g, hwid = _gauss_geometry(op, pair)
    psi_g = w.psi(xg)
    s = w.s
    nodes = op.mesh.nodes
    times = tg.times
    lhs = 0.0
    rhs_src = 0.0
    bnd = 0.0
    psi0 = float(w.psi(nodes[0]))
    psi1 = float(w.psi(nodes[-1]))
    a0 = float(pair.a_val(nodes[0]))
    a1 = float(pair.a_val(nodes[-1]))
    for n in range(1, tg.n_steps):  # e^{2 s phi} vanishes exactly at t=0, T
        t = times[n]
        th = float(w.theta(t))
        lw = 2.0 * s * th * psi_g
        W = np.where(lw > _LOG_FLOOR, np.exp(np.maximum(lw, _LOG_FLOOR)), 0.0)
        vfull = op.extend(v.values[n])
        vl, vr = vfull[:-1][:, None], vfull[1:][:, None]
        xi = (xg - nodes[:-1][:, None]) / hwid[:, None]
        v_g = vl * (1.0 - xi) + vr * xi
        vx = (vfull[1:] - vfull[:-1]) / hwid
        integ = s * th * a_g * vx[:, None] ** 2 + (s * th) ** 3 * sing_g * v_g**2
        lhs += float(np.sum(wq * integ * W)) * tg.dt
        hfull = op.extend(h[n])
        hl, hr = hfull[:-1][:, None], hfull[1:][:, None]
        h_g = hl * (1.0 - xi) + hr * xi
        rhs_src += float(np.sum(wq * h_g**2 * W)) * tg.dt
        # boundary bracket [a Theta e^{2 s phi} (x - x0) v_x^2]_{x=0}^{x=1}
        vx0 = _one_sided_gradient(nodes, vfull, at_left=True)
        vx1 = _one_sided_gradient(nodes, vfull, at_left=False)
        w0 = np.exp(max(2.0 * s * th * psi0, _LOG_FLOOR)) if 2 * s * th * psi0 > _LOG_FLOOR else 0.0
        w1 = np.exp(max(2.0 * s * th * psi1, _LOG_FLOOR)) if 2 * s * th * psi1 > _LOG_FLOOR else 0.0
        f1 = a1 * th * w1 * (nodes[-1] - op.mesh.x0) * vx1**2
        f0 = a0 * th * w0 * (nodes[0] - op.mesh.x0) * vx0**2
        bnd += s * w.c1 * (f1 - f0) * tg.dt
    return CarlemanReport(s=s, lhs=lhs, rhs_source=rhs_src, rhs_boundary=bnd)


def s_scan(
    op: DiscreteOperator,
    w: CarlemanWeight,
    v: Trajectory,
    h: np.ndarray,
    s_values,
    pair: CoefficientPair,
    tg: TimeGrid,
) -> list[CarlemanReport]:
    """One report per s; the empirical constant is the max ratio over the scan."""
    s_values = list(s_values)
    if any(s <= 0 for s in s_values) or any(
        b <= a for a, b in zip(s_values, s_values[1:])
    ):
        raise ValueError("s_values must be positive and increasing")
    return [evaluate(op, w.with_s(s), v, h, pair, tg) for s in s_values]


def caccioppoli(
    op: DiscreteOperator,
    w: CarlemanWeight,
    v: Trajectory,
    omega: ControlPattern,
    omega_prime: ControlPattern,
    tg: TimeGrid,
) -> tuple[float, float]:
    """(weighted gradient integral over omega', plain L2 integral over omega).

    Requires omega' compactly inside omega with x0 outside its closure; the
    quotient of the two numbers is the empirical Caccioppoli constant.
    """
    if not (omega.alpha < omega_prime.alpha and omega_prime.beta < omega.beta):
        raise ValueError("omega' must be compactly contained in omega")
    if omega_prime.alpha <= op.mesh.x0 <= omega_prime.beta:
        raise ValueError("x0 must lie outside the closure of omega'")
    nodes = op.mesh.nodes
    xg, wq, _, _, hwid = _gauss_geometry(op, _IdentityPair(op.mesh.x0))
    # clip masks per Gauss point
    in_prime = (xg > omega_prime.alpha) & (xg < omega_prime.beta)
    in_omega = (xg > omega.alpha) & (xg < omega.beta)
    psi_g = w.psi(xg)
    num = 0.0
    den = 0.0
    times = tg.times
    for n in range(tg.n_steps + 1):
        t = times[n]
        tw = tg.dt * (0.5 if n in (0, tg.n_steps) else 1.0)
        vfull = op.extend(v.values[n])
        vx = (vfull[1:] - vfull[:-1]) / hwid
        xi = (xg - nodes[:-1][:, None]) / hwid[:, None]
        v_g = vfull[:-1][:, None] * (1.0 - xi) + vfull[1:][:, None] * xi
        den += tw * float(np.sum(wq * v_g**2 * in_omega))
        if 0 < n < tg.n_steps:
            lw = 2.0 * w.s * float(w.theta(t)) * psi_g
            W = np.where(lw > _LOG_FLOOR, np.exp(np.maximum(lw, _LOG_FLOOR)), 0.0)
            num += tg.dt * float(np.sum(wq * vx[:, None] ** 2 * W * in_prime))
    return num, den


class _IdentityPair:
    """Coefficient stub for geometry caching where only x matters."""

    def __init__(self, x0):
        self.x0 = x0

    def a_val(self, x):
        return np.ones_like(np.asarray(x, dtype=float))


def scan_summary_json(reports: list[CarlemanReport], w: CarlemanWeight, s0: float) -> str:
    return json.dumps(
        {
            "max_ratio": max(r.ratio for r in reports),
            "s0": s0,
            "c1": w.c1,
            "c2": w.c2,
        }
    )
