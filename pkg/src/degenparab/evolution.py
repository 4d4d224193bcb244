"""Theta-scheme time stepping for the forward and adjoint problems.

Implicit Euler is the default (it inherits the contraction property of the
continuous semigroup step by step); Crank-Nicolson is available for accuracy
studies.  The adjoint solve is the exact time reversal of the forward step
map, which for the symmetric spatial operator gives exact discrete duality.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .fem import BandedSPD, DiscreteOperator, NotSPDError, TridiagCholesky
from .hardy import coercivity, best_constant


_G3X, _G3W = np.polynomial.legendre.leggauss(3)


class InstabilityError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite state at step {step}")
        self.step = step


class InadmissibleLambdaError(RuntimeError):
    def __init__(self, report):
        super().__init__(
            f"lambda={report.lam} is inadmissible (min_eig_shifted={report.min_eig_shifted:.3e})"
        )
        self.report = report


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 8:
            raise ValueError("n_steps must be at least 8")
        if self.T <= 0:
            raise ValueError("T must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass(frozen=True)
class Trajectory:
    """Nodal dof values indexed by time step; row n is time t_n."""

    values: np.ndarray  # (n_steps+1, n_dof)
    kind: str  # "forward" | "adjoint"

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1


@dataclass(frozen=True)
class ControlPattern:
    """Control interval omega = (alpha, beta), a subinterval of [0, 1]."""

    alpha: float
    beta: float
    x0: float

    def __post_init__(self):
        if not 0.0 <= self.alpha < self.beta <= 1.0:
            raise ValueError(f"need 0 <= alpha < beta <= 1, got ({self.alpha}, {self.beta})")

    @property
    def contains_x0(self) -> bool:
        return self.alpha < self.x0 < self.beta

    def shrunk(self, margin: float) -> "ControlPattern":
        return ControlPattern(self.alpha + margin, self.beta - margin, self.x0)


def omega_mass(op: DiscreteOperator, omega: ControlPattern) -> BandedSPD:
    """Mass matrix of int_omega phi_i phi_j: cells clipped to omega exactly.

    Nodes whose hat support misses omega get identically zero rows, which
    encodes the characteristic-function restriction with boundary cells
    weighted by their overlap.
    """
    nodes = op.mesh.nodes
    nn = nodes.size
    d = np.zeros(nn)
    o = np.zeros(nn - 1)
    for c in range(nn - 1):
        xl, xr = nodes[c], nodes[c + 1]
        a = max(xl, omega.alpha)
        b = min(xr, omega.beta)
        if b <= a:
            continue
        h = xr - xl
        # 3-pt Gauss is exact for the quadratic hat products on [a, b]
        def I(p, q):  # int (x-xl)^p (xr-x)^q dx over [a, b]
            xg = 0.5 * (a + b) + 0.5 * (b - a) * _G3X
            return 0.5 * (b - a) * np.sum(_G3W * (xg - xl) ** p * (xr - xg) ** q)

        d[c] += I(0, 2) / h**2
        d[c + 1] += I(2, 0) / h**2
        o[c] += I(1, 1) / h**2
    keep = op.dof_nodes
    rd = d[keep]
    ro = np.zeros(keep.size - 1)
    for j in range(keep.size - 1):
        if keep[j + 1] == keep[j] + 1:
            ro[j] = o[keep[j]]
    return BandedSPD(diag=rd, off=ro)


def omega_node_mask(op: DiscreteOperator, omega: ControlPattern) -> np.ndarray:
    """Dofs whose hat support intersects omega (the control's support set)."""
    Mw = omega_mass(op, omega)
    mask = Mw.diag > 0.0
    return mask


class ThetaStepper:
    """Factored step map of the theta-scheme for A = K_a - lambda M_b."""

    def __init__(self, op: DiscreteOperator, tg: TimeGrid, theta: float = 1.0,
                 check_admissible: bool = True):
        if not 0.5 <= theta <= 1.0:
            raise ValueError("theta must lie in [1/2, 1]")
        self.op = op
        self.tg = tg
        self.theta = theta
        A = op.stiffness_shifted
        if check_admissible and op.lam > 0.0:
            try:
                TridiagCholesky(A)
            except NotSPDError:
                rep = coercivity(op, best_constant(op).cstar_h)
                raise InadmissibleLambdaError(rep)
        dt = tg.dt
        self.A = A
        self.lhs = TridiagCholesky(op.M.axpy(theta * dt, A))
        self._rhs_M = op.M
        self._rhs_coeff = -(1.0 - theta) * dt

    def advance(self, u: np.ndarray, source: np.ndarray | None = None) -> np.ndarray:
        rhs = self._rhs_M.matvec(u)
        if self._rhs_coeff != 0.0:
            rhs += self._rhs_coeff * self.A.matvec(u)
        if source is not None:
            rhs += source
        return self.lhs.solve(rhs)


def solve_forward(
    op: DiscreteOperator,
    tg: TimeGrid,
    u0: np.ndarray,
    h: np.ndarray | None = None,
    omega: ControlPattern | None = None,
    theta: float = 1.0,
) -> Trajectory:
    """March the controlled forward problem from u0.

    h, when given, is a (n_steps+1, n_dof) array of control values; the source
    of the step t_n -> t_{n+1} is dt * M_omega h^{n+theta} (h^{n+1} for
    implicit Euler, the average for Crank-Nicolson).
    """
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (op.n_dof,):
        raise ValueError("u0 does not conform to the operator's dofs")
    stepper = ThetaStepper(op, tg, theta)
    Mw = omega_mass(op, omega) if omega is not None else None
    if h is not None and Mw is None:
        raise ValueError("a source h requires a control pattern omega")
    vals = np.empty((tg.n_steps + 1, op.n_dof))
    vals[0] = u0
    dt = tg.dt
    for n in range(tg.n_steps):
        src = None
        if h is not None:
            h_mid = h[n + 1] if theta == 1.0 else theta * h[n + 1] + (1.0 - theta) * h[n]
            src = dt * Mw.matvec(h_mid)
        vals[n + 1] = stepper.advance(vals[n], src)
        if not np.all(np.isfinite(vals[n + 1])):
            raise InstabilityError(n + 1)
    return Trajectory(values=vals, kind="forward")


def solve_adjoint(
    op: DiscreteOperator,
    tg: TimeGrid,
    vT: np.ndarray,
    theta: float = 1.0,
) -> Trajectory:
    """Integrate the homogeneous adjoint problem backward from v(T) = vT.

    Equals solve_forward under time reversal, step by step, since the spatial
    operator is symmetric.
    """
    vT = np.asarray(vT, dtype=float)
    if vT.shape != (op.n_dof,):
        raise ValueError("vT does not conform to the operator's dofs")
    stepper = ThetaStepper(op, tg, theta)
    vals = np.empty((tg.n_steps + 1, op.n_dof))
    vals[tg.n_steps] = vT
    for n in range(tg.n_steps, 0, -1):
        vals[n - 1] = stepper.advance(vals[n])
        if not np.all(np.isfinite(vals[n - 1])):
            raise InstabilityError(n - 1)
    return Trajectory(values=vals, kind="adjoint")


def energy(op: DiscreteOperator, traj: Trajectory) -> np.ndarray:
    """E(t_n) = v'K_a v - lambda v'M_b v along the trajectory."""
    out = np.empty(traj.values.shape[0])
    for n, v in enumerate(traj.values):
        out[n] = op.K_a.quadform(v) - op.lam * op.M_b.quadform(v)
    return out


def control_pairing(
    op: DiscreteOperator,
    tg: TimeGrid,
    h: np.ndarray,
    v: Trajectory,
    omega: ControlPattern,
    theta: float = 1.0,
) -> float:
    """Discrete space-time pairing of the control with an adjoint trajectory.

    For the matched theta-scheme pair this equals
    <u(T), vT>_M - <u0, v(0)>_M exactly; implicit Euler pairs h^{n+1} with
    v^n, Crank-Nicolson pairs h^{n+1/2} with (M + dt/2 A)^{-1} M v^{n+1}.
    """
    Mw = omega_mass(op, omega)
    dt = tg.dt
    total = 0.0
    if theta == 1.0:
        for n in range(tg.n_steps):
            total += dt * float(h[n + 1] @ Mw.matvec(v.values[n]))
        return total
    stepper = ThetaStepper(op, tg, theta, check_admissible=False)
    for n in range(tg.n_steps):
        h_mid = theta * h[n + 1] + (1.0 - theta) * h[n]
        v_tilde = stepper.lhs.solve(op.M.matvec(v.values[n + 1]))
        total += dt * float(h_mid @ Mw.matvec(v_tilde))
    return total


def trajectory_to_csv(path, op: DiscreteOperator, tg: TimeGrid, traj: Trajectory) -> None:
    """Stream (t, x, value) rows over the full node set (Dirichlet zeros kept)."""
    nodes = op.mesh.nodes
    with open(path, "w") as f:
        f.write("t,x,value\n")
        for n, t in enumerate(tg.times):
            full = op.extend(traj.values[n])
            for x, v in zip(nodes, full):
                f.write(f"{t:.17g},{x:.17g},{v:.17g}\n")


def trajectory_to_binary(path, traj: Trajectory) -> None:
    """Compact dump: header (n_steps, n_dof as little-endian u64), then
    row-major little-endian float64 values."""
    vals = traj.values
    with open(path, "wb") as f:
        f.write(struct.pack("<QQ", vals.shape[0] - 1, vals.shape[1]))
        f.write(vals.astype("<f8").tobytes(order="C"))


def trajectory_from_binary(path, kind: str = "forward") -> Trajectory:
    with open(path, "rb") as f:
        n_steps, n_dof = struct.unpack("<QQ", f.read(16))
        vals = np.frombuffer(f.read(), dtype="<f8").reshape(n_steps + 1, n_dof)
    return Trajectory(values=vals.copy(), kind=kind)
