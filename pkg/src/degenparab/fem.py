"""Graded meshes and tridiagonal finite-element matrices for the weighted forms.

P1 elements on a mesh that contains x0 as a node.  The three bilinear forms
are int a u' v', int u v and int u v / b; with homogeneous Dirichlet data the
resulting matrices are tridiagonal, and when the singularity is strong
(K2 >= 1) the x0 degree of freedom is eliminated as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .coefficients import CoefficientPair, PowerPrototype, Tabulated


class MeshError(ValueError):
    pass


class AssemblyError(RuntimeError):
    pass


class NotSPDError(RuntimeError):
    def __init__(self, pivot_index: int):
        super().__init__(f"matrix is not positive definite (pivot {pivot_index})")
        self.pivot_index = pivot_index


# 5-point Gauss-Legendre on [0, 1]
_GX, _GW = np.polynomial.legendre.leggauss(5)
_GX = 0.5 * (_GX + 1.0)
_GW = 0.5 * _GW


@dataclass(frozen=True)
class Mesh:
    """Nodes on [0, 1] with x0 as a node, graded toward x0."""

    nodes: np.ndarray
    grading: float
    x0: float

    @property
    def n_cells(self) -> int:
        return self.nodes.size - 1

    @property
    def x0_index(self) -> int:
        return int(np.argmin(np.abs(self.nodes - self.x0)))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.nodes, fmt="%.17g")


def build_mesh(n_cells: int, x0: float, grading: float = 1.0) -> Mesh:
    """Graded mesh with n_cells/2 cells on each side of x0.

    Node offsets from x0 follow the map xi -> |xi|^g of a uniform parameter,
    so cells shrink toward x0 for g > 1.
    """
    if n_cells % 2 != 0 or n_cells < 16:
        raise MeshError(f"n_cells={n_cells} must be even and at least 16")
    if not 0.0 < x0 < 1.0:
        raise MeshError(f"x0={x0} must lie in (0, 1)")
    if grading < 1.0:
        raise MeshError(f"grading={grading} must be >= 1")
    m = n_cells // 2
    xi = (np.arange(m + 1) / m) ** grading
    left = x0 - x0 * xi[::-1]
    right = x0 + (1.0 - x0) * xi
    nodes = np.concatenate([left[:-1], right])
    nodes[m] = x0
    return Mesh(nodes=nodes, grading=float(grading), x0=float(x0))


def default_grading(k1: float, k2: float) -> float:
    """g = 2/(2 - max(K1, K2)) capped at 4, equilibrating hat energies near x0."""
    kmax = max(k1, k2)
    if kmax >= 2.0 - 1e-12:
        return 4.0
    return float(min(max(2.0 / (2.0 - kmax), 1.0), 4.0))


@dataclass(frozen=True)
class BandedSPD:
    """Symmetric tridiagonal matrix stored as diagonal + off-diagonal."""

    diag: np.ndarray
    off: np.ndarray

    @property
    def n(self) -> int:
        return self.diag.size

    def matvec(self, u: np.ndarray) -> np.ndarray:
        v = self.diag * u
        v[:-1] += self.off * u[1:]
        v[1:] += self.off * u[:-1]
        return v

    def quadform(self, u: np.ndarray) -> float:
        return float(np.sum(self.diag * u * u) + 2.0 * np.sum(self.off * u[:-1] * u[1:]))

    def axpy(self, alpha: float, other: "BandedSPD") -> "BandedSPD":
        """self + alpha * other."""
        return BandedSPD(self.diag + alpha * other.diag, self.off + alpha * other.off)

    def band(self) -> np.ndarray:
        """Upper band storage for scipy (row 0: superdiagonal, row 1: diagonal)."""
        ab = np.zeros((2, self.n))
        ab[0, 1:] = self.off
        ab[1, :] = self.diag
        return ab

    def to_coo_text(self, path) -> None:
        """Three-column (row, col, value) text dump of all nonzeros."""
        rows, cols, vals = [], [], []
        for i in range(self.n):
            rows.append(i); cols.append(i); vals.append(self.diag[i])
        for i in range(self.n - 1):
            rows.append(i); cols.append(i + 1); vals.append(self.off[i])
            rows.append(i + 1); cols.append(i); vals.append(self.off[i])
        with open(path, "w") as f:
            for r, c, v in zip(rows, cols, vals):
                f.write(f"{r} {c} {v:.17g}\n")


class TridiagCholesky:
    """Cholesky factorization of a BandedSPD with residual-driven refinement."""

    def __init__(self, A: BandedSPD):
        self.A = A
        try:
            self._cb = scipy.linalg.cholesky_banded(A.band(), lower=False)
        except scipy.linalg.LinAlgError:
            raise NotSPDError(_first_bad_pivot(A))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x = scipy.linalg.cho_solve_banded((self._cb, False), rhs)
        # one step of iterative refinement keeps the relative residual tight
        r = rhs - self.A.matvec(x)
        nr = np.linalg.norm(rhs)
        if nr > 0 and np.linalg.norm(r) > 1e-13 * nr:
            x = x + scipy.linalg.cho_solve_banded((self._cb, False), r)
        return x


def _first_bad_pivot(A: BandedSPD) -> int:
    d = 0.0
    for i in range(A.n):
        if i == 0:
            d = A.diag[0]
        else:
            d = A.diag[i] - A.off[i - 1] ** 2 / d
        if d <= 0:
            return i
    return A.n - 1


def solve_banded(A: BandedSPD, rhs: np.ndarray) -> np.ndarray:
    """Solve A x = rhs by banded Cholesky (raises NotSPDError on bad pivots)."""
    if rhs.shape[-1] != A.n:
        raise ValueError("dimension mismatch between matrix and right-hand side")
    return TridiagCholesky(A).solve(np.asarray(rhs, dtype=float))


@dataclass(frozen=True)
class DiscreteOperator:
    """Assembled Dirichlet-eliminated matrices of the weighted bilinear forms."""

    mesh: Mesh
    K_a: BandedSPD
    M: BandedSPD
    M_b: BandedSPD
    lam: float
    constrained_x0: bool
    dof_nodes: np.ndarray  # mesh node indices carried by the dof vector

    @property
    def n_dof(self) -> int:
        return self.dof_nodes.size

    @property
    def dof_x(self) -> np.ndarray:
        return self.mesh.nodes[self.dof_nodes]

    @property
    def stiffness_shifted(self) -> BandedSPD:
        """K_a - lambda M_b, the spatial operator of the evolution problem."""
        return self.K_a.axpy(-self.lam, self.M_b)

    def interpolate(self, f) -> np.ndarray:
        return np.asarray(f(self.dof_x), dtype=float)

    def extend(self, u: np.ndarray) -> np.ndarray:
        """Dof vector -> full nodal vector with zeros at eliminated nodes."""
        full = np.zeros(self.mesh.nodes.size)
        full[self.dof_nodes] = u
        return full

    def m_norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(self.M.quadform(u), 0.0)))


def _power_moment(p: float, t1: float, t2: float) -> float:
    """int_{t1}^{t2} t^p dt for 0 <= t1 < t2; +inf when divergent at t1 = 0."""
    if t1 == 0.0 and p <= -1.0:
        return float("inf")
    if abs(p + 1.0) < 1e-14:
        return float(np.log(t2 / t1))
    return float((t2 ** (p + 1.0) - t1 ** (p + 1.0)) / (p + 1.0))


def _cell_weighted_hats_power(exponent: float, t1: float, t2: float, need_first: bool):
    """Exact (phi_i phi_j t^-exponent) integrals for hats on an offset cell.

    The cell is [t1, t2] in the offset coordinate t = |x - x0|; phi_near is
    the hat peaking at t1 (toward x0), phi_far at t2.  Returns
    (near_near, near_far, far_far); near entries are None when need_first is
    False (eliminated x0 hat).
    """
    h = t2 - t1
    # Closed forms cancel badly when t1 >> h; switch to Gauss there (smooth).
    if t1 > 50.0 * h:
        tg = t1 + h * _GX
        w = (tg ** (-exponent)) * h * _GW
        phi_near = (t2 - tg) / h
        phi_far = (tg - t1) / h
        return (
            float(np.sum(w * phi_near * phi_near)),
            float(np.sum(w * phi_near * phi_far)),
            float(np.sum(w * phi_far * phi_far)),
        )

    # phi_far = (t - t1)/h, phi_near = (t2 - t)/h, expanded in power moments
    def mom(k):
        return _power_moment(k - exponent, t1, t2)

    if t1 == 0.0 and not need_first:
        # only the far hat survives; its moment is finite for exponent < 3
        return None, None, mom(2) / (h * h)
    ff = (mom(2) - 2.0 * t1 * mom(1) + t1 * t1 * mom(0)) / (h * h)
    if not need_first:
        return None, None, ff
    nn = (t2 * t2 * mom(0) - 2.0 * t2 * mom(1) + mom(2)) / (h * h)
    nf = ((t1 + t2) * mom(1) - t1 * t2 * mom(0) - mom(2)) / (h * h)
    return nn, nf, ff


def _gauss_cell_integral(fn, xl: float, xr: float) -> float:
    xg = xl + (xr - xl) * _GX
    return float((xr - xl) * np.sum(_GW * fn(xg)))


def _piecewise_gauss(fn, xl: float, xr: float, breaks: np.ndarray) -> float:
    """Composite 5-pt Gauss split at interpolation breakpoints inside the cell."""
    inner = breaks[(breaks > xl + 1e-15) & (breaks < xr - 1e-15)]
    edges = np.concatenate([[xl], inner, [xr]])
    return sum(_gauss_cell_integral(fn, a, b) for a, b in zip(edges[:-1], edges[1:]))


def assemble(pair: CoefficientPair, mesh: Mesh) -> DiscreteOperator:
    """Assemble K_a, M and M_b over the Dirichlet-eliminated dof set.

    Power prototypes are integrated in closed form (exact power moments);
    tabulated coefficients with composite Gauss split at their breakpoints.
    When K2 >= 1 the x0 hat is eliminated, which keeps every M_b entry finite.
    """
    nodes = mesh.nodes
    nn = nodes.size
    x0i = mesh.x0_index
    k2 = pair.k2_estimate()
    # With lam = 0 the singular term is absent: M_b is never consumed and its
    # x0 entries diverge for K2 >= 1, so it is left zero and no constraint
    # is imposed at x0.
    need_b = pair.lam != 0.0
    constrained = k2 >= 1.0 and need_b

    # full nodal tridiagonal accumulators
    kd = np.zeros(nn); ko = np.zeros(nn - 1)
    md = np.zeros(nn); mo = np.zeros(nn - 1)
    bd = np.zeros(nn); bo = np.zeros(nn - 1)

    a_is_power = isinstance(pair.a, PowerPrototype)
    b_is_power = isinstance(pair.b, PowerPrototype)
    a_breaks = pair.a.xs if isinstance(pair.a, Tabulated) else np.empty(0)
    b_breaks = pair.b.xs if isinstance(pair.b, Tabulated) else np.empty(0)

    for c in range(nn - 1):
        xl, xr = nodes[c], nodes[c + 1]
        h = xr - xl
        touches_x0 = c == x0i - 1 or c == x0i
        # offsets from x0; cells never straddle x0
        if xr <= mesh.x0 + 1e-15 and c < x0i:
            t1, t2 = mesh.x0 - xr, mesh.x0 - xl
            near, far = c + 1, c  # node closer to x0 in offset coordinate
        else:
            t1, t2 = xl - mesh.x0, xr - mesh.x0
            near, far = c, c + 1
        t1 = max(t1, 0.0)

        # stiffness: (int_cell a) / h^2
        if a_is_power:
            int_a = _power_moment(pair.k1, t1, t2) if pair.k1 > 0 else h
        else:
            int_a = _piecewise_gauss(lambda x: pair.a_val(x), xl, xr, a_breaks)
        ks = int_a / (h * h)
        kd[c] += ks; kd[c + 1] += ks; ko[c] -= ks

        # mass: exact
        md[c] += h / 3.0; md[c + 1] += h / 3.0; mo[c] += h / 6.0

        # singular mass int phi_i phi_j / b
        if not need_b:
            continue
        x0_hat_active = not (constrained and touches_x0)
        need_near = x0_hat_active or not touches_x0
        if b_is_power:
            nn_e, nf_e, ff_e = _cell_weighted_hats_power(k2, t1, t2, need_first=need_near)
        else:
            def hat(i):
                xi = nodes[i]
                return lambda x: np.clip(1.0 - np.abs(x - xi) / h, 0.0, 1.0)

            pn, pf = hat(near), hat(far)
            inv_b = lambda x: 1.0 / pair.b_val(x)
            if need_near:
                nn_e = _piecewise_gauss(lambda x: pn(x) ** 2 * inv_b(x), xl, xr, b_breaks)
                nf_e = _piecewise_gauss(lambda x: pn(x) * pf(x) * inv_b(x), xl, xr, b_breaks)
            else:
                nn_e = nf_e = None
            ff_e = _piecewise_gauss(lambda x: pf(x) ** 2 * inv_b(x), xl, xr, b_breaks)
        for val, where in ((nn_e, "near"), (nf_e, "cross"), (ff_e, "far")):
            if val is not None and not np.isfinite(val):
                raise AssemblyError(f"nonintegrable M_b entry on cell {c} [{xl}, {xr}]")
        if nn_e is not None:
            bd[near] += nn_e
            bo[c] += nf_e
        bd[far] += ff_e

    # Dirichlet elimination (+ x0 elimination when constrained)
    keep = np.arange(1, nn - 1)
    if constrained:
        keep = keep[keep != x0i]
    dof_of_node = -np.ones(nn, dtype=int)
    dof_of_node[keep] = np.arange(keep.size)

    def restrict(d, o):
        rd = d[keep]
        ro = np.zeros(keep.size - 1)
        for j in range(keep.size - 1):
            if keep[j + 1] == keep[j] + 1:
                ro[j] = o[keep[j]]
        return BandedSPD(diag=rd, off=ro)

    K_a = restrict(kd, ko)
    M = restrict(md, mo)
    M_b = restrict(bd, bo)
    if not (np.all(np.isfinite(K_a.diag)) and np.all(np.isfinite(M_b.diag))):
        raise AssemblyError("nonfinite assembled entry")
    return DiscreteOperator(
        mesh=mesh, K_a=K_a, M=M, M_b=M_b, lam=pair.lam,
        constrained_x0=bool(constrained), dof_nodes=keep,
    )


def rayleigh(op: DiscreteOperator, u: np.ndarray) -> tuple[float, float, float]:
    """(u'K_a u, u'M u, u'M_b u) for a conforming dof vector."""
    u = np.asarray(u, dtype=float)
    if u.shape != (op.n_dof,):
        raise ValueError(f"vector of shape {u.shape} does not conform to {op.n_dof} dofs")
    return (op.K_a.quadform(u), op.M.quadform(u), op.M_b.quadform(u))
