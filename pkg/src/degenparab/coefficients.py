"""Coefficient pairs with an interior degeneracy/singularity and their hypothesis audits.

The diffusion coefficient a and the potential weight b both vanish at an
interior point x0 of (0,1).  The prototypes are pure powers
a(x) = |x - x0|^K1 and b(x) = |x - x0|^K2; tabulated coefficients are
piecewise-linear interpolants of sampled data.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class CoefficientError(ValueError):
    """Invalid coefficient data (nonpositive away from x0, bad exponents, ...)."""


class DegeneracyClass(enum.Enum):
    """Degeneracy regime by whether each exponent is below 1 (weak) or not (strong)."""

    WWD = "WWD"
    WSD = "WSD"
    SWD = "SWD"
    SSD = "SSD"


@dataclass(frozen=True)
class PowerPrototype:
    """Pure power |x - x0|^exponent."""

    exponent: float

    def value(self, x, x0):
        t = np.abs(np.asarray(x, dtype=float) - x0)
        if self.exponent == 0.0:
            return np.ones_like(t)
        return t ** self.exponent

    def derivative(self, x, x0):
        x = np.asarray(x, dtype=float)
        t = x - x0
        if self.exponent == 0.0:
            return np.zeros_like(t)
        return self.exponent * np.sign(t) * np.abs(t) ** (self.exponent - 1.0)


@dataclass(frozen=True)
class Tabulated:
    """Piecewise-linear interpolant of (x, value) samples on [0, 1].

    The derivative is the exact piecewise-constant slope of the interpolant,
    evaluated on the cell to the right of each query point.
    """

    xs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if xs.ndim != 1 or xs.shape != vals.shape or xs.size < 2:
            raise CoefficientError("tabulated coefficient needs matching 1-D x and value arrays")
        if np.any(np.diff(xs) <= 0):
            raise CoefficientError("tabulated x samples must be strictly increasing")
        if abs(xs[0]) > 1e-14 or abs(xs[-1] - 1.0) > 1e-14:
            raise CoefficientError("tabulated samples must span [0, 1]")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "values", vals)

    def value(self, x, x0=None):
        return np.interp(np.asarray(x, dtype=float), self.xs, self.values)

    def derivative(self, x, x0=None):
        x = np.asarray(x, dtype=float)
        slopes = np.diff(self.values) / np.diff(self.xs)
        idx = np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, slopes.size - 1)
        return slopes[idx]


def _check_prototype_exponent(name: str, exponent: float, lo_open: bool, hi: float) -> None:
    if lo_open:
        ok = 0.0 < exponent <= hi
    else:
        ok = 0.0 <= exponent <= hi
    if not ok:
        raise CoefficientError(
            f"prototype exponent {name}={exponent} outside the admissible range"
        )


@dataclass(frozen=True)
class CoefficientPair:
    """The data (a, b, x0, lambda, T) of the singular/degenerate operator.

    a may be a PowerPrototype with exponent in [0, 2) (0 meaning the
    nondegenerate limit a == 1) or a Tabulated sample; b analogously with
    exponent in (0, 2].
    """

    x0: float
    a: PowerPrototype | Tabulated
    b: PowerPrototype | Tabulated
    lam: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.x0 < 1.0:
            raise CoefficientError(f"x0={self.x0} must lie in (0, 1)")
        if self.T <= 0.0:
            raise CoefficientError("final time T must be positive")
        if isinstance(self.a, PowerPrototype):
            _check_prototype_exponent("K1", self.a.exponent, lo_open=False, hi=2.0 - 1e-15)
        if isinstance(self.b, PowerPrototype):
            _check_prototype_exponent("K2", self.b.exponent, lo_open=True, hi=2.0)
        for name, fn in (("a", self.a), ("b", self.b)):
            if isinstance(fn, Tabulated):
                mask = np.abs(fn.xs - self.x0) > 1e-12
                if np.any(fn.values[mask] <= 0):
                    raise CoefficientError(f"tabulated {name} must be positive away from x0")

    # -- pointwise evaluation -------------------------------------------------

    def a_val(self, x):
        return self.a.value(x, self.x0)

    def a_deriv(self, x):
        return self.a.derivative(x, self.x0)

    def b_val(self, x):
        return self.b.value(x, self.x0)

    def b_deriv(self, x):
        return self.b.derivative(x, self.x0)

    @property
    def k1(self) -> float | None:
        return self.a.exponent if isinstance(self.a, PowerPrototype) else None

    @property
    def k2(self) -> float | None:
        return self.b.exponent if isinstance(self.b, PowerPrototype) else None

    def k2_estimate(self, grid_resolution: int = 512) -> float:
        """Exponent of b: exact for prototypes, audited ratio sup otherwise."""
        if self.k2 is not None:
            return self.k2
        return audit(self, grid_resolution).min_k2


def classify(k1: float, k2: float) -> DegeneracyClass:
    """Classify the exponents into the four degeneracy regimes."""
    for name, k in (("K1", k1), ("K2", k2)):
        if not 0.0 < k < 2.0:
            raise CoefficientError(f"exponent {name}={k} outside (0, 2)")
    return _classify_unchecked(k1, k2)


def _classify_unchecked(k1: float, k2: float) -> DegeneracyClass:
    if k1 < 1.0:
        return DegeneracyClass.WWD if k2 < 1.0 else DegeneracyClass.WSD
    return DegeneracyClass.SWD if k2 < 1.0 else DegeneracyClass.SSD


@dataclass(frozen=True)
class HypothesisAudit:
    """Numerical audit of every structural condition the estimates require."""

    degeneracy: DegeneracyClass
    min_k1: float
    min_k2: float
    sum_ok: bool
    theta: float | None
    sigma: float | None
    b_monotone_ok: bool
    lambda_admissible: bool
    violations: tuple = field(default_factory=tuple)


# Fraction of audited points allowed to violate an a.e. condition, and the
# relative slack per point (isolated interpolation kinks are tolerated).
_AE_FRACTION = 1e-3
_AE_RTOL = 1e-8


def _side_grids(x0: float, grid_resolution: int):
    """Uniform audit grids on each side of x0, excluding a one-cell band at x0."""
    m = max(grid_resolution // 2, 32)
    left = np.linspace(0.0, x0, m + 1)[:-1]   # drops the node at x0
    right = np.linspace(x0, 1.0, m + 1)[1:]
    # exclude the point adjacent to x0 on each side (one-cell band, 0/0 ratios)
    return left[:-1], right[1:]


def _monotone_about_x0(vals_left, vals_right, rtol=1e-9):
    """Nonincreasing left of x0 and nondecreasing right of x0, with slack."""
    dl = np.diff(vals_left)
    dr = np.diff(vals_right)
    scale = max(np.max(np.abs(vals_left), initial=0.0), np.max(np.abs(vals_right), initial=0.0), 1e-300)
    return bool(np.all(dl <= rtol * scale) and np.all(dr >= -rtol * scale))


def audit(pair: CoefficientPair, grid_resolution: int = 256) -> HypothesisAudit:
    """Audit the degeneracy hypotheses of the pair on a deterministic grid.

    min_k1/min_k2 are the suprema of (x - x0) a'/a over the grid; for pure
    powers they coincide with the exponents.  theta and sigma audit the extra
    smallness conditions needed for strongly degenerate diffusion.
    """
    if grid_resolution < 64:
        raise ValueError("grid_resolution must be at least 64")
    left, right = _side_grids(pair.x0, grid_resolution)
    xs = np.concatenate([left, right])

    a_vals = pair.a_val(xs)
    b_vals = pair.b_val(xs)
    violations: list[tuple[float, str, float]] = []
    if np.any(a_vals <= 0) or np.any(b_vals <= 0):
        bad = xs[(a_vals <= 0) | (b_vals <= 0)][0]
        raise CoefficientError(f"coefficient nonpositive away from x0 near x={bad}")

    ratio_a = (xs - pair.x0) * pair.a_deriv(xs) / a_vals
    ratio_b = (xs - pair.x0) * pair.b_deriv(xs) / b_vals
    min_k1 = float(np.max(ratio_a))
    min_k2 = float(np.max(ratio_b))
    if pair.k1 is not None:
        min_k1 = pair.k1  # equality case, exact for pure powers
    if pair.k2 is not None:
        min_k2 = pair.k2

    degeneracy = _classify_unchecked(min_k1, min_k2)
    sum_ok = min_k1 + min_k2 <= 2.0 + 1e-12

    # (x - x0) b' >= 0, as an a.e. condition
    bmono = (xs - pair.x0) * pair.b_deriv(xs)
    bad = bmono < -_AE_RTOL * np.maximum(np.abs(b_vals), 1.0)
    b_monotone_ok = bool(np.count_nonzero(bad) <= _AE_FRACTION * xs.size)
    for x, v in zip(xs[bad][:10], bmono[bad][:10]):
        violations.append((float(x), "(x-x0)*b'", float(v)))

    theta = None
    sigma = None
    if min_k1 > 4.0 / 3.0:
        theta = _find_theta(pair, min_k1, left, right)
        if theta is None:
            violations.append((pair.x0, "theta-monotonicity", float("nan")))
        if min_k1 > 1.5 and theta is not None:
            pow_t = np.abs(xs - pair.x0) ** (3.0 - 2.0 * theta)
            sigma = float(np.max(np.abs(pair.a_deriv(xs)) * pow_t))

    lam = pair.lam
    if lam < 0:
        lambda_admissible = True
    elif lam == 0:
        lambda_admissible = False
    else:
        lambda_admissible = degeneracy is not DegeneracyClass.SSD and sum_ok

    return HypothesisAudit(
        degeneracy=degeneracy,
        min_k1=min_k1,
        min_k2=min_k2,
        sum_ok=sum_ok,
        theta=theta,
        sigma=sigma,
        b_monotone_ok=b_monotone_ok,
        lambda_admissible=lambda_admissible,
        violations=tuple(violations),
    )


def _find_theta(pair, min_k1, left, right):
    # theta = K1 first (the prototype case), then a descending coarse grid;
    # only existence of some theta in (0, K1] is needed.
    candidates = [min_k1] + list(np.linspace(min_k1, min_k1 / 8.0, 8)[1:])
    for theta in candidates:
        fl = pair.a_val(left) / np.abs(left - pair.x0) ** theta
        fr = pair.a_val(right) / np.abs(right - pair.x0) ** theta
        if _monotone_about_x0(fl, fr):
            return float(theta)
    return None


def admissible_lambda(
    lam: float,
    cstar: float,
    degeneracy: DegeneracyClass,
    sum_ok: bool = True,
) -> bool:
    """Admissibility of the singular strength given the best Hardy constant.

    Negative lambda is always admissible; positive lambda needs
    lambda < 1/cstar, a not-doubly-strong regime, and K1 + K2 <= 2 (passed in
    as sum_ok, audited separately).  lambda = 0 is the purely degenerate case
    and is rejected.
    """
    if cstar <= 0:
        raise ValueError("cstar must be positive")
    if lam == 0.0:
        raise CoefficientError("lambda = 0 is the purely degenerate case, see prior work")
    if lam < 0.0:
        return True
    return lam < 1.0 / cstar and degeneracy is not DegeneracyClass.SSD and sum_ok


def load_tabulated_csv(path) -> Tabulated:
    """Read a two-column (x, value) CSV with strictly increasing x."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.shape[1] != 2:
        raise CoefficientError(f"{path}: expected two columns (x, value)")
    return Tabulated(xs=data[:, 0], values=data[:, 1])
