"""B-spline bases, difference penalties, and tensor products.

All regression modules build their design matrices from these pieces:
clamped B-spline bases with equally spaced interior knots, discrete
difference penalty matrices, and row-major tensor products of two
marginal bases.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import DomainError

DEFAULT_DEGREE = 3
DEFAULT_PENALTY_ORDER = 2

# P-spline sizes used for the two study periods (configurable everywhere).
INTERVENTION_NUM_BASIS = 20
FOLLOW_UP_NUM_BASIS = 7


@dataclass(frozen=True)
class BasisSystem:
    """Uniform B-spline basis on ``[domain_lo, domain_hi]``.

    Equally spaced knots in the Eilers-Marx P-spline construction:
    ``num_basis - degree`` spans cover the domain and ``degree`` extra
    knots extend past each boundary, so that difference penalties of
    order q leave exactly the degree-(q-1) polynomials unpenalized
    (index-affine coefficients evaluate to exactly linear functions).
    ``num_basis = #interior knots + degree + 1`` as for clamped bases.
    Immutable, safe to share across threads.
    """

    domain_lo: float
    domain_hi: float
    num_basis: int
    degree: int = DEFAULT_DEGREE
    penalty_order: int = DEFAULT_PENALTY_ORDER
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.domain_hi > self.domain_lo:
            raise ValueError("domain_hi must exceed domain_lo")
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        n_spans = self.num_basis - self.degree
        if n_spans < 1:
            raise ValueError(
                f"num_basis={self.num_basis} too small for degree {self.degree}"
            )
        if not 0 < self.penalty_order < self.num_basis:
            raise ValueError("penalty_order must be in (0, num_basis)")
        h = (self.domain_hi - self.domain_lo) / n_spans
        knots = self.domain_lo + h * np.arange(-self.degree, n_spans + self.degree + 1)
        object.__setattr__(self, "knots", knots)

    @property
    def domain(self) -> tuple[float, float]:
        return (self.domain_lo, self.domain_hi)

    def to_json_dict(self) -> dict:
        return {
            "domain": [self.domain_lo, self.domain_hi],
            "num_basis": self.num_basis,
            "degree": self.degree,
            "penalty_order": self.penalty_order,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "BasisSystem":
        lo, hi = d["domain"]
        return cls(
            domain_lo=float(lo),
            domain_hi=float(hi),
            num_basis=int(d["num_basis"]),
            degree=int(d.get("degree", DEFAULT_DEGREE)),
            penalty_order=int(d.get("penalty_order", DEFAULT_PENALTY_ORDER)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BasisSystem":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class PenaltyMatrix:
    """Difference matrix D of shape ``(dim - order, dim)``.

    ``D @ b`` yields order-th finite differences of the coefficient
    vector, so ``D.T @ D`` penalizes departures from polynomials of
    degree < order in the coefficient index.
    """

    dim: int
    order: int
    entries: np.ndarray

    def gram(self) -> np.ndarray:
        """The PSD penalty ``D.T @ D``."""
        return self.entries.T @ self.entries

    def to_csv(self, path) -> None:
        np.savetxt(path, self.entries, delimiter=",", fmt="%.17g")


def difference_penalty(num_basis: int, order: int) -> PenaltyMatrix:
    """Order-th difference matrix acting on ``num_basis`` coefficients.

    Sign convention: rows follow numpy's forward difference, so the
    leading entry of each order-1 row is -1.
    """
    if order <= 0:
        raise ValueError("order must be positive")
    if order >= num_basis:
        raise ValueError(
            f"penalty order {order} must be smaller than num_basis {num_basis}"
        )
    D = np.diff(np.eye(num_basis), n=order, axis=0)
    return PenaltyMatrix(dim=num_basis, order=order, entries=D)


def _check_domain(basis: BasisSystem, t: np.ndarray) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    bad = (t < basis.domain_lo - 1e-12) | (t > basis.domain_hi + 1e-12)
    if np.any(bad):
        offending = t[bad][0]
        raise DomainError(
            f"evaluation point {offending!r} outside domain "
            f"[{basis.domain_lo}, {basis.domain_hi}]"
        )
    return np.clip(t, basis.domain_lo, basis.domain_hi)


def evaluate_basis(basis: BasisSystem, t) -> np.ndarray:
    """Evaluate all basis functions at the points ``t``.

    Returns a dense ``(len(t), num_basis)`` matrix whose rows sum to 1
    (partition of unity) with non-negative entries.
    """
    t = _check_domain(basis, t)
    M = BSpline.design_matrix(t, basis.knots, basis.degree, extrapolate=False)
    return M.toarray()


def tensor_basis(basis_t: BasisSystem, basis_u: BasisSystem, t: float, u: float) -> np.ndarray:
    """Row-major tensor product row at a single ``(t, u)`` point.

    Entry ``(k1, k2)`` of the flattened vector is
    ``B_{k1}(t) * B_{k2}(u)``, with ``k1`` varying slowest.
    """
    row_t = evaluate_basis(basis_t, [t])[0]
    row_u = evaluate_basis(basis_u, [u])[0]
    return np.outer(row_t, row_u).ravel()


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    """Trapezoidal quadrature weights; positive and summing to the grid span."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must be a 1D array with at least 2 points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    w = np.zeros_like(grid)
    d = np.diff(grid)
    w[:-1] += d / 2.0
    w[1:] += d / 2.0
    return w
