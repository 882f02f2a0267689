"""Dense two-phase simplex and the tangent envelope used to linearize log terms.

Problems here have at most a few hundred variables, so the tableau is kept
dense and Bland's rule is used throughout for guaranteed termination.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import LinearProgramError

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

RELATIONS = ("<=", ">=", "=")

TOL = 1e-9
_FEASIBILITY_TOL = 1e-7


@dataclass(frozen=True)
class Constraint:
    coefficients: Tuple[float, ...]
    relation: str
    rhs: float


@dataclass
class LinearProgram:
    """Maximize ``objective @ x`` subject to the rows and per-variable bounds."""

    objective: np.ndarray
    constraints: List[Constraint] = field(default_factory=list)
    bounds: List[Tuple[float, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.objective = np.asarray(self.objective, dtype=float)
        n = self.objective.size
        if not np.isfinite(self.objective).all():
            raise LinearProgramError("objective coefficients must be finite")
        if not self.bounds:
            self.bounds = [(0.0, math.inf)] * n
        if len(self.bounds) != n:
            raise LinearProgramError(f"expected {n} bounds, got {len(self.bounds)}")
        for j, (lo, hi) in enumerate(self.bounds):
            if not math.isfinite(lo):
                raise LinearProgramError(f"variable {j} needs a finite lower bound")
            if hi < lo:
                raise LinearProgramError(f"variable {j} has lower bound {lo} above upper bound {hi}")
        for row in self.constraints:
            self._check(row)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    def _check(self, row: Constraint) -> None:
        if len(row.coefficients) != self.n_vars:
            raise LinearProgramError(f"constraint has {len(row.coefficients)} coefficients, expected {self.n_vars}")
        if row.relation not in RELATIONS:
            raise LinearProgramError(f"unknown relation {row.relation!r}")
        if not (np.isfinite(row.coefficients).all() and math.isfinite(row.rhs)):
            raise LinearProgramError("constraint coefficients must be finite")

    def add_constraint(self, coefficients: Sequence[float], relation: str, rhs: float) -> None:
        row = Constraint(tuple(float(c) for c in coefficients), relation, float(rhs))
        self._check(row)
        self.constraints.append(row)

    def with_bounds(self, bounds: Sequence[Tuple[float, float]]) -> "LinearProgram":
        return LinearProgram(self.objective, list(self.constraints), list(bounds))


@dataclass(frozen=True)
class LPResult:
    status: str
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _pivot(T: np.ndarray, b: np.ndarray, row: int, col: int) -> None:
    piv = T[row, col]
    T[row] /= piv
    b[row] /= piv
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row])
    b -= factors * b[row]
    T[:, col] = 0.0
    T[row, col] = 1.0
    b[np.abs(b) < TOL] = 0.0


def _simplex(
    T: np.ndarray,
    b: np.ndarray,
    basis: np.ndarray,
    cost: np.ndarray,
    allowed: np.ndarray,
    max_pivots: int,
) -> Tuple[str, int]:
    """Minimize ``cost`` over the current tableau; Bland's rule for entering and leaving."""
    for pivots in range(max_pivots):
        reduced = cost - cost[basis] @ T
        entering = np.flatnonzero(allowed & (reduced < -TOL))
        if entering.size == 0:
            return OPTIMAL, pivots
        col = int(entering[0])
        column = T[:, col]
        rows = np.flatnonzero(column > TOL)
        if rows.size == 0:
            return UNBOUNDED, pivots
        ratios = b[rows] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + TOL * max(1.0, abs(best))]
        row = int(ties[np.argmin(basis[ties])])
        _pivot(T, b, row, col)
        basis[row] = col
    raise LinearProgramError(f"simplex did not terminate within {max_pivots} pivots")


def solve_lp(lp: LinearProgram, max_pivots: int = 50_000) -> LPResult:
    c = lp.objective
    lo = np.array([bound[0] for bound in lp.bounds], dtype=float)
    hi = np.array([bound[1] for bound in lp.bounds], dtype=float)
    # x = lo + z with z >= 0; fixed variables drop out entirely
    free = np.flatnonzero(hi - lo > TOL)
    nf = free.size

    rows: List[Tuple[np.ndarray, str, float]] = []
    for con in lp.constraints:
        a = np.asarray(con.coefficients, dtype=float)
        rhs = con.rhs - float(a @ lo)
        af = a[free]
        if not np.any(np.abs(af) > TOL):
            slack = -rhs
            violated = (
                (con.relation == "<=" and slack > _FEASIBILITY_TOL)
                or (con.relation == ">=" and slack < -_FEASIBILITY_TOL)
                or (con.relation == "=" and abs(slack) > _FEASIBILITY_TOL)
            )
            if violated:
                return LPResult(INFEASIBLE)
            continue
        rows.append((af, con.relation, rhs))
    for idx, j in enumerate(free):
        if math.isfinite(hi[j]):
            unit = np.zeros(nf)
            unit[idx] = 1.0
            rows.append((unit, "<=", float(hi[j] - lo[j])))

    if not rows:
        if np.any(c[free] > TOL):
            return LPResult(UNBOUNDED)
        return LPResult(OPTIMAL, x=lo.copy(), objective=float(c @ lo))

    normalized = []
    for a, rel, rhs in rows:
        if rhs < 0:
            a, rhs = -a, -rhs
            rel = {"<=": ">=", ">=": "<=", "=": "="}[rel]
        normalized.append((a, rel, rhs))

    m = len(normalized)
    n_slack = sum(1 for _, rel, _ in normalized if rel != "=")
    n_art = sum(1 for _, rel, _ in normalized if rel != "<=")
    width = nf + n_slack + n_art
    T = np.zeros((m, width))
    b = np.zeros(m)
    basis = np.zeros(m, dtype=np.int64)
    artificial = np.zeros(width, dtype=bool)
    s_col, a_col = nf, nf + n_slack
    for i, (a, rel, rhs) in enumerate(normalized):
        T[i, :nf] = a
        b[i] = rhs
        if rel == "<=":
            T[i, s_col] = 1.0
            basis[i] = s_col
            s_col += 1
            continue
        if rel == ">=":
            T[i, s_col] = -1.0
            s_col += 1
        T[i, a_col] = 1.0
        basis[i] = a_col
        artificial[a_col] = True
        a_col += 1

    pivots = 0
    if n_art:
        phase_one = artificial.astype(float)
        status, used = _simplex(T, b, basis, phase_one, np.ones(width, dtype=bool), max_pivots)
        pivots += used
        if float(phase_one[basis] @ b) > _FEASIBILITY_TOL:
            return LPResult(INFEASIBLE, pivots=pivots)
        keep = np.ones(T.shape[0], dtype=bool)
        for i in range(T.shape[0]):
            if not artificial[basis[i]]:
                continue
            candidates = np.flatnonzero(~artificial & (np.abs(T[i]) > TOL))
            if candidates.size:
                _pivot(T, b, i, int(candidates[0]))
                basis[i] = int(candidates[0])
            else:
                keep[i] = False  # redundant row
        T, b, basis = T[keep], b[keep], basis[keep]

    cost = np.zeros(width)
    cost[:nf] = -c[free]
    status, used = _simplex(T, b, basis, cost, ~artificial, max_pivots)
    pivots += used
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, pivots=pivots)

    z = np.zeros(width)
    z[basis] = b
    x = lo.copy()
    x[free] += z[:nf]
    return LPResult(OPTIMAL, x=x, objective=float(c @ x), pivots=pivots)


@dataclass(frozen=True)
class Tangent:
    point: float
    slope: float
    intercept: float

    def __call__(self, x):
        return self.slope * x + self.intercept


@dataclass(frozen=True)
class LogEnvelope:
    lo: float
    hi: float
    tangents: Tuple[Tangent, ...]

    def evaluate(self, x):
        """Pointwise minimum of the tangents; never below log(x) on [lo, hi]."""
        values = np.array([t(np.asarray(x, dtype=float)) for t in self.tangents])
        result = values.min(axis=0)
        return float(result) if np.ndim(result) == 0 else result


def log_envelope(lo: float, hi: float, n_tangents: int = 8) -> LogEnvelope:
    if not 0 < lo < hi:
        raise LinearProgramError(f"envelope interval must satisfy 0 < lo < hi, got [{lo}, {hi}]")
    if n_tangents < 2:
        raise LinearProgramError(f"need at least two tangents, got {n_tangents}")
    points = np.linspace(lo, hi, n_tangents)
    points[-1] = hi
    tangents = tuple(Tangent(float(p), 1.0 / float(p), math.log(float(p)) - 1.0) for p in points)
    return LogEnvelope(lo=lo, hi=hi, tangents=tangents)
