"""Per-cluster sample counts: projection of the targets q onto {sum x = N, lb <= x <= ub}.

The allocation problem

    minimize  sum_j (x_j^2 - 2 q_j x_j)   subject to  sum_j x_j = N,  lb_j <= x_j <= ub_j

has an identity Hessian, so its minimizer is x_j(lam) = clamp(q_j + lam, lb_j, ub_j)
for the unique lam where sum_j x_j(lam) = N. That sum is non-decreasing and piecewise
linear in lam, which makes bisection exact up to a final closed-form polish.
"""
import functools
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import AllocationInvariantError, DataFormatError, InfeasibleAllocationError

logger = logging.getLogger(__name__)

SUM_TOL = 1e-9
BRACKET_TOL = 1e-12
MAX_BISECTION_STEPS = 200
ORACLE_MAX_K = 12


def round_half_up(value: float) -> int:
    return math.floor(value + 0.5)


@dataclass(frozen=True, eq=False)
class AllocationProblem:
    q: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    N: int

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).reshape(-1)
        lb = np.asarray(self.lb, dtype=np.float64).reshape(-1)
        ub = np.asarray(self.ub, dtype=np.float64).reshape(-1)
        if not (q.size == lb.size == ub.size) or q.size == 0:
            raise ValueError("q, lb and ub must be non-empty and of equal length")
        object.__setattr__(self, 'q', q)
        object.__setattr__(self, 'lb', lb)
        object.__setattr__(self, 'ub', ub)

    @property
    def k(self) -> int:
        return self.q.size

    @classmethod
    def from_probabilities(cls, probs, N: int, sizes, lb=None) -> "AllocationProblem":
        """Targets q_j = P_j * N bounded by [lb_j, M_j]; lb defaults to 1."""
        sizes = np.asarray(sizes, dtype=np.float64)
        if lb is None:
            lb = np.ones_like(sizes)
        return cls(q=np.asarray(probs, dtype=np.float64) * N, lb=lb, ub=sizes, N=N)

    def check_feasible(self) -> None:
        bad = np.flatnonzero(self.lb > self.ub)
        if bad.size:
            j = int(bad[0])
            raise InfeasibleAllocationError(f"cluster {j} has lb {self.lb[j]:g} > ub {self.ub[j]:g}")
        lo, hi = float(self.lb.sum()), float(self.ub.sum())
        if not lo <= self.N <= hi:
            raise InfeasibleAllocationError(
                f"infeasible allocation: sum(lb)={lo:g}, N={self.N}, sum(ub)={hi:g}; "
                f"need sum(lb) <= N <= sum(ub)")

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(np.sum(x * x - 2.0 * self.q * x))


@dataclass(frozen=True, eq=False)
class Allocation:
    x_real: np.ndarray
    lam: float
    active_lower: np.ndarray
    active_upper: np.ndarray
    x_int: np.ndarray = field(default=None)

    def with_integers(self, x_int: np.ndarray) -> "Allocation":
        return Allocation(self.x_real, self.lam, self.active_lower, self.active_upper, x_int)


def _clamped(prob, lam):
    return np.clip(prob.q + lam, prob.lb, prob.ub)


def _gap(prob, lam):
    return float(_clamped(prob, lam).sum() - prob.N)


def _polish(prob, lam):
    """Solve for lam exactly on the active set found at lam; None if it does not hold."""
    shifted = prob.q + lam
    free = (shifted > prob.lb) & (shifted < prob.ub)
    if not free.any():
        return None
    pinned = np.where(shifted <= prob.lb, prob.lb, prob.ub)
    exact = (prob.N - pinned[~free].sum() - prob.q[free].sum()) / free.sum()
    x = _clamped(prob, exact)
    if abs(x.sum() - prob.N) < SUM_TOL:
        return exact
    return None


def solve(prob: AllocationProblem) -> Allocation:
    prob.check_feasible()
    lo = float(np.min(prob.lb - prob.q))
    hi = float(np.max(prob.ub - prob.q))
    g_lo, g_hi = _gap(prob, lo), _gap(prob, hi)

    for _ in range(MAX_BISECTION_STEPS):
        if abs(g_lo) < SUM_TOL or abs(g_hi) < SUM_TOL or hi - lo < BRACKET_TOL:
            break
        mid = 0.5 * (lo + hi)
        g_mid = _gap(prob, mid)
        if not g_lo <= g_mid <= g_hi:
            raise AllocationInvariantError(f"g(lambda) not monotone on [{lo}, {hi}]")
        if g_mid < 0.0:
            lo, g_lo = mid, g_mid
        else:
            hi, g_hi = mid, g_mid
    lam = lo if abs(g_lo) <= abs(g_hi) else hi

    exact = _polish(prob, lam)
    if exact is not None:
        lam = exact
    x = _clamped(prob, lam)
    active_lower = np.flatnonzero(x <= prob.lb)
    active_upper = np.flatnonzero((x >= prob.ub) & (prob.ub > prob.lb))
    logger.debug("allocation k=%d N=%d lambda=%.9g free=%d", prob.k, prob.N, lam,
                 prob.k - active_lower.size - active_upper.size)
    return Allocation(x_real=x, lam=float(lam), active_lower=active_lower, active_upper=active_upper)


def kkt_check(prob: AllocationProblem, x, lam: float, tol: float = 1e-7) -> bool:
    x = np.asarray(x, dtype=np.float64)
    if abs(x.sum() - prob.N) > tol:
        return False
    if np.any(x < prob.lb - tol) or np.any(x > prob.ub + tol):
        return False
    shifted = prob.q + lam
    for j in range(prob.k):
        at_lb = abs(x[j] - prob.lb[j]) <= tol
        at_ub = abs(x[j] - prob.ub[j]) <= tol
        if at_lb and at_ub:
            continue
        if at_ub:
            if shifted[j] < x[j] - tol:
                return False
        elif at_lb:
            if shifted[j] > x[j] + tol:
                return False
        elif abs(x[j] - shifted[j]) > tol:
            return False
    return True


@functools.lru_cache(maxsize=ORACLE_MAX_K + 1)
def _patterns(k):
    # 0 = free, 1 = at lb, 2 = at ub
    return np.array(list(itertools.product((0, 1, 2), repeat=k)), dtype=np.int8)


def oracle_solve(prob: AllocationProblem, tol: float = 1e-9) -> np.ndarray:
    """Brute-force optimum over all 3^k active-set patterns (small k only)."""
    if prob.k > ORACLE_MAX_K:
        raise ValueError(f"oracle_solve supports k <= {ORACLE_MAX_K}, got {prob.k}")
    prob.check_feasible()
    pats = _patterns(prob.k)
    free = pats == 0
    at_lb = pats == 1
    at_ub = pats == 2
    pinned = np.where(at_lb, prob.lb, prob.ub)
    pinned_sum = np.where(free, 0.0, pinned).sum(axis=1)
    n_free = free.sum(axis=1)
    q_free = np.where(free, prob.q, 0.0).sum(axis=1)

    with np.errstate(divide='ignore', invalid='ignore'):
        lam = np.where(n_free > 0, (prob.N - pinned_sum - q_free) / np.maximum(n_free, 1), np.nan)
    x = np.where(free, prob.q + lam[:, None], pinned)

    valid = np.abs(x.sum(axis=1) - prob.N) <= 1e-7
    valid &= np.all(x >= prob.lb - tol, axis=1) & np.all(x <= prob.ub + tol, axis=1)

    # fully pinned patterns: some lam must satisfy every sign condition
    shift_lb = np.where(at_lb, prob.lb - prob.q, np.inf).min(axis=1)
    shift_ub = np.where(at_ub, prob.ub - prob.q, -np.inf).max(axis=1)
    pinned_only = n_free == 0
    lam = np.where(pinned_only, np.clip(0.0, shift_ub, np.maximum(shift_ub, shift_lb)), lam)
    valid &= ~pinned_only | (shift_ub <= shift_lb + tol)

    shifted = prob.q + lam[:, None]
    valid &= np.all(~at_lb | (shifted <= prob.lb + tol), axis=1)
    valid &= np.all(~at_ub | (shifted >= prob.ub - tol), axis=1)

    if not valid.any():
        raise InfeasibleAllocationError("no active-set pattern satisfies the optimality conditions")
    candidates = np.flatnonzero(valid)
    objectives = np.sum(x[candidates] ** 2 - 2.0 * prob.q * x[candidates], axis=1)
    return x[candidates[np.argmin(objectives)]].copy()


def integer_repair(x_real: np.ndarray, prob: AllocationProblem) -> np.ndarray:
    """Largest-remainder rounding that keeps sum(x) == N and lb <= x <= ub."""
    x_real = np.asarray(x_real, dtype=np.float64)
    lb = np.ceil(prob.lb - SUM_TOL).astype(np.int64)
    ub = np.floor(prob.ub + SUM_TOL).astype(np.int64)
    x = np.clip(np.floor(x_real + SUM_TOL).astype(np.int64), lb, ub)
    frac = x_real - x
    residual = int(prob.N - x.sum())

    if residual > 0:
        order = np.lexsort((np.arange(prob.k), -frac))
        while residual > 0:
            eligible = [j for j in order if x[j] < ub[j]]
            if not eligible:
                raise AllocationInvariantError(f"cannot place {residual} more units within the upper bounds")
            for j in eligible[:residual]:
                x[j] += 1
            residual = int(prob.N - x.sum())
    elif residual < 0:
        order = np.lexsort((np.arange(prob.k), frac))
        while residual < 0:
            eligible = [j for j in order if x[j] > lb[j]]
            if not eligible:
                raise AllocationInvariantError(f"cannot remove {-residual} units within the lower bounds")
            for j in eligible[:-residual]:
                x[j] -= 1
            residual = int(prob.N - x.sum())
    return x


def balanced_lower_bounds(sizes, N: int, balance_ratio: float, min_samples: int = 1) -> np.ndarray:
    """Lift every lower bound towards an even share of N.

    lb_j = max(min_samples, min(M_j, round(beta * N / k))); when the rounded lift would
    push sum(lb) past N the lift uses floor(beta * N / k) instead.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    k = sizes.size
    if not 0.0 <= balance_ratio <= 1.0:
        raise ValueError(f"balance ratio must lie in [0, 1], got {balance_ratio}")
    share = balance_ratio * N / k
    lift = round_half_up(share)
    lb = np.maximum(min_samples, np.minimum(sizes, lift))
    if lb.sum() > N and share > 0:
        lb = np.maximum(min_samples, np.minimum(sizes, math.floor(share)))
        logger.warning("balance lift rounded past N=%d; using floor(%.3f) per cluster", N, share)
    return lb


def allocate(prob: AllocationProblem) -> Allocation:
    """Solve, repair to integers and check the result against the bounds."""
    allocation = solve(prob)
    x_int = integer_repair(allocation.x_real, prob)
    if x_int.sum() != prob.N or np.any(x_int < prob.lb) or np.any(x_int > prob.ub):
        raise AllocationInvariantError("integer allocation violates the problem constraints")
    return allocation.with_integers(x_int)


def read_problem(path) -> AllocationProblem:
    """Problem file: first line N, then one "q lb ub" line per cluster; '#' starts a comment."""
    lines = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if line:
            lines.append((lineno, line))
    if not lines:
        raise DataFormatError(f"{path}: empty problem file")
    try:
        N = int(lines[0][1])
    except ValueError:
        raise DataFormatError(f"{path}:{lines[0][0]}: N must be an integer") from None
    rows = []
    for lineno, line in lines[1:]:
        parts = line.split()
        if len(parts) != 3:
            raise DataFormatError(f"{path}:{lineno}: expected 'q lb ub', got {line!r}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
    if not rows:
        raise DataFormatError(f"{path}: no cluster lines")
    table = np.array(rows)
    return AllocationProblem(q=table[:, 0], lb=table[:, 1], ub=table[:, 2], N=N)


def format_allocation(allocation: Allocation) -> str:
    lines = ["x_real x_int"]
    lines += [f"{xr:.12g} {xi}" for xr, xi in zip(allocation.x_real.tolist(), allocation.x_int.tolist())]
    return "\n".join(lines) + "\n"
