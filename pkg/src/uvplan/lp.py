"""Linear programming: a bounded-variable revised simplex plus a HiGHS backend.

Both backends return row duals as shadow prices, i.e. the derivative of the
optimal objective with respect to the right-hand side, in the sense of the
problem as posed (so a binding ``<=`` row of a maximisation has a
nonnegative dual).
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

LE, EQ, GE = "<=", "=", ">="

# Tolerances shared by every solve.
FEAS_TOL = 1e-7
OPT_TOL = 1e-7
GAP_TOL = 1e-6
PIVOT_TOL = 1e-9

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"
NUMERICAL = "numerical_failure"


class LpError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearProgram:
    """``max/min c x  s.t.  A x (<=|=|>=) b,  lb <= x <= ub``."""

    c: np.ndarray
    A: sp.csr_matrix
    senses: tuple[str, ...]
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    maximize: bool = False

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        A = sp.csr_matrix(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        lb = np.asarray(self.lb, dtype=float).reshape(-1)
        ub = np.asarray(self.ub, dtype=float).reshape(-1)
        m = b.shape[0]
        n = c.shape[0]
        if A.shape != (m, n) and not (m == 0 and A.shape[0] == 0):
            raise ValueError(f"A has shape {A.shape}, expected {(m, n)}")
        if A.shape[1] != n:
            A = sp.csr_matrix((m, n))
        if len(self.senses) != m:
            raise ValueError("one sense per row required")
        if any(s not in (LE, EQ, GE) for s in self.senses):
            raise ValueError(f"unknown relation in {set(self.senses)}")
        if lb.shape != (n,) or ub.shape != (n,):
            raise ValueError("bounds must match the number of columns")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b)) and np.all(np.isfinite(A.data))):
            raise ValueError("coefficients must be finite")
        if np.any(lb > ub):
            raise ValueError("lower bound above upper bound")
        for arr in (c, b, lb, ub):
            arr.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)
        object.__setattr__(self, "senses", tuple(self.senses))

    @property
    def num_rows(self) -> int:
        return self.b.shape[0]

    @property
    def num_cols(self) -> int:
        return self.c.shape[0]

    def add_rows(self, A_new, senses: Sequence[str], b_new) -> "LinearProgram":
        A_new = sp.csr_matrix(A_new, dtype=float)
        if A_new.shape[1] != self.num_cols:
            raise ValueError("new rows reference unknown columns")
        return replace(
            self,
            A=sp.vstack([self.A, A_new], format="csr"),
            senses=self.senses + tuple(senses),
            b=np.concatenate([self.b, np.asarray(b_new, dtype=float).reshape(-1)]),
        )

    def with_bounds(self, lb, ub) -> "LinearProgram":
        return replace(self, lb=np.asarray(lb, dtype=float), ub=np.asarray(ub, dtype=float))

    def objective_value(self, x) -> float:
        return float(self.c @ x)

    def row_activity(self, x) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float)

    def max_violation(self, x) -> float:
        """Largest absolute violation of rows and bounds at ``x``."""
        x = np.asarray(x, dtype=float)
        act = self.row_activity(x)
        s = np.array(self.senses)
        viol = np.zeros(self.num_rows)
        viol[s == LE] = np.maximum(act - self.b, 0)[s == LE]
        viol[s == GE] = np.maximum(self.b - act, 0)[s == GE]
        viol[s == EQ] = np.abs(act - self.b)[s == EQ]
        bound = np.maximum(self.lb - x, 0).max(initial=0.0)
        bound = max(bound, np.maximum(x - self.ub, 0).max(initial=0.0))
        return float(max(viol.max(initial=0.0), bound))


@dataclass(frozen=True)
class Basis:
    """Warm-start information: basic columns of ``[A | I]`` and nonbasics at upper."""

    basic: tuple[int, ...]
    at_upper: frozenset[int] = frozenset()
    num_cols: int = 0


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float = math.nan
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    basis: Basis | None = None
    iterations: int = 0
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _slack_bounds(senses: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    m = len(senses)
    lo = np.zeros(m)
    hi = np.zeros(m)
    for i, s in enumerate(senses):
        if s == LE:
            hi[i] = np.inf
        elif s == GE:
            lo[i] = -np.inf
    return lo, hi


def _nonbasic_value(lo: float, hi: float, upper: bool) -> float:
    if upper and np.isfinite(hi):
        return hi
    if np.isfinite(lo):
        return lo
    if np.isfinite(hi):
        return hi
    return 0.0


class _Simplex:
    """Working state of one bounded revised-simplex solve (minimisation form)."""

    REFACTOR_EVERY = 60
    BLAND_AFTER = 40

    def __init__(self, lp: LinearProgram, warm: Basis | None, max_iter: int | None):
        m, n = lp.num_rows, lp.num_cols
        self.m, self.n = m, n
        self.lp = lp
        self.M = np.hstack([lp.A.toarray(), np.eye(m)]) if m else np.zeros((0, n))
        slo, shi = _slack_bounds(lp.senses)
        self.lo = np.concatenate([lp.lb, slo])
        self.hi = np.concatenate([lp.ub, shi])
        self.cost = np.concatenate([-lp.c if lp.maximize else lp.c.copy(), np.zeros(m)])
        self.b = lp.b.copy()
        self.max_iter = max_iter if max_iter is not None else 50 * (m + n) + 1000
        self.iterations = 0

        basic, at_upper = self._initial_basis(warm)
        self.basic = np.array(basic, dtype=int)
        self.is_basic = np.zeros(n + m, dtype=bool)
        self.is_basic[self.basic] = True
        self.x = np.zeros(n + m)
        for j in range(n + m):
            if not self.is_basic[j]:
                self.x[j] = _nonbasic_value(self.lo[j], self.hi[j], j in at_upper)
        self.Binv = np.eye(m)
        self.fixed = self.lo == self.hi

    def _initial_basis(self, warm: Basis | None):
        m, n = self.m, self.n
        slack_basis = list(range(n, n + m))
        if warm is None or warm.num_cols != n:
            return slack_basis, set()
        basic = list(warm.basic)
        # rows appended since the basis was taken get their slack as basic
        old_m = len(basic)
        if old_m > m:
            return slack_basis, set()
        old_slack_offset = n
        basic = [j if j < n else j - old_slack_offset + n for j in basic]
        basic += list(range(n + old_m, n + m))
        at_upper = {j for j in warm.at_upper if j < n}
        at_upper |= {j - old_slack_offset + n for j in warm.at_upper if j >= n and j - n < old_m}
        return basic, at_upper

    def refactor(self) -> bool:
        if self.m == 0:
            return True
        B = self.M[:, self.basic]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            return False
        if not np.all(np.isfinite(self.Binv)):
            return False
        return True

    def basic_values(self) -> np.ndarray:
        xn = self.x.copy()
        xn[self.basic] = 0.0
        return self.Binv @ (self.b - self.M @ xn)

    def run(self) -> LpSolution:
        m = self.m
        if not self.refactor():
            # warm basis singular: restart from slacks
            self.basic = np.arange(self.n, self.n + m)
            self.is_basic[:] = False
            self.is_basic[self.basic] = True
            for j in range(self.n):
                self.x[j] = _nonbasic_value(self.lo[j], self.hi[j], False)
            self.refactor()
        since_refactor = 0
        degenerate_run = 0
        bland = False
        while True:
            if since_refactor >= self.REFACTOR_EVERY:
                if not self.refactor():
                    return LpSolution(NUMERICAL, iterations=self.iterations, message="singular basis")
                since_refactor = 0
            xB = self.basic_values()
            self.x[self.basic] = xB
            lB, uB = self.lo[self.basic], self.hi[self.basic]
            below = xB < lB - FEAS_TOL
            above = xB > uB + FEAS_TOL
            phase1 = bool(below.any() or above.any())
            if phase1:
                cB = np.where(below, -1.0, np.where(above, 1.0, 0.0))
                cost = np.zeros(self.n + m)
            else:
                cB = self.cost[self.basic]
                cost = self.cost
            y = cB @ self.Binv if m else np.zeros(0)
            d = cost - y @ self.M if m else cost.copy()
            if phase1:
                d[self.basic] = 0.0
            q, direction = self._choose_entering(d, bland)
            if q < 0:
                if phase1:
                    infeas = float(np.sum(np.maximum(lB - xB, 0)) + np.sum(np.maximum(xB - uB, 0)))
                    return LpSolution(INFEASIBLE, iterations=self.iterations,
                                      message=f"phase 1 stalled with infeasibility {infeas:.3g}")
                return self._finish(since_refactor)
            if self.iterations >= self.max_iter:
                return LpSolution(ITERATION_LIMIT, iterations=self.iterations)
            self.iterations += 1

            alpha = self.Binv @ self.M[:, q] if m else np.zeros(0)
            rate = -direction * alpha  # d x_B / d t
            t_best = self.hi[q] - self.lo[q]  # bound flip
            leave = -1
            leave_to_upper = False
            best_piv = 0.0
            for i in np.nonzero(np.abs(alpha) > PIVOT_TOL)[0]:
                r = rate[i]
                xi = xB[i]
                if phase1 and below[i]:
                    if r <= 0:
                        continue
                    t, to_upper = (lB[i] - xi) / r, False
                elif phase1 and above[i]:
                    if r >= 0:
                        continue
                    t, to_upper = (uB[i] - xi) / r, True
                elif r < 0:
                    if not np.isfinite(lB[i]):
                        continue
                    t, to_upper = max(xi - lB[i], 0.0) / -r, False
                else:
                    if not np.isfinite(uB[i]):
                        continue
                    t, to_upper = max(uB[i] - xi, 0.0) / r, True
                piv = abs(alpha[i])
                if t < t_best - 1e-12:
                    take = True
                elif t <= t_best + 1e-12 and leave >= 0:
                    if bland:
                        take = self.basic[i] < self.basic[leave]
                    else:
                        # prefer fixed (equality slack) variables leaving, then larger pivots
                        fi, fl = self.fixed[self.basic[i]], self.fixed[self.basic[leave]]
                        take = (fi and not fl) or (fi == fl and piv > best_piv)
                else:
                    take = False
                if take:
                    t_best, leave, leave_to_upper, best_piv = t, i, to_upper, piv
            if not np.isfinite(t_best):
                if phase1:
                    return LpSolution(NUMERICAL, iterations=self.iterations,
                                      message="unbounded phase-1 ray")
                return LpSolution(UNBOUNDED, iterations=self.iterations)

            if t_best <= 1e-12:
                degenerate_run += 1
                if degenerate_run > self.BLAND_AFTER:
                    bland = True
            else:
                degenerate_run = 0
                bland = False

            self.x[q] += direction * t_best
            if leave < 0:
                continue  # bound flip, basis unchanged
            out = self.basic[leave]
            self.x[out] = self.hi[out] if leave_to_upper else self.lo[out]
            if not np.isfinite(self.x[out]):
                self.x[out] = 0.0
            self.basic[leave] = q
            self.is_basic[q] = True
            self.is_basic[out] = False
            piv = alpha[leave]
            row = self.Binv[leave] / piv
            self.Binv -= np.outer(alpha, row)
            self.Binv[leave] = row
            since_refactor += 1

    def _choose_entering(self, d: np.ndarray, bland: bool) -> tuple[int, int]:
        nb = ~self.is_basic & ~self.fixed
        can_up = nb & (self.x < self.hi - FEAS_TOL) & (d < -OPT_TOL)
        can_down = nb & (self.x > self.lo + FEAS_TOL) & (d > OPT_TOL)
        cand = can_up | can_down
        if not cand.any():
            return -1, 0
        idx = np.nonzero(cand)[0]
        if bland:
            q = int(idx[0])
        else:
            q = int(idx[np.argmax(np.abs(d[idx]))])
        return q, (1 if can_up[q] else -1)

    def _finish(self, since_refactor: int) -> LpSolution:
        if since_refactor:
            if not self.refactor():
                return LpSolution(NUMERICAL, iterations=self.iterations, message="singular final basis")
            self.x[self.basic] = self.basic_values()
        lp, n, m = self.lp, self.n, self.m
        x = self.x[:n].copy()
        if lp.max_violation(x) > 10 * FEAS_TOL:
            return LpSolution(NUMERICAL, iterations=self.iterations,
                              message=f"final primal violation {lp.max_violation(x):.3g}")
        y = self.cost[self.basic] @ self.Binv if m else np.zeros(0)
        d = self.cost - y @ self.M if m else self.cost.copy()
        sign = -1.0 if lp.maximize else 1.0
        duals = sign * y
        rc = sign * d[:n]
        # Values at a bound are snapped so reported points sit exactly on them.
        on_lo = np.isclose(x, lp.lb, atol=FEAS_TOL, rtol=0)
        on_hi = np.isclose(x, lp.ub, atol=FEAS_TOL, rtol=0)
        x = np.where(on_lo, lp.lb, np.where(on_hi, lp.ub, x))
        at_upper = frozenset(int(j) for j in np.nonzero(~self.is_basic & (self.x >= self.hi) & np.isfinite(self.hi))[0])
        sol = LpSolution(
            OPTIMAL,
            x=x,
            objective=float(lp.c @ x),
            duals=duals,
            reduced_costs=rc,
            basis=Basis(tuple(int(j) for j in self.basic), at_upper, n),
            iterations=self.iterations,
        )
        check_optimality(lp, sol)
        return sol


def check_optimality(lp: LinearProgram, sol: LpSolution, scale: float = 1.0) -> None:
    """Assert primal/dual feasibility, complementary slackness and zero duality gap."""
    x, y, d = sol.x, sol.duals, sol.reduced_costs
    tol = FEAS_TOL * 10 * scale
    if lp.max_violation(x) > tol:
        raise LpError(f"primal infeasible optimum (violation {lp.max_violation(x):.3g})")
    sgn = 1.0 if lp.maximize else -1.0  # shadow price sign for a binding <= row
    s = np.array(lp.senses)
    dual_tol = OPT_TOL * 10 * scale * max(1.0, float(np.abs(lp.c).max(initial=0.0)))
    if np.any(sgn * y[s == LE] < -dual_tol) or np.any(sgn * y[s == GE] > dual_tol):
        raise LpError("dual sign infeasibility")
    act = lp.row_activity(x)
    slack = np.abs(lp.b - act)
    if lp.num_rows and np.max(np.abs(y) * slack) > 1e-6 * scale * max(1.0, np.abs(y).max()):
        raise LpError("complementary slackness violated on rows")
    # reduced costs: improving direction must be blocked by a bound
    free_up = x < lp.ub - tol
    free_down = x > lp.lb + tol
    if np.any(free_up & (sgn * d > dual_tol)) or np.any(free_down & (sgn * d < -dual_tol)):
        raise LpError("reduced cost sign infeasibility")
    primal = float(lp.c @ x)
    dual = float(lp.b @ y + d @ x)
    if abs(primal - dual) > GAP_TOL * max(1.0, abs(primal)):
        raise LpError(f"duality gap {primal - dual:.3g}")


def _solve_simplex(lp: LinearProgram, warm: Basis | None, max_iter: int | None) -> LpSolution:
    return _Simplex(lp, warm, max_iter).run()


def _solve_highs(lp: LinearProgram) -> LpSolution:
    from scipy.optimize import linprog

    s = np.array(lp.senses)
    A = lp.A
    le, ge, eq = s == LE, s == GE, s == EQ
    ub_rows = np.nonzero(le | ge)[0]
    flip = np.where(ge[ub_rows], -1.0, 1.0)
    A_ub = sp.diags(flip) @ A[ub_rows] if len(ub_rows) else None
    b_ub = flip * lp.b[ub_rows] if len(ub_rows) else None
    eq_rows = np.nonzero(eq)[0]
    A_eq = A[eq_rows] if len(eq_rows) else None
    b_eq = lp.b[eq_rows] if len(eq_rows) else None
    c = -lp.c if lp.maximize else lp.c
    bounds = np.column_stack([
        np.where(np.isfinite(lp.lb), lp.lb, -np.inf),
        np.where(np.isfinite(lp.ub), lp.ub, np.inf),
    ])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status == 2:
        return LpSolution(INFEASIBLE, message=res.message)
    if res.status == 3:
        return LpSolution(UNBOUNDED, message=res.message)
    if res.status != 0:
        return LpSolution(NUMERICAL, message=res.message)
    sign = -1.0 if lp.maximize else 1.0
    duals = np.zeros(lp.num_rows)
    if len(ub_rows):
        duals[ub_rows] = sign * flip * res.ineqlin.marginals
    if len(eq_rows):
        duals[eq_rows] = sign * res.eqlin.marginals
    rc = sign * (res.lower.marginals + res.upper.marginals)
    x = np.asarray(res.x, dtype=float)
    sol = LpSolution(OPTIMAL, x=x, objective=float(lp.c @ x), duals=duals,
                     reduced_costs=rc, iterations=int(res.nit))
    return sol


ENGINES = ("simplex", "highs")


def solve_lp(lp: LinearProgram, warm_start: Basis | None = None, *, engine: str = "simplex",
             max_iter: int | None = None, verify: bool = True) -> LpSolution:
    """Solve ``lp``.  ``engine`` is ``"simplex"`` (bundled) or ``"highs"``."""
    if engine == "simplex":
        return _solve_simplex(lp, warm_start, max_iter)
    if engine == "highs":
        sol = _solve_highs(lp)
        if sol.optimal and verify:
            scale = max(1.0, float(np.abs(sol.x).max(initial=0.0)))
            check_optimality(lp, sol, scale=scale)
        return sol
    raise ValueError(f"unknown LP engine {engine!r}")


def add_rows_and_resolve(lp: LinearProgram, A_new, senses: Sequence[str], b_new,
                         previous: LpSolution | None = None, *, engine: str = "simplex") -> LpSolution:
    """Append rows to ``lp`` and re-solve, warm-starting from ``previous`` when possible."""
    augmented = lp.add_rows(A_new, senses, b_new)
    warm = previous.basis if previous is not None else None
    return solve_lp(augmented, warm, engine=engine)


def dump_lp(lp: LinearProgram, names: Sequence[str] | None = None) -> str:
    """Plain-text rendering, one row per line, for debugging."""
    names = list(names) if names is not None else [f"x{j}" for j in range(lp.num_cols)]
    out = io.StringIO()
    out.write("maximize\n" if lp.maximize else "minimize\n")
    out.write(" obj: " + _linear_text(lp.c, names) + "\n")
    out.write("subject to\n")
    A = lp.A.tocsr()
    for i in range(lp.num_rows):
        row = A.getrow(i)
        coefs = np.zeros(lp.num_cols)
        coefs[row.indices] = row.data
        out.write(f" r{i}: {_linear_text(coefs, names)} {lp.senses[i]} {lp.b[i]:.12g}\n")
    out.write("bounds\n")
    for j in range(lp.num_cols):
        out.write(f" {lp.lb[j]:.12g} <= {names[j]} <= {lp.ub[j]:.12g}\n")
    out.write("end\n")
    return out.getvalue()


def _linear_text(coefs, names) -> str:
    terms = [f"{'+' if v >= 0 else '-'} {abs(v):.12g} {names[j]}" for j, v in enumerate(coefs) if v != 0]
    return " ".join(terms) if terms else "0"
