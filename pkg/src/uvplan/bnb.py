"""LP-based branch and bound with lazy-constraint callbacks.

Cuts returned by the callback are global: they are appended to every node LP
solved afterwards.  Node selection is best-bound-first, plunging into one child
after each branching so incumbents appear early.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram, solve_lp

log = logging.getLogger(__name__)

INT_TOL = 1e-6
CUT_TOL = 1e-6

TIME_LIMIT = "time_limit"
NODE_LIMIT = "node_limit"


@dataclass(frozen=True, eq=False)
class MipProblem:
    lp: LinearProgram
    integer: np.ndarray

    def __post_init__(self):
        mask = np.array(self.integer, dtype=bool).reshape(-1)
        if mask.shape[0] != self.lp.num_cols:
            raise ValueError("integrality mask must cover every column")
        if np.any(~np.isfinite(self.lp.lb[mask])) or np.any(~np.isfinite(self.lp.ub[mask])):
            raise ValueError("integer variables need finite bounds")
        mask.setflags(write=False)
        object.__setattr__(self, "integer", mask)


@dataclass(frozen=True, eq=False)
class Cut:
    """Linear inequality ``sum coefs[k] * x[index[k]] (sense) rhs``."""

    index: np.ndarray
    coefs: np.ndarray
    sense: str
    rhs: float
    kind: str = "lazy"

    @classmethod
    def from_dict(cls, coefs: dict[int, float], sense: str, rhs: float, kind: str = "lazy") -> "Cut":
        items = sorted((int(k), float(v)) for k, v in coefs.items() if v != 0.0)
        idx = np.array([k for k, _ in items], dtype=int)
        val = np.array([v for _, v in items], dtype=float)
        return cls(idx, val, sense, float(rhs), kind)

    def activity(self, x) -> float:
        return float(np.dot(self.coefs, np.asarray(x, float)[self.index]))

    def violation(self, x) -> float:
        act = self.activity(x)
        if self.sense == "<=":
            return act - self.rhs
        if self.sense == ">=":
            return self.rhs - act
        return abs(act - self.rhs)

    def row(self, n: int) -> sp.csr_matrix:
        return sp.csr_matrix((self.coefs, (np.zeros(len(self.index), int), self.index)), shape=(1, n))


CutCallback = Callable[[np.ndarray], Sequence[Cut]]


@dataclass
class Limits:
    time: float = 3600.0
    nodes: int | None = None
    gap: float = 1e-6


@dataclass
class SolveStats:
    nodes: int = 0
    cuts: Counter = field(default_factory=Counter)
    wall_time: float = 0.0
    incumbent: float = math.nan
    best_bound: float = math.nan
    maximize: bool = True
    lp_solves: int = 0
    callback_calls: int = 0
    history: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def gap(self) -> float:
        if self.maximize:
            return mip_gap(self.incumbent, self.best_bound)
        return mip_gap(-self.incumbent, -self.best_bound)


def mip_gap(incumbent: float, bound: float, eps: float = 1e-9) -> float:
    """Relative gap ``(bound - incumbent) / max(|bound|, eps)`` for maximisation."""
    if not (math.isfinite(incumbent) and math.isfinite(bound)):
        return math.inf
    return max(bound - incumbent, 0.0) / max(abs(bound), eps)


@dataclass
class MipResult:
    status: str
    x: np.ndarray | None
    objective: float
    stats: SolveStats
    cuts: list[Cut]

    @property
    def has_incumbent(self) -> bool:
        return self.x is not None


def branch_select(values, mask=None, tol: float = INT_TOL) -> int:
    """Most fractional integer variable; ties go to the lowest index."""
    values = np.asarray(values, float)
    frac = np.abs(values - np.round(values))
    if mask is not None:
        frac = np.where(np.asarray(mask, bool), frac, 0.0)
    cand = np.nonzero(frac > tol)[0]
    if len(cand) == 0:
        raise ValueError("no fractional integer variable")
    best = frac[cand].max()
    return int(cand[np.nonzero(frac[cand] >= best - 1e-9)[0][0]])


@dataclass
class _Node:
    lb: np.ndarray
    ub: np.ndarray
    bound: float  # parent LP bound, maximisation form
    depth: int
    basis: object = None


class _BranchAndBound:
    def __init__(self, problem: MipProblem, callback, limits: Limits, engine: str,
                 progress, progress_every: int, initial_cuts: Sequence[Cut], separator,
                 separation_rounds: tuple[int, int]):
        self.problem = problem
        self.callback = callback
        self.separator = separator
        self.separation_rounds = separation_rounds
        self.limits = limits
        self.engine = engine
        self.progress = progress
        self.progress_every = progress_every
        self.n = problem.lp.num_cols
        self.sense = 1.0 if problem.lp.maximize else -1.0
        self.stats = SolveStats(maximize=problem.lp.maximize)
        self.pool: list[Cut] = []
        self.lp = problem.lp
        self.heap: list[tuple[float, int, _Node]] = []
        self.counter = itertools.count()
        self.incumbent = -math.inf
        self.incumbent_x: np.ndarray | None = None
        self.pruned_bound = -math.inf  # largest bound discarded only by the gap tolerance
        self.current_bound = -math.inf
        self.unbounded = False
        if initial_cuts:
            self._add_cuts(list(initial_cuts))

    def _add_cuts(self, cuts: Sequence[Cut]) -> None:
        rows = sp.vstack([c.row(self.n) for c in cuts], format="csr")
        self.pool.extend(cuts)
        for c in cuts:
            self.stats.cuts[c.kind] += 1
        self.lp = self.lp.add_rows(rows, [c.sense for c in cuts], [c.rhs for c in cuts])

    def open_bound(self) -> float:
        b = max([-h[0] for h in self.heap] + [self.current_bound, self.pruned_bound, self.incumbent])
        return b

    def prunable(self, bound: float) -> bool:
        if self.incumbent == -math.inf:
            return False
        return bound - self.incumbent <= self.limits.gap * max(abs(bound), 1.0)

    def emit(self) -> None:
        bound = self.open_bound()
        inc = self.sense * self.incumbent if self.incumbent_x is not None else math.nan
        self.stats.history.append((self.stats.nodes, inc, self.sense * bound))
        if self.progress is not None:
            self.progress({"nodes": self.stats.nodes, "incumbent": inc, "bound": self.sense * bound,
                           "gap": mip_gap(self.incumbent, bound),
                           "time": time.perf_counter() - self.start})

    def run(self) -> MipResult:
        self.start = time.perf_counter()
        lp0 = self.problem.lp
        node: _Node | None = _Node(lp0.lb.copy(), lp0.ub.copy(), math.inf, 0)
        status = None
        while node is not None or self.heap:
            if node is None:
                _, _, node = heapq.heappop(self.heap)
            if self.prunable(node.bound):
                self.pruned_bound = max(self.pruned_bound, node.bound)
                node = None
                continue
            if time.perf_counter() - self.start > self.limits.time:
                status = TIME_LIMIT
            elif self.limits.nodes is not None and self.stats.nodes >= self.limits.nodes:
                status = NODE_LIMIT
            if status is not None:
                heapq.heappush(self.heap, (-node.bound, next(self.counter), node))
                break
            self.current_bound = node.bound
            self.stats.nodes += 1
            children = self._process(node)
            self.current_bound = -math.inf
            if self.unbounded:
                break
            if self.stats.nodes % self.progress_every == 0:
                self.emit()
            node = None
            if children:
                dive, other = children
                heapq.heappush(self.heap, (-other.bound, next(self.counter), other))
                node = dive

        st = self.stats
        st.wall_time = time.perf_counter() - self.start
        if self.unbounded and self.incumbent_x is None:
            status = UNBOUNDED
        elif status is None:
            status = OPTIMAL if self.incumbent_x is not None else INFEASIBLE
        if self.incumbent_x is not None:
            st.incumbent = self.sense * self.incumbent
            st.best_bound = self.sense * self.open_bound()
        elif status == INFEASIBLE:
            st.incumbent = st.best_bound = math.nan
        else:
            st.best_bound = self.sense * self.open_bound()
        self.emit()
        obj = float(lp0.c @ self.incumbent_x) if self.incumbent_x is not None else math.nan
        return MipResult(status, self.incumbent_x, obj, st, list(self.pool))

    def _process(self, node: _Node):
        mask = self.problem.integer
        rounds = self.separation_rounds[0] if node.depth == 0 else self.separation_rounds[1]
        last_bound = math.inf
        while True:
            lp = self.lp.with_bounds(node.lb, node.ub)
            sol = solve_lp(lp, node.basis if self.engine == "simplex" else None, engine=self.engine)
            self.stats.lp_solves += 1
            if sol.status == INFEASIBLE:
                return None
            if sol.status == UNBOUNDED:
                if node.depth == 0:
                    self.unbounded = True
                return None
            if sol.status != OPTIMAL:
                raise RuntimeError(f"node LP failed: {sol.status} {sol.message}")
            node.basis = sol.basis
            bound = self.sense * sol.objective
            if self.prunable(bound):
                self.pruned_bound = max(self.pruned_bound, bound)
                return None
            x = sol.x
            frac = np.abs(x - np.round(x))
            fractional = mask & (frac > INT_TOL)
            if fractional.any():
                # optional cutting at fractional points, stopped once the bound stalls
                if self.separator is None or rounds <= 0 or last_bound - bound <= 1e-4 * max(abs(bound), 1.0):
                    break
                rounds -= 1
                last_bound = bound
                cuts = [c for c in self.separator(x) if c.violation(x) > CUT_TOL]
                if not cuts:
                    break
                self._add_cuts(cuts)
                continue
            cand = np.where(mask, np.round(x), x)
            cuts = []
            if self.callback is not None:
                self.stats.callback_calls += 1
                cuts = [c for c in self.callback(cand) if c.violation(cand) > CUT_TOL]
            if cuts:
                self._add_cuts(cuts)
                continue
            value = self.sense * float(self.problem.lp.c @ cand)
            if value > self.incumbent:
                self.incumbent = value
                self.incumbent_x = cand
                self.emit()
            return None

        j = branch_select(x, mask)
        down_ub = node.ub.copy()
        down_ub[j] = math.floor(x[j])
        up_lb = node.lb.copy()
        up_lb[j] = math.ceil(x[j])
        down = _Node(node.lb, down_ub, bound, node.depth + 1, node.basis)
        up = _Node(up_lb, node.ub, bound, node.depth + 1, node.basis)
        return (up, down) if x[j] - math.floor(x[j]) >= 0.5 else (down, up)


def solve_mip(problem: MipProblem, callback: CutCallback | None = None, limits: Limits | None = None,
              *, engine: str = "highs", progress: Callable[[dict], None] | None = None,
              progress_every: int = 100, initial_cuts: Sequence[Cut] = (),
              separator: CutCallback | None = None, separation_rounds: tuple[int, int] = (50, 5)) -> MipResult:
    """Optimise ``problem`` with integrality plus any cuts the callback returns.

    The callback sees integral candidates only (integer columns rounded) and
    returns cuts violated by them; a candidate becomes the incumbent only
    once the callback returns nothing violated.

    ``separator``, if given, is called on fractional node solutions and may
    return globally valid cuts; it runs for at most ``separation_rounds``
    rounds at the root and at other nodes respectively.
    """
    return _BranchAndBound(problem, callback, limits or Limits(), engine, progress,
                           progress_every, initial_cuts, separator, separation_rounds).run()
