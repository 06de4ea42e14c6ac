"""L-shaped (Benders) decomposition for the two-stage routing model.

The master problem is the first-stage routing model plus recourse
approximation columns ``theta <= 0``.  Sub-tour elimination and optimality
cuts are both generated lazily inside branch and bound.  Optimality cuts have
no constant term because every right-hand side of the recourse LP is linear
in ``(x, y)``.
"""
from __future__ import annotations

import json
import math
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse.linalg import lsqr

from .bnb import Cut, Limits, solve_mip
from .lp import EQ, LE, OPTIMAL
from .formulation import SEC, Model, VariableIndex, build_first_stage, plan_from_solution, plan_to_vector, sec_callback_cuts
from .model import Instance, Plan, RecourseValue, ScenarioSet, check_plan, first_stage_incentive
from .recourse import Recourse, RecourseContractError

OPTIMALITY = "optimality"
ITERATION_LIMIT = "iteration_limit"
TIME_LIMIT = "time_limit"


class BoundInversion(RuntimeError):
    """Lower bound exceeded upper bound: some cut or bound is invalid."""


def relative_gap(lb: float, ub: float) -> float:
    if lb > ub + 1e-6:
        raise BoundInversion(f"lower bound {lb} exceeds upper bound {ub}")
    if not (math.isfinite(lb) and math.isfinite(ub)):
        return math.inf
    return max(ub - lb, 0.0) / max(abs(ub), 1e-12)


@dataclass(frozen=True, eq=False)
class OptimalityCut:
    """``theta[k] - coefs @ first_stage <= 0`` over the master's columns."""

    coefs: np.ndarray  # dense over the master column layout, theta entries zero
    theta: int  # column of the theta this cut bounds

    def slack(self, first_stage: np.ndarray, theta_value: float) -> float:
        """Nonnegative when satisfied."""
        return float(self.coefs @ first_stage[: len(self.coefs)]) - theta_value

    def to_cut(self) -> Cut:
        coefs = {int(j): -float(v) for j, v in zip(np.nonzero(self.coefs)[0], self.coefs[np.nonzero(self.coefs)[0]])
                 if abs(v) > 1e-12}
        coefs[self.theta] = 1.0
        return Cut.from_dict(coefs, LE, 0.0, kind=OPTIMALITY)


def build_optimality_cut(recourse: Recourse, values: Sequence[RecourseValue], probs,
                         theta_col: int) -> OptimalityCut:
    """Probability-weighted single cut from per-scenario recourse duals."""
    probs = np.asarray(probs, float).reshape(-1)
    if len(values) != len(probs):
        raise ValueError(f"{len(values)} dual sets for {len(probs)} scenarios")
    g = np.zeros(recourse.idx.size)
    for rv, rho in zip(values, probs):
        g += rho * recourse.dual_bound_coefficients(rv)
    g[theta_col] = 0.0
    return OptimalityCut(g, theta_col)


def core_point(model: Model, level: float = 0.5) -> np.ndarray:
    """Interior-style reference point: every ``y`` at ``level`` with ``x`` fitted to the equality rows.

    ``x`` is the least-squares solution of the model's equality rows (fuel
    balance, station resets) given ``y``; cut validity does not depend on it.
    """
    lp = model.problem.lp
    idx = model.index
    eq = np.array([s == EQ for s in lp.senses])
    A = lp.A[eq].tocsc()
    ys = slice(0, idx.x_offset)
    xs = slice(idx.x_offset, idx.z_offset)
    point = np.zeros(idx.size)
    point[ys] = level
    rhs = lp.b[eq] - A[:, ys] @ point[ys]
    point[xs] = lsqr(A[:, xs], rhs, atol=1e-12, btol=1e-12)[0]
    return point


@dataclass
class IterationLog:
    iteration: int
    lb: float
    ub: float
    gap: float
    optimality_cuts: int
    sec_cuts: int
    master_objective: float
    candidate_objective: float

    def to_json(self) -> str:
        return json.dumps({k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                           for k, v in asdict(self).items()})


@dataclass
class LShapedStats:
    iterations: int = 0
    nodes: int = 0
    lp_solves: int = 0
    recourse_solves: int = 0
    cuts: Counter = field(default_factory=Counter)
    wall_time: float = 0.0
    lb: float = -math.inf
    ub: float = math.inf

    @property
    def gap(self) -> float:
        return relative_gap(self.lb, self.ub)


@dataclass
class LShapedResult:
    status: str
    plan: Plan | None
    objective: float
    logs: list[IterationLog]
    stats: LShapedStats


class _LShaped:
    def __init__(self, inst: Instance, scen: ScenarioSet, eps: float, multi_cut: bool,
                 benders_in_callback: bool, strengthen: bool, engine: str, jobs: int,
                 time_limit: float, max_iterations: int, log_sink, fractional_cuts: bool, cut_duals: str):
        self.inst = inst
        self.fractional_cuts = fractional_cuts
        self.separation_rounds = (50, 1)
        self.scen = scen
        self.eps = eps
        self.multi_cut = multi_cut
        self.in_callback = benders_in_callback
        self.engine = engine
        self.jobs = jobs
        self.time_limit = time_limit
        self.max_iterations = max_iterations
        self.log_sink = log_sink
        weights = tuple(scen.probs) if multi_cut else (1.0,)
        self.master = build_first_stage(inst, strengthen, theta_weights=weights)
        self.idx: VariableIndex = self.master.index
        self.recourse = Recourse(inst, self.idx, engine)
        if cut_duals not in ("pareto", "simplex"):
            raise ValueError("cut_duals must be 'pareto' or 'simplex'")
        self.core = core_point(self.master) if cut_duals == "pareto" else None
        self.pool: list[Cut] = []
        self.stats = LShapedStats()
        self.logs: list[IterationLog] = []
        self.best: tuple[float, Plan] | None = None
        self.evaluated: dict[bytes, float] = {}

    # -- recourse evaluation ------------------------------------------------------------
    def _recourse_values(self, first_stage: np.ndarray) -> list[RecourseValue]:
        alphas = [a for a, _ in self.scen]
        self.stats.recourse_solves += len(alphas)
        if self.jobs > 1 and len(alphas) > 1:
            with ThreadPoolExecutor(self.jobs) as ex:
                return list(ex.map(lambda a: self.recourse.solve(first_stage, a, self.core), alphas))
        return [self.recourse.solve(first_stage, a, self.core) for a in alphas]

    def _cuts_for(self, first_stage: np.ndarray, values: Sequence[RecourseValue]) -> list[OptimalityCut]:
        if self.multi_cut:
            return [build_optimality_cut(self.recourse, [rv], [1.0], self.idx.theta(k))
                    for k, rv in enumerate(values)]
        return [build_optimality_cut(self.recourse, values, self.scen.probs, self.idx.theta(0))]

    def _evaluate(self, plan: Plan) -> tuple[float, np.ndarray, list[RecourseValue]]:
        """Canonical first-stage vector, true two-stage value and recourse solutions of a plan."""
        check_plan(self.inst, plan)
        vec = plan_to_vector(self.inst, self.idx, plan)
        values = self._recourse_values(vec)
        expected = float(np.dot(self.scen.probs, [rv.value for rv in values]))
        value = float(first_stage_incentive(self.inst, plan).sum()) + expected
        if self.best is None or value > self.best[0]:
            self.best = (value, plan)
        return value, vec, values

    def _theta_values(self, x: np.ndarray) -> np.ndarray:
        k = self.idx.num_theta
        return x[self.idx.theta_offset: self.idx.theta_offset + k]

    # -- master ----------------------------------------------------------------------------
    def _callback(self, x: np.ndarray) -> list[Cut]:
        cuts = sec_callback_cuts(self.inst, self.idx, x)
        if cuts or not self.in_callback:
            return cuts
        plan = plan_from_solution(self.inst, self.idx, x)
        _, vec, values = self._evaluate(plan)
        out = []
        theta = self._theta_values(x)
        for k, oc in enumerate(self._cuts_for(vec, values)):
            if oc.slack(vec, theta[k]) < -1e-6:
                out.append(oc.to_cut())
        return out

    def _separate(self, x: np.ndarray) -> list[Cut]:
        """Optimality cuts at a fractional master point; any dual-feasible point yields a valid cut."""
        vec = x.copy()
        vec[self.idx.theta_offset:] = 0.0
        try:
            values = self._recourse_values(vec)
        except RecourseContractError:
            return []
        theta = self._theta_values(x)
        return [oc.to_cut() for k, oc in enumerate(self._cuts_for(vec, values))
                if oc.slack(vec, theta[k]) < -1e-6 * max(1.0, abs(theta[k]))]

    def _solve_master(self, remaining: float):
        res = solve_mip(self.master.problem, self._callback, Limits(time=max(remaining, 0.0)),
                        engine=self.engine, initial_cuts=self.pool,
                        separator=self._separate if self.fractional_cuts else None,
                        separation_rounds=self.separation_rounds)
        self.stats.nodes += res.stats.nodes
        self.stats.lp_solves += res.stats.lp_solves
        new = res.cuts[len(self.pool):]
        self.pool = list(res.cuts)
        for c in new:
            self.stats.cuts[c.kind] += 1
        return res, new

    def _record(self, n: int, lb: float, ub: float, new_cuts: Sequence[Cut], u: float, v: float) -> None:
        kinds = Counter(c.kind for c in new_cuts)
        entry = IterationLog(n, lb, ub, relative_gap(lb, ub), kinds[OPTIMALITY], kinds[SEC], u, v)
        if self.logs:
            prev = self.logs[-1]
            assert entry.lb >= prev.lb - 1e-9 and entry.ub <= prev.ub + 1e-9, "bounds moved the wrong way"
        self.logs.append(entry)
        if self.log_sink is not None:
            self.log_sink(entry.to_json())

    def run(self) -> LShapedResult:
        start = time.perf_counter()
        st = self.stats
        lb, ub = -math.inf, math.inf

        # first stage alone: theta fixed at zero
        lp = self.master.problem.lp
        theta_cols = [self.idx.theta(k) for k in range(self.idx.num_theta)]
        lo, hi = lp.lb.copy(), lp.ub.copy()
        lo[theta_cols] = 0.0
        first = solve_mip(type(self.master.problem)(lp.with_bounds(lo, hi), self.master.problem.integer),
                          lambda x: sec_callback_cuts(self.inst, self.idx, x), Limits(time=self.time_limit),
                          engine=self.engine)
        st.nodes += first.stats.nodes
        st.lp_solves += first.stats.lp_solves
        if not first.has_incumbent:
            # infeasible first stage, or no candidate within the time limit
            st.wall_time = time.perf_counter() - start
            return LShapedResult(first.status, None, math.nan, self.logs, st)
        self.pool = list(first.cuts)
        for c in self.pool:
            st.cuts[c.kind] += 1
        plan = plan_from_solution(self.inst, self.idx, first.x)
        u = first.stats.best_bound
        v, vec, values = self._evaluate(plan)
        ub, lb = min(u, ub), max(v, lb)
        new = [oc.to_cut() for oc in self._cuts_for(vec, values)]
        self._add_pool(new)
        self._record(0, lb, ub, self.pool, u, v)

        status = OPTIMAL
        n = 0
        while relative_gap(lb, ub) >= self.eps and not math.isclose(lb, ub, abs_tol=1e-9):
            n += 1
            remaining = self.time_limit - (time.perf_counter() - start)
            if n > self.max_iterations:
                status = ITERATION_LIMIT
                break
            if remaining <= 0:
                status = TIME_LIMIT
                break
            res, added = self._solve_master(remaining)
            if not res.has_incumbent:
                status = res.status
                break
            u = res.stats.best_bound
            plan = plan_from_solution(self.inst, self.idx, res.x)
            v, vec, values = self._evaluate(plan)
            ub, lb = min(u, ub), max(v, lb)
            cuts = []
            theta = self._theta_values(res.x)
            for k, oc in enumerate(self._cuts_for(vec, values)):
                if oc.slack(vec, theta[k]) < -1e-6:
                    cuts.append(oc.to_cut())
            if relative_gap(lb, ub) >= self.eps and not cuts and res.status == OPTIMAL:
                # the master is exact on this candidate, so bounds must have met
                raise AssertionError("no progress: candidate value equals its approximation but gap remains")
            self._add_pool(cuts)
            self._record(n, lb, ub, list(added) + cuts, u, v)
            if res.status != OPTIMAL:
                status = res.status
                break

        st.iterations = n
        st.lb, st.ub = lb, ub
        st.wall_time = time.perf_counter() - start
        value, best_plan = self.best
        if status == OPTIMAL:
            best_plan = Plan(best_plan.edges, best_plan.cumulative_fuel, best_plan.station_use, (lb, ub))
        return LShapedResult(status, best_plan, value, self.logs, st)

    def _add_pool(self, cuts: Sequence[Cut]) -> None:
        self.pool.extend(cuts)
        for c in cuts:
            self.stats.cuts[c.kind] += 1


def solve_lshaped(inst: Instance, scen: ScenarioSet, eps: float = 1e-4, *, multi_cut: bool = False,
                  benders_in_callback: bool = True, strengthen: bool = True, engine: str = "highs",
                  jobs: int = 1, time_limit: float = 3600.0, max_iterations: int = 10_000,
                  log_sink: Callable[[str], None] | None = None,
                  fractional_cuts: bool = False, cut_duals: str = "pareto") -> LShapedResult:
    """Solve the two-stage model by Benders decomposition to relative tolerance ``eps``.

    With ``benders_in_callback`` the optimality cut is checked at every
    integral master candidate, after sub-tour separation; otherwise the
    master is re-solved to optimality between cut rounds.  ``log_sink``
    receives one JSON line per iteration.  ``fractional_cuts`` also
    separates optimality cuts at fractional master LP solutions, which
    tightens the master bound without changing the result.  ``cut_duals``
    picks the dual behind each cut: ``"pareto"`` takes, among optimal
    duals, one minimising the bound at :func:`core_point`; ``"simplex"``
    uses the LP engine's duals as returned.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if scen.num_uvs != inst.num_uvs:
        raise ValueError("scenario set and instance disagree on the number of UVs")
    return _LShaped(inst, scen, eps, multi_cut, benders_in_callback, strengthen, engine, jobs,
                    time_limit, max_iterations, log_sink, fractional_cuts, cut_duals).run()
