"""One entry point for the three solution routes and the deterministic model."""
from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field

from .bnb import Limits, solve_mip
from .formulation import SEC, build_dep, build_first_stage, plan_from_solution, sec_callback_cuts
from .lp import INFEASIBLE, OPTIMAL
from .lshaped import OPTIMALITY, solve_lshaped
from .model import Instance, Plan, ScenarioSet, check_plan

MODES = ("dep", "dep-relaxed", "lshaped")


@dataclass
class SolveOutcome:
    """Result of any solution route, with gap, runtime, node and cut statistics."""

    mode: str
    status: str
    plan: Plan | None
    objective: float
    bound: float
    runtime: float
    nodes: int = 0
    cuts: Counter = field(default_factory=Counter)
    iterations: int = 0
    logs: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        if self.plan is None or not math.isfinite(self.bound):
            return math.inf
        return max(self.bound - self.objective, 0.0) / max(abs(self.bound), 1e-12)

    @property
    def has_incumbent(self) -> bool:
        return self.plan is not None

    def summary(self) -> dict:
        return {"mode": self.mode, "status": self.status, "objective": self.objective, "bound": self.bound,
                "gap": self.gap, "runtime": self.runtime, "nodes": self.nodes, "bd_cuts": self.cuts[OPTIMALITY],
                "sec_cuts": self.cuts[SEC], "iterations": self.iterations}


def _mip_outcome(mode, inst, model, limits, engine, start) -> SolveOutcome:
    res = solve_mip(model.problem, lambda x: sec_callback_cuts(inst, model.index, x), limits, engine=engine)
    plan = None
    if res.has_incumbent:
        plan = plan_from_solution(inst, model.index, res.x, (res.stats.incumbent, res.stats.best_bound))
        check_plan(inst, plan)
    return SolveOutcome(mode, res.status, plan, res.objective if plan is not None else math.nan,
                        res.stats.best_bound, time.perf_counter() - start, res.stats.nodes, Counter(res.stats.cuts))


def solve(inst: Instance, scen: ScenarioSet, mode: str = "lshaped", *, eps: float = 1e-4,
          time_limit: float = 3600.0, engine: str = "highs", strengthen: bool = True,
          multi_cut: bool = False, jobs: int = 1, log_sink=None) -> SolveOutcome:
    """Solve the two-stage model by the deterministic equivalent or by decomposition."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    start = time.perf_counter()
    if mode in ("dep", "dep-relaxed"):
        model = build_dep(inst, scen, "binary" if mode == "dep" else "relaxed", strengthen)
        return _mip_outcome(mode, inst, model, Limits(time=time_limit), engine, start)
    res = solve_lshaped(inst, scen, eps, multi_cut=multi_cut, strengthen=strengthen, engine=engine, jobs=jobs,
                        time_limit=time_limit, log_sink=log_sink)
    if res.plan is not None:
        check_plan(inst, res.plan)
    return SolveOutcome(mode, res.status, res.plan, res.objective, res.stats.ub, time.perf_counter() - start,
                        res.stats.nodes, Counter(res.stats.cuts), res.stats.iterations, res.logs)


def solve_deterministic(inst: Instance, *, time_limit: float = 3600.0, engine: str = "highs",
                        strengthen: bool = True) -> SolveOutcome:
    """Maximise first-stage incentive alone, ignoring availability."""
    start = time.perf_counter()
    model = build_first_stage(inst, strengthen)
    return _mip_outcome("deterministic", inst, model, Limits(time=time_limit), engine, start)


def exit_status(outcome: SolveOutcome) -> str:
    """Collapse solver statuses into optimal / limit / infeasible."""
    if outcome.status == OPTIMAL:
        return "optimal"
    if outcome.status == INFEASIBLE:
        return "infeasible"
    return "limit"
