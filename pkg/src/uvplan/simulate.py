"""Monte Carlo mission execution under UV failures and value of the stochastic solution.

Each UV gets one uniform draw ``u`` per replication.  With ``"start"``
semantics the UV fails before leaving r0 when ``u < p``.  With ``"per_leg"``
semantics the same draw is compared against the cumulative failure
probability before each POI visit, using a per-leg hazard chosen so that the
whole-mission failure probability is still ``p``; a failed UV keeps the
incentives of POIs visited strictly before the failure point.

Draws come from PCG64 substreams, one per block of ``BLOCK`` replications,
spawned from ``SeedSequence(seed)``.  Block boundaries are fixed, so results
do not depend on ``jobs``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .generate import build_scenarios
from .model import Instance, Plan, ScenarioSet, availability_scale, check_plan, expected_objective, extract_route
from .solve import SolveOutcome, solve, solve_deterministic

START = "start"
PER_LEG = "per_leg"
SEMANTICS = (START, PER_LEG)
BLOCK = 4096
SWEEP_LEVELS = (100, 75, 25, 0)


@dataclass(frozen=True)
class SimConfig:
    failure_prob: tuple[float, ...]
    replications: int = 1000
    seed: int = 0
    semantics: str = PER_LEG

    def __post_init__(self):
        p = tuple(float(x) for x in np.atleast_1d(self.failure_prob))
        object.__setattr__(self, "failure_prob", p)
        if any(not 0.0 <= x <= 1.0 for x in p):
            raise ValueError("failure probabilities must lie in [0, 1]")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.semantics not in SEMANTICS:
            raise ValueError(f"semantics must be one of {SEMANTICS}")

    @classmethod
    def from_scenarios(cls, scen: ScenarioSet, **kw) -> "SimConfig":
        """Failure probability of each UV is one minus its marginal availability."""
        return cls(tuple(1.0 - availability_scale(scen)), **kw)


@dataclass
class SimReport:
    provenance: str
    semantics: str
    values: np.ndarray  # realised total incentive per replication
    per_uv: np.ndarray  # mean realised incentive per UV

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def std(self) -> float:
        return float(self.values.std(ddof=1)) if self.values.size > 1 else 0.0

    @property
    def stderr(self) -> float:
        return self.std / math.sqrt(self.values.size)

    def to_dict(self, include_values: bool = True) -> dict:
        out = {"provenance": self.provenance, "semantics": self.semantics,
               "replications": int(self.values.size), "mean": self.mean, "std": self.std,
               "stderr": self.stderr, "per_uv": self.per_uv.tolist()}
        if include_values:
            out["values"] = self.values.tolist()
        return out


def _route_gains(inst: Instance, plan: Plan) -> list[np.ndarray]:
    """Cumulative incentive along each UV's route: entry t is what t POI visits collect."""
    pois = set(inst.pois)
    gains = []
    for m in range(plan.num_uvs):
        route = extract_route(inst, plan.edges[m])
        seq = [inst.incentives[m, j] for j in route[1:] if j in pois]
        gains.append(np.concatenate([[0.0], np.cumsum(seq)]))
    return gains


def _thresholds(p: float, k: int) -> np.ndarray:
    """Cumulative failure probability just before POI visit 1..k."""
    if k == 0:
        return np.zeros(0)
    th = 1.0 - (1.0 - p) ** (np.arange(1, k + 1) / k)
    th[-1] = p
    return th


def _collected(cum: np.ndarray, p: float, u: np.ndarray, semantics: str) -> np.ndarray:
    k = cum.size - 1
    if semantics == START:
        return np.where(u < p, 0.0, cum[k])
    return cum[np.searchsorted(_thresholds(p, k), u, side="right")]


def analytic_expectation(inst: Instance, plan: Plan, cfg: SimConfig) -> np.ndarray:
    """Exact expected realised incentive per UV under ``cfg``'s semantics."""
    out = []
    for cum, p in zip(_route_gains(inst, plan), cfg.failure_prob):
        k = cum.size - 1
        if cfg.semantics == START:
            out.append((1.0 - p) * cum[k])
        else:
            # visit t is reached with probability (1-p)^(t/k)
            reach = (1.0 - p) ** (np.arange(1, k + 1) / max(k, 1))
            out.append(float(np.diff(cum) @ reach))
    return np.array(out, float)


def simulate_mission(inst: Instance, plan: Plan, cfg: SimConfig, provenance: str = "plan",
                     jobs: int = 1) -> SimReport:
    """Replay ``plan`` under random failures and collect realised incentives."""
    check_plan(inst, plan)
    if len(cfg.failure_prob) != plan.num_uvs:
        raise ValueError("one failure probability per UV is required")
    gains = _route_gains(inst, plan)
    n = cfg.replications
    nblocks = -(-n // BLOCK)
    streams = np.random.SeedSequence(cfg.seed).spawn(nblocks)

    def run(b):
        size = min(BLOCK, n - b * BLOCK)
        u = np.random.Generator(np.random.PCG64(streams[b])).random((size, plan.num_uvs))
        return np.column_stack([_collected(cum, p, u[:, m], cfg.semantics)
                                for m, (cum, p) in enumerate(zip(gains, cfg.failure_prob))])

    if jobs > 1 and nblocks > 1:
        with ThreadPoolExecutor(jobs) as pool:
            parts = list(pool.map(run, range(nblocks)))
    else:
        parts = [run(b) for b in range(nblocks)]
    realised = np.vstack(parts)
    return SimReport(provenance, cfg.semantics, realised.sum(axis=1), realised.mean(axis=0))


class VssError(RuntimeError):
    """A solver returned no plan; ``partial`` holds whatever was computed."""

    def __init__(self, message: str, partial: dict):
        super().__init__(message)
        self.partial = partial


@dataclass
class VssReport:
    label: str
    stochastic_value: float
    deterministic_value: float
    stochastic: SolveOutcome
    deterministic: SolveOutcome
    sim_stochastic: SimReport | None = None
    sim_deterministic: SimReport | None = None
    extra: dict = field(default_factory=dict)

    @property
    def vss(self) -> float:
        return self.stochastic_value - self.deterministic_value

    @property
    def vss_percent(self) -> float:
        # relative to the stochastic plan's value, i.e. the share of the stochastic value that is lost
        if abs(self.stochastic_value) < 1e-12:
            return 0.0
        return 100.0 * self.vss / abs(self.stochastic_value)

    @property
    def simulated_vss(self) -> float:
        if self.sim_stochastic is None or self.sim_deterministic is None:
            return math.nan
        return self.sim_stochastic.mean - self.sim_deterministic.mean

    def to_dict(self) -> dict:
        out = {"label": self.label, "stochastic_value": self.stochastic_value,
               "deterministic_value": self.deterministic_value, "vss": self.vss,
               "vss_percent": self.vss_percent, "stochastic_solve": self.stochastic.summary(),
               "deterministic_solve": self.deterministic.summary(), **self.extra}
        if self.sim_stochastic is not None:
            out["sim_stochastic"] = self.sim_stochastic.to_dict(include_values=False)
            out["sim_deterministic"] = self.sim_deterministic.to_dict(include_values=False)
            out["simulated_vss"] = self.simulated_vss
        return out


def compute_vss(inst: Instance, scen: ScenarioSet, cfg: SimConfig | None = None, *, mode: str = "lshaped",
                eps: float = 1e-4, time_limit: float = 3600.0, engine: str = "highs", jobs: int = 1,
                deterministic: SolveOutcome | None = None, label: str = "",
                simulate: bool = True) -> VssReport:
    """Compare the stochastic plan with the plan that ignores availability.

    Both plans are scored by their exact expected objective on ``scen`` and,
    when ``simulate`` is set, by paired simulation with the same seed.
    ``cfg`` defaults to start-of-mission failures matching ``scen``'s marginals.
    """
    sto = solve(inst, scen, mode, eps=eps, time_limit=time_limit, engine=engine, jobs=jobs)
    det = deterministic or solve_deterministic(inst, time_limit=time_limit, engine=engine)
    if sto.plan is None or det.plan is None:
        partial = {"label": label, "stochastic_solve": sto.summary(), "deterministic_solve": det.summary()}
        raise VssError("solver returned no plan", partial)
    report = VssReport(label, expected_objective(inst, sto.plan, scen),
                       expected_objective(inst, det.plan, scen), sto, det)
    if simulate:
        cfg = cfg or SimConfig.from_scenarios(scen, semantics=START)
        report.sim_stochastic = simulate_mission(inst, sto.plan, cfg, "stochastic", jobs)
        report.sim_deterministic = simulate_mission(inst, det.plan, cfg, "deterministic", jobs)
    return report


def vss_sweep(inst: Instance, levels=SWEEP_LEVELS, *, replications: int = 1000, seed: int = 0,
              semantics: str = START, **kw) -> list[VssReport]:
    """VSS with UV1 always available and the last UV at each availability percentage.

    The deterministic plan does not depend on availability, so it is solved once.
    """
    det = solve_deterministic(inst, time_limit=kw.get("time_limit", 3600.0), engine=kw.get("engine", "highs"))
    reports = []
    for k, pct in enumerate(levels, start=1):
        pcts = [100.0] * (inst.num_uvs - 1) + [float(pct)]
        scen = build_scenarios(pcts)
        cfg = SimConfig.from_scenarios(scen, replications=replications, seed=seed, semantics=semantics)
        reports.append(compute_vss(inst, scen, cfg, deterministic=det, label=f"S{k}", **kw))
    return reports


def format_sweep_table(reports: list[VssReport]) -> str:
    """Plain-text table with one column per scenario family, TS against D."""
    rows = [("", [r.label for r in reports])]

    def add(name, values, fmt="{:.2f}"):
        rows.append((name, [fmt.format(v) for v in values]))

    add("TS expected", [r.stochastic_value for r in reports])
    add("D expected", [r.deterministic_value for r in reports])
    if all(r.sim_stochastic is not None for r in reports):
        add("TS simulated", [r.sim_stochastic.mean for r in reports])
        add("D simulated", [r.sim_deterministic.mean for r in reports])
        for m in range(len(reports[0].sim_stochastic.per_uv)):
            add(f"TS UV{m + 1}", [r.sim_stochastic.per_uv[m] for r in reports])
            add(f"D UV{m + 1}", [r.sim_deterministic.per_uv[m] for r in reports])
    add("VSS", [r.vss for r in reports])
    add("VSS %", [r.vss_percent for r in reports], "{:.1f}")
    width = max(len(name) for name, _ in rows)
    col = max(10, *(len(c) for _, cells in rows for c in cells))
    return "\n".join(name.ljust(width) + "".join(c.rjust(col + 2) for c in cells) for name, cells in rows)
