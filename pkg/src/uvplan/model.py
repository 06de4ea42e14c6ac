"""Domain types for fuel-constrained multi-UV mission planning.

Nodes are integer indices into ``Instance.names``.  ``stations[0]`` is the
base station r0, where every UV starts and ends and where refuelling is not
possible; the remaining stations refuel a UV to full capacity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

TOL = 1e-6

Edge = tuple[int, int]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Instance:
    names: tuple[str, ...]
    stations: tuple[int, ...]
    pois: tuple[int, ...]
    fuel_cost: np.ndarray
    incentives: np.ndarray  # (num_uvs, num_nodes); zero on stations
    fuel_capacity: np.ndarray
    distance_budget: np.ndarray  # np.inf when unbounded
    coords: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.names)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "stations", tuple(int(s) for s in self.stations))
        object.__setattr__(self, "pois", tuple(int(p) for p in self.pois))
        object.__setattr__(self, "fuel_cost", _frozen(self.fuel_cost))
        object.__setattr__(self, "incentives", _frozen(np.atleast_2d(self.incentives)))
        object.__setattr__(self, "fuel_capacity", _frozen(self.fuel_capacity).reshape(-1))
        object.__setattr__(self, "distance_budget", _frozen(self.distance_budget).reshape(-1))
        if self.coords is not None:
            object.__setattr__(self, "coords", _frozen(self.coords))
        if self.fuel_cost.shape != (n, n):
            raise ValueError("fuel_cost must be a square matrix over all nodes")
        if sorted(self.stations + self.pois) != list(range(n)):
            raise ValueError("stations and pois must partition the node set")
        if not self.stations:
            raise ValueError("at least the base station is required")
        M = self.fuel_capacity.shape[0]
        if self.incentives.shape != (M, n) or self.distance_budget.shape != (M,):
            raise ValueError("per-UV arrays disagree on the number of UVs")
        if np.any(self.incentives[:, list(self.stations)] != 0):
            raise ValueError("stations carry no incentive")

    @classmethod
    def from_points(cls, station_xy, poi_xy, incentives, fuel_capacity, distance_budget=None,
                    station_names=None, poi_names=None) -> "Instance":
        """Euclidean instance; ``incentives`` is (num_uvs, num_pois)."""
        station_xy = np.asarray(station_xy, float).reshape(-1, 2)
        poi_xy = np.asarray(poi_xy, float).reshape(-1, 2)
        coords = np.vstack([station_xy, poi_xy])
        k, p = len(station_xy), len(poi_xy)
        names = list(station_names or [f"r{i}" for i in range(k)])
        names += list(poi_names or [f"p{j + 1}" for j in range(p)])
        diff = coords[:, None, :] - coords[None, :, :]
        f = np.sqrt((diff ** 2).sum(-1))
        inc = np.atleast_2d(np.asarray(incentives, float))
        full = np.zeros((inc.shape[0], k + p))
        full[:, k:] = inc
        cap = np.asarray(fuel_capacity, float).reshape(-1)
        budget = np.full(cap.shape, np.inf) if distance_budget is None else distance_budget
        return cls(tuple(names), tuple(range(k)), tuple(range(k, k + p)), f, full, cap,
                   np.asarray(budget, float).reshape(-1), coords)

    @property
    def base(self) -> int:
        return self.stations[0]

    @property
    def refuel_stations(self) -> tuple[int, ...]:
        return self.stations[1:]

    @property
    def num_uvs(self) -> int:
        return self.fuel_capacity.shape[0]

    @property
    def num_nodes(self) -> int:
        return len(self.names)

    @property
    def q(self) -> int:
        return len(self.pois)

    @property
    def edges(self) -> list[Edge]:
        n = self.num_nodes
        return [(i, j) for i in range(n) for j in range(n) if i != j]

    def is_station(self, node: int) -> bool:
        return node in self._station_set

    @property
    def _station_set(self) -> frozenset[int]:
        return frozenset(self.stations)

    def node_id(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """Finite availability distribution: ``alphas[s, m]`` in {0,1} with probability ``probs[s]``."""

    alphas: np.ndarray
    probs: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        alphas = np.atleast_2d(np.asarray(self.alphas))
        probs = np.asarray(self.probs, float).reshape(-1)
        if alphas.shape[0] == 0 or alphas.shape[0] != probs.shape[0]:
            raise ValueError("need at least one scenario and one probability per scenario")
        if not np.all((alphas == 0) | (alphas == 1)):
            raise ValueError("availability values must be exactly 0 or 1")
        if np.any(probs < 0) or np.any(probs > 1) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities must lie in [0,1] and sum to 1 (sum={probs.sum()!r})")
        object.__setattr__(self, "alphas", _frozen(alphas, dtype=int))
        object.__setattr__(self, "probs", _frozen(probs))
        labels = tuple(self.labels) or tuple(f"s{k}" for k in range(len(probs)))
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.probs.shape[0]

    def __iter__(self):
        return iter(zip(self.alphas, self.probs))

    @property
    def num_uvs(self) -> int:
        return self.alphas.shape[1]

    @classmethod
    def deterministic(cls, num_uvs: int) -> "ScenarioSet":
        return cls(np.ones((1, num_uvs), dtype=int), [1.0])


@dataclass(frozen=True, eq=False)
class Plan:
    """First-stage decision: selected edges, cumulative fuel and used stations per UV."""

    edges: tuple[frozenset[Edge], ...]
    cumulative_fuel: tuple[Mapping[Edge, float], ...]
    station_use: tuple[frozenset[int], ...]
    objective_bounds: tuple[float, float] = (-np.inf, np.inf)

    @property
    def num_uvs(self) -> int:
        return len(self.edges)

    def y(self, m: int, i: int, j: int) -> int:
        return int((i, j) in self.edges[m])

    def x(self, m: int, i: int, j: int) -> float:
        return float(self.cumulative_fuel[m].get((i, j), 0.0))

    def z(self, m: int, r: int) -> int:
        return int(r in self.station_use[m])

    @classmethod
    def from_edges(cls, inst: Instance, edges: Sequence[Iterable[Edge]],
                   objective_bounds=(-np.inf, np.inf)) -> "Plan":
        """Build a plan from selected edges, deriving fuel values and station use."""
        edge_sets = tuple(frozenset((int(i), int(j)) for i, j in e) for e in edges)
        fuel = tuple(_replay_fuel(inst, es) for es in edge_sets)
        used = tuple(frozenset(i for i, _ in es if i in inst.refuel_stations) for es in edge_sets)
        return cls(edge_sets, fuel, used, tuple(objective_bounds))


@dataclass
class RecourseValue:
    """Second-stage solution for one scenario: value, cancellation variables and duals."""

    value: float
    v: np.ndarray  # indexed like the recourse LP columns (uv-major, then edge)
    duals: tuple[np.ndarray, np.ndarray, np.ndarray]  # rows: fuel balance, v<=y, station reset
    alpha: np.ndarray | None = None


class PlanInfeasible(ValueError):
    def __init__(self, constraint: str, detail: str):
        super().__init__(f"{constraint}: {detail}")
        self.constraint = constraint
        self.detail = detail


@dataclass
class ValidationReport:
    triangle_violations: list[tuple[int, int, int]] = field(default_factory=list)
    nonpositive_costs: list[Edge] = field(default_factory=list)
    negative_incentives: list[tuple[int, int]] = field(default_factory=list)
    nonpositive_capacity: list[int] = field(default_factory=list)
    nonpositive_budget: list[int] = field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return not (self.triangle_violations or self.nonpositive_costs or self.negative_incentives
                    or self.nonpositive_capacity or self.nonpositive_budget)

    def issues(self) -> list[str]:
        out = [f"triangle inequality violated on {t}" for t in self.triangle_violations]
        out += [f"edge {e} has nonpositive cost" for e in self.nonpositive_costs]
        out += [f"UV {m} has negative incentive at node {j}" for m, j in self.negative_incentives]
        out += [f"UV {m} has nonpositive fuel capacity" for m in self.nonpositive_capacity]
        out += [f"UV {m} has nonpositive distance budget" for m in self.nonpositive_budget]
        return out


def validate_instance(inst: Instance, tol: float = TOL, max_triples: int = 1000) -> ValidationReport:
    f = inst.fuel_cost
    n = inst.num_nodes
    rep = ValidationReport()
    off = ~np.eye(n, dtype=bool)
    bad = np.argwhere(off & ~(f > 0))
    rep.nonpositive_costs = [(int(i), int(j)) for i, j in bad]
    # f[i,j] + f[j,k] >= f[i,k] over distinct triples
    lhs = f[:, :, None] + f[None, :, :]
    viol = lhs < f[:, None, :] - tol
    idx = np.arange(n)
    viol[idx, idx, :] = False
    viol[:, idx, idx] = False
    viol[idx, :, idx] = False
    rep.triangle_violations = [tuple(int(v) for v in t) for t in np.argwhere(viol)[:max_triples]]
    rep.negative_incentives = [(int(m), int(j)) for m, j in np.argwhere(inst.incentives < 0)]
    rep.nonpositive_capacity = [int(m) for m in np.nonzero(~(inst.fuel_capacity > 0))[0]]
    rep.nonpositive_budget = [int(m) for m in np.nonzero(~(inst.distance_budget > 0))[0]]
    return rep


def _replay_fuel(inst: Instance, edges: frozenset[Edge]) -> dict[Edge, float]:
    """Fuel used since the last refuel on arrival over each selected edge."""
    succ: dict[int, list[int]] = {}
    for i, j in edges:
        succ.setdefault(i, []).append(j)
    f = inst.fuel_cost
    fuel: dict[Edge, float] = {}
    for r in inst.stations:
        for j in succ.get(r, []):
            acc = float(f[r, j])
            fuel[(r, j)] = acc
            node, seen = j, set()
            while not inst.is_station(node) and node not in seen:
                seen.add(node)
                nxt = succ.get(node, [])
                if len(nxt) != 1:
                    break
                acc += float(f[node, nxt[0]])
                fuel[(node, nxt[0])] = acc
                node = nxt[0]
    return fuel


def check_plan(inst: Instance, plan: Plan, tol: float = TOL) -> None:
    """Raise :class:`PlanInfeasible` naming the first violated constraint."""
    M = inst.num_uvs
    if plan.num_uvs != M:
        raise PlanInfeasible("shape", f"plan has {plan.num_uvs} UVs, instance {M}")
    n = inst.num_nodes
    r0 = inst.base
    entered = np.zeros(n, dtype=int)
    left = np.zeros(n, dtype=int)
    for m in range(M):
        E = plan.edges[m]
        indeg = np.zeros(n, dtype=int)
        outdeg = np.zeros(n, dtype=int)
        for i, j in E:
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise PlanInfeasible("edges", f"UV {m} uses invalid edge {(i, j)}")
            outdeg[i] += 1
            indeg[j] += 1
        if np.any((indeg != outdeg)[np.arange(n) != r0]):
            node = int(np.nonzero(indeg != outdeg)[0][0])
            raise PlanInfeasible("flow balance", f"UV {m} unbalanced at node {inst.names[node]}")
        if E and (outdeg[r0] != 1 or indeg[r0] != 1):
            raise PlanInfeasible("depot", f"UV {m} must leave and return to the base exactly once")
        entered += indeg
        left += outdeg
        # connectivity from r0
        succ: dict[int, list[int]] = {}
        for i, j in E:
            succ.setdefault(i, []).append(j)
        seen, stack = {r0}, [r0]
        while stack:
            u = stack.pop()
            for w in succ.get(u, []):
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        stray = {i for i, _ in E} - seen
        if stray:
            raise PlanInfeasible("connectivity", f"UV {m} has a sub-tour through "
                                 f"{sorted(inst.names[s] for s in stray)} disconnected from the base")
        for r in {i for i, _ in E if i in inst.refuel_stations}:
            if r not in plan.station_use[m]:
                raise PlanInfeasible("station use", f"UV {m} leaves station {inst.names[r]} without z=1")
        replay = _replay_fuel(inst, E)
        F = float(inst.fuel_capacity[m])
        for e in E:
            fuel = replay.get(e)
            if fuel is None:
                raise PlanInfeasible("fuel", f"UV {m} edge {e} not reachable from a station")
            if fuel > F + tol:
                raise PlanInfeasible("fuel capacity", f"UV {m} arrives at {inst.names[e[1]]} "
                                     f"with {fuel:.6g} > {F:.6g} used since refuelling")
            xv = plan.cumulative_fuel[m].get(e)
            if xv is not None and abs(xv - fuel) > tol * max(1.0, fuel):
                raise PlanInfeasible("cumulative fuel", f"UV {m} edge {e}: x={xv:.6g}, replay {fuel:.6g}")
        for e, xv in plan.cumulative_fuel[m].items():
            if e not in E and abs(xv) > tol:
                raise PlanInfeasible("cumulative fuel", f"UV {m} has fuel on unused edge {e}")
        dist = route_length(inst, E)
        if dist > inst.distance_budget[m] + tol:
            raise PlanInfeasible("distance budget", f"UV {m} travels {dist:.6g} > {inst.distance_budget[m]:.6g}")
    pois = list(inst.pois)
    if np.any(entered[pois] > 1) or np.any(left[pois] > 1):
        j = pois[int(np.argmax(np.maximum(entered[pois], left[pois])))]
        raise PlanInfeasible("single visit", f"POI {inst.names[j]} visited more than once")


def route_length(inst: Instance, edges: Iterable[Edge]) -> float:
    f = inst.fuel_cost
    return float(sum(f[i, j] for i, j in edges))


def extract_route(inst: Instance, edges: Iterable[Edge]) -> list[int]:
    """Closed walk from r0 covering every selected edge once (Hierholzer, smallest successor first)."""
    succ: dict[int, list[int]] = {}
    for i, j in sorted(edges):
        succ.setdefault(i, []).append(j)
    for lst in succ.values():
        lst.reverse()  # pop() yields the smallest id
    r0 = inst.base
    if not succ:
        return [r0]
    stack, walk = [r0], []
    while stack:
        u = stack[-1]
        if succ.get(u):
            stack.append(succ[u].pop())
        else:
            walk.append(stack.pop())
    walk.reverse()
    return walk


def first_stage_incentive(inst: Instance, plan: Plan) -> np.ndarray:
    """Incentive each UV collects if it completes its route."""
    e = inst.incentives
    return np.array([sum(e[m, j] for _, j in plan.edges[m]) for m in range(plan.num_uvs)], float)


def evaluate_plan(inst: Instance, plan: Plan, alpha, check: bool = True) -> float:
    """Realised incentive under availability vector ``alpha``."""
    if check:
        check_plan(inst, plan)
    alpha = np.asarray(alpha, float).reshape(-1)
    return float(alpha @ first_stage_incentive(inst, plan))


def expected_objective(inst: Instance, plan: Plan, scen: ScenarioSet, check: bool = True) -> float:
    if check:
        check_plan(inst, plan)
    return float(sum(rho * evaluate_plan(inst, plan, a, check=False) for a, rho in scen))


def availability_scale(scen: ScenarioSet) -> np.ndarray:
    """Probability that each UV is available."""
    return scen.probs @ scen.alphas.astype(float)
