"""MILP models: the first-stage routing model, the deterministic equivalent, and
sub-tour elimination separation.

Column layout (see :class:`VariableIndex`): ``y`` for every (uv, edge), then
``x`` for every (uv, edge), then ``z`` for every (uv, refuelling station), then
any ``theta`` columns, then the scenario copies of ``v`` (uv, edge) used by
the deterministic equivalent.  Edges are all ordered node pairs without
self-loops, in row-major order.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .bnb import Cut, MipProblem
from .lp import EQ, GE, LE, LinearProgram
from .model import Edge, Instance, Plan, ScenarioSet, validate_instance

SEC = "sec"


class InvalidInstance(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VariableIndex:
    num_uvs: int
    edges: tuple[Edge, ...]
    refuel_stations: tuple[int, ...]
    num_theta: int = 0
    num_scenarios: int = 0

    def __post_init__(self):
        object.__setattr__(self, "_pos", {e: k for k, e in enumerate(self.edges)})
        object.__setattr__(self, "_rpos", {r: k for k, r in enumerate(self.refuel_stations)})

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def x_offset(self) -> int:
        return self.num_uvs * self.num_edges

    @property
    def z_offset(self) -> int:
        return 2 * self.num_uvs * self.num_edges

    @property
    def theta_offset(self) -> int:
        return self.z_offset + self.num_uvs * len(self.refuel_stations)

    @property
    def v_offset(self) -> int:
        return self.theta_offset + self.num_theta

    @property
    def size(self) -> int:
        return self.v_offset + self.num_scenarios * self.num_uvs * self.num_edges

    def edge_pos(self, i: int, j: int) -> int:
        return self._pos[(i, j)]

    def y(self, m: int, i: int, j: int) -> int:
        return m * self.num_edges + self._pos[(i, j)]

    def x(self, m: int, i: int, j: int) -> int:
        return self.x_offset + m * self.num_edges + self._pos[(i, j)]

    def z(self, m: int, r: int) -> int:
        return self.z_offset + m * len(self.refuel_stations) + self._rpos[r]

    def theta(self, k: int = 0) -> int:
        if not 0 <= k < self.num_theta:
            raise IndexError("no such theta column")
        return self.theta_offset + k

    def v(self, s: int, m: int, i: int, j: int) -> int:
        return self.v_offset + (s * self.num_uvs + m) * self.num_edges + self._pos[(i, j)]

    def y_block(self, m: int) -> slice:
        return slice(m * self.num_edges, (m + 1) * self.num_edges)

    def x_block(self, m: int) -> slice:
        start = self.x_offset + m * self.num_edges
        return slice(start, start + self.num_edges)

    def names(self, inst: Instance) -> list[str]:
        nm = inst.names
        out = []
        for kind in ("y", "x"):
            out += [f"{kind}[{m},{nm[i]},{nm[j]}]" for m in range(self.num_uvs) for i, j in self.edges]
        out += [f"z[{m},{nm[r]}]" for m in range(self.num_uvs) for r in self.refuel_stations]
        out += [f"theta[{k}]" for k in range(self.num_theta)]
        out += [f"v[{s},{m},{nm[i]},{nm[j]}]" for s in range(self.num_scenarios)
                for m in range(self.num_uvs) for i, j in self.edges]
        return out

    def describe(self, col: int) -> tuple:
        """Semantic key for a column, e.g. ``("y", m, i, j)``."""
        E = self.num_edges
        if col < self.x_offset:
            m, k = divmod(col, E)
            return ("y", m, *self.edges[k])
        if col < self.z_offset:
            m, k = divmod(col - self.x_offset, E)
            return ("x", m, *self.edges[k])
        if col < self.theta_offset:
            m, k = divmod(col - self.z_offset, len(self.refuel_stations))
            return ("z", m, self.refuel_stations[k])
        if col < self.v_offset:
            return ("theta", col - self.theta_offset)
        s, rest = divmod(col - self.v_offset, self.num_uvs * E)
        m, k = divmod(rest, E)
        return ("v", s, m, *self.edges[k])


@dataclass
class Model:
    problem: MipProblem
    index: VariableIndex
    families: Counter = field(default_factory=Counter)
    strengthen: bool = True
    per_uv_depot: bool = True


class _Rows:
    def __init__(self):
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.senses: list[str] = []
        self.rhs: list[float] = []
        self.families: Counter = Counter()

    def add(self, terms: Iterable[tuple[int, float]], sense: str, rhs: float, family: str) -> None:
        r = len(self.senses)
        for c, v in terms:
            if v != 0.0:
                self.rows.append(r)
                self.cols.append(c)
                self.vals.append(float(v))
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self.families[family] += 1

    def matrix(self, ncols: int) -> sp.csr_matrix:
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(len(self.senses), ncols))


def fuel_to_nearest_station(inst: Instance) -> tuple[np.ndarray, np.ndarray]:
    """``t[i] = min_r f(i, r)`` and ``s[i] = min_r f(r, i)`` over all stations, including r0."""
    f = inst.fuel_cost
    st = list(inst.stations)
    n = inst.num_nodes
    t = np.array([min(f[i, r] for r in st if r != i) if any(r != i for r in st) else 0.0 for i in range(n)])
    s = np.array([min(f[r, i] for r in st if r != i) if any(r != i for r in st) else 0.0 for i in range(n)])
    return t, s


def _first_stage_rows(inst: Instance, idx: VariableIndex, rows: _Rows, strengthen: bool,
                      per_uv_depot: bool) -> None:
    f = inst.fuel_cost
    V = range(inst.num_nodes)
    r0 = inst.base
    M = inst.num_uvs
    P = inst.pois
    R = inst.stations
    Rbar = inst.refuel_stations
    t, s = fuel_to_nearest_station(inst)

    for m in range(M):
        for j in V:
            if j == r0:
                continue
            terms = [(idx.y(m, j, i), 1.0) for i in V if i != j]
            terms += [(idx.y(m, i, j), -1.0) for i in V if i != j]
            rows.add(terms, EQ, 0.0, "flow_balance")
    if per_uv_depot:
        for m in range(M):
            rows.add([(idx.y(m, r0, i), 1.0) for i in V if i != r0], EQ, 1.0, "depot")
            rows.add([(idx.y(m, i, r0), 1.0) for i in V if i != r0], EQ, 1.0, "depot")
    else:
        rows.add([(idx.y(m, r0, i), 1.0) for m in range(M) for i in V if i != r0], EQ, M, "depot")
        rows.add([(idx.y(m, i, r0), 1.0) for m in range(M) for i in V if i != r0], EQ, M, "depot")
    for m in range(M):
        for r in Rbar:
            if strengthen:
                for i in V:
                    if i != r:
                        rows.add([(idx.y(m, r, i), 1.0), (idx.z(m, r), -1.0)], LE, 0.0, "station_link")
            else:
                terms = [(idx.y(m, r, i), 1.0) for i in V if i != r]
                rows.add(terms + [(idx.z(m, r), -float(inst.q))], LE, 0.0, "station_indicator")
    for j in P:
        rows.add([(idx.y(m, i, j), 1.0) for m in range(M) for i in V if i != j], LE, 1.0, "single_visit")
        rows.add([(idx.y(m, j, i), 1.0) for m in range(M) for i in V if i != j], LE, 1.0, "single_visit")
    for m in range(M):
        for i in P:
            terms = [(idx.x(m, i, j), 1.0) for j in V if j != i]
            terms += [(idx.x(m, j, i), -1.0) for j in V if j != i]
            terms += [(idx.y(m, i, j), -f[i, j]) for j in V if j != i]
            rows.add(terms, EQ, 0.0, "fuel_balance")
    for m in range(M):
        for r in R:
            for i in V:
                if i != r:
                    rows.add([(idx.x(m, r, i), 1.0), (idx.y(m, r, i), -f[r, i])], EQ, 0.0, "station_reset")
    for m in range(M):
        F = float(inst.fuel_capacity[m])
        for i, j in idx.edges:
            cap = F - t[j] if (strengthen and j in P) else F
            rows.add([(idx.x(m, i, j), 1.0), (idx.y(m, i, j), -cap)], LE, 0.0, "fuel_capacity")
        if strengthen:
            for i in P:
                for j in V:
                    if j != i:
                        rows.add([(idx.x(m, i, j), 1.0), (idx.y(m, i, j), -(s[i] + f[i, j]))], GE, 0.0,
                                 "fuel_lower")
    for m in range(M):
        if np.isfinite(inst.distance_budget[m]):
            rows.add([(idx.y(m, i, j), f[i, j]) for i, j in idx.edges], LE,
                     float(inst.distance_budget[m]), "distance_budget")


def _first_stage_columns(inst: Instance, idx: VariableIndex, strengthen: bool):
    n = idx.size
    c = np.zeros(n)
    lb = np.zeros(n)
    ub = np.zeros(n)
    integer = np.zeros(n, dtype=bool)
    e = inst.incentives
    for m in range(inst.num_uvs):
        F = float(inst.fuel_capacity[m])
        for i, j in idx.edges:
            c[idx.y(m, i, j)] = e[m, j]
            ub[idx.y(m, i, j)] = 1.0
            integer[idx.y(m, i, j)] = True
            ub[idx.x(m, i, j)] = F
        for r in inst.refuel_stations:
            ub[idx.z(m, r)] = 1.0
            integer[idx.z(m, r)] = not strengthen
    return c, lb, ub, integer


def _check_instance(inst: Instance) -> None:
    rep = validate_instance(inst)
    if not rep.is_empty:
        raise InvalidInstance("; ".join(rep.issues()[:5]))


def build_first_stage(inst: Instance, strengthen: bool = True, per_uv_depot: bool = True,
                      theta_weights: Sequence[float] = ()) -> Model:
    """First-stage routing model; sub-tour elimination is left to :func:`separate_sec`.

    ``theta_weights`` adds one recourse-approximation column per weight,
    bounded by ``-total incentive <= theta <= 0`` and entering the objective
    with that weight.
    """
    _check_instance(inst)
    idx = VariableIndex(inst.num_uvs, tuple(inst.edges), inst.refuel_stations, len(theta_weights))
    c, lb, ub, integer = _first_stage_columns(inst, idx, strengthen)
    floor = -float(inst.incentives.sum())
    for k, w in enumerate(theta_weights):
        c[idx.theta(k)] = w
        lb[idx.theta(k)] = floor
        ub[idx.theta(k)] = 0.0
    rows = _Rows()
    _first_stage_rows(inst, idx, rows, strengthen, per_uv_depot)
    lp = LinearProgram(c=c, A=rows.matrix(idx.size), senses=rows.senses, b=rows.rhs, lb=lb, ub=ub,
                       maximize=True)
    return Model(MipProblem(lp, integer), idx, rows.families, strengthen, per_uv_depot)


def second_stage_terms(inst: Instance, idx: VariableIndex, alpha, v_col, rows: _Rows) -> None:
    """Rows tying cancellation variables ``v`` to first-stage ``(x, y)`` for one scenario.

    ``v_col(m, i, j)`` gives the column of the cancellation variable.
    """
    f = inst.fuel_cost
    V = range(inst.num_nodes)
    for m in range(inst.num_uvs):
        a = float(alpha[m])
        for i in inst.pois:
            terms = [(v_col(m, i, j), f[i, j]) for j in V if j != i]
            terms += [(idx.x(m, i, j), -1.0) for j in V if j != i]
            terms += [(idx.x(m, j, i), 1.0) for j in V if j != i]
            terms += [(idx.y(m, i, j), a * f[i, j]) for j in V if j != i]
            rows.add(terms, EQ, 0.0, "recourse_balance")
    for m in range(inst.num_uvs):
        for i, j in idx.edges:
            rows.add([(v_col(m, i, j), 1.0), (idx.y(m, i, j), -1.0)], LE, 0.0, "recourse_link")
    for m in range(inst.num_uvs):
        a = float(alpha[m])
        for r in inst.stations:
            for i in V:
                if i != r:
                    rows.add([(v_col(m, r, i), f[r, i]), (idx.x(m, r, i), -1.0),
                              (idx.y(m, r, i), a * f[r, i])], EQ, 0.0, "recourse_reset")


def build_dep(inst: Instance, scen: ScenarioSet, second_stage: str = "binary", strengthen: bool = True,
              per_uv_depot: bool = True) -> Model:
    """Deterministic equivalent: first stage plus a cancellation block per scenario."""
    if second_stage not in ("binary", "relaxed"):
        raise ValueError("second_stage must be 'binary' or 'relaxed'")
    if scen.num_uvs != inst.num_uvs:
        raise ValueError("scenario set and instance disagree on the number of UVs")
    _check_instance(inst)
    idx = VariableIndex(inst.num_uvs, tuple(inst.edges), inst.refuel_stations, 0, len(scen))
    c, lb, ub, integer = _first_stage_columns(inst, idx, strengthen)
    rows = _Rows()
    _first_stage_rows(inst, idx, rows, strengthen, per_uv_depot)
    e = inst.incentives
    for s, (alpha, rho) in enumerate(scen):
        for m in range(inst.num_uvs):
            for i, j in idx.edges:
                col = idx.v(s, m, i, j)
                c[col] = -rho * e[m, j]
                ub[col] = 1.0
                integer[col] = second_stage == "binary"
        second_stage_terms(inst, idx, alpha, lambda m, i, j, s=s: idx.v(s, m, i, j), rows)
    lp = LinearProgram(c=c, A=rows.matrix(idx.size), senses=rows.senses, b=rows.rhs, lb=lb, ub=ub,
                       maximize=True)
    return Model(MipProblem(lp, integer), idx, rows.families, strengthen, per_uv_depot)


# --- sub-tour elimination ---------------------------------------------------------------


def strongly_connected_components(nodes: Iterable[int], succ: Mapping[int, Sequence[int]]) -> list[list[int]]:
    """Tarjan's algorithm, iterative; components come out in reverse topological order."""
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(succ.get(root, ())))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ.get(w, ()))))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                comps.append(sorted(comp))
    return comps


@dataclass(frozen=True)
class SecCut:
    """``y(out-edges of S)^m >= z^m_r`` for a station ``r`` inside ``S``."""

    uv: int
    nodes: frozenset[int]
    station: int

    def boundary(self, inst: Instance) -> list[Edge]:
        S = self.nodes
        return [(i, j) for i in sorted(S) for j in range(inst.num_nodes) if j not in S and j != i]

    def lhs(self, inst: Instance, y: Mapping[Edge, float]) -> float:
        return float(sum(y.get(e, 0.0) for e in self.boundary(inst)))

    def to_cut(self, inst: Instance, idx: VariableIndex) -> Cut:
        coefs = {idx.y(self.uv, i, j): 1.0 for i, j in self.boundary(inst)}
        coefs[idx.z(self.uv, self.station)] = -1.0
        return Cut.from_dict(coefs, GE, 0.0, kind=SEC)


def separate_sec(inst: Instance, uv: int, y: Mapping[Edge, float], z: Mapping[int, float],
                 tol: float = 1e-6) -> list[SecCut]:
    """Violated connectivity cuts for one UV at an integral candidate.

    A station ``r`` with ``z_r > 0`` whose selected-edge closure never reaches
    r0 yields the cut with ``S`` = that closure (which has no selected
    out-edges).  Components are found with Tarjan's algorithm on the support
    digraph.
    """
    for e, val in y.items():
        if min(abs(val), abs(val - 1.0)) > tol:
            raise ValueError(f"separation needs integral y; edge {e} has {val}")
    r0 = inst.base
    succ: dict[int, list[int]] = {}
    pred: dict[int, list[int]] = {}
    for (i, j), val in y.items():
        if val > 0.5:
            succ.setdefault(i, []).append(j)
            pred.setdefault(j, []).append(i)
    reaches_base = {r0}
    frontier = [r0]
    while frontier:
        u = frontier.pop()
        for w in pred.get(u, ()):
            if w not in reaches_base:
                reaches_base.add(w)
                frontier.append(w)
    comps = strongly_connected_components(range(inst.num_nodes), succ)
    cuts: list[SecCut] = []
    seen: set[tuple[frozenset, int]] = set()
    for comp in comps:
        if r0 in comp or comp[0] in reaches_base:
            continue
        stations = [r for r in comp if r in inst.refuel_stations and z.get(r, 0.0) > tol]
        if not stations:
            continue
        closure = set(comp)
        frontier = list(comp)
        while frontier:
            u = frontier.pop()
            for w in succ.get(u, ()):
                if w not in closure:
                    closure.add(w)
                    frontier.append(w)
        S = frozenset(closure)
        for r in stations:
            if (S, r) not in seen:
                seen.add((S, r))
                cuts.append(SecCut(uv, S, r))
    return cuts


def candidate_values(inst: Instance, idx: VariableIndex, x: np.ndarray, m: int):
    """``(y, z)`` dictionaries for UV ``m`` from a model solution vector."""
    yv = x[idx.y_block(m)]
    y = {e: float(yv[k]) for k, e in enumerate(idx.edges) if abs(yv[k]) > 1e-9}
    z = {r: float(x[idx.z(m, r)]) for r in inst.refuel_stations}
    return y, z


def sec_callback_cuts(inst: Instance, idx: VariableIndex, x: np.ndarray) -> list[Cut]:
    cuts = []
    for m in range(inst.num_uvs):
        y, z = candidate_values(inst, idx, x, m)
        cuts += [c.to_cut(inst, idx) for c in separate_sec(inst, m, y, z)]
    return cuts


def plan_from_solution(inst: Instance, idx: VariableIndex, x: np.ndarray,
                       objective_bounds=(-np.inf, np.inf)) -> Plan:
    edges = []
    for m in range(inst.num_uvs):
        yv = x[idx.y_block(m)]
        edges.append([e for k, e in enumerate(idx.edges) if yv[k] > 0.5])
    return Plan.from_edges(inst, edges, objective_bounds)


def plan_to_vector(inst: Instance, idx: VariableIndex, plan: Plan) -> np.ndarray:
    """Column vector (first-stage part) encoding ``plan``; other columns are zero."""
    x = np.zeros(idx.size)
    for m in range(inst.num_uvs):
        for e in plan.edges[m]:
            x[idx.y(m, *e)] = 1.0
            x[idx.x(m, *e)] = plan.cumulative_fuel[m].get(e, 0.0)
        for r in plan.station_use[m]:
            x[idx.z(m, r)] = 1.0
    return x
