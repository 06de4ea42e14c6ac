"""Random benchmark instances, availability scenarios and metric repair of cost matrices.

Randomness comes from numpy's PCG64 generator seeded with ``GenSpec.seed``
and is consumed in a fixed order: POI coordinates (x, y per POI), then one
incentive draw per POI for each UV in UV order, then the zero-incentive mask
for UV1.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np

from .model import Instance, ScenarioSet

DEFAULT_BASE = (50.0, 50.0)
DEFAULT_STATIONS = ((10.0, 10.0), (10.0, 90.0), (90.0, 10.0), (90.0, 90.0))
FUEL_MULTIPLIERS = (2.25, 2.5, 2.75, 3.0)


@dataclass(frozen=True)
class GenSpec:
    seed: int = 0
    n_pois: int = 10
    n_stations: int = 4
    grid: float = 100.0
    multiplier: float = 2.25
    num_uvs: int = 2
    incentive_ranges: tuple[tuple[float, float], ...] = ((0.0, 150.0), (0.0, 170.0))
    zero_fraction: float = 0.5
    budget_multiplier: float | None = 3.0
    integer_costs: bool = False
    base_xy: tuple[float, float] = DEFAULT_BASE
    station_xy: tuple[tuple[float, float], ...] = field(default=DEFAULT_STATIONS)

    def __post_init__(self):
        if self.n_pois < 1:
            raise ValueError("n_pois must be at least 1")
        if self.multiplier <= 0:
            raise ValueError("fuel multiplier must be positive")
        if self.num_uvs < 1 or len(self.incentive_ranges) != self.num_uvs:
            raise ValueError("one incentive range per UV is required")
        if any(lo < 0 or hi < lo for lo, hi in self.incentive_ranges):
            raise ValueError("incentive ranges must be nonnegative intervals")
        if not 0.0 <= self.zero_fraction <= 1.0:
            raise ValueError("zero_fraction must lie in [0, 1]")
        if self.n_stations > len(self.station_xy) or self.n_stations < 0:
            raise ValueError(f"at most {len(self.station_xy)} station locations are defined")
        if self.grid <= 0:
            raise ValueError("grid extent must be positive")


def generate_instance(spec: GenSpec) -> Instance:
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    poi_xy = rng.uniform(0.0, spec.grid, size=(spec.n_pois, 2))
    inc = np.array([rng.uniform(lo, hi, size=spec.n_pois) for lo, hi in spec.incentive_ranges])
    k = int(round(spec.zero_fraction * spec.n_pois))
    zeroed = rng.choice(spec.n_pois, size=k, replace=False)
    inc[0, zeroed] = 0.0

    station_xy = [spec.base_xy, *spec.station_xy[: spec.n_stations]]
    inst = Instance.from_points(station_xy, poi_xy, inc, np.ones(spec.num_uvs))
    f = np.array(inst.fuel_cost)
    if spec.integer_costs:
        # flooring can break the triangle inequality, so repair afterwards
        f = metric_closure(np.floor(f))
    lam = float(f.max())
    cap = np.full(spec.num_uvs, spec.multiplier * lam)
    budget = np.full(spec.num_uvs, np.inf if spec.budget_multiplier is None else spec.budget_multiplier * lam)
    return Instance(inst.names, inst.stations, inst.pois, f, inst.incentives, cap, budget, inst.coords)


def max_pairwise_distance(inst: Instance) -> float:
    return float(inst.fuel_cost.max())


def build_scenarios(availability_percent) -> ScenarioSet:
    """Independent Bernoulli availability per UV, given as percentages.

    UVs at 0% or 100% are deterministic; the others multiply out into
    ``2**k`` scenarios, listed with available-before-unavailable ordering.
    """
    pct = np.asarray(availability_percent, float).reshape(-1)
    if np.any(pct < 0) or np.any(pct > 100):
        raise ValueError("availability percentages must lie in [0, 100]")
    p = pct / 100.0
    uncertain = [m for m in range(len(p)) if 0.0 < p[m] < 1.0]
    alphas, probs, labels = [], [], []
    for combo in itertools.product((1, 0), repeat=len(uncertain)):
        alpha = (p >= 1.0).astype(int)
        prob = 1.0
        for m, a in zip(uncertain, combo):
            alpha[m] = a
            prob *= p[m] if a else 1.0 - p[m]
        alphas.append(alpha)
        probs.append(prob)
        labels.append("".join(str(a) for a in alpha))
    return ScenarioSet(np.array(alphas), np.array(probs), tuple(labels))


def metric_closure(raw) -> np.ndarray:
    """All-pairs shortest-path costs by Dijkstra from every node.

    The result satisfies the directed triangle inequality and never exceeds
    the input pointwise.  Infinite entries mean "no direct edge".
    """
    f = np.asarray(raw, dtype=float)
    n = f.shape[0]
    if f.shape != (n, n):
        raise ValueError("cost matrix must be square")
    if np.any(np.isnan(f)) or np.any(f < 0):
        raise ValueError("costs must be nonnegative")
    out = np.full((n, n), np.inf)
    for s in range(n):
        dist = out[s]
        dist[s] = 0.0
        heap = [(0.0, s)]
        done = np.zeros(n, dtype=bool)
        while heap:
            d, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            for v in range(n):
                if v == u or done[v]:
                    continue
                nd = d + f[u, v]
                if nd < dist[v]:
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
    np.fill_diagonal(out, 0.0)
    return out
