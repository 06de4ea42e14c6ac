"""Shared fixtures for the test suite."""
from __future__ import annotations

import numpy as np

from uvplan.model import Instance, Plan

from oracles import best_assignment, reachable_poi_sets


def tiny1(budget=None) -> Instance:
    return Instance.from_points([(0, 0), (60, 0)], [(30, 0), (30, 40), (90, 0)],
                                [[10, 20, 0], [12, 25, 30]], [100, 100], distance_budget=budget)


def small_instance(rng, n_pois=5, n_stations=2, cap_mult=1.5, budget_mult=None) -> Instance:
    """Random Euclidean instance with r0 and ``n_stations - 1`` refuelling stations."""
    station_xy = rng.uniform(0, 100, size=(n_stations, 2))
    poi_xy = rng.uniform(0, 100, size=(n_pois, 2))
    inc = rng.uniform(0, 100, size=(2, n_pois)).round(1)
    inst = Instance.from_points(station_xy, poi_xy, inc, [1.0, 1.0])
    lam = float(inst.fuel_cost.max())
    budget = None if budget_mult is None else [budget_mult * lam] * 2
    return Instance.from_points(station_xy, poi_xy, inc, [cap_mult * lam] * 2, distance_budget=budget)


def random_feasible_plan(inst: Instance, rng, stop=0.25) -> Plan:
    """Random closed walks from r0 that respect fuel, budget and single POI visits."""
    f = inst.fuel_cost
    r0 = inst.base
    free = set(inst.pois)
    edges = []
    for m in range(inst.num_uvs):
        F = inst.fuel_capacity[m]
        budget = inst.distance_budget[m]
        node, fuel, dist, used = r0, 0.0, 0.0, []
        while True:
            opts = []
            for j in list(free) + list(inst.refuel_stations):
                if j == node or (node, j) in used:
                    continue
                back = 0.0 if inst.is_station(j) else f[j, r0]
                fuel_back = 0.0 if inst.is_station(j) else fuel + f[node, j] + f[j, r0]
                if fuel_back > F - 1e-9 or fuel + f[node, j] > F - 1e-9:
                    continue
                if dist + f[node, j] + f[j, r0] > budget - 1e-9:
                    continue
                if inst.is_station(j) and f[j, r0] > F:
                    continue
                opts.append(j)
            done = node != r0 and rng.random() < stop
            if not opts or done:
                if node == r0:
                    break
                used.append((node, r0))
                break
            j = int(rng.choice(opts))
            used.append((node, j))
            dist += f[node, j]
            fuel = 0.0 if inst.is_station(j) else fuel + f[node, j]
            if not inst.is_station(j):
                free.discard(j)
            node = j
        edges.append(used)
    return Plan.from_edges(inst, edges)


def enumerated_optimum(inst: Instance, scale=None):
    """Best availability-scaled incentive over all route combinations (route-enumeration oracle)."""
    scale = np.ones(inst.num_uvs) if scale is None else np.asarray(scale, float)
    sets = []
    for m in range(inst.num_uvs):
        found = reachable_poi_sets(inst.fuel_cost, inst.stations, inst.pois, inst.base,
                                   inst.fuel_capacity[m], inst.distance_budget[m])
        sets.append(list(found))
    weights = [lambda S, m=m: scale[m] * float(sum(inst.incentives[m, j] for j in S))
               for m in range(inst.num_uvs)]
    return best_assignment(sets, weights)
