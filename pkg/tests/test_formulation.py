import numpy as np
import pytest

from uvplan.bnb import solve_mip
from uvplan.formulation import (InvalidInstance, SecCut, VariableIndex, build_dep, build_first_stage,
                                fuel_to_nearest_station, plan_from_solution, sec_callback_cuts, separate_sec,
                                strongly_connected_components)
from uvplan.generate import build_scenarios
from uvplan.lp import solve_lp
from uvplan.model import Instance, check_plan

from helpers import enumerated_optimum, small_instance, tiny1
from oracles import violated_connectivity_sets


def expected_rows(inst, strengthen, scenarios=0):
    """Independent tally of rows per family."""
    V, P, R = inst.num_nodes, len(inst.pois), len(inst.stations)
    Rbar, M, E = R - 1, inst.num_uvs, V * (V - 1)
    rows = {
        "flow_balance": M * (V - 1),
        "depot": 2 * M,
        "single_visit": 2 * P,
        "fuel_balance": P * M,
        "station_reset": R * (V - 1) * M,
        "fuel_capacity": E * M,
    }
    if strengthen:
        rows["station_link"] = Rbar * (V - 1) * M
        rows["fuel_lower"] = P * (V - 1) * M
    else:
        rows["station_indicator"] = Rbar * M
    budgets = int(np.isfinite(inst.distance_budget).sum())
    if budgets:
        rows["distance_budget"] = budgets
    if scenarios:
        rows["recourse_balance"] = scenarios * P * M
        rows["recourse_link"] = scenarios * E * M
        rows["recourse_reset"] = scenarios * R * (V - 1) * M
    return rows


@pytest.mark.parametrize("strengthen", [False, True])
def test_row_tally(strengthen):
    inst = tiny1(budget=[500, 500])
    model = build_first_stage(inst, strengthen)
    assert dict(model.families) == expected_rows(inst, strengthen)
    assert model.problem.lp.num_rows == sum(expected_rows(inst, strengthen).values())
    dep = build_dep(inst, build_scenarios([100, 50]), strengthen=strengthen)
    assert dict(dep.families) == expected_rows(inst, strengthen, scenarios=2)


def test_strengthened_model_has_no_binary_z():
    inst = tiny1()
    strong = build_first_stage(inst, True)
    weak = build_first_stage(inst, False)
    idx = strong.index
    zcols = [idx.z(m, r) for m in range(2) for r in inst.refuel_stations]
    assert not strong.problem.integer[zcols].any()
    assert weak.problem.integer[zcols].all()


def test_variable_index_is_a_bijection():
    inst = tiny1()
    idx = VariableIndex(2, tuple(inst.edges), inst.refuel_stations, 1, 2)
    seen = set()
    for m in range(2):
        for i, j in inst.edges:
            seen |= {idx.y(m, i, j), idx.x(m, i, j), idx.v(0, m, i, j), idx.v(1, m, i, j)}
        for r in inst.refuel_stations:
            seen.add(idx.z(m, r))
    seen.add(idx.theta())
    assert seen == set(range(idx.size))
    assert idx.describe(idx.y(1, 2, 3)) == ("y", 1, 2, 3)
    assert len(idx.names(inst)) == idx.size


def test_invalid_instance_rejected():
    inst = tiny1()
    f = np.array(inst.fuel_cost)
    f[0, 4] = 500.0
    bad = Instance(inst.names, inst.stations, inst.pois, f, inst.incentives, inst.fuel_capacity,
                   inst.distance_budget)
    with pytest.raises(InvalidInstance):
        build_first_stage(bad)


def _solve(inst, model):
    res = solve_mip(model.problem, lambda x: sec_callback_cuts(inst, model.index, x))
    return res, plan_from_solution(inst, model.index, res.x)


@pytest.mark.parametrize("strengthen", [True, False])
def test_tiny1_matches_route_enumeration(strengthen):
    inst = tiny1()
    res, plan = _solve(inst, build_first_stage(inst, strengthen))
    check_plan(inst, plan)
    assert res.objective == pytest.approx(enumerated_optimum(inst)[0])


def test_prop2_lower_bound_and_station_reset_hold_at_optimum():
    inst = tiny1()
    model = build_first_stage(inst, True)
    res, _ = _solve(inst, model)
    t, s = fuel_to_nearest_station(inst)
    idx, f, x = model.index, inst.fuel_cost, res.x
    for m in range(2):
        for i, j in inst.edges:
            y, xv = x[idx.y(m, i, j)], x[idx.x(m, i, j)]
            if i in inst.pois:
                assert xv >= (s[i] + f[i, j]) * y - 1e-6
            else:
                assert xv == pytest.approx(f[i, j] * y, abs=1e-6)


def test_dep_single_available_scenario_equals_deterministic():
    inst = tiny1()
    dep = build_dep(inst, build_scenarios([100, 100]))
    res = solve_mip(dep.problem, lambda x: sec_callback_cuts(inst, dep.index, x))
    assert res.objective == pytest.approx(67.0)
    v = res.x[dep.index.v_offset:]
    assert np.allclose(v, 0.0)


@pytest.mark.parametrize("second_stage", ["binary", "relaxed"])
def test_dep_tiny1_half_availability(second_stage):
    inst = tiny1()
    dep = build_dep(inst, build_scenarios([100, 50]), second_stage)
    res = solve_mip(dep.problem, lambda x: sec_callback_cuts(inst, dep.index, x))
    assert res.objective == pytest.approx(enumerated_optimum(inst, [1.0, 0.5])[0])
    assert res.objective == pytest.approx(45.0)


def test_scc_on_small_graph():
    comps = strongly_connected_components(range(5), {0: [1], 1: [2], 2: [0], 3: [4]})
    assert sorted(sorted(c) for c in comps) == [[0, 1, 2], [3], [4]]


def test_textbook_disconnected_subtour():
    inst = tiny1()
    # r0 -> p1 -> r0 and a separate cycle r1 -> p2 -> r1
    y = {(0, 2): 1.0, (2, 0): 1.0, (1, 3): 1.0, (3, 1): 1.0}
    cuts = separate_sec(inst, 0, y, {1: 1.0})
    assert cuts == [SecCut(0, frozenset({1, 3}), 1)]
    assert cuts[0].lhs(inst, y) == 0.0


def test_connected_tour_has_no_cut():
    inst = tiny1()
    y = {(0, 3): 1.0, (3, 1): 1.0, (1, 4): 1.0, (4, 1): 1.0, (1, 2): 1.0, (2, 0): 1.0}
    assert separate_sec(inst, 1, y, {1: 1.0}) == []


def test_fractional_candidate_rejected():
    with pytest.raises(ValueError):
        separate_sec(tiny1(), 0, {(0, 2): 0.5}, {})


@pytest.mark.parametrize("seed", range(10))
def test_separation_matches_subset_enumeration(seed):
    rng = np.random.default_rng(seed)
    inst = small_instance(rng, n_pois=5, n_stations=3)
    n = inst.num_nodes
    for _ in range(5):
        edges = [e for e in inst.edges if rng.random() < 0.2]
        z = {r: float(rng.integers(0, 2)) for r in inst.refuel_stations}
        y = {e: 1.0 for e in edges}
        cuts = separate_sec(inst, 0, y, z)
        brute = violated_connectivity_sets(n, inst.base, set(inst.refuel_stations), edges, z)
        assert bool(cuts) == bool(brute)
        for c in cuts:
            assert (c.nodes, c.station) in set(brute)
            assert inst.base not in c.nodes


@pytest.mark.parametrize("seed", range(4))
def test_strengthening_dominates_and_preserves_optimum(seed):
    rng = np.random.default_rng(seed)
    inst = small_instance(rng, n_pois=4, n_stations=2, cap_mult=1.2)
    strong, weak = build_first_stage(inst, True), build_first_stage(inst, False)
    lp_s = solve_lp(strong.problem.lp, engine="highs").objective
    lp_w = solve_lp(weak.problem.lp, engine="highs").objective
    assert lp_s <= lp_w + 1e-6
    rs, ps = _solve(inst, strong)
    rw, pw = _solve(inst, weak)
    check_plan(inst, ps)
    check_plan(inst, pw)
    assert rs.objective == pytest.approx(rw.objective, abs=1e-6)
    assert rs.objective == pytest.approx(enumerated_optimum(inst)[0], abs=1e-6)
