import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uvplan.generate import build_scenarios
from uvplan.model import Plan, PlanInfeasible, expected_objective, extract_route, first_stage_incentive
from uvplan.simulate import (PER_LEG, START, SimConfig, analytic_expectation, compute_vss, format_sweep_table,
                             simulate_mission, vss_sweep)

from helpers import enumerated_optimum, random_feasible_plan, small_instance, tiny1


def tiny1_plan():
    # UV1 r0 -> p1 -> r0, UV2 r0 -> p2 -> r1 -> p3 -> r1 -> r0
    return Plan.from_edges(tiny1(), [[(0, 2), (2, 0)], [(0, 3), (3, 1), (1, 4), (4, 1), (1, 0)]])


def per_leg_by_bernoulli(inst, plan, p, reps, rng):
    """Independent per-leg simulation with an explicit coin flip before every POI."""
    total = 0.0
    for m in range(plan.num_uvs):
        seq = [inst.incentives[m, j] for j in extract_route(inst, plan.edges[m]) if j in inst.pois]
        if not seq:
            continue
        hazard = 1.0 - (1.0 - p[m]) ** (1.0 / len(seq))
        for _ in range(reps):
            for e in seq:
                if rng.random() < hazard:
                    break
                total += e
    return total / reps


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig((0.5, 1.5))
    with pytest.raises(ValueError):
        SimConfig((0.5,), replications=0)
    with pytest.raises(ValueError):
        SimConfig((0.5,), semantics="sometimes")
    cfg = SimConfig.from_scenarios(build_scenarios([100, 25]))
    assert cfg.failure_prob == pytest.approx((0.0, 0.75))


@pytest.mark.parametrize("semantics", [START, PER_LEG])
def test_no_failures_collects_everything(semantics):
    inst, plan = tiny1(), tiny1_plan()
    rep = simulate_mission(inst, plan, SimConfig((0, 0), 200, 1, semantics))
    assert np.all(rep.values == first_stage_incentive(inst, plan).sum())
    assert rep.std == 0.0


def test_certain_failure_at_start_zeroes_the_uv():
    inst, plan = tiny1(), tiny1_plan()
    rep = simulate_mission(inst, plan, SimConfig((0, 1), 200, 1, START))
    assert rep.per_uv[1] == 0.0
    assert np.all(rep.values == 10.0)


def test_certain_failure_per_leg_collects_nothing():
    inst, plan = tiny1(), tiny1_plan()
    rep = simulate_mission(inst, plan, SimConfig((1, 1), 50, 1, PER_LEG))
    assert np.all(rep.values == 0.0)


def test_partial_credit_values_are_route_prefixes():
    inst, plan = tiny1(), tiny1_plan()
    rep = simulate_mission(inst, plan, SimConfig((0, 0.5), 2000, 3, PER_LEG))
    # UV1 always gets 10; UV2 stops before p2, before p3, or finishes
    assert set(np.unique(rep.values)) <= {10.0, 35.0, 65.0}
    assert len(np.unique(rep.values)) == 3


@pytest.mark.parametrize("semantics", [START, PER_LEG])
def test_tiny1_mean_within_three_standard_errors(semantics):
    inst, plan = tiny1(), tiny1_plan()
    cfg = SimConfig((0.25, 0.25), 10_000, 11, semantics)
    rep = simulate_mission(inst, plan, cfg)
    exact = analytic_expectation(inst, plan, cfg).sum()
    assert abs(rep.mean - exact) <= 3 * rep.stderr
    assert rep.values.min() <= rep.mean <= rep.values.max()


def test_per_leg_expectation_matches_bernoulli_oracle():
    inst, plan = tiny1(), tiny1_plan()
    cfg = SimConfig((0.3, 0.6), semantics=PER_LEG)
    exact = analytic_expectation(inst, plan, cfg).sum()
    est = per_leg_by_bernoulli(inst, plan, cfg.failure_prob, 20_000, np.random.default_rng(5))
    # the estimate's variance is bounded by the squared total incentive
    assert abs(est - exact) <= 4 * first_stage_incentive(inst, plan).sum() / math.sqrt(20_000)


def test_per_leg_mission_failure_probability_is_p():
    inst, plan = tiny1(), tiny1_plan()
    rep = simulate_mission(inst, plan, SimConfig((0.0, 0.25), 20_000, 2, PER_LEG))
    full = first_stage_incentive(inst, plan).sum()
    frac = np.mean(rep.values < full)
    assert abs(frac - 0.25) <= 3 * math.sqrt(0.25 * 0.75 / 20_000)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), a2=st.sampled_from([100, 75, 50, 25, 0]))
def test_start_semantics_expectation_is_expected_objective(seed, a2):
    rng = np.random.default_rng(seed)
    inst = small_instance(rng)
    plan = random_feasible_plan(inst, rng)
    scen = build_scenarios([100, a2])
    cfg = SimConfig.from_scenarios(scen, semantics=START)
    assert analytic_expectation(inst, plan, cfg).sum() == pytest.approx(expected_objective(inst, plan, scen))


def test_deterministic_and_jobs_independent():
    inst, plan = tiny1(), tiny1_plan()
    cfg = SimConfig((0.2, 0.4), 10_000, 9)
    a = simulate_mission(inst, plan, cfg)
    b = simulate_mission(inst, plan, cfg, jobs=3)
    np.testing.assert_array_equal(a.values, b.values)
    c = simulate_mission(inst, plan, SimConfig((0.2, 0.4), 10_000, 10))
    assert not np.array_equal(a.values, c.values)


def test_standard_error_shrinks_with_replications():
    inst, plan = tiny1(), tiny1_plan()
    small = simulate_mission(inst, plan, SimConfig((0.25, 0.25), 4_000, 1, START))
    big = simulate_mission(inst, plan, SimConfig((0.25, 0.25), 16_000, 2, START))
    # four times the replications halves the standard error
    assert big.stderr / small.stderr == pytest.approx(0.5, rel=0.1)


def test_infeasible_plan_rejected():
    inst = tiny1()
    bad = Plan.from_edges(inst, [[(0, 2)], []])
    with pytest.raises(PlanInfeasible):
        simulate_mission(inst, bad, SimConfig((0, 0)))


def test_report_serialises():
    rep = simulate_mission(tiny1(), tiny1_plan(), SimConfig((0.1, 0.1), 10))
    data = json.loads(json.dumps(rep.to_dict()))
    assert data["replications"] == 10 and len(data["values"]) == 10


def test_vss_zero_at_full_availability():
    rep = compute_vss(tiny1(), build_scenarios([100, 100]), simulate=False)
    assert rep.vss == pytest.approx(0.0, abs=1e-9)
    assert rep.vss_percent == pytest.approx(0.0, abs=1e-9)


def test_tiny1_sweep_against_enumeration():
    inst = tiny1()
    reports = vss_sweep(inst, replications=4000, seed=3)
    assert [r.label for r in reports] == ["S1", "S2", "S3", "S4"]
    values = [r.stochastic_value for r in reports]
    for r, pct in zip(reports, (100, 75, 25, 0)):
        oracle, _ = enumerated_optimum(inst, [1.0, pct / 100])
        assert r.stochastic_value == pytest.approx(oracle, rel=1e-4)
        assert r.vss >= -1e-4 * abs(r.stochastic_value)
    assert all(a >= b - 1e-6 for a, b in zip(values, values[1:]))
    # UV2 never available: paired simulation favours the stochastic plan
    assert reports[-1].sim_stochastic.mean >= reports[-1].sim_deterministic.mean
    table = format_sweep_table(reports)
    assert "S4" in table.splitlines()[0] and "VSS %" in table
    json.dumps([r.to_dict() for r in reports])


@pytest.mark.parametrize("seed", range(3))
def test_vss_nonnegative_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    inst = small_instance(rng, n_pois=5)
    rep = compute_vss(inst, build_scenarios([100, 25]), simulate=False)
    assert rep.vss >= -1e-4 * abs(rep.stochastic_value)
