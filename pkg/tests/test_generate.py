import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uvplan.generate import (DEFAULT_STATIONS, FUEL_MULTIPLIERS, GenSpec, build_scenarios, generate_instance,
                             max_pairwise_distance, metric_closure)
from uvplan.model import Instance, validate_instance


@pytest.mark.parametrize("mult", FUEL_MULTIPLIERS)
def test_capacity_is_multiple_of_lambda(mult):
    inst = generate_instance(GenSpec(seed=3, n_pois=10, multiplier=mult))
    lam = max_pairwise_distance(inst)
    np.testing.assert_allclose(inst.fuel_capacity / lam, mult, rtol=0, atol=1e-12)
    np.testing.assert_allclose(inst.distance_budget, 3 * lam)


def test_same_seed_is_identical():
    a = generate_instance(GenSpec(seed=11))
    b = generate_instance(GenSpec(seed=11))
    assert a.fuel_cost.tobytes() == b.fuel_cost.tobytes()
    assert a.incentives.tobytes() == b.incentives.tobytes()
    assert a.names == b.names


def test_seed_seven_is_valid():
    assert validate_instance(generate_instance(GenSpec(seed=7, n_pois=10))).is_empty


def test_layout_and_incentives():
    inst = generate_instance(GenSpec(seed=5, n_pois=10))
    assert len(inst.stations) == 5 and len(inst.pois) == 10
    np.testing.assert_allclose(inst.coords[0], (50, 50))
    np.testing.assert_allclose(inst.coords[1:5], DEFAULT_STATIONS)
    poi_inc = inst.incentives[:, list(inst.pois)]
    assert (poi_inc[0] == 0).sum() >= 5
    assert poi_inc[0].max() <= 150 and poi_inc[1].max() <= 170 and poi_inc.min() >= 0
    assert np.all((inst.coords[5:] >= 0) & (inst.coords[5:] <= 100))


def test_stations_fixed_across_seeds():
    a, b = generate_instance(GenSpec(seed=1)), generate_instance(GenSpec(seed=2))
    np.testing.assert_array_equal(a.coords[:5], b.coords[:5])


def test_bad_specs_rejected():
    with pytest.raises(ValueError):
        GenSpec(n_pois=0)
    with pytest.raises(ValueError):
        GenSpec(multiplier=0)
    with pytest.raises(ValueError):
        GenSpec(incentive_ranges=((0, -1), (0, 10)))


def test_integer_costs_stay_metric():
    inst = generate_instance(GenSpec(seed=4, integer_costs=True))
    assert validate_instance(inst).is_empty
    assert np.all(inst.fuel_cost == np.floor(inst.fuel_cost))


def test_scenarios_single_uncertain_uv():
    s = build_scenarios([100, 75])
    np.testing.assert_array_equal(s.alphas, [[1, 1], [1, 0]])
    np.testing.assert_allclose(s.probs, [0.75, 0.25])
    one = build_scenarios([100, 100])
    assert len(one) == 1 and one.probs[0] == 1.0
    zero = build_scenarios([100, 0])
    np.testing.assert_array_equal(zero.alphas, [[1, 0]])


def test_scenarios_product():
    s = build_scenarios([50, 50])
    assert len(s) == 4
    np.testing.assert_allclose(s.probs, 0.25)
    assert {tuple(a) for a in s.alphas} == {(1, 1), (1, 0), (0, 1), (0, 0)}
    with pytest.raises(ValueError):
        build_scenarios([120, 50])


def test_metric_closure_examples():
    raw = np.array([[0, 5, 20], [5, 0, 4], [20, 4, 0]], float)
    out = metric_closure(raw)
    assert out[0, 2] == 9
    np.testing.assert_array_equal(metric_closure(out), out)
    with pytest.raises(ValueError):
        metric_closure([[0, -1], [1, 0]])


def _instance_from_costs(f):
    n = len(f)
    return Instance(tuple(f"n{i}" for i in range(n)), (0,), tuple(range(1, n)), f, np.zeros((1, n)), [1e9],
                    [np.inf])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(3, 8))
def test_metric_closure_properties(seed, n):
    rng = np.random.default_rng(seed)
    raw = rng.uniform(1, 100, size=(n, n))
    np.fill_diagonal(raw, 0)
    out = metric_closure(raw)
    assert np.all(out <= raw + 1e-12)
    np.testing.assert_allclose(metric_closure(out), out)
    assert not validate_instance(_instance_from_costs(out)).triangle_violations
    # brute-force shortest paths by Floyd-Warshall
    fw = raw.copy()
    for k in range(n):
        fw = np.minimum(fw, fw[:, [k]] + fw[[k], :])
    np.testing.assert_allclose(out, fw)
