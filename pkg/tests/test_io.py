import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uvplan.generate import GenSpec, build_scenarios, generate_instance
from uvplan.io import (SchemaError, export_routes, genspec_from_dict, genspec_to_dict, instance_from_dict,
                       instance_to_dict, plan_from_dict, plan_to_dict, read_json, scenarios_from_dict,
                       scenarios_to_dict, write_json)
from uvplan.model import Plan

from helpers import random_feasible_plan, small_instance, tiny1


def tiny1_plan():
    return Plan.from_edges(tiny1(), [[(0, 2), (2, 0)], [(0, 3), (3, 1), (1, 4), (4, 1), (1, 0)]])


def same_instance(a, b):
    assert a.names == b.names and a.stations == b.stations and a.pois == b.pois
    for name in ("fuel_cost", "incentives", "fuel_capacity", "distance_budget", "coords"):
        x, y = getattr(a, name), getattr(b, name)
        assert (x is None) == (y is None)
        if x is not None:
            np.testing.assert_array_equal(x, y)


def same_plan(a, b):
    assert a.edges == b.edges
    assert a.station_use == b.station_use
    assert [dict(f) for f in a.cumulative_fuel] == [dict(f) for f in b.cumulative_fuel]
    assert a.objective_bounds == b.objective_bounds


def through_json(doc):
    return json.loads(json.dumps(doc, allow_nan=False))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), budget=st.booleans())
def test_instance_and_plan_round_trip(seed, budget):
    rng = np.random.default_rng(seed)
    inst = small_instance(rng, budget_mult=3.0 if budget else None)
    same_instance(inst, instance_from_dict(through_json(instance_to_dict(inst))))
    plan = random_feasible_plan(inst, rng)
    same_plan(plan, plan_from_dict(through_json(plan_to_dict(plan))))


def test_generated_instance_round_trip_via_file(tmp_path):
    inst = generate_instance(GenSpec(seed=7, n_pois=10, multiplier=2.25))
    path = write_json(instance_to_dict(inst), tmp_path / "inst.json")
    same_instance(inst, read_json(path, "instance"))


def test_scenarios_and_genspec_round_trip():
    scen = build_scenarios([75, 50])
    back = scenarios_from_dict(through_json(scenarios_to_dict(scen)))
    np.testing.assert_array_equal(back.alphas, scen.alphas)
    np.testing.assert_array_equal(back.probs, scen.probs)
    assert back.labels == scen.labels
    spec = GenSpec(seed=3, n_pois=6, multiplier=2.5, budget_multiplier=None)
    assert genspec_from_dict(through_json(genspec_to_dict(spec))) == spec


def test_unknown_and_missing_fields_rejected():
    doc = instance_to_dict(tiny1())
    with pytest.raises(SchemaError, match="unknown"):
        instance_from_dict({**doc, "fuel_capcity": [1, 2]})
    del doc["incentives"]
    with pytest.raises(SchemaError, match="missing"):
        instance_from_dict(doc)
    with pytest.raises(SchemaError, match="unknown"):
        genspec_from_dict({"schema_version": 1, "kind": "genspec", "n_poi": 3})
    plan = plan_to_dict(tiny1_plan())
    plan["routes"][0]["extra"] = 1
    with pytest.raises(SchemaError):
        plan_from_dict(plan)


def test_version_and_kind_checked():
    doc = instance_to_dict(tiny1())
    with pytest.raises(SchemaError, match="schema_version"):
        instance_from_dict({**doc, "schema_version": 99})
    with pytest.raises(SchemaError, match="kind"):
        plan_from_dict(doc)


def test_bad_values_become_schema_errors(tmp_path):
    doc = scenarios_to_dict(build_scenarios([100, 50]))
    doc["probs"] = [0.9, 0.9]
    with pytest.raises(SchemaError):
        scenarios_from_dict(doc)
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(SchemaError):
        read_json(path, "instance")


def test_unbounded_budget_written_as_null():
    doc = instance_to_dict(tiny1())
    assert doc["distance_budget"] == [None, None]
    json.dumps(doc, allow_nan=False)


def test_dot_has_one_subgraph_per_uv():
    dot = export_routes(tiny1(), tiny1_plan(), "dot")
    assert dot.count("subgraph uv") == 2
    assert '"r0" -> "p2"' in dot and '"p3" -> "r1"' in dot


def test_empty_route_shows_base_only():
    inst = tiny1()
    plan = Plan.from_edges(inst, [[], [(0, 2), (2, 0)]])
    dot = export_routes(inst, plan, "dot")
    block = dot.split("subgraph uv1 {")[1].split("}")[0]
    assert '"r0";' in block and "->" not in block
    routes = json.loads(export_routes(inst, plan, "json"))["routes"]
    assert routes[0]["nodes"] == ["r0"] and routes[0]["incentive"] == 0.0


def test_svg_is_well_formed():
    svg = export_routes(tiny1(), tiny1_plan(), "svg")
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    groups = root.findall("{http://www.w3.org/2000/svg}g")
    assert len(groups) == 2
    # no coordinates: falls back to a circular layout
    inst = small_instance(np.random.default_rng(0))
    bare = type(inst)(inst.names, inst.stations, inst.pois, inst.fuel_cost, inst.incentives,
                      inst.fuel_capacity, inst.distance_budget)
    ET.fromstring(export_routes(bare, random_feasible_plan(bare, np.random.default_rng(1)), "svg"))


def test_json_routes_report_incentives():
    routes = json.loads(export_routes(tiny1(), tiny1_plan(), "json"))["routes"]
    assert routes[0]["nodes"] == ["r0", "p1", "r0"] and routes[0]["incentive"] == 10.0
    assert routes[1]["incentive"] == 55.0


def test_unknown_format():
    with pytest.raises(ValueError):
        export_routes(tiny1(), tiny1_plan(), "png")
