"""JSON files for instances, plans and scenarios, and route rendering.

Every document carries ``schema_version`` and ``kind``.  Loading is strict:
unknown or missing fields raise ``SchemaError`` so that a typo in an
experiment script fails loudly.  Infinite numbers (an unbounded distance
budget, for instance) are written as ``null``.
"""
from __future__ import annotations

import dataclasses
import json
import math
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from .generate import GenSpec
from .model import Instance, Plan, ScenarioSet, extract_route, first_stage_incentive

SCHEMA_VERSION = 1
EXPORT_FORMATS = ("dot", "svg", "json")
UV_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class SchemaError(ValueError):
    pass


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _unnum(x, missing=math.inf):
    return missing if x is None else float(x)


def clean(obj):
    """Recursively make ``obj`` strict-JSON safe (numpy types, non-finite floats)."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def _envelope(kind: str, body: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": kind, **body}


def _open(doc: dict, kind: str, required: set, optional: set = frozenset()) -> dict:
    if not isinstance(doc, dict):
        raise SchemaError(f"{kind}: expected a JSON object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"{kind}: unsupported schema_version {doc.get('schema_version')!r}")
    if doc.get("kind") != kind:
        raise SchemaError(f"expected kind {kind!r}, found {doc.get('kind')!r}")
    keys = set(doc) - {"schema_version", "kind"}
    unknown = keys - required - set(optional)
    if unknown:
        raise SchemaError(f"{kind}: unknown field(s) {sorted(unknown)}")
    missing = required - keys
    if missing:
        raise SchemaError(f"{kind}: missing field(s) {sorted(missing)}")
    return doc


def instance_to_dict(inst: Instance) -> dict:
    return _envelope("instance", {
        "names": list(inst.names),
        "stations": list(inst.stations),
        "pois": list(inst.pois),
        "fuel_cost": inst.fuel_cost.tolist(),
        "incentives": inst.incentives.tolist(),
        "fuel_capacity": inst.fuel_capacity.tolist(),
        "distance_budget": [_num(b) for b in inst.distance_budget],
        "coords": None if inst.coords is None else inst.coords.tolist(),
    })


def instance_from_dict(doc: dict) -> Instance:
    d = _open(doc, "instance", {"names", "stations", "pois", "fuel_cost", "incentives", "fuel_capacity",
                                "distance_budget"}, {"coords"})
    try:
        return Instance(tuple(d["names"]), tuple(d["stations"]), tuple(d["pois"]), np.array(d["fuel_cost"], float),
                        np.array(d["incentives"], float), np.array(d["fuel_capacity"], float),
                        np.array([_unnum(b) for b in d["distance_budget"]]),
                        None if d.get("coords") is None else np.array(d["coords"], float))
    except (TypeError, ValueError) as err:
        raise SchemaError(f"instance: {err}") from err


def plan_to_dict(plan: Plan) -> dict:
    routes = []
    for m in range(plan.num_uvs):
        routes.append({
            "edges": sorted([i, j] for i, j in plan.edges[m]),
            "fuel": sorted([i, j, float(x)] for (i, j), x in plan.cumulative_fuel[m].items()),
            "stations": sorted(plan.station_use[m]),
        })
    return _envelope("plan", {"routes": routes, "objective_bounds": [_num(b) for b in plan.objective_bounds]})


def plan_from_dict(doc: dict) -> Plan:
    d = _open(doc, "plan", {"routes", "objective_bounds"})
    edges, fuel, used = [], [], []
    for k, r in enumerate(d["routes"]):
        if not isinstance(r, dict) or set(r) != {"edges", "fuel", "stations"}:
            raise SchemaError(f"plan: route {k} must have exactly the fields edges, fuel, stations")
        edges.append(frozenset((int(i), int(j)) for i, j in r["edges"]))
        fuel.append({(int(i), int(j)): float(x) for i, j, x in r["fuel"]})
        used.append(frozenset(int(s) for s in r["stations"]))
    lo, hi = d["objective_bounds"]
    return Plan(tuple(edges), tuple(fuel), tuple(used), (_unnum(lo, -math.inf), _unnum(hi)))


def scenarios_to_dict(scen: ScenarioSet) -> dict:
    return _envelope("scenarios", {"alphas": scen.alphas.tolist(), "probs": scen.probs.tolist(),
                                   "labels": list(scen.labels)})


def scenarios_from_dict(doc: dict) -> ScenarioSet:
    d = _open(doc, "scenarios", {"alphas", "probs"}, {"labels"})
    try:
        return ScenarioSet(np.array(d["alphas"]), np.array(d["probs"], float), tuple(d.get("labels", ())))
    except (TypeError, ValueError) as err:
        raise SchemaError(f"scenarios: {err}") from err


def genspec_to_dict(spec: GenSpec) -> dict:
    return _envelope("genspec", clean(dataclasses.asdict(spec)))


def genspec_from_dict(doc: dict) -> GenSpec:
    names = {f.name for f in dataclasses.fields(GenSpec)}
    d = _open(doc, "genspec", set(), names)
    kw = {k: v for k, v in d.items() if k in names}
    for key in ("incentive_ranges", "station_xy"):
        if key in kw:
            kw[key] = tuple(tuple(x) for x in kw[key])
    if "base_xy" in kw:
        kw["base_xy"] = tuple(kw["base_xy"])
    return GenSpec(**kw)


def solution_to_dict(plan: Plan | None, stats: dict, scen: ScenarioSet) -> dict:
    return _envelope("solution", {"plan": None if plan is None else plan_to_dict(plan), "stats": clean(stats),
                                  "scenarios": scenarios_to_dict(scen)})


def plan_from_file(path) -> Plan:
    """Read a plan from either a plan document or a solution document."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise SchemaError(f"{path}: not valid JSON ({err})") from err
    if isinstance(doc, dict) and doc.get("kind") == "solution":
        d = _open(doc, "solution", {"plan", "stats", "scenarios"})
        if d["plan"] is None:
            raise SchemaError(f"{path}: solution has no plan")
        return plan_from_dict(d["plan"])
    return plan_from_dict(doc)


def report_to_dict(kind: str, body: dict) -> dict:
    """Wrap an output report; reports are write-only, so no loader is provided."""
    return _envelope(kind, clean(body))


_LOADERS = {"instance": instance_from_dict, "plan": plan_from_dict, "scenarios": scenarios_from_dict,
            "genspec": genspec_from_dict}


def write_json(doc: dict, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(clean(doc), indent=1, allow_nan=False) + "\n")
    return path


def read_json(path, kind: str):
    """Load a document of the given kind from ``path``."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise SchemaError(f"{path}: not valid JSON ({err})") from err
    return _LOADERS[kind](doc)


def _node_label(inst: Instance, j: int) -> str:
    if j == inst.base or j in inst.refuel_stations:
        return inst.names[j]
    return inst.names[j] + "\n" + "/".join(f"{e:g}" for e in inst.incentives[:, j])


def _routes_dot(inst: Instance, plan: Plan) -> str:
    lines = ["digraph routes {", "  node [fontsize=10];"]
    for j in range(inst.num_nodes):
        if j == inst.base:
            style = 'shape=doublecircle, style=filled, fillcolor="#333333", fontcolor=white'
        elif j in inst.refuel_stations:
            style = 'shape=box, style=filled, fillcolor="#bbbbff"'
        else:
            style = "shape=circle"
        label = _node_label(inst, j).replace("\n", "\\n")
        lines.append(f'  "{inst.names[j]}" [label="{label}", {style}];')
    for m in range(plan.num_uvs):
        color = UV_COLORS[m % len(UV_COLORS)]
        lines.append(f"  subgraph uv{m + 1} {{")
        lines.append(f'    edge [color="{color}", label="UV{m + 1}"];')
        lines.append(f'    "{inst.names[inst.base]}";')
        route = extract_route(inst, plan.edges[m])
        for i, j in zip(route, route[1:]):
            lines.append(f'    "{inst.names[i]}" -> "{inst.names[j]}";')
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _layout(inst: Instance) -> np.ndarray:
    if inst.coords is not None:
        return np.asarray(inst.coords, float)
    t = 2 * np.pi * np.arange(inst.num_nodes) / inst.num_nodes
    return np.column_stack([np.cos(t), np.sin(t)])


def _routes_svg(inst: Instance, plan: Plan, size: int = 500, pad: int = 40) -> str:
    xy = _layout(inst)
    lo, span = xy.min(axis=0), np.ptp(xy, axis=0)
    span[span == 0] = 1.0
    pts = pad + (xy - lo) / span.max() * (size - 2 * pad)
    pts[:, 1] = size - pts[:, 1]  # y grows upwards in the plane
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(size), height=str(size))
    for m in range(plan.num_uvs):
        g = ET.SubElement(svg, "g", id=f"uv{m + 1}", stroke=UV_COLORS[m % len(UV_COLORS)])
        g.set("stroke-width", "2")
        route = extract_route(inst, plan.edges[m])
        for i, j in zip(route, route[1:]):
            ET.SubElement(g, "line", x1=f"{pts[i, 0]:.1f}", y1=f"{pts[i, 1]:.1f}",
                          x2=f"{pts[j, 0]:.1f}", y2=f"{pts[j, 1]:.1f}")
    for j in range(inst.num_nodes):
        x, y = pts[j]
        if j == inst.base or j in inst.refuel_stations:
            fill = "#333333" if j == inst.base else "#bbbbff"
            ET.SubElement(svg, "rect", x=f"{x - 7:.1f}", y=f"{y - 7:.1f}", width="14", height="14", fill=fill,
                          stroke="black")
        else:
            ET.SubElement(svg, "circle", cx=f"{x:.1f}", cy=f"{y:.1f}", r="6", fill="white", stroke="black")
        text = ET.SubElement(svg, "text", x=f"{x + 9:.1f}", y=f"{y - 9:.1f}")
        text.set("font-size", "11")
        text.text = _node_label(inst, j).replace("\n", " ")
    return ET.tostring(svg, encoding="unicode") + "\n"


def _routes_json(inst: Instance, plan: Plan) -> str:
    inc = first_stage_incentive(inst, plan)
    routes = [{"uv": m + 1, "nodes": [inst.names[j] for j in extract_route(inst, plan.edges[m])],
               "incentive": float(inc[m])} for m in range(plan.num_uvs)]
    return json.dumps(_envelope("routes", {"routes": routes}), indent=1) + "\n"


def export_routes(inst: Instance, plan: Plan, fmt: str) -> str:
    """Render one route per UV as Graphviz DOT, SVG or JSON text."""
    renderers = {"dot": _routes_dot, "svg": _routes_svg, "json": _routes_json}
    if fmt not in renderers:
        raise ValueError(f"unknown export format {fmt!r}; choose from {EXPORT_FORMATS}")
    return renderers[fmt](inst, plan)
