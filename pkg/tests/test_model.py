import json
import re

import numpy as np
import pytest
from conftest import ROOT, chain_document
from hypothesis import given, settings
from hypothesis import strategies as st

from cemkit import constraints as C
from cemkit.bench import gen_bridge, gen_tree, gen_wheel, staircase_document
from cemkit.errors import ModelError
from cemkit.model import (
    dump_state, dumps, export_form, load_state, model_document, parse_model, schema, serialize_model,
    state_document, with_overrides,
)
from cemkit.topology import build_topology


def test_chain_document(chain_doc):
    model = parse_model(json.dumps(chain_doc))
    T = model.topology
    assert (T.N, T.M, sorted(T.supports)) == (3, 2, [3])
    assert T.load(1) == (1.0, 0.0, 0.0) and T.load(2) == (0.0, 0.0, 0.0)
    assert T.state(1, 2) == -1 and T.trail_lengths[(2, 3)] == 1.0
    assert model.constraints[0].kind == C.NODE_POSITION
    assert len(model.pmap) == 2
    assert model.options.grad == "ad" and model.options.fd_step == 1e-6


def test_defaults():
    doc = {"version": "1.0", "nodes": [{"id": 1, "position": [0, 0, 0], "load": [0, 0, -1]}, {"id": 2}],
           "edges": [{"i": 1, "j": 2, "label": "trail", "length": 2.0}], "supports": [2]}
    model = parse_model(doc)
    assert model.topology.state(1, 2) == 1
    assert model.topology.load(2) == (0.0, 0.0, 0.0)
    assert (model.options.grad, model.options.fd_step) == ("ad", 1e-6)
    assert not model.constraints and not model.auxiliary
    # a tension trail under a downward load hangs from a support above
    state = model.problem().state(model.problem().initial())
    assert state.positions[2] == (0.0, 0.0, 2.0)


def test_missing_trail_length_names_the_edge(chain_doc):
    del chain_doc["edges"][1]["length"]
    with pytest.raises(ModelError) as exc:
        parse_model(chain_doc)
    assert exc.value.code == "schema violation"
    assert "edges[1]" in str(exc.value) and "edge 2-3" in str(exc.value) and "length" in str(exc.value)


def test_wrong_value_key_on_edge(chain_doc):
    chain_doc["edges"][0]["force"] = 1.0
    with pytest.raises(ModelError, match="must not carry 'force'"):
        parse_model(chain_doc)


def test_invalid_json_reports_position():
    with pytest.raises(ModelError) as exc:
        parse_model('{"version": "1.0",\n  "nodes": [}')
    assert exc.value.code == "invalid json" and "line 2" in str(exc.value)


def test_unknown_constraint_kind(chain_doc):
    chain_doc["constraints"][0]["kind"] = "Curvature"
    with pytest.raises(ModelError) as exc:
        parse_model(chain_doc)
    assert exc.value.code == "unknown constraint kind"


@pytest.mark.parametrize("mutate, fragment", [
    (lambda d: d["constraints"][0].update(node=9), "node 9 does not exist"),
    (lambda d: d["parameters"].append({"kind": "deviation-force", "edge": [1, 2]}), "not a deviation edge"),
    (lambda d: d["edges"].append({"i": 1, "j": 7, "label": "trail", "length": 1.0}), "dangling edge"),
    (lambda d: d.update(extra=1), "Additional properties"),
    (lambda d: d["solver"].update(grad="symbolic"), "solver.grad"),
])
def test_semantic_errors(chain_doc, mutate, fragment):
    mutate(chain_doc)
    with pytest.raises(ModelError, match=fragment):
        parse_model(chain_doc)


def test_pure_form_finding_document():
    doc = chain_document()
    doc["constraints"], doc["parameters"] = [], []
    model = parse_model(doc)
    problem = model.problem()
    assert problem.value([]) == 0.0
    assert problem.state([]).positions[3] == (2.0, 0.0, 0.0)


def test_overrides(chain_doc):
    model = with_overrides(parse_model(chain_doc), t_max=7, eta_min=1e-9, epsilon=1e-3, grad="fd",
                           fd_step=1e-3, max_iter=None, auxiliary=True)
    assert (model.settings.t_max, model.settings.eta_min) == (7, 1e-9)
    assert (model.options.epsilon, model.options.grad, model.options.fd_step) == (1e-3, "fd", 1e-3)
    assert model.options.max_iter == 100 and model.auxiliary


@pytest.mark.parametrize("doc", [gen_wheel(2), gen_bridge(4), gen_tree(2), staircase_document(),
                                 json.loads((ROOT / "models" / "overlapping-trails.json").read_text())],
                         ids=["wheel", "bridge", "tree", "staircase", "explicit-trails"])
def test_shipped_documents_round_trip(doc):
    model = parse_model(doc)
    text = serialize_model(model)
    again = parse_model(text)
    assert model_document(again) == model_document(model)
    assert serialize_model(again) == text


def test_schema_is_shipped_in_docs():
    assert json.loads((ROOT / "docs" / "model-schema.json").read_text()) == schema()


def test_dumps_is_valid_json_and_exact():
    doc = {"a": [{"x": 0.1 + 0.2}], "b": 1e-17, "c": []}
    assert json.loads(dumps(doc)) == doc


vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3)
weight = st.floats(0, 5, allow_nan=False)


@st.composite
def documents(draw):
    n_trails = draw(st.integers(1, 3))
    nodes, edges, supports, free = [], [], [], []
    nid = 1
    for _ in range(n_trails):
        size = draw(st.integers(2, 4))
        ids = list(range(nid, nid + size))
        nid += size
        nodes.append({"id": ids[0], "position": draw(vec), "load": draw(vec)})
        nodes += [{"id": n} for n in ids[1:]]
        for a, b in zip(ids, ids[1:]):
            edges.append({"i": a, "j": b, "label": "trail", "state": draw(st.sampled_from([-1, 1])),
                          "length": draw(st.floats(0.01, 10))})
        supports.append(ids[-1])
        free += ids[:-1]
    pairs = draw(st.lists(st.tuples(st.sampled_from(free), st.sampled_from(free)), max_size=4))
    seen = {(e["i"], e["j"]) for e in edges}
    for a, b in pairs:
        key = (min(a, b), max(a, b))
        if a != b and key not in seen:
            seen.add(key)
            edges.append({"i": a, "j": b, "label": "deviation", "state": draw(st.sampled_from([-1, 1])),
                          "force": draw(st.floats(0, 10))})
    node_ids = [n["id"] for n in nodes]
    trail_edges = [[e["i"], e["j"]] for e in edges if e["label"] == "trail"]
    constraints = []
    for kind in draw(st.lists(st.sampled_from(C.KINDS), max_size=6)):
        rec = {"kind": kind, "weight": draw(weight)}
        if kind in C.NODE_KINDS:
            rec["node"] = draw(st.sampled_from(node_ids))
        else:
            rec["edge"] = draw(st.sampled_from(trail_edges))
        if kind == C.DEVIATION_LENGTH:
            dev = [[e["i"], e["j"]] for e in edges if e["label"] == "deviation"]
            if not dev:
                continue
            rec["edge"] = draw(st.sampled_from(dev))
        if kind in (C.NODE_ON_LINE, C.NODE_ON_PLANE, C.EDGE_DIRECTION):
            rec["target"] = [1.0, 0.0, 0.0] if draw(st.booleans()) else [0.0, 0.6, 0.8]
            if kind != C.EDGE_DIRECTION:
                rec["point"] = draw(vec)
        elif kind in (C.NODE_POSITION, C.REACTION_FORCE):
            rec["target"] = draw(vec)
        else:
            rec["target"] = draw(st.floats(0, 10))
        constraints.append(rec)
    parameters = [{"kind": "trail-length", "edge": e, "bounds": [draw(st.sampled_from([None, 1e-3])), None]}
                  for e in draw(st.lists(st.sampled_from(trail_edges), unique_by=tuple, max_size=3))]
    parameters.append({"kind": "origin-coordinate", "node": 1, "axis": draw(st.sampled_from(["x", "y", "z"]))})
    solver = {"t_max": draw(st.integers(1, 500)), "eta_min": draw(st.floats(1e-12, 1e-2)),
              "epsilon": draw(st.floats(1e-12, 1e-2)), "algorithm": draw(st.sampled_from(["gd", "lbfgs"])),
              "grad": draw(st.sampled_from(["ad", "fd"])), "fd_step": draw(st.floats(1e-9, 1e-2))}
    return {"version": "1.0", "name": draw(st.text(max_size=8)), "nodes": nodes, "edges": edges,
            "supports": supports, "auxiliary": {"auto": draw(st.booleans()), "state": 1},
            "constraints": constraints, "parameters": parameters, "solver": solver}


@settings(max_examples=100, deadline=None)
@given(documents())
def test_document_round_trip(doc):
    model = parse_model(doc)
    text = serialize_model(model)
    again = parse_model(text)
    assert model_document(again) == model_document(model)
    assert again.constraints == model.constraints
    assert again.pmap == model.pmap
    assert again.settings == model.settings and again.options == model.options


@pytest.fixture
def chain_state(chain_problem):
    return chain_problem.state([1.0, 1.0]), chain_problem.topology


def test_state_json_round_trip(chain_state):
    u, T = chain_state
    u2, T2 = load_state(dump_state(u, T))
    assert u2.positions == u.positions and u2.reactions == u.reactions
    assert u2.trail_forces == u.trail_forces and sorted(T2.edges) == sorted(T.edges)
    assert export_form(u2, T2, "json") == export_form(u, T, "json")


def test_state_round_trip_on_solved_wheel():
    from cemkit.optimize import solve

    p = parse_model(gen_wheel(3)).problem()
    u, report = solve(p)
    text = dump_state(u, p.topology, report)
    u2, T2 = load_state(text)
    assert u2.positions == u.positions and u2.deviation_forces == u.deviation_forces
    assert T2.auxiliary_edges == p.topology.auxiliary_edges
    assert json.loads(text)["report"]["converged"] is True


def test_load_state_rejects_models(chain_doc):
    with pytest.raises(ModelError):
        load_state(json.dumps(chain_doc))
    with pytest.raises(ModelError):
        load_state("{")


def test_chain_svg(chain_state):
    u, T = chain_state
    svg = export_form(u, T, "svg").decode()
    coords = [tuple(map(float, m)) for m in
              re.findall(r'x1="([\d.]+)" y1="([\d.]+)" x2="([\d.]+)" y2="([\d.]+)"', svg)]
    assert len(coords) == 2
    lengths = [np.hypot(x2 - x1, y2 - y1) for x1, y1, x2, y2 in coords]
    assert lengths[0] == pytest.approx(lengths[1])
    assert all(y1 == y2 for _, y1, _, y2 in coords)
    assert svg.count('class="compression trail"') == 2
    assert export_form(u, T, "svg") == export_form(u, T, "svg")


def test_svg_styles_tension_and_compression():
    p = parse_model(gen_wheel(2)).problem()
    u = p.state(p.initial())
    svg = export_form(u, p.topology, "svg", plane="xy").decode()
    assert svg.count('class="tension deviation"') == 4
    assert svg.count('class="compression deviation"') == 2
    assert "#d62728" in svg and "#1f4fd6" in svg
    with pytest.raises(ModelError):
        export_form(u, p.topology, "svg", plane="uv")


def test_obj_export(chain_state):
    u, T = chain_state
    lines = export_form(u, T, "obj").decode().splitlines()
    assert [ln for ln in lines if ln.startswith("v ")] == ["v 0.0 0.0 0.0", "v 1.0 0.0 0.0", "v 2.0 0.0 0.0"]
    assert [ln for ln in lines if ln.startswith("l ")] == ["l 1 2", "l 2 3"]


def test_empty_exports():
    from cemkit.equilibrium import EquilibriumState

    T = build_topology()
    u = EquilibriumState({}, {}, {}, {})
    assert export_form(u, T, "svg").decode().rstrip().endswith("/>")
    assert export_form(u, T, "obj").decode().startswith("#")
    assert state_document(u, T)["nodes"] == []
    with pytest.raises(ModelError):
        export_form(u, T, "dxf")
