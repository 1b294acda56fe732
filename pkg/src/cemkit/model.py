"""JSON model documents, state files and form-diagram export.

A model document describes one problem: nodes, edges, supports, optional
explicit trails, constraints, optimization parameters and solver settings.
Its schema ships as ``cemkit/data/model-schema.json``. A state file holds a
solved equilibrium state together with enough topology to redraw it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources

import jsonschema

from cemkit import constraints as C
from cemkit import parameters as P
from cemkit.constraints import ConstraintError, ConstraintSpec, ObjectiveSpec
from cemkit.equilibrium import DesignParameters, EquilibriumState, SolverSettings
from cemkit.errors import CEMError, ModelError, TopologyError
from cemkit.optimize import Problem
from cemkit.parameters import ParameterMap, ParameterSlot
from cemkit.topology import (
    DEVIATION,
    TRAIL,
    Trail,
    TopologyDiagram,
    assign_trails,
    attach_auxiliary,
    build_topology,
    edge_key,
)

VERSION = "1.0"
FORMATS = ("json", "svg", "obj")
PLANES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}
AXES = {"x": 0, "y": 1, "z": 2}

POINT_KINDS = (C.NODE_ON_LINE, C.NODE_ON_PLANE)
VECTOR_KINDS = (C.NODE_POSITION, C.REACTION_FORCE, C.EDGE_DIRECTION) + POINT_KINDS


@lru_cache(maxsize=1)
def schema():
    """The model-document JSON schema as a dict."""
    text = resources.files("cemkit").joinpath("data/model-schema.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class OptimizerOptions:
    epsilon: float = 1e-6
    max_iter: int = 100
    algorithm: str = "lbfgs"
    grad: str = "ad"
    fd_step: float = 1e-6
    fd_scheme: str = "forward"


@dataclass
class Model:
    """Everything a model document specifies, in solver types.

    ``topology`` is the diagram as written, before auxiliary trails are
    attached; :meth:`problem` does the attaching.
    """

    topology: TopologyDiagram
    constraints: tuple = ()
    pmap: ParameterMap = field(default_factory=ParameterMap)
    settings: SolverSettings = field(default_factory=SolverSettings)
    options: OptimizerOptions = field(default_factory=OptimizerOptions)
    trails: tuple | None = None
    auxiliary: bool = False
    auxiliary_state: int = 1
    name: str = ""

    @property
    def parameters(self) -> DesignParameters:
        return DesignParameters.from_topology(self.topology)

    @property
    def objective(self) -> ObjectiveSpec:
        return ObjectiveSpec(tuple(self.constraints), epsilon=self.options.epsilon)

    def resolve(self):
        """``(trails, diagram)`` with auxiliary trails attached when enabled."""
        if self.trails is None:
            return assign_trails(self.topology, auto_auxiliary=self.auxiliary,
                                 auxiliary_state=self.auxiliary_state)
        trails = tuple(Trail(tuple(t)) for t in self.trails)
        if not self.auxiliary:
            return trails, self.topology
        covered = {n for t in trails for n in t}
        free = [n for n in self.topology.nodes if n not in covered]
        return attach_auxiliary(self.topology, trails, free, self.auxiliary_state)

    def problem(self) -> Problem:
        trails, T = self.resolve()
        return Problem.build(T, self.pmap, self.objective, self.settings, trails=trails)

    def to_document(self) -> dict:
        return model_document(self)


def _where(path):
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "document"


def _edge_name(doc, path):
    parts = list(path)
    if len(parts) >= 2 and parts[0] == "edges" and isinstance(parts[1], int):
        try:
            e = doc["edges"][parts[1]]
            return f" (edge {e.get('i')}-{e.get('j')})"
        except (IndexError, KeyError, TypeError, AttributeError):
            return ""
    return ""


def _schema_error(doc, error):
    where = _where(error.absolute_path)
    message = error.message
    if error.validator == "required" and where.startswith("edges["):
        message = f"{message} on a {error.instance.get('label', '?')} edge"
    if error.validator == "not" and where.startswith("edges["):
        label = error.instance.get("label")
        extra = "force" if label == TRAIL else "length"
        message = f"a {label} edge must not carry '{extra}'"
    return ModelError(f"schema violation at {where}{_edge_name(doc, error.absolute_path)}: {message}",
                      code="schema violation")


def parse_model(text) -> Model:
    """Parse and validate a model document (JSON text or an already-decoded dict)."""
    if isinstance(text, (str, bytes, bytearray)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                             code="invalid json") from exc
    else:
        doc = text
    for idx, c in enumerate(doc.get("constraints", []) if isinstance(doc, dict) else []):
        kind = c.get("kind") if isinstance(c, dict) else None
        if isinstance(kind, str) and kind not in C.KINDS:
            raise ModelError(f"constraints[{idx}]: unknown constraint kind {kind!r}",
                             code="unknown constraint kind")
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        best = jsonschema.exceptions.best_match(errors)
        raise _schema_error(doc, best)
    try:
        return _build(doc)
    except ModelError:
        raise
    except CEMError as exc:
        raise ModelError(str(exc), code=exc.code) from exc


def _build(doc):
    T = build_topology(
        nodes=[{"id": n["id"], "position": n.get("position"), "load": n.get("load")} for n in doc["nodes"]],
        edges=[{"i": e["i"], "j": e["j"], "label": e["label"], "state": e.get("state", 1),
                "length": e.get("length"), "force": e.get("force")} for e in doc["edges"]],
        supports=doc["supports"],
    )
    constraints = tuple(_constraint(idx, c, T) for idx, c in enumerate(doc.get("constraints", [])))
    slots = [_slot(idx, p, T) for idx, p in enumerate(doc.get("parameters", []))]
    try:
        pmap = ParameterMap(slots)
    except CEMError as exc:
        raise ModelError(f"parameters: {exc}", code="schema violation") from exc
    s = doc.get("solver", {})
    settings = SolverSettings(t_max=s.get("t_max", 100), eta_min=s.get("eta_min", 1e-6),
                              normalize_eta=s.get("normalize_eta", False))
    options = OptimizerOptions(epsilon=s.get("epsilon", 1e-6), max_iter=s.get("max_iter", 100),
                               algorithm=s.get("algorithm", "lbfgs"), grad=s.get("grad", "ad"),
                               fd_step=s.get("fd_step", 1e-6), fd_scheme=s.get("fd_scheme", "forward"))
    trails = doc.get("trails")
    if trails is not None:
        for idx, t in enumerate(trails):
            for n in t:
                if n not in T:
                    raise ModelError(f"trails[{idx}]: node {n} does not exist", code="dangling edge")
            if len(t) < 2:
                raise ModelError(f"trails[{idx}]: a trail needs at least two nodes", code="schema violation")
        trails = tuple(tuple(t) for t in trails)
    aux = doc.get("auxiliary", {})
    model = Model(topology=T, constraints=constraints, pmap=pmap, settings=settings, options=options,
                  trails=trails, auxiliary=aux.get("auto", False), auxiliary_state=aux.get("state", 1),
                  name=doc.get("name", ""))
    return model


def _constraint(idx, c, T):
    kind = c["kind"]
    where = f"constraints[{idx}] ({kind})"
    weight = c.get("weight", 1.0)
    if kind in C.NODE_KINDS:
        if "node" not in c:
            raise ModelError(f"{where}: missing 'node'", code="schema violation")
        subject = c["node"]
        if subject not in T:
            raise ModelError(f"{where}: node {subject} does not exist", code="subject not found")
    else:
        if "edge" not in c:
            raise ModelError(f"{where}: missing 'edge'", code="schema violation")
        subject = tuple(c["edge"])
        if edge_key(*subject) not in T.edges:
            raise ModelError(f"{where}: edge {subject} does not exist", code="subject not found")
    target = c["target"]
    try:
        if kind in POINT_KINDS:
            if "point" not in c:
                raise ModelError(f"{where}: missing 'point'", code="schema violation")
            target = (c["point"], target)
        elif kind in VECTOR_KINDS:
            if not (isinstance(target, list) and len(target) == 3):
                raise ModelError(f"{where}: target must be a 3-vector", code="schema violation")
        elif not isinstance(target, (int, float)) or isinstance(target, bool):
            raise ModelError(f"{where}: target must be a number", code="schema violation")
        return ConstraintSpec(kind, subject, target, weight)
    except ConstraintError as exc:
        raise ModelError(f"{where}: {exc}", code="schema violation") from exc


def _slot(idx, p, T):
    kind = p["kind"]
    where = f"parameters[{idx}] ({kind})"
    lower, upper = p.get("bounds", [None, None])
    if kind == P.ORIGIN_COORDINATE:
        if "node" not in p or "axis" not in p:
            raise ModelError(f"{where}: needs 'node' and 'axis'", code="schema violation")
        if p["node"] not in T:
            raise ModelError(f"{where}: node {p['node']} does not exist", code="subject not found")
        axis = AXES.get(p["axis"], p["axis"])
        return ParameterSlot(kind, p["node"], axis, lower, upper)
    if "edge" not in p:
        raise ModelError(f"{where}: missing 'edge'", code="schema violation")
    key = edge_key(*p["edge"])
    edge = T.edges.get(key)
    want = DEVIATION if kind == P.DEVIATION_FORCE else TRAIL
    if edge is None or edge.label != want:
        raise ModelError(f"{where}: edge {tuple(p['edge'])} is not a {want} edge", code="subject not found")
    if lower is None and "bounds" not in p:
        lower = 0.0 if kind == P.DEVIATION_FORCE else P.MIN_TRAIL_LENGTH
    return ParameterSlot(kind, key, None, lower, upper)


def _constraint_record(c: ConstraintSpec):
    rec = {"kind": c.kind}
    if c.kind in C.NODE_KINDS:
        rec["node"] = c.subject
    else:
        rec["edge"] = list(c.subject)
    if c.kind in POINT_KINDS:
        point, direction = c.target
        rec["point"] = list(point)
        rec["target"] = list(direction)
    elif isinstance(c.target, tuple):
        rec["target"] = list(c.target)
    else:
        rec["target"] = c.target
    rec["weight"] = c.weight
    return rec


def _slot_record(slot: ParameterSlot):
    rec = {"kind": slot.kind}
    if slot.kind == P.ORIGIN_COORDINATE:
        rec["node"] = slot.subject
        rec["axis"] = slot.axis
    else:
        rec["edge"] = list(slot.subject)
    rec["bounds"] = [slot.lower, slot.upper]
    return rec


def model_document(model: Model) -> dict:
    """Decoded JSON document equivalent to ``model`` (all defaults written out)."""
    T = model.topology
    nodes = []
    for n in T.nodes:
        rec = {"id": n}
        if n in T.positions:
            rec["position"] = list(T.positions[n])
        rec["load"] = list(T.load(n))
        nodes.append(rec)
    edges = []
    for key in sorted(T.edges):
        e = T.edges[key]
        rec = {"i": e.i, "j": e.j, "label": e.label, "state": e.state}
        if e.label == TRAIL:
            rec["length"] = T.trail_lengths[key]
        else:
            rec["force"] = T.deviation_forces[key]
        edges.append(rec)
    s, o = model.settings, model.options
    doc = {
        "version": VERSION,
        "name": model.name,
        "nodes": nodes,
        "edges": edges,
        "supports": sorted(T.supports),
        "auxiliary": {"auto": model.auxiliary, "state": model.auxiliary_state},
        "constraints": [_constraint_record(c) for c in model.constraints],
        "parameters": [_slot_record(slot) for slot in model.pmap],
        "solver": {
            "t_max": s.t_max, "eta_min": s.eta_min, "normalize_eta": s.normalize_eta,
            "epsilon": o.epsilon, "max_iter": o.max_iter, "algorithm": o.algorithm,
            "grad": o.grad, "fd_step": o.fd_step, "fd_scheme": o.fd_scheme,
        },
    }
    if model.trails is not None:
        doc["trails"] = [list(t) for t in model.trails]
    return doc


def dumps(doc) -> str:
    """JSON text with one list entry per line; floats are written with repr.

    repr gives the shortest decimal that reads back bit-identical.
    """
    lines = ["{"]
    items = list(doc.items())
    for idx, (key, value) in enumerate(items):
        comma = "," if idx < len(items) - 1 else ""
        if isinstance(value, list) and value and isinstance(value[0], (dict, list)):
            lines.append(f"  {json.dumps(key)}: [")
            for k, entry in enumerate(value):
                tail = "," if k < len(value) - 1 else ""
                lines.append(f"    {json.dumps(entry)}{tail}")
            lines.append(f"  ]{comma}")
        else:
            lines.append(f"  {json.dumps(key)}: {json.dumps(value)}{comma}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def serialize_model(model: Model) -> str:
    return dumps(model_document(model))


def with_overrides(model: Model, **overrides) -> Model:
    """Copy of ``model`` with solver settings or optimizer options replaced.

    Keys that are ``None`` are ignored, so command-line flags can be passed
    through unconditionally.
    """
    overrides = {k: v for k, v in overrides.items() if v is not None}
    setting_keys = {"t_max", "eta_min", "normalize_eta"}
    settings = replace(model.settings, **{k: v for k, v in overrides.items() if k in setting_keys})
    options = replace(model.options, **{k: v for k, v in overrides.items()
                                        if k not in setting_keys and k not in ("auxiliary",)})
    aux = overrides.get("auxiliary", model.auxiliary)
    return replace(model, settings=settings, options=options, auxiliary=aux)


# state files


def _signed_force(T, u, key):
    e = T.edges[key]
    if e.label == TRAIL:
        return e.state * u.trail_forces.get(key, 0.0)
    return e.state * u.deviation_forces.get(key, T.deviation_forces.get(key, 0.0))


def state_document(u: EquilibriumState, T: TopologyDiagram, report=None) -> dict:
    """Decoded JSON document of a solved state, self-contained for export."""
    u = u.to_floats()
    nodes = []
    for n in T.nodes:
        rec = {"id": n, "position": list(u.positions[n])}
        if n in T.supports:
            rec["support"] = True
            rec["reaction"] = list(u.reactions.get(n, (0.0, 0.0, 0.0)))
        if n in T.loads:
            rec["load"] = list(T.loads[n])
        nodes.append(rec)
    edges = []
    for key in sorted(T.edges):
        e = T.edges[key]
        rec = {"i": e.i, "j": e.j, "label": e.label, "state": e.state}
        if e.label == TRAIL:
            rec["force"] = u.trail_forces.get(key, 0.0)
            rec["length"] = u.trail_lengths.get(key, T.trail_lengths[key])
        else:
            rec["force"] = u.deviation_forces.get(key, T.deviation_forces[key])
            rec["length"] = u.deviation_lengths.get(key, 0.0)
        if key in T.auxiliary_edges:
            rec["auxiliary"] = True
        edges.append(rec)
    doc = {
        "version": VERSION,
        "kind": "state",
        "nodes": nodes,
        "edges": edges,
        "iterations_used": u.iterations_used,
        "final_eta": u.final_eta,
        "eta_history": list(u.eta_history),
        "converged": u.converged,
    }
    if report is not None:
        doc["report"] = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    return doc


def dump_state(u, T, report=None) -> str:
    return dumps(state_document(u, T, report))


def load_state(text):
    """Read a state file back as ``(EquilibriumState, TopologyDiagram)``."""
    try:
        doc = json.loads(text) if isinstance(text, (str, bytes, bytearray)) else text
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                         code="invalid json") from exc
    if not isinstance(doc, dict) or doc.get("kind") != "state":
        raise ModelError("not a state file (expected \"kind\": \"state\")", code="schema violation")
    try:
        nodes = doc["nodes"]
        edges = doc["edges"]
        T = build_topology(
            nodes=[{"id": n["id"], "position": n["position"], "load": n.get("load")} for n in nodes],
            edges=[{"i": e["i"], "j": e["j"], "label": e["label"], "state": e["state"],
                    "length": e["length"] if e["label"] == TRAIL else None,
                    "force": e["force"] if e["label"] == DEVIATION else None} for e in edges],
            supports=[n["id"] for n in nodes if n.get("support")],
        )
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed state file: missing {exc}", code="schema violation") from exc
    except TopologyError as exc:
        raise ModelError(f"malformed state file: {exc}", code=exc.code) from exc
    aux = frozenset(edge_key(e["i"], e["j"]) for e in edges if e.get("auxiliary"))
    T = replace(T, auxiliary_edges=aux)
    trail_forces = {edge_key(e["i"], e["j"]): float(e["force"]) for e in edges if e["label"] == TRAIL}
    dev_lengths = {edge_key(e["i"], e["j"]): float(e["length"]) for e in edges if e["label"] == DEVIATION}
    dev_forces = {edge_key(e["i"], e["j"]): float(e["force"]) for e in edges if e["label"] == DEVIATION}
    trail_lengths = {edge_key(e["i"], e["j"]): float(e["length"]) for e in edges if e["label"] == TRAIL}
    u = EquilibriumState(
        positions={n["id"]: tuple(float(c) for c in n["position"]) for n in nodes},
        trail_forces=trail_forces,
        deviation_lengths=dev_lengths,
        reactions={n["id"]: tuple(float(c) for c in n["reaction"]) for n in nodes if n.get("support")},
        deviation_forces=dev_forces,
        trail_lengths=trail_lengths,
        iterations_used=doc.get("iterations_used", 1),
        final_eta=doc.get("final_eta", 0.0),
        eta_history=tuple(doc.get("eta_history", ())),
        converged=doc.get("converged", True),
    )
    return u, T


# form-diagram export

SVG_SIZE = 600.0
SVG_MARGIN = 20.0
MAX_STROKE = 4.0
TENSION_COLOR = "#d62728"
COMPRESSION_COLOR = "#1f4fd6"
NEUTRAL_COLOR = "#7f7f7f"


def _fmt(v):
    v = round(v, 4)
    return f"{v + 0.0:.4f}".rstrip("0").rstrip(".")


def _svg(u, T, plane="xz"):
    if plane not in PLANES:
        raise ModelError(f"unknown projection plane {plane!r}; choose from {sorted(PLANES)}",
                         code="unknown plane")
    a, b = PLANES[plane]
    head = '<?xml version="1.0" encoding="UTF-8"?>\n'
    if not T.nodes:
        return head + ('<svg xmlns="http://www.w3.org/2000/svg" width="1" height="1" '
                       'viewBox="0 0 1 1"/>\n')
    pts = {n: (u.positions[n][a], u.positions[n][b]) for n in T.nodes}
    xs = [p[0] for p in pts.values()]
    ys = [p[1] for p in pts.values()]
    span = max(max(xs) - min(xs), max(ys) - min(ys)) or 1.0
    scale = (SVG_SIZE - 2 * SVG_MARGIN) / span
    width = (max(xs) - min(xs)) * scale + 2 * SVG_MARGIN
    height = (max(ys) - min(ys)) * scale + 2 * SVG_MARGIN

    def to_px(p):
        # svg y runs downward
        return (SVG_MARGIN + (p[0] - min(xs)) * scale, SVG_MARGIN + (max(ys) - p[1]) * scale)

    forces = {key: _signed_force(T, u, key) for key in T.edges}
    fmax = max((abs(f) for f in forces.values()), default=0.0) or 1.0
    lines = [head,
             f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
             f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">\n',
             f'<g id="edges" data-plane="{plane}" stroke-linecap="round">\n']
    for key in sorted(T.edges):
        f = forces[key]
        (x1, y1), (x2, y2) = to_px(pts[key[0]]), to_px(pts[key[1]])
        if f > 0:
            kind, color = "tension", TENSION_COLOR
        elif f < 0:
            kind, color = "compression", COMPRESSION_COLOR
        else:
            kind, color = "zero", NEUTRAL_COLOR
        stroke = MAX_STROKE * abs(f) / fmax
        style = f'stroke="{color}" stroke-width="{_fmt(stroke)}"'
        if kind == "zero":
            # a zero-force edge would be invisible at proportional width
            style = f'stroke="{color}" stroke-width="0.5" stroke-dasharray="2 2"'
        label = T.edges[key].label
        lines.append(f'<line class="{kind} {label}" data-edge="{key[0]}-{key[1]}" '
                     f'data-force="{f!r}" x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" '
                     f'y2="{_fmt(y2)}" {style}/>\n')
    lines.append("</g>\n<g id=\"nodes\" fill=\"#000000\">\n")
    for n in T.nodes:
        x, y = to_px(pts[n])
        r = 3.0 if n in T.supports else 1.5
        lines.append(f'<circle data-node="{n}" cx="{_fmt(x)}" cy="{_fmt(y)}" r="{_fmt(r)}"/>\n')
    lines.append("</g>\n</svg>\n")
    return "".join(lines)


def _obj(u, T):
    out = ["# cemkit form diagram\n"]
    index = {}
    for idx, n in enumerate(T.nodes, start=1):
        index[n] = idx
        x, y, z = u.positions[n]
        out.append(f"v {x!r} {y!r} {z!r}\n")
    for key in sorted(T.edges):
        out.append(f"l {index[key[0]]} {index[key[1]]}\n")
    return "".join(out)


def export_form(u: EquilibriumState, T: TopologyDiagram, format="json", plane="xz", report=None) -> bytes:
    """Render a solved state as a json state file, an svg projection or obj polylines."""
    u = u.to_floats()
    if format == "json":
        return dump_state(u, T, report).encode()
    if format == "svg":
        return _svg(u, T, plane).encode()
    if format == "obj":
        return _obj(u, T).encode()
    raise ModelError(f"unknown export format {format!r}; choose from {', '.join(FORMATS)}",
                     code="unknown format")

