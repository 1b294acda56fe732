"""Constraint residuals and the penalty objective.

Every constraint measures the distance between one attribute of an
equilibrium state and a target. The objective adds the weighted squared
residuals; auxiliary trail edges contribute zero-force terms automatically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from cemkit.autodiff import primal, scope, sqrt
from cemkit.errors import CEMError
from cemkit.topology import TRAIL, edge_key

NODE_POSITION = "NodePosition"
EDGE_DIRECTION = "EdgeDirection"
DEVIATION_LENGTH = "DeviationLength"
TRAIL_FORCE = "TrailForce"
LOAD_PATH = "LoadPath"
REACTION_FORCE = "ReactionForce"
NODE_ON_LINE = "NodeOnLine"
NODE_ON_PLANE = "NodeOnPlane"

NODE_KINDS = (NODE_POSITION, REACTION_FORCE, NODE_ON_LINE, NODE_ON_PLANE)
EDGE_KINDS = (EDGE_DIRECTION, DEVIATION_LENGTH, TRAIL_FORCE, LOAD_PATH)
KINDS = NODE_KINDS + EDGE_KINDS


class ConstraintError(CEMError, ValueError):
    code = "constraint error"


def _vec(v, what):
    v = tuple(float(c) for c in v)
    if len(v) != 3:
        raise ConstraintError(f"{what} must be a 3-vector")
    return v


def _unit(v, what):
    v = _vec(v, what)
    n = math.sqrt(sum(c * c for c in v))
    if abs(n - 1.0) > 1e-9:
        raise ConstraintError(f"{what} must have unit norm, got {n}")
    return v


def normalized(v):
    n = math.sqrt(sum(float(c) ** 2 for c in v))
    if n == 0.0:
        raise ConstraintError("cannot normalize a zero vector")
    return tuple(float(c) / n for c in v)


@dataclass(frozen=True)
class ConstraintSpec:
    """A weighted target on one node or edge of an equilibrium state.

    ``target`` is a 3-vector (positions, directions, reactions), a scalar
    (lengths, forces, load paths) or a ``(point, unit vector)`` pair for
    lines and planes. ``EdgeDirection`` keeps the edge orientation as given.
    """

    kind: str
    subject: object
    target: object
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConstraintError(f"unknown constraint kind {self.kind!r}", code="unknown constraint kind")
        if self.weight < 0:
            raise ConstraintError(f"{self.kind}: weight must be nonnegative")
        if self.kind in (NODE_POSITION, REACTION_FORCE):
            object.__setattr__(self, "target", _vec(self.target, f"{self.kind} target"))
        elif self.kind == EDGE_DIRECTION:
            object.__setattr__(self, "target", _unit(self.target, "EdgeDirection target"))
        elif self.kind in (NODE_ON_LINE, NODE_ON_PLANE):
            point, direction = self.target
            what = "line direction" if self.kind == NODE_ON_LINE else "plane normal"
            object.__setattr__(self, "target", (_vec(point, "anchor point"), _unit(direction, what)))
        else:
            object.__setattr__(self, "target", float(self.target))
        if self.kind in EDGE_KINDS:
            i, j = self.subject
            object.__setattr__(self, "subject", (i, j))

    @property
    def size(self):
        if self.kind in (NODE_POSITION, REACTION_FORCE, EDGE_DIRECTION, NODE_ON_LINE):
            return 3
        return 1


def node_position(node, target, weight=1.0):
    return ConstraintSpec(NODE_POSITION, node, target, weight)


def edge_direction(edge, target, weight=1.0):
    return ConstraintSpec(EDGE_DIRECTION, tuple(edge), normalized(target), weight)


def deviation_length(edge, target, weight=1.0):
    return ConstraintSpec(DEVIATION_LENGTH, tuple(edge), target, weight)


def trail_force(edge, target, weight=1.0):
    return ConstraintSpec(TRAIL_FORCE, tuple(edge), target, weight)


def load_path(edge, target, weight=1.0):
    return ConstraintSpec(LOAD_PATH, tuple(edge), target, weight)


def reaction_force(node, target, weight=1.0):
    return ConstraintSpec(REACTION_FORCE, node, target, weight)


def node_on_line(node, point, direction, weight=1.0):
    return ConstraintSpec(NODE_ON_LINE, node, (point, normalized(direction)), weight)


def node_on_plane(node, point, normal, weight=1.0):
    return ConstraintSpec(NODE_ON_PLANE, node, (point, normalized(normal)), weight)


@dataclass(frozen=True)
class ObjectiveSpec:
    constraints: tuple = ()
    auxiliary_edges: tuple = ()
    epsilon: float = 1e-6
    auxiliary_weight: float = 1.0

    def with_auxiliary(self, edges):
        return ObjectiveSpec(self.constraints, tuple(sorted(edges)), self.epsilon, self.auxiliary_weight)

    def expanded(self):
        """Explicit constraints followed by one zero-force term per auxiliary edge."""
        aux = tuple(trail_force(e, 0.0, self.auxiliary_weight) for e in self.auxiliary_edges)
        return tuple(self.constraints) + aux


def _require_edge(c, T, label=None):
    key = edge_key(*c.subject)
    edge = T.edges.get(key)
    if edge is None:
        raise ConstraintError(f"{c.kind}: edge {c.subject} not found", code="subject not found")
    if label is not None and edge.label != label:
        raise ConstraintError(f"{c.kind}: edge {c.subject} is not a {label} edge",
                              code="subject not found")
    return key, edge


def constraint_residual(c: ConstraintSpec, u, T, x):
    """Residual vector of constraint ``c`` on state ``u``; zero when satisfied."""
    if c.kind in NODE_KINDS:
        if c.subject not in u.positions:
            raise ConstraintError(f"{c.kind}: node {c.subject} not found", code="subject not found")
        p = u.positions[c.subject]
        if c.kind == NODE_POSITION:
            t = c.target
            return (p[0] - t[0], p[1] - t[1], p[2] - t[2])
        if c.kind == REACTION_FORCE:
            if c.subject not in u.reactions:
                raise ConstraintError(f"ReactionForce: node {c.subject} is not a support",
                                      code="subject not found")
            r = u.reactions[c.subject]
            t = c.target
            return (r[0] - t[0], r[1] - t[1], r[2] - t[2])
        a, n = c.target
        v = (p[0] - a[0], p[1] - a[1], p[2] - a[2])
        along = v[0] * n[0] + v[1] * n[1] + v[2] * n[2]
        if c.kind == NODE_ON_PLANE:
            return (along,)
        return (v[0] - along * n[0], v[1] - along * n[1], v[2] - along * n[2])

    if c.kind == EDGE_DIRECTION:
        _require_edge(c, T)
        i, j = c.subject
        pi, pj = u.positions[i], u.positions[j]
        v = (pj[0] - pi[0], pj[1] - pi[1], pj[2] - pi[2])
        if all(primal(comp) == 0.0 for comp in v):
            raise ConstraintError(f"EdgeDirection: edge {c.subject} is degenerate",
                                  code="degenerate edge")
        length = sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
        a = c.target
        return (v[0] / length - a[0], v[1] / length - a[1], v[2] / length - a[2])
    if c.kind == DEVIATION_LENGTH:
        key, _ = _require_edge(c, T, label="deviation")
        return (u.deviation_lengths[key] - c.target,)
    if c.kind == TRAIL_FORCE:
        key, _ = _require_edge(c, T, label=TRAIL)
        return (u.trail_forces[key] - c.target,)
    # load path: absolute force times length of the edge
    key, edge = _require_edge(c, T)
    if edge.label == TRAIL:
        phi = u.trail_forces[key] * x.trail_lengths[key]
    else:
        phi = x.deviation_forces[key] * u.deviation_lengths[key]
    return (phi - c.target,)


def _total(terms):
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total


def penalty(u, T, x, constraints):
    """Weighted half sum of squared residuals of ``constraints`` on state ``u``."""
    if not constraints:
        return 0.0
    terms = []
    for c in constraints:
        with scope("residual"):
            g = constraint_residual(c, u, T, x)
        with scope("square"):
            squares = [gi * gi for gi in g]
        with scope("sum"):
            squared_norm = _total(squares)
        with scope("weight"):
            terms.append(c.weight * squared_norm)
    with scope("total"):
        total = _total(terms)
    with scope("half"):
        return 0.5 * total


def objective(T, trails, sequences, x_template, s, spec: ObjectiveSpec, settings, pmap):
    """Penalty objective at optimization vector ``s``; traceable end to end."""
    from cemkit.equilibrium import form_find
    from cemkit.parameters import unpack

    x = unpack(s, pmap, x_template)
    u = form_find(T, trails, sequences, x, settings)
    return penalty(u, T, x, spec.expanded())
