"""Topology diagrams: nodes, labeled edges, supports, trails and sequences.

A topology diagram stores the connectivity of a pin-jointed bar network
together with the design values attached to it (trail lengths, deviation
forces, origin positions and loads). Diagrams are immutable; operations
that add auxiliary trails return a new diagram.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from cemkit.errors import TopologyError

TRAIL = "trail"
DEVIATION = "deviation"
LABELS = (TRAIL, DEVIATION)

#: Offset of an auxiliary support node relative to its origin node.
AUXILIARY_OFFSET = (0.0, 0.0, -1.0)
AUXILIARY_LENGTH = 1.0

Key = tuple  # canonical (min id, max id) pair
Vec = tuple


def edge_key(i, j):
    """Canonical key of the undirected edge between nodes ``i`` and ``j``."""
    return (i, j) if i < j else (j, i)


def _vec3(value, what):
    try:
        vec = tuple(float(c) for c in value)
    except TypeError:
        raise TopologyError(f"{what} must be a 3-vector, got {value!r}") from None
    if len(vec) != 3:
        raise TopologyError(f"{what} must be a 3-vector, got {len(vec)} components")
    return vec


@dataclass(frozen=True)
class Edge:
    i: int
    j: int
    label: str
    state: int

    @property
    def key(self):
        return edge_key(self.i, self.j)

    @property
    def is_trail(self):
        return self.label == TRAIL


@dataclass(frozen=True, eq=False)
class TopologyDiagram:
    """Graph of a bar structure with its design values.

    ``positions`` holds every position given by the user; only those of
    origin nodes are design parameters, the rest serve as initial guesses.
    """

    nodes: tuple
    edges: Mapping
    supports: frozenset
    loads: Mapping
    positions: Mapping
    trail_lengths: Mapping
    deviation_forces: Mapping
    auxiliary_edges: frozenset = field(default_factory=frozenset)

    @property
    def N(self):
        return len(self.nodes)

    @property
    def M(self):
        return len(self.edges)

    @property
    def L(self):
        return len(self.supports)

    @property
    def trail_edges(self):
        return tuple(k for k, e in self.edges.items() if e.label == TRAIL)

    @property
    def deviation_edges(self):
        return tuple(k for k, e in self.edges.items() if e.label == DEVIATION)

    def state(self, i, j):
        return self.edges[edge_key(i, j)].state

    def load(self, node):
        return self.loads.get(node, (0.0, 0.0, 0.0))

    def neighbors(self, node, label=None):
        """Sorted neighbors of ``node``, optionally restricted to one edge label."""
        return self._adjacency(label).get(node, ())

    def _adjacency(self, label):
        cache = self.__dict__.setdefault("_adj_cache", {})
        if label not in cache:
            adj = {}
            for (a, b), e in self.edges.items():
                if label is None or e.label == label:
                    adj.setdefault(a, []).append(b)
                    adj.setdefault(b, []).append(a)
            cache[label] = {n: tuple(sorted(v)) for n, v in adj.items()}
        return cache[label]

    def __contains__(self, node):
        return node in self._node_set()

    def _node_set(self):
        cache = self.__dict__.setdefault("_node_set_cache", None)
        if cache is None:
            cache = frozenset(self.nodes)
            self.__dict__["_node_set_cache"] = cache
        return cache


@dataclass(frozen=True)
class Trail:
    nodes: tuple
    is_auxiliary: bool = False

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise TopologyError(f"a trail needs at least two nodes, got {list(self.nodes)}")

    @property
    def origin(self):
        return self.nodes[0]

    @property
    def support(self):
        return self.nodes[-1]

    @property
    def edges(self):
        return tuple(edge_key(a, b) for a, b in zip(self.nodes, self.nodes[1:]))

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


@dataclass(frozen=True)
class SequenceAssignment:
    k: Mapping
    k_max: int

    def __getitem__(self, node):
        return self.k[node]


@dataclass(frozen=True)
class Violation:
    rule: str
    subject: object
    message: str


@dataclass(frozen=True)
class ValidityReport:
    violations: tuple = ()

    @property
    def is_valid(self):
        return not self.violations

    def __str__(self):
        if self.is_valid:
            return "valid topology"
        lines = [f"invalid topology ({len(self.violations)} violations)"]
        lines += [f"  {v.rule}: {v.subject}: {v.message}" for v in self.violations]
        return "\n".join(lines)


def _node_entry(entry):
    if isinstance(entry, Mapping):
        if "id" not in entry:
            raise TopologyError(f"node entry without id: {entry!r}")
        return entry["id"], entry.get("position"), entry.get("load")
    return entry, None, None


def _edge_entry(entry):
    if isinstance(entry, Mapping):
        try:
            i, j = entry["i"], entry["j"]
        except KeyError:
            raise TopologyError(f"edge entry needs 'i' and 'j': {entry!r}") from None
        label = entry.get("label", TRAIL)
        state = entry.get("state", 1)
        value = entry.get("length") if label == TRAIL else entry.get("force")
        return i, j, label, state, value
    entry = tuple(entry)
    if len(entry) == 5:
        return entry
    if len(entry) == 4:
        return (*entry, None)
    raise TopologyError(f"edge tuple must be (i, j, label, state[, value]), got {entry!r}")


def build_topology(nodes: Iterable = (), edges: Iterable = (), supports: Iterable = (),
                   loads: Mapping | None = None, positions: Mapping | None = None):
    """Assemble a :class:`TopologyDiagram` from a declarative description.

    ``nodes`` holds ids or ``{"id", "position", "load"}`` mappings. ``edges``
    holds ``{"i", "j", "label", "state", "length" | "force"}`` mappings or
    ``(i, j, label, state, value)`` tuples. ``loads`` and ``positions`` map
    node ids to 3-vectors and override per-node entries.
    """
    node_ids = []
    seen = set()
    pos = {}
    node_loads = {}
    for entry in nodes:
        nid, p, q = _node_entry(entry)
        if isinstance(nid, bool) or not isinstance(nid, int):
            raise TopologyError(f"node ids must be integers, got {nid!r}")
        if nid in seen:
            raise TopologyError(f"duplicate id: node {nid}", code="duplicate id")
        seen.add(nid)
        node_ids.append(nid)
        if p is not None:
            pos[nid] = _vec3(p, f"position of node {nid}")
        if q is not None:
            node_loads[nid] = _vec3(q, f"load of node {nid}")
    for nid, p in (positions or {}).items():
        if nid not in seen:
            raise TopologyError(f"position given for unknown node {nid}", code="dangling edge")
        pos[nid] = _vec3(p, f"position of node {nid}")
    for nid, q in (loads or {}).items():
        if nid not in seen:
            raise TopologyError(f"load given for unknown node {nid}", code="dangling edge")
        node_loads[nid] = _vec3(q, f"load of node {nid}")

    edge_map = {}
    lengths = {}
    forces = {}
    for entry in edges:
        i, j, label, state, value = _edge_entry(entry)
        for n in (i, j):
            if n not in seen:
                raise TopologyError(f"dangling edge ({i}, {j}): node {n} does not exist",
                                    code="dangling edge")
        if i == j:
            raise TopologyError(f"edge ({i}, {j}) is a self-loop")
        if label not in LABELS:
            raise TopologyError(f"edge ({i}, {j}) has unknown label {label!r}")
        if state not in (-1, 1):
            raise TopologyError(f"edge ({i}, {j}) force state must be -1 or +1, got {state!r}")
        key = edge_key(i, j)
        if key in edge_map:
            raise TopologyError(f"duplicate id: edge ({i}, {j}) defined twice", code="duplicate id")
        edge_map[key] = Edge(i, j, label, int(state))
        if label == TRAIL:
            length = 1.0 if value is None else float(value)
            if length <= 0.0:
                raise TopologyError(f"negative trail length on edge ({i}, {j}): {length}",
                                    code="negative trail length")
            lengths[key] = length
        else:
            force = 0.0 if value is None else float(value)
            if force < 0.0:
                raise TopologyError(f"deviation force on edge ({i}, {j}) must be nonnegative")
            forces[key] = force

    support_set = frozenset(supports)
    for s in support_set:
        if s not in seen:
            raise TopologyError(f"support {s} is not a node", code="dangling edge")

    return TopologyDiagram(
        nodes=tuple(sorted(node_ids)),
        edges=MappingProxyType(edge_map),
        supports=support_set,
        loads=MappingProxyType(node_loads),
        positions=MappingProxyType(pos),
        trail_lengths=MappingProxyType(lengths),
        deviation_forces=MappingProxyType(forces),
    )


def _search_trail(T, support, assigned):
    path = [support]
    previous = None
    current = support
    while True:
        trail_nbrs = T.neighbors(current, TRAIL)
        limit = 1 if current == support else 2
        if len(trail_nbrs) > limit:
            raise TopologyError(f"trail overlap: node {current} branches into several trails",
                                code="trail overlap")
        ahead = [n for n in trail_nbrs if n != previous]
        if not ahead:
            return path
        nxt = ahead[0]
        if nxt in assigned or nxt in T.supports or nxt in path:
            raise TopologyError(f"trail overlap: node {nxt} is reachable from two supports",
                                code="trail overlap")
        path.append(nxt)
        previous, current = current, nxt


def assign_trails(T: TopologyDiagram, auto_auxiliary: bool = False, auxiliary_state: int = 1):
    """Find the trails of ``T`` by walking trail edges away from each support.

    With ``auto_auxiliary`` every node that ends up without a trail gets an
    auxiliary trail: a new support node one unit below it, linked by a trail
    edge of unit length. Returns ``(trails, diagram)`` where ``diagram`` is
    ``T`` itself or a copy including the auxiliary nodes and edges.
    """
    assigned = set()
    trails = []
    for support in sorted(T.supports):
        path = _search_trail(T, support, assigned)
        if len(path) == 1:
            raise TopologyError(f"support {support} has no trail edge", code="unassigned node")
        assigned.update(path)
        trails.append(Trail(tuple(reversed(path))))

    free = [n for n in T.nodes if n not in assigned]
    for n in free:
        if T.neighbors(n, TRAIL):
            raise TopologyError(f"unassigned node {n}: its trail edges do not reach a support",
                                code="unassigned node")
    if free and not auto_auxiliary:
        raise TopologyError(f"unassigned node(s) {free}: enable auxiliary trails or add trails",
                            code="unassigned node")
    if not free:
        return tuple(trails), T
    return attach_auxiliary(T, trails, free, auxiliary_state)


def attach_auxiliary(T: TopologyDiagram, trails: Sequence, nodes: Iterable, state: int = 1):
    """Append one auxiliary trail to each of ``nodes``.

    Each new support sits one unit below its origin (when the origin has a
    position) and is linked to it by a unit-length trail edge. Returns
    ``(trails + auxiliary trails, new diagram)``.
    """
    if state not in (-1, 1):
        raise TopologyError(f"auxiliary force state must be -1 or +1, got {state!r}")
    trails = list(trails)
    nodes = list(nodes)
    if not nodes:
        return tuple(trails), T
    edges = dict(T.edges)
    lengths = dict(T.trail_lengths)
    positions = dict(T.positions)
    supports = set(T.supports)
    aux_edges = set(T.auxiliary_edges)
    all_nodes = list(T.nodes)
    next_id = max(T.nodes) + 1
    for n in nodes:
        new = next_id
        next_id += 1
        all_nodes.append(new)
        supports.add(new)
        key = edge_key(n, new)
        edges[key] = Edge(n, new, TRAIL, state)
        lengths[key] = AUXILIARY_LENGTH
        aux_edges.add(key)
        if n in positions:
            positions[new] = tuple(a + b for a, b in zip(positions[n], AUXILIARY_OFFSET))
        trails.append(Trail((n, new), is_auxiliary=True))

    T2 = TopologyDiagram(
        nodes=tuple(all_nodes),
        edges=MappingProxyType(edges),
        supports=frozenset(supports),
        loads=T.loads,
        positions=MappingProxyType(positions),
        trail_lengths=MappingProxyType(lengths),
        deviation_forces=T.deviation_forces,
        auxiliary_edges=frozenset(aux_edges),
    )
    return tuple(trails), T2


def validate_topology(T: TopologyDiagram, trails: Sequence) -> ValidityReport:
    """Check both CEM modeling rules and report every violation found.

    Rule 1: every node belongs to exactly one trail. Rule 2: every trail has
    exactly one support, on its last node, and every support closes a trail.
    """
    violations = []
    owners = {}
    for idx, trail in enumerate(trails):
        nodes = tuple(trail)
        for n in nodes:
            owners.setdefault(n, []).append(idx)
        for a, b in zip(nodes, nodes[1:]):
            e = T.edges.get(edge_key(a, b))
            if e is None or e.label != TRAIL:
                violations.append(Violation("trail edges", idx,
                                            f"nodes {a} and {b} are not linked by a trail edge"))
        if len(nodes) < 2:
            violations.append(Violation("trail edges", idx, "a trail needs at least two nodes"))
        if nodes and nodes[-1] not in T.supports:
            violations.append(Violation("rule 2", idx, f"last node {nodes[-1]} is not a support"))
        inner = [n for n in nodes[:-1] if n in T.supports]
        if inner:
            violations.append(Violation("rule 2", idx, f"supports {inner} inside the trail"))

    for n in T.nodes:
        held = owners.get(n, [])
        if len(held) == 0:
            violations.append(Violation("rule 1", n, "node is not part of any trail"))
        elif len(held) > 1:
            violations.append(Violation("rule 1", n, f"node is shared by trails {held}"))

    closed = {tuple(t)[-1] for t in trails if len(tuple(t))}
    for s in sorted(T.supports):
        if s not in closed:
            violations.append(Violation("rule 2", s, "support does not terminate a trail"))
    if not T.supports and T.nodes:
        violations.append(Violation("rule 2", None, "diagram has no support nodes"))
    return ValidityReport(tuple(violations))


def compute_sequences(trails: Sequence) -> SequenceAssignment:
    k = {}
    for trail in trails:
        for idx, n in enumerate(trail):
            k[n] = idx + 1
    k_max = max((len(tuple(t)) for t in trails), default=0)
    return SequenceAssignment(MappingProxyType(k), k_max)


def classify_deviation_edges(T: TopologyDiagram, sequences: SequenceAssignment):
    """Split deviation edges into ``(direct, indirect)`` by sequence equality."""
    direct, indirect = [], []
    for key in sorted(T.deviation_edges):
        i, j = key
        (direct if sequences[i] == sequences[j] else indirect).append(key)
    return tuple(direct), tuple(indirect)
