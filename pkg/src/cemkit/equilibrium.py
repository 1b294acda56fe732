"""Sequential and iterative CEM form-finding.

Equilibrium is built one sequence at a time: at every trail node the
incoming trail force, the deviation forces and the load are summed into a
residual that the outgoing trail edge absorbs. The residual fixes the
direction of that edge and its force; its prescribed length places the next
node. Diagrams with indirect deviation edges (edges between nodes of
different sequences) are swept repeatedly until nodes stop moving.

All arithmetic is written on scalars so the solver can be traced by
:mod:`cemkit.autodiff`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

from cemkit.autodiff import primal, scope, sqrt
from cemkit.errors import EquilibriumError
from cemkit.topology import TopologyDiagram, classify_deviation_edges, edge_key

ZERO = (0.0, 0.0, 0.0)
DEGENERACY_TOLERANCE = 1e-12


def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _norm(a):
    return sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


@dataclass
class DesignParameters:
    """Inputs of the solver: the immutable part of an equilibrium state."""

    deviation_forces: Mapping
    trail_lengths: Mapping
    origin_positions: Mapping
    loads: Mapping

    @classmethod
    def from_topology(cls, T: TopologyDiagram):
        return cls(
            deviation_forces=dict(T.deviation_forces),
            trail_lengths=dict(T.trail_lengths),
            origin_positions=dict(T.positions),
            loads=dict(T.loads),
        )

    def load(self, node):
        return self.loads.get(node, ZERO)

    def copy(self):
        return DesignParameters(dict(self.deviation_forces), dict(self.trail_lengths),
                                dict(self.origin_positions), dict(self.loads))

    def to_floats(self):
        return DesignParameters(
            {k: primal(v) for k, v in self.deviation_forces.items()},
            {k: primal(v) for k, v in self.trail_lengths.items()},
            {n: tuple(primal(c) for c in p) for n, p in self.origin_positions.items()},
            {n: tuple(primal(c) for c in q) for n, q in self.loads.items()},
        )


@dataclass(frozen=True)
class SolverSettings:
    t_max: int = 100
    eta_min: float = 1e-6
    normalize_eta: bool = False

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if not self.eta_min > 0.0:
            raise ValueError("eta_min must be positive")


@dataclass
class EquilibriumState:
    """Solver output.

    ``deviation_forces`` and ``trail_lengths`` echo the inputs so that a
    state is self-contained for export.
    """

    positions: dict
    trail_forces: dict
    deviation_lengths: dict
    reactions: dict
    deviation_forces: dict = field(default_factory=dict)
    trail_lengths: dict = field(default_factory=dict)
    iterations_used: int = 1
    final_eta: float = 0.0
    eta_history: tuple = ()
    converged: bool = True

    def to_floats(self):
        return replace(
            self,
            positions={n: tuple(primal(c) for c in p) for n, p in self.positions.items()},
            trail_forces={k: primal(v) for k, v in self.trail_forces.items()},
            deviation_lengths={k: primal(v) for k, v in self.deviation_lengths.items()},
            reactions={n: tuple(primal(c) for c in r) for n, r in self.reactions.items()},
            deviation_forces={k: primal(v) for k, v in self.deviation_forces.items()},
            trail_lengths={k: primal(v) for k, v in self.trail_lengths.items()},
        )


def node_residual(t_prev, d, q, k):
    """Residual force absorbed by the outgoing trail edge of a node."""
    if k == 1:
        return (-d[0] - q[0], -d[1] - q[1], -d[2] - q[2])
    return (t_prev[0] - d[0] - q[0], t_prev[1] - d[1] - q[1], t_prev[2] - d[2] - q[2])


def deviation_resultant(node, positions, deviation_forces, force_states, active_edges):
    """Sum of the deviation edge forces acting on ``node``.

    ``active_edges`` lists ``(neighbor, edge_key)`` pairs. Each edge pulls
    the node toward its neighbor when in tension (state +1) and pushes it
    away when in compression (state -1).
    """
    if not active_edges:
        return ZERO
    p = positions[node]
    dx = dy = dz = None
    for other, key in active_edges:
        pm = positions[other]
        vx, vy, vz = pm[0] - p[0], pm[1] - p[1], pm[2] - p[2]
        length = sqrt(vx * vx + vy * vy + vz * vz) if _nonzero(vx, vy, vz) else 0.0
        if primal(length) <= DEGENERACY_TOLERANCE:
            raise EquilibriumError(f"degenerate deviation edge {key}: coincident endpoints",
                                   code="degenerate deviation edge")
        scale = force_states[key] * deviation_forces[key] / length
        if dx is None:
            dx, dy, dz = scale * vx, scale * vy, scale * vz
        else:
            dx, dy, dz = dx + scale * vx, dy + scale * vy, dz + scale * vz
    return (dx, dy, dz)


def _nonzero(*components):
    return any(primal(c) != 0.0 for c in components)


def next_position(p_i, c, length, t):
    """Position of the next trail node: a step of ``length`` along the residual."""
    if not _nonzero(*t):
        raise EquilibriumError("indeterminate trail direction: zero residual force",
                               code="indeterminate trail direction")
    with scope("scale"):
        factor = c / _norm(t)
        scaled = length * factor
        step = (scaled * t[0], scaled * t[1], scaled * t[2])
    with scope("translate"):
        return (p_i[0] + step[0], p_i[1] + step[1], p_i[2] + step[2])


def equilibrium_distance(P_t, P_prev, normalize=False):
    """Cumulative nodal displacement between two position sets."""
    total = 0.0
    for n, p in P_t.items():
        q = P_prev[n]
        dx = primal(p[0]) - primal(q[0])
        dy = primal(p[1]) - primal(q[1])
        dz = primal(p[2]) - primal(q[2])
        total += (dx * dx + dy * dy + dz * dz) ** 0.5
    if normalize and P_t:
        total /= len(P_t)
    return total


def form_find(T, trails, sequences, x: DesignParameters, settings: SolverSettings = SolverSettings(),
              load_update: Callable | None = None) -> EquilibriumState:
    """Compute the state of static equilibrium of ``T`` under parameters ``x``.

    ``load_update``, when given, is called as ``load_update(positions, x)``
    before every sweep after the first and returns the loads to use; this is
    the hook for form-dependent load cases and forces iterative solving.
    """
    states = {k: e.state for k, e in T.edges.items()}
    direct_keys, indirect_keys = classify_deviation_edges(T, sequences)
    indirect = set(indirect_keys)

    incident = {n: [] for n in T.nodes}
    for key in sorted(T.deviation_edges):
        a, b = key
        incident[a].append((b, key))
        incident[b].append((a, key))
    direct_only = {n: [(m, key) for m, key in edges if key not in indirect]
                   for n, edges in incident.items()}

    positions = {}
    for n in T.nodes:
        if n in x.origin_positions:
            positions[n] = tuple(x.origin_positions[n])
        elif n in T.positions:
            positions[n] = tuple(T.positions[n])
        else:
            positions[n] = ZERO
    for trail in trails:
        if trail.origin not in x.origin_positions:
            raise EquilibriumError(f"origin node {trail.origin} has no position",
                                   code="missing origin position")

    # trails grouped by the sequence at which each of their nodes is solved
    by_sequence = [[] for _ in range(sequences.k_max + 1)]
    for idx, trail in enumerate(trails):
        for k in range(1, len(trail) + 1):
            by_sequence[k].append(idx)

    iterate = bool(indirect) or load_update is not None
    loads = x.loads
    t_max = settings.t_max if iterate else 1
    eta_history = []
    trail_forces = {}
    reactions = {}
    converged = not iterate
    sweep = 0
    for sweep in range(1, t_max + 1):
        if load_update is not None and sweep > 1:
            loads = load_update(positions, x)
        previous = dict(positions)
        active = direct_only if sweep == 1 else incident
        residuals = [None] * len(trails)
        for k in range(1, sequences.k_max + 1):
            for idx in by_sequence[k]:
                trail = trails[idx].nodes
                node = trail[k - 1]
                d = deviation_resultant(node, positions, x.deviation_forces, states, active[node])
                q = loads.get(node, ZERO)
                if k == len(trail):
                    t_in = residuals[idx]
                    reactions[node] = (t_in[0] - d[0] - q[0], t_in[1] - d[1] - q[1],
                                       t_in[2] - d[2] - q[2])
                    continue
                t = node_residual(residuals[idx], d, q, k)
                nxt = trail[k]
                key = edge_key(node, nxt)
                positions[nxt] = next_position(positions[node], states[key],
                                               x.trail_lengths[key], t)
                trail_forces[key] = _norm(t)
                residuals[idx] = t
        if not iterate:
            break
        eta = equilibrium_distance(positions, previous, settings.normalize_eta)
        eta_history.append(eta)
        if sweep > 1 and eta <= settings.eta_min:
            converged = True
            break

    deviation_lengths = {}
    for key in T.deviation_edges:
        a, b = key
        deviation_lengths[key] = _norm(_sub(positions[b], positions[a]))

    return EquilibriumState(
        positions=positions,
        trail_forces=trail_forces,
        deviation_lengths=deviation_lengths,
        reactions=reactions,
        deviation_forces=dict(x.deviation_forces),
        trail_lengths=dict(x.trail_lengths),
        iterations_used=sweep,
        final_eta=eta_history[-1] if eta_history else 0.0,
        eta_history=tuple(eta_history),
        converged=converged,
    )

