"""Parametric benchmark structures and the AD-versus-FD harness.

Generators return model documents (decoded JSON dicts), so every benchmark
structure can also be written out and solved from the command line.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from importlib import resources

import numpy as np

from cemkit.errors import CEMError
from cemkit.model import VERSION, parse_model
from cemkit.optimize import solve

CSV_HEADER = ("family", "size", "params", "grad", "algo", "iters", "evals", "seconds", "L_final",
              "converged")
FAMILIES = ("wheel", "bridge", "tree")
#: Relative perturbation of the starting parameters per family. Bridges are
#: generated in exact balance, so their benchmark starts from a seeded jitter.
DEFAULT_JITTER = {"wheel": 0.0, "bridge": 0.05, "tree": 0.0}


def _node(nid, position=None, load=None):
    rec = {"id": nid}
    if position is not None:
        rec["position"] = [float(c) for c in position]
    if load is not None:
        rec["load"] = [float(c) for c in load]
    return rec


def _dev(i, j, state, force):
    return {"i": i, "j": j, "label": "deviation", "state": state, "force": float(force)}


def _trail(i, j, state, length):
    return {"i": i, "j": j, "label": "trail", "state": state, "length": float(length)}


def _all_forces(edges):
    return [{"kind": "deviation-force", "edge": [e["i"], e["j"]], "bounds": [0.0, None]}
            for e in edges if e["label"] == "deviation"]


def _solver(**kw):
    base = {"t_max": 100, "eta_min": 1e-6, "epsilon": 1e-6, "max_iter": 100, "algorithm": "lbfgs",
            "grad": "ad", "fd_step": 1e-6, "fd_scheme": "forward"}
    base.update(kw)
    return base


def gen_wheel(n_exp: int, radius: float = 1.0) -> dict:
    """Planar self-stressed spoke wheel with ``2**n_exp`` sides.

    The perimeter is a closed ring of tension deviation edges; each node is
    joined to the opposite node by a compression spoke. Every node gets an
    auxiliary trail, so after insertion the diagram has ``2**(n+1)`` nodes
    and ``1.5 * 2**n`` deviation edges. All deviation forces start at 1.
    """
    if not isinstance(n_exp, int) or not 2 <= n_exp <= 8:
        raise ValueError(f"wheel exponent must be an integer in [2, 8], got {n_exp!r}")
    if radius <= 0:
        raise ValueError("wheel radius must be positive")
    sides = 2 ** n_exp
    nodes = []
    for k in range(sides):
        a = 2.0 * math.pi * k / sides
        nodes.append(_node(k + 1, (radius * math.cos(a), radius * math.sin(a), 0.0)))
    edges = [_dev(k + 1, (k + 1) % sides + 1, 1, 1.0) for k in range(sides)]
    edges += [_dev(k + 1, k + 1 + sides // 2, -1, 1.0) for k in range(sides // 2)]
    return {
        "version": VERSION,
        "name": f"spoke wheel, {sides} sides",
        "nodes": nodes,
        "edges": edges,
        "supports": [],
        "auxiliary": {"auto": True, "state": 1},
        "constraints": [],
        "parameters": _all_forces(edges),
        "solver": _solver(),
    }


def gen_bridge(n_hangers: int, radius: float = 10.0, angle: float = math.pi / 3, width: float = 1.0,
               depth: float = 1.0, cantilever: float = 1.5, load: float = 1.0, slack: float = 1.02) -> dict:
    """Curved-in-plan bridge deck carried by two chords and triangular hangers.

    Chord A (outer, compression) and chord B (inner, tension, ``depth``
    higher) each run as two trails from a pair of origins at mid span out
    to a support at either end, the origins linked by a deviation edge.
    Every chord node carries one hanger: the tip cantilevers ``cantilever``
    beyond chord A, takes a downward ``load`` and is tied to both chords,
    which are also tied to each other. Tips get auxiliary trails.

    The generator balances its own design: tips are moved until the design
    forces carry their loads, and the four supports are pulled onto vertical
    lines through where they land. The document's start is therefore a
    solution; benchmarks perturb it (see :data:`DEFAULT_JITTER`).
    Deviation edges: three per hanger plus six bracing edges, four at mid
    span and one diagonal in each end panel (``3 * n_hangers + 6`` force
    parameters).
    """
    if not isinstance(n_hangers, int) or n_hangers < 4 or n_hangers % 2:
        raise ValueError(f"hanger count must be an even integer >= 4, got {n_hangers!r}")
    h = n_hangers
    half = h // 2
    step = angle / (h + 1)
    ra, rb, rt = radius + width / 2.0, radius - width / 2.0, radius + width / 2.0 + cantilever

    def at(r, m, z):
        phi = step * (m - (h + 1) / 2.0)
        return (r * math.sin(phi), radius - r * math.cos(phi), z)

    # ids: chord A nodes 1..h+2, chord B nodes h+3..2h+4, tips after that
    a_id = {m: m + 1 for m in range(h + 2)}
    b_id = {m: h + 3 + m for m in range(h + 2)}
    t_id = {m: 2 * h + 4 + m for m in range(1, h + 1)}
    origins = {half, half + 1}
    nodes, edges = [], []
    for m in range(h + 2):
        for ids, r, z in ((a_id, ra, 0.0), (b_id, rb, depth)):
            nodes.append(_node(ids[m], at(r, m, z) if m in origins else None))
    for m in range(1, h + 1):
        nodes.append(_node(t_id[m], at(rt, m, 0.0), (0.0, 0.0, -load)))

    # slack > 1 lets the sloping chords reach roughly their plan positions
    segment_a = 2.0 * ra * math.sin(step / 2.0) * slack
    segment_b = 2.0 * rb * math.sin(step / 2.0) * slack
    for m in range(half, 0, -1):
        edges.append(_trail(a_id[m], a_id[m - 1], -1, segment_a))
        edges.append(_trail(b_id[m], b_id[m - 1], 1, segment_b))
    for m in range(half + 1, h + 1):
        edges.append(_trail(a_id[m], a_id[m + 1], -1, segment_a))
        edges.append(_trail(b_id[m], b_id[m + 1], 1, segment_b))

    # hanger forces balancing the tip load in the design geometry
    reach = cantilever + width
    strut = load * reach / depth
    tie = load * math.hypot(reach, depth) / depth
    ring = strut / step
    for m in range(1, h + 1):
        edges.append(_dev(t_id[m], a_id[m], -1, strut))
        edges.append(_dev(t_id[m], b_id[m], 1, tie))
        edges.append(_dev(a_id[m], b_id[m], -1, load * math.hypot(width, depth) / depth / 2.0))
    edges.append(_dev(a_id[half], a_id[half + 1], -1, ring))
    edges.append(_dev(b_id[half], b_id[half + 1], 1, ring))
    edges.append(_dev(a_id[half], b_id[half + 1], 1, 0.1))
    edges.append(_dev(b_id[half], a_id[half + 1], 1, 0.1))
    edges.append(_dev(a_id[1], b_id[2], 1, 0.1))
    edges.append(_dev(a_id[h], b_id[h - 1], 1, 0.1))

    supports = [a_id[0], a_id[h + 1], b_id[0], b_id[h + 1]]
    doc = {
        "version": VERSION,
        "name": f"curved bridge, {h} hangers",
        "nodes": sorted(nodes, key=lambda n: n["id"]),
        "edges": edges,
        "supports": sorted(supports),
        "auxiliary": {"auto": True, "state": 1},
        "constraints": [],
        "parameters": _all_forces(edges),
        "solver": _solver(),
    }
    state = _balance_tips(doc, list(t_id.values()))
    for nid in supports:
        p = state.positions[nid]
        doc["constraints"].append({"kind": "NodeOnLine", "node": nid, "point": [p[0], p[1], 0.0],
                                   "target": [0.0, 0.0, 1.0], "weight": 1.0})
    return doc


def _balance_tips(doc, tips, rounds=200, tol=1e-10, max_move=0.05):
    """Move the hanger tips of ``doc`` in place until their loads are carried.

    Alternates a forward solve with a Newton update of each tip position so
    that its deviation edges alone balance its load, leaving the tip's
    auxiliary trail practically unstressed (load residual below ``tol``).
    Tips move at most ``max_move`` per round.
    Returns the final equilibrium state.
    """
    by_id = {n["id"]: n for n in doc["nodes"]}
    incident = {t: [] for t in tips}
    for e in doc["edges"]:
        for a, b in ((e["i"], e["j"]), (e["j"], e["i"])):
            if a in incident:
                incident[a].append((b, e["state"] * e["force"]))
    for _ in range(rounds):
        problem = parse_model(doc).problem()
        state = problem.state(problem.initial())
        moved = 0.0
        for t in tips:
            p = np.array(by_id[t]["position"])
            q = np.array(by_id[t]["load"])
            ends = [(np.array(state.positions[m]), f) for m, f in incident[t]]
            start = p.copy()
            for _ in range(50):
                r, J = q.copy(), np.zeros((3, 3))
                for pm, f in ends:
                    v = pm - p
                    n = float(np.linalg.norm(v))
                    u = v / n
                    r += f * u
                    J -= f * (np.eye(3) - np.outer(u, u)) / n
                # stop short of exact balance: a zero residual leaves the trail direction undefined
                if np.linalg.norm(r) < tol:
                    break
                p = p + np.linalg.solve(J, -r)
            step = p - start
            size = float(np.linalg.norm(step))
            if size > max_move:
                p = start + step * (max_move / size)
            moved = max(moved, size)
            by_id[t]["position"] = [float(c) for c in p]
        if moved < tol:
            break
    problem = parse_model(doc).problem()
    return problem.state(problem.initial())


def gen_tree(levels: int = 2, height: float = 3.0, spread: float = 1.0, load: float = 1.0) -> dict:
    """Simplified branching canopy on two trunks.

    Each trunk is a compression trail from its top (an origin) down to a
    support. A binary crown of ``levels`` levels of deviation edges grows
    from each trunk top; neighbouring roof nodes are tied together and take
    downward unit loads. Crown nodes get auxiliary trails. Parameters are
    all deviation forces and the y and z coordinates of every origin.
    """
    if not isinstance(levels, int) or not 1 <= levels <= 5:
        raise ValueError(f"tree levels must be an integer in [1, 5], got {levels!r}")
    nodes, edges, params = [], [], []
    next_id = 1
    roof = []
    trunk_tops = []
    for side in (-1.0, 1.0):
        top = next_id
        ground = next_id + 1
        next_id += 2
        trunk_tops.append(top)
        nodes.append(_node(top, (side * spread, 0.0, height)))
        nodes.append(_node(ground))
        edges.append(_trail(top, ground, -1, height))
        frontier = [(top, side * spread, 0.0)]
        for level in range(1, levels + 1):
            width = spread / (2 ** level)
            grown = []
            for parent, x, y in frontier:
                for dy in (-1.0, 1.0):
                    nid = next_id
                    next_id += 1
                    cx, cy = x + side * width, y + dy * width * 2.0
                    is_roof = level == levels
                    nodes.append(_node(nid, (cx, cy, height + level), (0.0, 0.0, -load) if is_roof else None))
                    edges.append(_dev(parent, nid, -1, 1.0))
                    grown.append((nid, cx, cy))
            frontier = grown
        roof.append([n for n, _, _ in frontier])
    for row in roof:
        for a, b in zip(row, row[1:]):
            edges.append(_dev(a, b, 1, 0.5))
    edges.append(_dev(trunk_tops[0], trunk_tops[1], 1, 0.5))
    params = _all_forces(edges)
    for n in nodes:
        if "position" in n:
            for axis in (1, 2):
                params.append({"kind": "origin-coordinate", "node": n["id"], "axis": axis,
                               "bounds": [None, None]})
    supports = [n["id"] for n in nodes if "position" not in n]
    return {
        "version": VERSION,
        "name": f"tree canopy, {levels} levels",
        "nodes": nodes,
        "edges": edges,
        "supports": supports,
        "auxiliary": {"auto": True, "state": 1},
        "constraints": [],
        "parameters": params,
        "solver": _solver(max_iter=200),
    }


def staircase_document() -> dict:
    """The spiral staircase example shipped with the package."""
    text = resources.files("cemkit").joinpath("data/staircase.json").read_text()
    return json.loads(text)


def generate(family: str, size: int) -> dict:
    """Model document of ``family`` at ``size``.

    Sizes are side counts for wheels (a power of two), hanger counts for
    bridges and crown levels for trees.
    """
    if family == "wheel":
        n = int(round(math.log2(size))) if size > 0 else -1
        if size <= 0 or 2 ** n != size:
            raise ValueError(f"wheel size must be a power of two (sides), got {size}")
        return gen_wheel(n)
    if family == "bridge":
        return gen_bridge(size)
    if family == "tree":
        return gen_tree(size)
    raise ValueError(f"unknown benchmark family {family!r}; choose from {', '.join(FAMILIES)}")


@dataclass
class BenchmarkRow:
    family: str
    size: int
    param_count: int
    grad_mode: str
    algorithm: str
    iterations: int
    objective_evals: int
    wall_time: float
    L_final: float
    converged: bool
    gradient_evals: int = 0
    gradient_objective_evals: int = 0
    traced_evals: int = 0
    aux_force_max: float = 0.0
    error: str = ""

    def csv_row(self):
        return (self.family, self.size, self.param_count, self.grad_mode, self.algorithm,
                self.iterations, self.objective_evals, f"{self.wall_time:.6f}", repr(self.L_final),
                "true" if self.converged else "false")


@dataclass
class BenchmarkReport:
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow(row.csv_row())
        return buf.getvalue()

    def select(self, **match):
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]

    def to_dict(self):
        return {"rows": [asdict(r) for r in self.rows]}


@dataclass(frozen=True)
class BenchmarkConfig:
    family: str
    size: int
    grad_mode: str
    algorithm: str = "lbfgs"
    max_iter: int = 100
    epsilon: float = 1e-6
    fd_step: float = 1e-6
    fd_scheme: str = "forward"
    repeats: int = 1
    seed: int = 0
    jitter: float | None = None


def starting_point(problem, jitter, seed):
    """Initial parameters scaled by independent factors in ``[1 - jitter, 1 + jitter]``."""
    s = np.array(problem.initial())
    if jitter:
        s = s * (1.0 + jitter * np.random.default_rng(seed).uniform(-1.0, 1.0, len(s)))
    return [float(v) for v in s]


def run_one(cfg: BenchmarkConfig) -> BenchmarkRow:
    """Solve one configuration; the reported time is the best of ``repeats`` runs."""
    problem = parse_model(generate(cfg.family, cfg.size)).problem()
    jitter = DEFAULT_JITTER.get(cfg.family, 0.0) if cfg.jitter is None else cfg.jitter
    s0 = starting_point(problem, jitter, cfg.seed)
    best = None
    for _ in range(max(1, cfg.repeats)):
        started = time.perf_counter()
        try:
            state, report = solve(problem, algorithm=cfg.algorithm, epsilon=cfg.epsilon,
                                  max_iter=cfg.max_iter, grad=cfg.grad_mode, fd_step=cfg.fd_step,
                                  fd_scheme=cfg.fd_scheme, s0=s0)
        except CEMError as exc:
            return BenchmarkRow(cfg.family, cfg.size, problem.size, cfg.grad_mode, cfg.algorithm, 0, 0,
                                time.perf_counter() - started, math.inf, False, error=str(exc))
        seconds = time.perf_counter() - started
        if best is None or seconds < best[0]:
            best = (seconds, state, report, problem.counters.traced)
    seconds, state, report, traced = best
    aux = [state.trail_forces[k] for k in problem.topology.auxiliary_edges]
    return BenchmarkRow(
        family=cfg.family,
        size=cfg.size,
        param_count=problem.size,
        grad_mode=cfg.grad_mode,
        algorithm=cfg.algorithm,
        iterations=report.iterations,
        objective_evals=report.objective_evaluations,
        wall_time=seconds,
        L_final=report.L_final,
        converged=report.converged,
        gradient_evals=report.gradient_evaluations,
        gradient_objective_evals=report.gradient_objective_evaluations,
        traced_evals=traced,
        aux_force_max=max(aux, default=0.0),
    )


def run_benchmark(family, sizes, grad_modes=("ad", "fd"), algorithm="lbfgs", max_iter=100, epsilon=1e-6,
                  fd_step=1e-6, fd_scheme="forward", repeats=1, jobs=1, seed=0, jitter=None) -> BenchmarkReport:
    """Solve ``family`` at every size under every gradient mode.

    With ``jobs > 1`` configurations run in worker processes; rows are
    always returned sorted by (family, size, grad mode). Wall times taken
    concurrently are noisier than sequential ones. Every gradient mode
    starts from the same point, perturbed by ``jitter`` (default: the
    family's) using ``seed``.
    """
    configs = [BenchmarkConfig(family, int(size), mode, algorithm, max_iter, epsilon, fd_step, fd_scheme,
                               repeats, seed, jitter)
               for size in sizes for mode in grad_modes]
    for cfg in configs:
        generate(cfg.family, cfg.size)  # fail fast on bad sizes
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_one, configs))
    else:
        rows = [run_one(cfg) for cfg in configs]
    rows.sort(key=lambda r: (r.family, r.size, r.grad_mode))
    return BenchmarkReport(rows)
