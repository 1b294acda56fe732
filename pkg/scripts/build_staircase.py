"""Build the spiral staircase example document shipped in cemkit/data.

The chords follow a half turn of radius 2 (tension, outer) and 1
(compression, inner) rising to the mezzanine at z = 3. Each of the 18 ribs
is a compression cross in the vertical plane through its two chord nodes:
a hub above the chords, struts down to both chords and up to the two tread
ends, and the tread as a tie. A fixed-point pre-pass alternates forward
solves with rib placement and a linear solve for rib forces, so the design
is nearly balanced; the chord knobs are then tuned for the anchor, line and
force targets. The document keeps the design values rounded, leaving the
optimizer a small but real correction.

Usage: python3 scripts/build_staircase.py [output path]
"""

import math
import sys
from pathlib import Path

import numpy as np

from cemkit.model import VERSION, dumps, parse_model

STEPS = 18
RISE = 3.0
R_T, R_C = 2.0, 1.0
DROP_C = 0.2
LOAD = 1.0
TARGET_FORCE = 35.0
ANCHOR = (0.0, 4.0, 3.0)

T = lambda j: j                 # tension chord nodes 1..20
C = lambda j: j + 20            # compression chord nodes 21..40
HUB = lambda r: 50 + 3 * r      # rib r = 0..17: hub, inner and outer tread ends
E1 = lambda r: 51 + 3 * r
E2 = lambda r: 52 + 3 * r


def spiral(j, radius, top):
    theta = math.pi * (20 - j) / 19.0
    return np.array([radius * math.sin(theta), 2.0 - radius * math.cos(theta), top * theta / math.pi])


def rib_frame(pc, pt):
    """Horizontal unit vector from the compression to the tension chord node."""
    h = (pt - pc) * np.array([1.0, 1.0, 0.0])
    return h / np.linalg.norm(h)


def place_rib(pc, pt, hub_rise=0.3, tread_rise=0.3, overhang=0.1):
    e = rib_frame(pc, pt)
    z = np.array([0.0, 0.0, 1.0])
    w = float(np.dot(pt - pc, e))
    top = max(pc[2], pt[2])
    hub = pc + e * (w / 2.0) + z * (top + hub_rise - pc[2])
    e1 = pc - e * overhang + z * (top + hub_rise + tread_rise - pc[2])
    e2 = pc + e * (w + overhang) + z * (top + hub_rise + tread_rise - pc[2])
    return hub, e1, e2


def rib_forces(pc, pt, hub, e1, e2, load):
    """Signed magnitudes (compression negative) balancing one rib: least squares."""
    # unknowns: hub-e1, hub-e2, e1-e2 (tie), hub-C, hub-T; unknown f pulls endpoints together
    members = [(hub, e1), (hub, e2), (e1, e2), (hub, pc), (hub, pt)]
    nodes = [hub, e1, e2]
    A = np.zeros((9, 5))
    b = np.zeros(9)
    for k, (p, q) in enumerate(members):
        u = (q - p) / np.linalg.norm(q - p)
        for n, node in enumerate(nodes):
            if node is p:
                A[3 * n:3 * n + 3, k] += u
            elif node is q:
                A[3 * n:3 * n + 3, k] -= u
    for n in (1, 2):
        b[3 * n + 2] = load / 2.0  # A f + q = 0 with q = (0, 0, -load/2)
    f, *_ = np.linalg.lstsq(A, b, rcond=None)
    return f, float(np.linalg.norm(A @ f - b))


def rib_ids():
    return [(r, r + 2) for r in range(STEPS)]  # rib r hangs from chord nodes j = r + 2


def skeleton(ring_t, ring_c, hub_rise):
    """Document with design chord polygons and ribs placed on them."""
    nodes, edges = {}, []
    pos = {}
    for j in range(1, 21):
        pos[T(j)] = spiral(j, R_T, RISE)
        pos[C(j)] = spiral(j, R_C, RISE - DROP_C)
    for nid in (T(10), T(11), C(10), C(11)):
        nodes[nid] = {"id": nid, "position": [float(c) for c in pos[nid]]}
    for j in range(1, 21):
        for nid in (T(j), C(j)):
            nodes.setdefault(nid, {"id": nid})
    for lo, hi, step in ((10, 1, -1), (11, 20, 1)):
        for j in range(lo, hi, step):
            for f, state in ((T, 1), (C, -1)):
                a, b = f(j), f(j + step)
                edges.append({"i": a, "j": b, "label": "trail", "state": state,
                              "length": float(np.linalg.norm(pos[b] - pos[a]))})
    edges.append({"i": T(10), "j": T(11), "label": "deviation", "state": 1, "force": ring_t})
    edges.append({"i": C(10), "j": C(11), "label": "deviation", "state": -1, "force": ring_c})
    for r, j in rib_ids():
        hub, e1, e2 = place_rib(pos[C(j)], pos[T(j)], hub_rise)
        nodes[HUB(r)] = {"id": HUB(r), "position": [float(c) for c in hub]}
        for nid, p in ((E1(r), e1), (E2(r), e2)):
            nodes[nid] = {"id": nid, "position": [float(c) for c in p], "load": [0.0, 0.0, -LOAD / 2.0]}
        for a, b in ((HUB(r), E1(r)), (HUB(r), E2(r)), (E1(r), E2(r)), (HUB(r), C(j)), (HUB(r), T(j))):
            edges.append({"i": a, "j": b, "label": "deviation", "state": 1, "force": 1.0})
    return {
        "version": VERSION,
        "name": "spiral staircase",
        "nodes": [nodes[k] for k in sorted(nodes)],
        "edges": edges,
        "supports": [T(1), T(20), C(1), C(20)],
        "auxiliary": {"auto": True, "state": 1},
        "constraints": [],
        "parameters": [],
        "solver": {"t_max": 100, "eta_min": 1e-10, "epsilon": 1e-6, "max_iter": 100,
                   "algorithm": "lbfgs", "grad": "ad", "fd_step": 1e-6, "fd_scheme": "forward"},
    }


def equilibrium(doc):
    problem = parse_model(doc).problem()
    return problem.state(problem.initial())


def settle(doc, hub_rise, rounds=200, tol=1e-11):
    """Re-place ribs on the current chords and rebalance them until nothing moves."""
    by_id = {n["id"]: n for n in doc["nodes"]}
    rib_edges = {}
    for e in doc["edges"]:
        rib_edges[(e["i"], e["j"])] = e
    for _ in range(rounds):
        u = equilibrium(doc)
        moved = 0.0
        for r, j in rib_ids():
            pc, pt = np.array(u.positions[C(j)]), np.array(u.positions[T(j)])
            hub, e1, e2 = place_rib(pc, pt, hub_rise)
            # a hair short of exact balance at every rib node: a zero residual has no direction
            f, err = rib_forces(pc, pt, hub, e1, e2, LOAD * (1.0 - 1e-9))
            f[3:] *= 1.0 + 1e-9
            for nid, p in ((HUB(r), hub), (E1(r), e1), (E2(r), e2)):
                moved = max(moved, float(np.linalg.norm(p - np.array(by_id[nid]["position"]))))
                by_id[nid]["position"] = [float(c) for c in p]
            pairs = ((HUB(r), E1(r)), (HUB(r), E2(r)), (E1(r), E2(r)), (HUB(r), C(j)), (HUB(r), T(j)))
            for key, value in zip(pairs, f):
                rib_edges[key]["state"] = 1 if value > 0 else -1
                rib_edges[key]["force"] = float(abs(value))
        if moved < tol:
            break
    return equilibrium(doc), moved


def design(knobs, hub_rise):
    ring_t, ring_c, lift_c, shift_c = knobs
    doc = skeleton(ring_t, ring_c, hub_rise)
    for n in doc["nodes"]:
        if n["id"] in (C(10), C(11)):
            n["position"][0] += shift_c
            n["position"][2] += lift_c
    u, _ = settle(doc, hub_rise)
    return doc, u


def mismatch(u):
    p1, p21 = np.array(u.positions[T(1)]), np.array(u.positions[C(1)])
    return np.array([u.trail_forces[(T(1), T(2))] - TARGET_FORCE, p21[0] - p1[0],
                     p21[2] - p1[2] + DROP_C])


def tune(knobs, hub_rise, tol=1e-10, h=1e-6, max_step=0.2):
    """Damped least-norm Newton on the knobs; steps are limited relative to the knobs."""
    knobs = np.array(knobs, dtype=float)
    for _ in range(60):
        doc, u = design(knobs, hub_rise)
        g = mismatch(u)
        print("tune", knobs, g, file=sys.stderr)
        if np.linalg.norm(g) < tol:
            return doc, u, knobs
        J = np.column_stack([(mismatch(design(knobs + h * e, hub_rise)[1]) - g) / h for e in np.eye(len(knobs))])
        step = -np.linalg.lstsq(J, g, rcond=None)[0]
        scale = min(1.0, max_step / max(np.max(np.abs(step) / np.maximum(np.abs(knobs), 0.1)), 1e-300))
        knobs = knobs + scale * step
    raise RuntimeError("knob tuning did not converge")


def build(decimals=2, hub_rise=0.15, round_all=False):
    doc, u, _ = tune([30.0, 25.0, 0.0, 0.0], hub_rise)
    shift = np.array(ANCHOR) - np.array(u.positions[T(1)])
    by_id = {n["id"]: n for n in doc["nodes"]}
    for n in doc["nodes"]:
        if "position" in n:
            n["position"] = [float(c) for c in np.array(n["position"]) + shift]
    constraints = [
        {"kind": "NodePosition", "node": T(1), "target": list(ANCHOR), "weight": 1.0},
        {"kind": "TrailForce", "edge": [T(1), T(2)], "target": TARGET_FORCE, "weight": 1.0},
        {"kind": "NodeOnLine", "node": C(1), "point": [ANCHOR[0], ANCHOR[1], ANCHOR[2] - DROP_C],
         "target": [0.0, 1.0, 0.0], "weight": 1.0},
    ]
    for r, j in rib_ids():
        hub, e1, e2 = (np.array(by_id[k]["position"]) for k in (HUB(r), E1(r), E2(r)))
        normal = np.cross(e2 - e1, hub - e1)
        normal = normal / np.linalg.norm(normal)
        for nid in (T(j), C(j)):
            constraints.append({"kind": "NodeOnPlane", "node": nid, "point": [float(c) for c in hub],
                                "target": [float(c) for c in normal], "weight": 1.0})
    params = []
    for e in doc["edges"]:
        if e["label"] == "deviation":
            if round_all or max(e["i"], e["j"]) <= 40:
                e["force"] = round(e["force"], decimals)
            params.append({"kind": "deviation-force", "edge": [e["i"], e["j"]], "bounds": [0.0, None]})
    for e in doc["edges"]:
        if e["label"] == "trail" and max(e["i"], e["j"]) <= 40:
            if round_all:
                e["length"] = round(e["length"], decimals + 1)
            params.append({"kind": "trail-length", "edge": [e["i"], e["j"]], "bounds": [1e-3, None]})
    for nid in (T(10), T(11), C(10), C(11)):
        if round_all or nid in (C(10), C(11)):
            by_id[nid]["position"][2] = round(by_id[nid]["position"][2], decimals)
        params.append({"kind": "origin-coordinate", "node": nid, "axis": 2, "bounds": [None, None]})
    doc["constraints"] = constraints
    doc["parameters"] = params
    doc["solver"].update({"epsilon": 1e-14, "max_iter": 2000, "eta_min": 1e-12})
    return doc


def main(argv):
    out = Path(argv[1]) if len(argv) > 1 else Path(__file__).resolve().parents[1] / "src/cemkit/data/staircase.json"
    out.write_text(dumps(build()))
    print(f"wrote {out}", file=sys.stderr)


if __name__ == "__main__":
    main(sys.argv)
