import pytest
from conftest import ROOT, cantilever_two_sided, square_tensegrity
from hypothesis import given, settings
from hypothesis import strategies as st

from cemkit.bench import gen_wheel
from cemkit.errors import TopologyError
from cemkit.model import parse_model
from cemkit.topology import (
    AUXILIARY_LENGTH, Trail, assign_trails, build_topology, classify_deviation_edges, compute_sequences,
    validate_topology,
)


def test_build_chain_counts(chain_topology):
    T = chain_topology
    assert (T.M, T.N, T.L) == (2, 3, 1)
    assert T.load(2) == (0.0, 0.0, 0.0)
    assert T.load(1) == (1.0, 0.0, 0.0)


def test_build_empty():
    T = build_topology()
    assert T.N == 0 and T.M == 0


@pytest.mark.parametrize("kwargs, code", [
    ({"nodes": [1, 2], "edges": [(1, 99, "trail", 1, 1.0)]}, "dangling edge"),
    ({"nodes": [1, 1]}, "duplicate id"),
    ({"nodes": [1, 2], "edges": [(1, 2, "trail", 1, 1.0), (2, 1, "deviation", 1, 1.0)]}, "duplicate id"),
    ({"nodes": [1, 2], "edges": [(1, 2, "trail", 1, -2.0)]}, "negative trail length"),
])
def test_build_errors(kwargs, code):
    with pytest.raises(TopologyError) as exc:
        build_topology(**kwargs)
    assert exc.value.code == code


def test_build_rejects_bad_state_and_negative_force():
    with pytest.raises(TopologyError):
        build_topology(nodes=[1, 2], edges=[(1, 2, "trail", 0, 1.0)])
    with pytest.raises(TopologyError):
        build_topology(nodes=[1, 2], edges=[(1, 2, "deviation", 1, -1.0)])


def test_chain_has_one_trail(chain_topology):
    trails, T = assign_trails(chain_topology)
    assert [t.nodes for t in trails] == [(1, 2, 3)]
    assert T is chain_topology


def test_square_tensegrity_gets_four_auxiliary_trails():
    trails, T = assign_trails(square_tensegrity(), auto_auxiliary=True)
    assert len(trails) == 4 and all(t.is_auxiliary for t in trails)
    assert (T.N, T.L) == (8, 4)
    assert len(trails) == T.L


def test_isolated_node_auxiliary():
    T = build_topology(nodes=[{"id": 1, "position": [2.0, 0.0, 1.0]}])
    trails, T2 = assign_trails(T, auto_auxiliary=True)
    (trail,) = trails
    assert trail.nodes == (1, 2) and trail.is_auxiliary
    assert T2.trail_lengths[(1, 2)] == AUXILIARY_LENGTH == 1.0
    assert T2.state(1, 2) == 1
    assert T2.positions[2] == (2.0, 0.0, 0.0)


def test_unassigned_node_without_auxiliary():
    with pytest.raises(TopologyError) as exc:
        assign_trails(square_tensegrity())
    assert exc.value.code == "unassigned node"


def test_branching_trails_overlap():
    T = build_topology(nodes=[1, 2, 3, 4], edges=[(1, 3, "trail", -1, 1.0), (2, 3, "trail", -1, 1.0),
                                                  (3, 4, "trail", -1, 1.0)], supports=[4])
    with pytest.raises(TopologyError) as exc:
        assign_trails(T)
    assert exc.value.code == "trail overlap"


def test_trail_reaching_two_supports_overlaps():
    T = build_topology(nodes=[1, 2, 3], edges=[(1, 2, "trail", 1, 1.0), (2, 3, "trail", 1, 1.0)],
                       supports=[1, 3])
    with pytest.raises(TopologyError) as exc:
        assign_trails(T)
    assert exc.value.code == "trail overlap"


def test_auxiliary_state_is_selectable():
    trails, T = assign_trails(square_tensegrity(), auto_auxiliary=True, auxiliary_state=-1)
    assert all(T.state(*t.edges[0]) == -1 for t in trails)


def test_two_sided_cantilever_is_valid():
    trails, T = assign_trails(cantilever_two_sided())
    assert validate_topology(T, trails).is_valid
    assert [t.nodes for t in trails] == [(1, 2, 3), (4, 5, 6)]


def test_shared_nodes_violate_rule_one():
    model = parse_model((ROOT / "models" / "overlapping-trails.json").read_text())
    trails = [Trail(tuple(t)) for t in model.trails]
    report = validate_topology(model.topology, trails)
    assert not report.is_valid
    flagged = {v.subject for v in report.violations if v.rule == "rule 1"}
    assert flagged == {3, 4}


def test_support_free_diagram_violates_rule_two():
    T = build_topology(nodes=[1, 2], edges=[(1, 2, "deviation", 1, 1.0)])
    report = validate_topology(T, [])
    assert not report.is_valid
    assert any(v.rule == "rule 2" for v in report.violations)


def test_trail_ending_off_support_violates_rule_two():
    T = build_topology(nodes=[1, 2, 3], edges=[(1, 2, "trail", 1, 1.0), (2, 3, "trail", 1, 1.0)],
                       supports=[2])
    report = validate_topology(T, [Trail((1, 2, 3))])
    rules = [v.rule for v in report.violations]
    assert "rule 2" in rules


def test_sequences_chain():
    seq = compute_sequences([Trail((1, 2, 3))])
    assert (seq[1], seq[2], seq[3], seq.k_max) == (1, 2, 3, 3)


def test_sequences_two_trails():
    seq = compute_sequences([Trail((1, 4)), Trail((2, 3, 5))])
    assert dict(seq.k) == {1: 1, 4: 2, 2: 1, 3: 2, 5: 3}
    assert seq.k_max == 3


def test_sequences_auxiliary_pair():
    seq = compute_sequences([Trail((7, 8), is_auxiliary=True)])
    assert (seq[7], seq[8]) == (1, 2)


def test_classify_direct_and_indirect():
    T = build_topology(nodes=[1, 2, 3, 4, 5],
                       edges=[(1, 2, "trail", 1, 1.0), (3, 4, "trail", 1, 1.0), (4, 5, "trail", 1, 1.0),
                              (1, 3, "deviation", 1, 1.0), (1, 4, "deviation", 1, 1.0)],
                       supports=[2, 5])
    trails, _ = assign_trails(T)
    direct, indirect = classify_deviation_edges(T, compute_sequences(trails))
    assert direct == ((1, 3),) and indirect == ((1, 4),)


def test_wheel_deviation_edges_are_direct():
    model = parse_model(gen_wheel(3))
    p = model.problem()
    direct, indirect = classify_deviation_edges(p.topology, p.sequences)
    assert len(direct) == 12 and not indirect


@pytest.mark.parametrize("n", range(2, 9))
def test_wheel_counts(n):
    T = parse_model(gen_wheel(n)).problem().topology
    assert T.N == 2 ** (n + 1)
    assert len(T.deviation_edges) == 3 * 2 ** n // 2


@st.composite
def connected_graphs(draw):
    """Random connected diagrams: a spanning tree plus extra edges, random labels and supports."""
    n = draw(st.integers(1, 10))
    edges = {}
    for node in range(2, n + 1):
        parent = draw(st.integers(1, node - 1))
        edges[(parent, node)] = None
    extra = draw(st.lists(st.tuples(st.integers(1, n), st.integers(1, n)), max_size=6))
    for a, b in extra:
        if a != b:
            edges.setdefault((min(a, b), max(a, b)), None)
    # trail edges only along disjoint paths keep the diagram free of overlaps
    trail_chains = draw(st.lists(st.integers(1, n), max_size=3, unique=True))
    used = set()
    supports = []
    spec = []
    for (a, b) in sorted(edges):
        spec.append([a, b, "deviation", draw(st.sampled_from([-1, 1])), 1.0])
    for start in trail_chains:
        nxt = start + 1
        if start in used or nxt > n or nxt in used:
            continue
        used.update((start, nxt))
        supports.append(nxt)
        for e in spec:
            if (e[0], e[1]) == (start, nxt):
                e[2] = "trail"
                break
        else:
            spec.append([start, nxt, "trail", 1, 1.0])
    return build_topology(nodes=list(range(1, n + 1)), edges=[tuple(e) for e in spec], supports=supports)


@settings(max_examples=150, deadline=None)
@given(connected_graphs())
def test_auxiliary_insertion_always_validates(T):
    trail_free_before = [n for n in T.nodes if not T.neighbors(n, "trail")]
    trails, T2 = assign_trails(T, auto_auxiliary=True)
    assert validate_topology(T2, trails).is_valid
    covered = [n for t in trails for n in t]
    assert sorted(covered) == sorted(T2.nodes)
    assert sum(t.is_auxiliary for t in trails) == len(trail_free_before)
    assert len(trails) == T2.L
