import json
import sys
from pathlib import Path

import pytest

HERE = Path(__file__).parent
ROOT = HERE.parent
sys.path.insert(0, str(HERE))

from cemkit.model import parse_model  # noqa: E402
from cemkit.topology import build_topology  # noqa: E402

CRITERIA = {
    1: "chain form-finding reproduces p2, p3 and trail forces",
    2: "chain AD gradient and tape spine",
    3: "chain optimization reaches p3 = [3, 0, 0]",
    4: "AD matches central FD on 50 random structures",
    5: "independent nodal balance of converged states",
    6: "wheel counts, convergence and FD/AD time ratio",
    7: "evaluation-count contract for AD and FD",
    8: "bridge parameter counts and FD/AD objective ordering",
    9: "iterative equilibrium with indirect deviation edges",
    10: "staircase example meets its constraints",
}
_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion exercised by the test")


def pytest_runtest_logreport(report):
    marker = report.__dict__.get("criterion")
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _outcomes.get(marker, "PASS")
        _outcomes[marker] = "PASS" if prev == "PASS" and report.outcome == "passed" else "FAIL"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.__dict__["criterion"] = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, text in CRITERIA.items():
        status = _outcomes.get(n, "NOT RUN")
        terminalreporter.write_line(f"criterion {n:2d}: {status:7s} {text}")


def chain_document(load=(1.0, 0.0, 0.0), states=(-1, -1), lengths=(1.0, 1.0)):
    return json.loads((ROOT / "models" / "chain.json").read_text()) | {
        "nodes": [{"id": 1, "position": [0.0, 0.0, 0.0], "load": list(load)}, {"id": 2}, {"id": 3}],
        "edges": [
            {"i": 1, "j": 2, "label": "trail", "state": states[0], "length": lengths[0]},
            {"i": 2, "j": 3, "label": "trail", "state": states[1], "length": lengths[1]},
        ],
    }


@pytest.fixture
def chain_doc():
    return chain_document()


@pytest.fixture
def chain_problem():
    return parse_model(chain_document()).problem()


@pytest.fixture
def chain_topology():
    return build_topology(nodes=[1, 2, 3], edges=[(1, 2, "trail", -1, 1.0), (2, 3, "trail", -1, 1.0)],
                          supports=[3], loads={1: (1.0, 0.0, 0.0)}, positions={1: (0.0, 0.0, 0.0)})


def square_tensegrity():
    """Four nodes joined only by deviation edges: tension ring plus two struts.

    Strut forces are off the self-stress value so no residual is exactly zero.
    """
    pos = {1: (0.0, 0.0, 0.0), 2: (1.0, 0.0, 0.0), 3: (1.0, 1.0, 0.0), 4: (0.0, 1.0, 0.0)}
    edges = [(1, 2, "deviation", 1, 1.0), (2, 3, "deviation", 1, 1.0), (3, 4, "deviation", 1, 1.0),
             (1, 4, "deviation", 1, 1.0), (1, 3, "deviation", -1, 1.3), (2, 4, "deviation", -1, 1.3)]
    return build_topology(nodes=[1, 2, 3, 4], edges=edges, positions=pos)


def cantilever_two_sided():
    """Two trails meeting at mid span through a deviation edge, one support each."""
    nodes = [{"id": 1, "position": [-0.5, 0.0, 1.0], "load": [0.0, 0.0, -1.0]},
             {"id": 2, "load": [0.0, 0.0, -1.0]}, {"id": 3},
             {"id": 4, "position": [0.5, 0.0, 1.0], "load": [0.0, 0.0, -1.0]},
             {"id": 5, "load": [0.0, 0.0, -1.0]}, {"id": 6}]
    edges = [(1, 2, "trail", -1, 1.0), (2, 3, "trail", -1, 1.0), (4, 5, "trail", -1, 1.0),
             (5, 6, "trail", -1, 1.0), (1, 4, "deviation", -1, 1.0), (2, 5, "deviation", 1, 0.5)]
    return build_topology(nodes=nodes, edges=edges, supports=[3, 6])
