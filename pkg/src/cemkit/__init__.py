"""Constrained form-finding of tension-compression bar structures.

The combinatorial equilibrium modeling (CEM) solver computes static
equilibrium trail by trail; the optimizer fits geometric and force
constraints with gradients obtained by reverse-mode automatic
differentiation through the solver.
"""

from cemkit.errors import CEMError, EquilibriumError, ModelError, ParameterError, TopologyError
from cemkit.topology import (
    Edge,
    TopologyDiagram,
    Trail,
    assign_trails,
    build_topology,
    classify_deviation_edges,
    compute_sequences,
    validate_topology,
)
from cemkit.equilibrium import DesignParameters, EquilibriumState, SolverSettings, form_find
from cemkit.constraints import ConstraintSpec, ObjectiveSpec
from cemkit.parameters import ParameterMap, ParameterSlot
from cemkit.optimize import Problem, SolveReport, solve

__version__ = "0.1.0"

__all__ = [
    "CEMError",
    "ConstraintSpec",
    "DesignParameters",
    "Edge",
    "EquilibriumError",
    "EquilibriumState",
    "ModelError",
    "ObjectiveSpec",
    "ParameterError",
    "ParameterMap",
    "ParameterSlot",
    "Problem",
    "SolveReport",
    "SolverSettings",
    "TopologyDiagram",
    "TopologyError",
    "Trail",
    "assign_trails",
    "build_topology",
    "classify_deviation_edges",
    "compute_sequences",
    "form_find",
    "solve",
    "validate_topology",
]
