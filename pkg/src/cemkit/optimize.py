"""Gradient-based minimization of the penalty objective.

Two algorithms are available: steepest descent and L-BFGS, both with a
projected backtracking (Armijo) line search. Gradients come either from a
single traced evaluation plus one reverse pass, or from finite differences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from cemkit import autodiff
from cemkit.constraints import ObjectiveSpec, penalty
from cemkit.equilibrium import DesignParameters, EquilibriumState, SolverSettings, form_find
from cemkit.errors import CEMError
from cemkit.parameters import ParameterMap, pack, unpack
from cemkit.topology import assign_trails, compute_sequences

ARMIJO_C = 1e-4
MAX_HALVINGS = 40
HISTORY = 10


@dataclass
class Counters:
    primal: int = 0          # untraced objective evaluations
    traced: int = 0          # traced objective evaluations (AD)
    gradients: int = 0
    gradient_primal: int = 0  # primal evaluations spent inside FD gradients

    def reset(self):
        self.primal = self.traced = self.gradients = self.gradient_primal = 0


class Problem:
    """A constrained form-finding problem: diagram, template, map and objective.

    ``topology`` must already contain its auxiliary trails; use
    :meth:`build` to start from a raw diagram.
    """

    def __init__(self, topology, trails, template: DesignParameters, pmap: ParameterMap,
                 objective: ObjectiveSpec, settings: SolverSettings = SolverSettings()):
        self.topology = topology
        self.trails = tuple(trails)
        self.sequences = compute_sequences(self.trails)
        self.template = template
        self.pmap = pmap
        self.objective_spec = objective
        self.constraints = objective.expanded()
        self.settings = settings
        self.counters = Counters()
        pmap.check(template)

    @classmethod
    def build(cls, T, pmap, objective=ObjectiveSpec(), settings=SolverSettings(),
              auto_auxiliary=True, trails=None, auxiliary_state=1):
        if trails is None:
            trails, T = assign_trails(T, auto_auxiliary=auto_auxiliary, auxiliary_state=auxiliary_state)
        aux = [e for t in trails if t.is_auxiliary for e in t.edges]
        objective = objective.with_auxiliary(sorted(set(aux) | set(objective.auxiliary_edges)))
        return cls(T, trails, DesignParameters.from_topology(T), pmap, objective, settings)

    @property
    def size(self):
        return len(self.pmap)

    def initial(self):
        return [float(v) for v in pack(self.template, self.pmap)]

    def parameters(self, s):
        return unpack([float(v) for v in s], self.pmap, self.template)

    def state(self, s) -> EquilibriumState:
        x = self.parameters(s)
        return form_find(self.topology, self.trails, self.sequences, x, self.settings)

    def _evaluate(self, s):
        x = unpack(list(s), self.pmap, self.template)
        u = form_find(self.topology, self.trails, self.sequences, x, self.settings)
        return penalty(u, self.topology, x, self.constraints)

    def value(self, s):
        self.counters.primal += 1
        return float(self._evaluate([float(v) for v in s]))

    def traced(self, s):
        """Traced evaluation: ``(value, tape)``."""
        self.counters.traced += 1
        return autodiff.evaluate_traced(self._evaluate, [float(v) for v in s])

    def value_and_grad(self, s, mode="ad", fd_step=1e-6, fd_scheme="forward"):
        self.counters.gradients += 1
        if mode == "ad":
            value, tape = self.traced(s)
            return value, np.array(autodiff.backprop(tape))
        if mode == "fd":
            before = self.counters.primal
            if fd_scheme == "forward":
                value = self.value(s)
                grad, _ = autodiff.fd_gradient(self.value, s, h=fd_step, scheme="forward", f0=value)
            else:
                grad, _ = autodiff.fd_gradient(self.value, s, h=fd_step, scheme=fd_scheme)
                value = self.value(s)
            self.counters.gradient_primal += self.counters.primal - before
            return value, np.array(grad)
        raise ValueError(f"unknown gradient mode {mode!r}")


@dataclass
class SolveReport:
    s_initial: list
    s_final: list
    L_final: float
    grad_norm_final: float
    iterations: int
    objective_evaluations: int
    gradient_evaluations: int
    gradient_objective_evaluations: int
    wall_time: float
    converged: bool
    algorithm: str
    grad_mode: str
    epsilon: float
    message: str = ""
    trace: list = field(default_factory=list)

    def to_dict(self):
        return {
            "s_initial": list(self.s_initial),
            "s_final": list(self.s_final),
            "L_final": self.L_final,
            "grad_norm_final": self.grad_norm_final,
            "iterations": self.iterations,
            "objective_evaluations": self.objective_evaluations,
            "gradient_evaluations": self.gradient_evaluations,
            "gradient_objective_evaluations": self.gradient_objective_evaluations,
            "wall_time": self.wall_time,
            "converged": self.converged,
            "algorithm": self.algorithm,
            "grad_mode": self.grad_mode,
            "epsilon": self.epsilon,
            "message": self.message,
            "trace": [list(t) for t in self.trace],
        }


def lbfgs_direction(history, grad):
    """Two-loop recursion: approximate ``-H^{-1} grad`` from ``(ds, dg)`` pairs.

    Pairs without positive curvature are skipped.
    """
    q = np.array(grad, dtype=float)
    pairs = [(np.asarray(ds, float), np.asarray(dg, float)) for ds, dg in history]
    pairs = [(ds, dg, float(ds @ dg)) for ds, dg in pairs]
    pairs = [(ds, dg, 1.0 / sy) for ds, dg, sy in pairs if sy > 0.0]
    if not pairs:
        return -q
    alphas = []
    for ds, dg, rho in reversed(pairs):
        a = rho * float(ds @ q)
        alphas.append(a)
        q = q - a * dg
    ds, dg, rho = pairs[-1]
    gamma = float(ds @ dg) / float(dg @ dg)
    r = gamma * q
    for (ds, dg, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(dg @ r)
        r = r + (a - b) * ds
    return -r


def _project(s, lower, upper):
    return np.minimum(np.maximum(s, lower), upper)


def solve(problem: Problem, algorithm="lbfgs", epsilon=None, max_iter=100, grad="ad",
          fd_step=1e-6, fd_scheme="forward", s0=None, history=HISTORY, callback=None):
    """Minimize the problem's objective from ``s0`` (default: template values).

    Stops as soon as ``L < epsilon`` or ``|grad L| < epsilon`` or after
    ``max_iter`` accepted steps. A failed line search ends the run without
    raising. Returns ``(state, report)`` with the state re-solved at the
    final parameters.
    """
    if algorithm not in ("lbfgs", "gd"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    eps = problem.objective_spec.epsilon if epsilon is None else epsilon
    problem.counters.reset()
    start = time.perf_counter()
    lower = np.array([-np.inf if lo is None else lo for lo, _ in problem.pmap.bounds])
    upper = np.array([np.inf if hi is None else hi for _, hi in problem.pmap.bounds])
    s_init = np.array(problem.initial() if s0 is None else [float(v) for v in s0])
    s = _project(s_init, lower, upper)

    try:
        L, g = problem.value_and_grad(s, grad, fd_step, fd_scheme)
    except CEMError as exc:
        raise CEMError(f"objective cannot be evaluated at the initial parameters: {exc}",
                       code=getattr(exc, "code", "error")) from exc
    trace = [(float(L), float(np.linalg.norm(g)))]
    pairs = []
    iterations = 0
    message = ""
    while True:
        gnorm = float(np.linalg.norm(g))
        if L < eps:
            message = "objective below threshold"
            break
        if gnorm < eps:
            message = "gradient norm below threshold"
            break
        if iterations >= max_iter:
            message = "iteration limit reached"
            break
        if algorithm == "lbfgs":
            d = lbfgs_direction(pairs, g)
            if not float(d @ g) < 0.0:
                pairs.clear()
                d = -g
        else:
            d = -g
        accepted = _line_search(problem, s, L, g, d, lower, upper)
        if accepted is None and pairs:
            pairs.clear()
            d = -g
            accepted = _line_search(problem, s, L, g, d, lower, upper)
        if accepted is None:
            message = "line search failed"
            break
        s_new = accepted
        L_new, g_new = problem.value_and_grad(s_new, grad, fd_step, fd_scheme)
        ds, dg = s_new - s, g_new - g
        if algorithm == "lbfgs" and float(ds @ dg) > 1e-16 * float(ds @ ds) ** 0.5 * float(dg @ dg) ** 0.5:
            pairs.append((ds, dg))
            if len(pairs) > history:
                pairs.pop(0)
        s, L, g = s_new, L_new, g_new
        iterations += 1
        trace.append((float(L), float(np.linalg.norm(g))))
        if callback is not None:
            callback(iterations, s, L, g)

    gnorm = float(np.linalg.norm(g))
    state = problem.state(list(s)).to_floats()
    elapsed = time.perf_counter() - start
    c = problem.counters
    report = SolveReport(
        s_initial=[float(v) for v in s_init],
        s_final=[float(v) for v in s],
        L_final=float(L),
        grad_norm_final=gnorm,
        iterations=iterations,
        objective_evaluations=c.primal + c.traced,
        gradient_evaluations=c.gradients,
        gradient_objective_evaluations=c.gradient_primal if grad == "fd" else c.traced,
        wall_time=elapsed,
        converged=bool(L < eps or gnorm < eps),
        algorithm=algorithm,
        grad_mode=grad,
        epsilon=eps,
        message=message,
        trace=trace,
    )
    return state, report


def _line_search(problem, s, L, g, d, lower, upper):
    step = 1.0
    for _ in range(MAX_HALVINGS + 1):
        trial = _project(s + step * d, lower, upper)
        moved = trial - s
        if np.any(moved != 0.0):
            try:
                L_trial = problem.value(trial)
            except CEMError:
                L_trial = np.inf
            if L_trial <= L + ARMIJO_C * float(g @ moved) and float(g @ moved) < 0.0:
                return trial
        step *= 0.5
    return None
