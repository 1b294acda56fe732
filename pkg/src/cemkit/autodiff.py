"""Tape-based reverse-mode automatic differentiation over Python scalars.

Each traced evaluation records its elementary operations (``+ - * /``,
negation and square root) on a fresh :class:`Tape`. Control flow runs on
primal values, so loops and branches are traced simply by executing them.
:func:`backprop` then walks the tape once in reverse, accumulating adjoints.

Code written against plain floats works unchanged on :class:`Var` as long
as it calls :func:`sqrt` from this module instead of :func:`math.sqrt`.
"""

from __future__ import annotations

import contextlib
import contextvars
import json
import math

from cemkit.errors import CEMError

_SCOPE = contextvars.ContextVar("cemkit_autodiff_scope", default="")


class UnsupportedOperation(CEMError, TypeError):
    code = "unsupported primitive"


class DomainError(CEMError, ArithmeticError):
    code = "domain error"


@contextlib.contextmanager
def scope(name):
    """Label every tape node recorded inside the ``with`` block."""
    token = _SCOPE.set(name)
    try:
        yield
    finally:
        _SCOPE.reset(token)


class Tape:
    """Append-only record of one traced evaluation.

    Node ``i`` stores its operation name, the indices of its parents, the
    local partial derivatives with respect to those parents, its primal
    value and the scope label active when it was recorded.
    """

    def __init__(self):
        self.ops = []
        self.parents = []
        self.partials = []
        self.values = []
        self.scopes = []
        self.inputs = []
        self.output = None

    def __len__(self):
        return len(self.ops)

    def variable(self, value):
        """Create an input slot bound to an optimization parameter."""
        var = self._push("input", (), (), float(value))
        self.inputs.append(var.index)
        return var

    def _push(self, op, parents, partials, value):
        index = len(self.ops)
        self.ops.append(op)
        self.parents.append(parents)
        self.partials.append(partials)
        self.values.append(value)
        self.scopes.append(_SCOPE.get())
        return Var(self, index, value)

    def children(self):
        """Map each node index to the indices of the nodes that consume it."""
        kids = {i: [] for i in range(len(self.ops))}
        for j, parents in enumerate(self.parents):
            for p in parents:
                kids[p].append(j)
        return kids

    def dump(self):
        return [
            {
                "index": i,
                "op": self.ops[i],
                "parents": list(self.parents[i]),
                "partials": list(self.partials[i]),
                "value": self.values[i],
                "scope": self.scopes[i],
            }
            for i in range(len(self.ops))
        ]

    def to_json(self, indent=None):
        return json.dumps({"inputs": self.inputs, "output": self.output, "nodes": self.dump()},
                          indent=indent)


class Var:
    """A scalar recorded on a tape."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape, index, value):
        self.tape = tape
        self.index = index
        self.value = value

    def __repr__(self):
        return f"Var({self.value!r}, index={self.index})"

    def _other(self, other):
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise UnsupportedOperation("cannot mix variables from different tapes")
            return other
        if isinstance(other, (int, float)) and not isinstance(other, bool):
            return float(other)
        return None

    def __add__(self, other):
        o = self._other(other)
        if o is None:
            return NotImplemented
        if isinstance(o, Var):
            return self.tape._push("add", (self.index, o.index), (1.0, 1.0), self.value + o.value)
        return self.tape._push("add", (self.index,), (1.0,), self.value + o)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._other(other)
        if o is None:
            return NotImplemented
        if isinstance(o, Var):
            return self.tape._push("sub", (self.index, o.index), (1.0, -1.0), self.value - o.value)
        return self.tape._push("sub", (self.index,), (1.0,), self.value - o)

    def __rsub__(self, other):
        o = self._other(other)
        if o is None:
            return NotImplemented
        return self.tape._push("sub", (self.index,), (-1.0,), o - self.value)

    def __mul__(self, other):
        o = self._other(other)
        if o is None:
            return NotImplemented
        if isinstance(o, Var):
            return self.tape._push("mul", (self.index, o.index), (o.value, self.value),
                                   self.value * o.value)
        return self.tape._push("mul", (self.index,), (o,), self.value * o)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._other(other)
        if o is None:
            return NotImplemented
        if isinstance(o, Var):
            if o.value == 0.0:
                raise DomainError("division by zero during primal evaluation")
            inv = 1.0 / o.value
            value = self.value * inv
            return self.tape._push("div", (self.index, o.index), (inv, -value * inv), value)
        if o == 0.0:
            raise DomainError("division by zero during primal evaluation")
        return self.tape._push("div", (self.index,), (1.0 / o,), self.value / o)

    def __rtruediv__(self, other):
        o = self._other(other)
        if o is None:
            return NotImplemented
        if self.value == 0.0:
            raise DomainError("division by zero during primal evaluation")
        value = o / self.value
        return self.tape._push("div", (self.index,), (-value / self.value,), value)

    def __neg__(self):
        return self.tape._push("neg", (self.index,), (-1.0,), -self.value)

    def __pos__(self):
        return self

    def __pow__(self, other):
        raise UnsupportedOperation("power is not a traced primitive; multiply explicitly")

    __rpow__ = __pow__

    def __float__(self):
        raise UnsupportedOperation("converting a traced variable to float would drop its derivative;"
                                   " use .value")

    def __abs__(self):
        raise UnsupportedOperation("abs is not a traced primitive")

    # comparisons act on primal values so control flow can branch on them
    def __lt__(self, other):
        return self.value < primal(other)

    def __le__(self, other):
        return self.value <= primal(other)

    def __gt__(self, other):
        return self.value > primal(other)

    def __ge__(self, other):
        return self.value >= primal(other)

    def __eq__(self, other):
        return self.value == primal(other)

    def __ne__(self, other):
        return self.value != primal(other)

    def __bool__(self):
        return self.value != 0.0

    __hash__ = None


def primal(x):
    """Primal value of a traced variable (plain numbers pass through)."""
    return x.value if isinstance(x, Var) else x


def sqrt(x):
    if isinstance(x, Var):
        if x.value < 0.0:
            raise DomainError(f"square root of negative value {x.value!r}")
        value = math.sqrt(x.value)
        if value == 0.0:
            raise DomainError("square root at zero has no derivative")
        return x.tape._push("sqrt", (x.index,), (0.5 / value,), value)
    if x < 0.0:
        raise DomainError(f"square root of negative value {x!r}")
    return math.sqrt(x)


def evaluate_traced(f, s):
    """Evaluate ``f`` on a fresh tape whose input slots hold ``s``.

    Returns ``(value, tape)``. ``f`` receives a list of :class:`Var`.
    """
    tape = Tape()
    xs = [tape.variable(v) for v in s]
    out = f(xs)
    if isinstance(out, Var):
        if out.tape is not tape:
            raise UnsupportedOperation("output belongs to a different tape")
        tape.output = out.index
        return out.value, tape
    tape.output = None
    return float(out), tape


def backprop(tape):
    """Gradient of the tape output with respect to its input slots."""
    n_inputs = len(tape.inputs)
    if tape.output is None:
        return [0.0] * n_inputs
    adjoint = [0.0] * (tape.output + 1)
    adjoint[tape.output] = 1.0
    parents = tape.parents
    partials = tape.partials
    for i in range(tape.output, -1, -1):
        a = adjoint[i]
        if a == 0.0:
            continue
        for p, d in zip(parents[i], partials[i]):
            adjoint[p] += a * d
    return [adjoint[i] if i <= tape.output else 0.0 for i in tape.inputs]


def adjoints(tape):
    """Full adjoint vector of the tape, indexed like its nodes."""
    adjoint = [0.0] * len(tape)
    if tape.output is None:
        return adjoint
    adjoint[tape.output] = 1.0
    for i in range(tape.output, -1, -1):
        a = adjoint[i]
        if a:
            for p, d in zip(tape.parents[i], tape.partials[i]):
                adjoint[p] += a * d
    return adjoint


def value_and_grad(f, s):
    value, tape = evaluate_traced(f, s)
    return value, backprop(tape)


class CountingFunction:
    """Wrap ``f`` and count how often it is called."""

    def __init__(self, f):
        self.f = f
        self.calls = 0

    def __call__(self, s):
        self.calls += 1
        return self.f(s)


def fd_gradient(f, s, h=1e-6, scheme="forward", f0=None):
    """Finite-difference gradient of ``f`` at ``s``.

    Returns ``(gradient, evaluations)``. The forward scheme evaluates ``f``
    at ``s`` and once per coordinate (``len(s) + 1`` calls, or ``len(s)``
    when ``f0`` is supplied); the central scheme uses ``2 * len(s)`` calls.
    """
    if h <= 0.0:
        raise ValueError("finite-difference step must be positive")
    s = [float(v) for v in s]
    counted = CountingFunction(f)
    grad = []
    if scheme == "forward":
        base = counted(s) if f0 is None else f0
        for i in range(len(s)):
            shifted = list(s)
            shifted[i] += h
            grad.append((counted(shifted) - base) / h)
    elif scheme == "central":
        for i in range(len(s)):
            up = list(s)
            down = list(s)
            up[i] += h
            down[i] -= h
            grad.append((counted(up) - counted(down)) / (2.0 * h))
    else:
        raise ValueError(f"unknown finite-difference scheme {scheme!r}")
    return grad, counted.calls
