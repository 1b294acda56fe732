"""Mapping between the optimization vector ``s`` and design parameters."""

from __future__ import annotations

from dataclasses import dataclass

from cemkit.equilibrium import DesignParameters
from cemkit.errors import ParameterError
from cemkit.topology import edge_key

DEVIATION_FORCE = "deviation-force"
TRAIL_LENGTH = "trail-length"
ORIGIN_COORDINATE = "origin-coordinate"
KINDS = (DEVIATION_FORCE, TRAIL_LENGTH, ORIGIN_COORDINATE)

#: Lower bound applied to trail lengths when none is given, keeping them positive.
MIN_TRAIL_LENGTH = 1e-3


@dataclass(frozen=True)
class ParameterSlot:
    kind: str
    subject: object  # edge key for forces and lengths, node id for coordinates
    axis: int | None = None
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown parameter kind {self.kind!r}")
        if self.kind == ORIGIN_COORDINATE:
            if self.axis not in (0, 1, 2):
                raise ParameterError(f"origin-coordinate slot of node {self.subject} needs axis 0, 1 or 2")
        else:
            object.__setattr__(self, "subject", edge_key(*self.subject))
        if self.lower is not None and self.upper is not None and self.lower > self.upper:
            raise ParameterError(f"slot {self.label}: lower bound exceeds upper bound")

    @property
    def label(self):
        if self.kind == ORIGIN_COORDINATE:
            return f"{self.kind}[{self.subject}].{'xyz'[self.axis]}"
        return f"{self.kind}{self.subject}"

    @property
    def id(self):
        return (self.kind, self.subject, self.axis)

    def clamp(self, value):
        if self.lower is not None and value < self.lower:
            return self.lower
        if self.upper is not None and value > self.upper:
            return self.upper
        return value

    def within(self, value):
        return self.clamp(value) == value


def deviation_force(edge, lower=0.0, upper=None):
    return ParameterSlot(DEVIATION_FORCE, tuple(edge), None, lower, upper)


def trail_length(edge, lower=MIN_TRAIL_LENGTH, upper=None):
    return ParameterSlot(TRAIL_LENGTH, tuple(edge), None, lower, upper)


def origin_coordinate(node, axis, lower=None, upper=None):
    return ParameterSlot(ORIGIN_COORDINATE, node, axis, lower, upper)


class ParameterMap:
    """Ordered list of the design parameters that the optimizer may vary."""

    def __init__(self, slots=()):
        self.slots = tuple(slots)
        ids = [s.id for s in self.slots]
        if len(set(ids)) != len(ids):
            raise ParameterError("duplicate parameter slot")

    def __len__(self):
        return len(self.slots)

    def __iter__(self):
        return iter(self.slots)

    def __eq__(self, other):
        return isinstance(other, ParameterMap) and self.slots == other.slots

    @property
    def bounds(self):
        return [(s.lower, s.upper) for s in self.slots]

    def check(self, x: DesignParameters):
        for slot in self.slots:
            if slot.kind == DEVIATION_FORCE and slot.subject not in x.deviation_forces:
                raise ParameterError(f"{slot.label}: edge is not a deviation edge")
            if slot.kind == TRAIL_LENGTH and slot.subject not in x.trail_lengths:
                raise ParameterError(f"{slot.label}: edge is not a trail edge")
            if slot.kind == ORIGIN_COORDINATE and slot.subject not in x.origin_positions:
                raise ParameterError(f"{slot.label}: node has no position")

    def clamp(self, s):
        return [slot.clamp(v) for slot, v in zip(self.slots, s)]


def pack(x: DesignParameters, pmap: ParameterMap):
    """Read the optimization vector out of a set of design parameters."""
    s = []
    for slot in pmap:
        if slot.kind == DEVIATION_FORCE:
            s.append(x.deviation_forces[slot.subject])
        elif slot.kind == TRAIL_LENGTH:
            s.append(x.trail_lengths[slot.subject])
        else:
            s.append(x.origin_positions[slot.subject][slot.axis])
    return s


def unpack(s, pmap: ParameterMap, template: DesignParameters, clamp=True):
    """Design parameters equal to ``template`` except for the slots in ``pmap``.

    Entries of ``s`` may be traced variables. With ``clamp`` disabled, a value
    outside its bounds raises :class:`ParameterError`.
    """
    if len(s) != len(pmap):
        raise ParameterError(f"expected {len(pmap)} parameters, got {len(s)}")
    forces = dict(template.deviation_forces)
    lengths = dict(template.trail_lengths)
    origins = dict(template.origin_positions)
    for slot, value in zip(pmap, s):
        if not slot.within(value):
            if not clamp:
                raise ParameterError(f"{slot.label} = {value!r} violates bounds "
                                     f"[{slot.lower}, {slot.upper}]")
            value = slot.clamp(value)
        if slot.kind == DEVIATION_FORCE:
            forces[slot.subject] = value
        elif slot.kind == TRAIL_LENGTH:
            lengths[slot.subject] = value
        else:
            p = list(origins[slot.subject])
            p[slot.axis] = value
            origins[slot.subject] = tuple(p)
    return DesignParameters(forces, lengths, origins, dict(template.loads))
