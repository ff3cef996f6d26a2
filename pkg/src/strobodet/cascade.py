"""Unidirectionally coupled chains of open systems.

A chain is a list of :class:`CascadeNode` objects ordered from source to
sink. Each node couples to the travelling field through an input operator
and emits into it through an output operator; for a one-port cavity both are
the same operator. Nodes whose input and output ports differ (the photon
multiplier) terminate the incoming channel and start a new one.

Within a channel with members ``L_1 .. L_k`` (upstream first) the model is a
single jump operator ``sum_i L_i`` and the Hamiltonian interference terms
``(i/2) (L_i^dag L_j - L_j^dag L_i)`` for every ``i < j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .hilbert import LayoutError, Operator, SpaceLayout, annihilator
from .pulses import PulseSpec

Coefficient = Union[complex, Callable[[np.ndarray], np.ndarray]]


def coefficient_values(c: Coefficient, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if callable(c):
        return np.broadcast_to(np.asarray(c(t), dtype=complex), t.shape)
    return np.full(t.shape, complex(c))


class _Conj:
    def __init__(self, f):
        self.f = f

    def __call__(self, t):
        return np.conj(coefficient_values(self.f, t))


class _Prod:
    def __init__(self, f, g):
        self.f, self.g = f, g

    def __call__(self, t):
        return coefficient_values(self.f, t) * coefficient_values(self.g, t)


def _conj(c: Coefficient) -> Coefficient:
    return _Conj(c) if callable(c) else complex(c).conjugate()


def _mul(c: Coefficient, d: Coefficient) -> Coefficient:
    if callable(c) or callable(d):
        return _Prod(c, d)
    return complex(c) * complex(d)


class TimeOperator:
    """Operator ``sum_k c_k(t) M_k`` with static matrices and scalar coefficients."""

    __slots__ = ("layout", "terms")

    def __init__(self, layout: SpaceLayout, terms: Sequence[tuple[Coefficient, Operator]] = ()):
        for _, op in terms:
            if op.layout != layout:
                raise LayoutError("all terms of a TimeOperator must share one layout")
        self.layout = layout
        self.terms = tuple((c, op) for c, op in terms)

    @classmethod
    def of(cls, op: "Operator | TimeOperator | None", layout: SpaceLayout | None = None) -> "TimeOperator":
        if isinstance(op, TimeOperator):
            return op
        if op is None:
            if layout is None:
                raise ValueError("layout required for an empty operator")
            return cls(layout)
        return cls(op.layout, [(1.0, op)])

    def __add__(self, other):
        other = TimeOperator.of(other, self.layout)
        if other.layout != self.layout:
            raise LayoutError("operators live on different layouts")
        return TimeOperator(self.layout, self.terms + other.terms)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1.0) * TimeOperator.of(other, self.layout)

    def __mul__(self, scalar):
        if callable(scalar) or np.isscalar(scalar):
            return TimeOperator(self.layout, [(_mul(scalar, c), op) for c, op in self.terms])
        return NotImplemented

    __rmul__ = __mul__

    def dag(self) -> "TimeOperator":
        return TimeOperator(self.layout, [(_conj(c), op.dag()) for c, op in self.terms])

    def __matmul__(self, other) -> "TimeOperator":
        other = TimeOperator.of(other, self.layout)
        return TimeOperator(
            self.layout,
            [(_mul(c, d), a @ b) for c, a in self.terms for d, b in other.terms],
        )

    def at(self, t: float) -> Operator:
        m = np.zeros((self.layout.dim, self.layout.dim), dtype=complex)
        for c, op in self.terms:
            m += coefficient_values(c, np.array([t]))[0] * op.matrix
        return Operator(self.layout, m)

    def coefficients(self, t: np.ndarray) -> np.ndarray:
        """Coefficient table of shape ``(len(t), n_terms)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if not self.terms:
            return np.zeros((len(t), 0), dtype=complex)
        return np.stack([coefficient_values(c, t) for c, _ in self.terms], axis=1)

    @property
    def matrices(self) -> list[np.ndarray]:
        return [op.matrix for _, op in self.terms]

    @property
    def is_empty(self) -> bool:
        return not self.terms

    def __repr__(self) -> str:
        return f"TimeOperator({len(self.terms)} terms, labels={self.layout.labels})"


@dataclass(frozen=True)
class CascadeNode:
    """One element of a chain.

    ``output`` is what the node emits downstream; ``input`` is the coupling to
    the incoming field and defaults to ``output`` (one-port cavity). ``losses``
    are private decay channels, ``monitored`` an optional homodyne-monitored port.
    """

    name: str
    hamiltonian: TimeOperator
    output: TimeOperator
    input: TimeOperator | None = None
    losses: tuple[TimeOperator, ...] = ()
    monitored: TimeOperator | None = None

    @property
    def layout(self) -> SpaceLayout:
        return self.hamiltonian.layout


@dataclass(frozen=True)
class CascadeSystem:
    """Master-equation model of a chain.

    ``channels`` are the collective jump operators of every travelling-field
    segment; the last one is ``chain``. ``losses`` are the private jump
    operators. Everything except ``monitored`` is unobserved.
    """

    layout: SpaceLayout
    hamiltonian: TimeOperator
    channels: tuple[TimeOperator, ...]
    losses: tuple[TimeOperator, ...] = ()
    monitored: TimeOperator | None = None
    nodes: tuple[str, ...] = field(default=())

    @property
    def chain(self) -> TimeOperator:
        return self.channels[-1]

    @property
    def unmonitored(self) -> tuple[TimeOperator, ...]:
        return tuple(c for c in self.channels if not c.is_empty) + tuple(self.losses)

    @property
    def jump_operators(self) -> tuple[TimeOperator, ...]:
        extra = (self.monitored,) if self.monitored is not None else ()
        return self.unmonitored + extra

    def with_hamiltonian(self, extra: TimeOperator) -> "CascadeSystem":
        return CascadeSystem(
            self.layout, self.hamiltonian + extra, self.channels, self.losses, self.monitored, self.nodes
        )


def interference(upstream: TimeOperator, downstream: TimeOperator) -> TimeOperator:
    """``(i/2)(L_up^dag L_down - L_down^dag L_up)``.

    For an emitter ``g* a_u`` feeding a cavity ``sqrt(gamma) a`` this is
    ``(i/2) g sqrt(gamma) a_u^dag a + h.c.``.
    """
    return 0.5j * (upstream.dag() @ downstream) - 0.5j * (downstream.dag() @ upstream)


def build_chain(nodes: Sequence[CascadeNode]) -> CascadeSystem:
    if not nodes:
        raise ValueError("a chain needs at least one node")
    layout = nodes[0].layout
    for node in nodes:
        ops = [node.hamiltonian, node.output, *node.losses]
        ops += [node.input] if node.input is not None else []
        ops += [node.monitored] if node.monitored is not None else []
        if any(op.layout != layout for op in ops):
            raise LayoutError(f"node {node.name!r} does not share the chain layout")

    H = TimeOperator(layout)
    channels: list[TimeOperator] = []
    losses: list[TimeOperator] = []
    monitored = None
    members: list[TimeOperator] = []

    def join(op: TimeOperator) -> None:
        nonlocal H
        for up in members:
            H = H + interference(up, op)
        members.append(op)

    def close() -> None:
        if members:
            total = TimeOperator(layout)
            for m in members:
                total = total + m
            channels.append(total)
        members.clear()

    for i, node in enumerate(nodes):
        H = H + node.hamiltonian
        losses.extend(node.losses)
        if node.monitored is not None:
            if monitored is not None:
                raise ValueError("at most one monitored operator per chain")
            monitored = node.monitored
        if i == 0 or node.input is None:
            join(node.output)
        else:
            join(node.input)
            close()
            join(node.output)
    close()
    return CascadeSystem(layout, H, tuple(channels), tuple(losses), monitored, tuple(n.name for n in nodes))


def emitter_node(pulse: PulseSpec, layout: SpaceLayout, label: str = "a_u") -> CascadeNode:
    """Auxiliary cavity releasing ``pulse``; output ``g_u*(t) a_u``, no Hamiltonian."""
    a_u = annihilator(layout, label)
    g_conj = _Conj(pulse.coupling_g)
    return CascadeNode(
        name=f"emitter[{label}]",
        hamiltonian=TimeOperator(layout),
        output=TimeOperator(layout, [(g_conj, a_u)]),
    )


def cavity_node(
    layout: SpaceLayout,
    label: str,
    gamma: float,
    detuning: float = 0.0,
    name: str | None = None,
) -> CascadeNode:
    """One-port cavity with ``H = detuning n`` and coupling ``sqrt(gamma) a``."""
    a = annihilator(layout, label)
    H = TimeOperator(layout, [(detuning, a.dag() @ a)]) if detuning else TimeOperator(layout)
    return CascadeNode(
        name=name or f"cavity[{label}]",
        hamiltonian=H,
        output=TimeOperator(layout, [(np.sqrt(gamma), a)]),
    )
