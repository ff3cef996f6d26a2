"""Dense operator algebra on truncated tensor-product Fock spaces.

Every subsystem is a bosonic mode truncated to Fock levels ``0..cutoff-1``.
The order in which subsystems are listed in a :class:`SpaceLayout` fixes the
tensor ordering (first label is the slowest-varying index).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-8
POSITIVITY_TOL = 1e-8
TRUNCATION_FLAG = 1e-4


class LayoutError(ValueError):
    """Raised for unknown labels or mismatched layouts."""


class ImpossibleOutcome(RuntimeError):
    """A projection branch with (numerically) zero probability was requested."""


@dataclass(frozen=True)
class SpaceLayout:
    """Ordered list of ``(label, cutoff)`` pairs."""

    subsystems: tuple[tuple[str, int], ...]

    def __init__(self, subsystems: Mapping[str, int] | Iterable[tuple[str, int]]):
        items = subsystems.items() if isinstance(subsystems, Mapping) else subsystems
        subs = tuple((str(label), int(cutoff)) for label, cutoff in items)
        if not subs:
            raise LayoutError("layout needs at least one subsystem")
        labels = [s[0] for s in subs]
        if len(set(labels)) != len(labels):
            raise LayoutError(f"duplicate labels in layout: {labels}")
        for label, cutoff in subs:
            if cutoff < 2:
                raise LayoutError(f"cutoff of {label!r} must be >= 2, got {cutoff}")
        object.__setattr__(self, "subsystems", subs)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(s[0] for s in self.subsystems)

    @property
    def cutoffs(self) -> tuple[int, ...]:
        return tuple(s[1] for s in self.subsystems)

    @property
    def dim(self) -> int:
        return int(np.prod(self.cutoffs))

    def position(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LayoutError(f"unknown subsystem {label!r}; layout has {self.labels}") from None

    def cutoff(self, label: str) -> int:
        return self.cutoffs[self.position(label)]

    @cached_property
    def occupations(self) -> np.ndarray:
        """Integer table ``(dim, n_subsystems)`` of Fock numbers per basis index."""
        grids = np.meshgrid(*[np.arange(c) for c in self.cutoffs], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def index(self, **occupation: int) -> int:
        """Basis index of the product Fock state; unnamed subsystems are in vacuum."""
        for label in occupation:
            self.position(label)
        idx = 0
        for label, cutoff in self.subsystems:
            n = int(occupation.get(label, 0))
            if not 0 <= n < cutoff:
                raise LayoutError(f"level {n} outside cutoff {cutoff} of {label!r}")
            idx = idx * cutoff + n
        return idx

    def embed(self, label: str, local: np.ndarray) -> np.ndarray:
        """Kronecker-embed a single-mode matrix, identity on every other subsystem."""
        pos = self.position(label)
        local = np.asarray(local, dtype=complex)
        if local.shape != (self.cutoffs[pos],) * 2:
            raise LayoutError(f"local matrix shape {local.shape} does not match cutoff of {label!r}")
        out = np.ones((1, 1), dtype=complex)
        for i, cutoff in enumerate(self.cutoffs):
            out = np.kron(out, local if i == pos else np.eye(cutoff))
        return out


class Operator:
    """Dense complex matrix tied to a layout.

    Supports ``+``, ``-``, scalar ``*``, matrix product ``@`` and ``.dag()``.
    Instances are treated as immutable.
    """

    __slots__ = ("layout", "matrix")

    def __init__(self, layout: SpaceLayout, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.shape != (layout.dim, layout.dim):
            raise LayoutError(f"matrix shape {matrix.shape} does not match layout dimension {layout.dim}")
        matrix.setflags(write=False)
        self.layout = layout
        self.matrix = matrix

    def _check(self, other: "Operator") -> None:
        if other.layout != self.layout:
            raise LayoutError("operators live on different layouts")

    def __add__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(self.layout, self.matrix + other.matrix)
        if np.isscalar(other):
            return Operator(self.layout, self.matrix + other * np.eye(self.layout.dim))
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rsub__(self, other):
        return (-1.0) * self + other

    def __neg__(self):
        return Operator(self.layout, -self.matrix)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return Operator(self.layout, scalar * self.matrix)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Operator(self.layout, self.matrix / scalar)

    def __matmul__(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.layout, self.matrix @ other.matrix)

    def dag(self) -> "Operator":
        return Operator(self.layout, self.matrix.conj().T)

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0) <= tol)

    def is_projector(self, tol: float = HERMITIAN_TOL) -> bool:
        return self.is_hermitian(tol) and bool(
            np.max(np.abs(self.matrix @ self.matrix - self.matrix), initial=0.0) <= tol
        )

    def commutator(self, other: "Operator") -> "Operator":
        return self @ other - other @ self

    def __repr__(self) -> str:
        return f"Operator(labels={self.layout.labels}, dim={self.layout.dim})"


def identity(layout: SpaceLayout) -> Operator:
    return Operator(layout, np.eye(layout.dim))


def annihilator(layout: SpaceLayout, label: str) -> Operator:
    """Lowering operator of ``label`` with ``<n-1|a|n> = sqrt(n)``."""
    cutoff = layout.cutoff(label)
    local = np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), k=1)
    return Operator(layout, layout.embed(label, local))


def creator(layout: SpaceLayout, label: str) -> Operator:
    return annihilator(layout, label).dag()


def func_of_number(layout: SpaceLayout, label: str, f: Callable[[np.ndarray], np.ndarray]) -> Operator:
    """Diagonal operator ``f(n)`` on the Fock index of ``label``."""
    cutoff = layout.cutoff(label)
    n = np.arange(cutoff, dtype=float)
    values = np.broadcast_to(np.asarray(f(n), dtype=complex), n.shape)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"function is not finite on the Fock levels of {label!r}")
    return Operator(layout, layout.embed(label, np.diag(values)))


def number(layout: SpaceLayout, label: str) -> Operator:
    return func_of_number(layout, label, lambda n: n)


def fock_projector(layout: SpaceLayout, label: str, levels: Iterable[int]) -> Operator:
    """Projector onto the listed Fock levels of ``label`` (identity elsewhere)."""
    levels = set(int(k) for k in levels)
    return func_of_number(layout, label, lambda n: np.isin(n, list(levels)).astype(float))


def quadrature(layout: SpaceLayout, label: str) -> Operator:
    """``x = a + a^dagger``; a coherent state |beta> has ``<x> = 2 Re beta``."""
    a = annihilator(layout, label)
    return a + a.dag()


class QuantumState:
    """Pure ket or density matrix on a layout.

    States are value objects: operations return new instances.
    """

    __slots__ = ("layout", "data", "valid")

    def __init__(self, layout: SpaceLayout, data: np.ndarray, valid: bool = True):
        data = np.asarray(data, dtype=complex)
        if data.shape not in ((layout.dim,), (layout.dim, layout.dim)):
            raise LayoutError(f"state shape {data.shape} does not match layout dimension {layout.dim}")
        self.layout = layout
        self.data = data
        self.valid = valid

    @property
    def is_ket(self) -> bool:
        return self.data.ndim == 1

    def dm(self) -> np.ndarray:
        if self.is_ket:
            return np.outer(self.data, self.data.conj())
        return self.data

    def to_dm(self) -> "QuantumState":
        return QuantumState(self.layout, self.dm(), self.valid)

    def check(self) -> None:
        """Raise ``ValueError`` unless the state satisfies the validity invariants."""
        if not self.valid:
            raise ValueError("state was flagged invalid (impossible measurement outcome)")
        if self.is_ket:
            norm = np.linalg.norm(self.data)
            if abs(norm - 1) > HERMITIAN_TOL:
                raise ValueError(f"ket norm {norm} deviates from 1")
            return
        rho = self.data
        herm = np.max(np.abs(rho - rho.conj().T))
        if herm > HERMITIAN_TOL:
            raise ValueError(f"density matrix not Hermitian (deviation {herm:.3g})")
        tr = np.trace(rho).real
        if abs(tr - 1) > TRACE_TOL:
            raise ValueError(f"density matrix trace {tr} deviates from 1")
        lam = np.linalg.eigvalsh(rho).min()
        if lam < -POSITIVITY_TOL:
            raise ValueError(f"density matrix has negative eigenvalue {lam:.3g}")

    def populations(self, label: str) -> np.ndarray:
        """Reduced Fock-level distribution of one subsystem."""
        pos = self.layout.position(label)
        diag = np.abs(self.data) ** 2 if self.is_ket else np.real(np.diag(self.data))
        occ = self.layout.occupations[:, pos]
        return np.bincount(occ, weights=diag, minlength=self.layout.cutoffs[pos])

    def top_level_populations(self) -> dict[str, float]:
        return {label: float(self.populations(label)[-1]) for label in self.layout.labels}

    def truncation_flagged(self, tol: float = TRUNCATION_FLAG) -> bool:
        return any(p > tol for p in self.top_level_populations().values())

    def __repr__(self) -> str:
        kind = "ket" if self.is_ket else "dm"
        return f"QuantumState({kind}, labels={self.layout.labels})"


def fock_state(layout: SpaceLayout, **occupation: int) -> QuantumState:
    ket = np.zeros(layout.dim, dtype=complex)
    ket[layout.index(**occupation)] = 1.0
    return QuantumState(layout, ket)


def product_state(layout: SpaceLayout, local_kets: Mapping[str, Sequence[complex]]) -> QuantumState:
    """Product ket from per-subsystem amplitude vectors; omitted subsystems in vacuum."""
    for label in local_kets:
        layout.position(label)
    ket = np.ones(1, dtype=complex)
    for label, cutoff in layout.subsystems:
        if label in local_kets:
            v = np.asarray(local_kets[label], dtype=complex)
            if v.shape != (cutoff,):
                raise LayoutError(f"amplitude vector for {label!r} must have length {cutoff}")
        else:
            v = np.zeros(cutoff, dtype=complex)
            v[0] = 1.0
        ket = np.kron(ket, v)
    return QuantumState(layout, ket / np.linalg.norm(ket))


def coherent_amplitudes(beta: complex, cutoff: int) -> np.ndarray:
    """Truncated displacement series ``e^{-|b|^2/2} b^n / sqrt(n!)``, renormalized."""
    n = np.arange(cutoff)
    log_fact = np.cumsum(np.log(np.maximum(n, 1)))
    amps = np.exp(-0.5 * abs(beta) ** 2 - 0.5 * log_fact) * np.power(complex(beta), n)
    return amps / np.linalg.norm(amps)


def coherent_state(layout: SpaceLayout, label: str, beta: complex) -> QuantumState:
    return product_state(layout, {label: coherent_amplitudes(beta, layout.cutoff(label))})


def _check_pair(state: QuantumState, op: Operator) -> None:
    if state.layout != op.layout:
        raise LayoutError("state and operator live on different layouts")


def expectation(state: QuantumState, op: Operator) -> complex:
    _check_pair(state, op)
    if state.is_ket:
        return complex(np.vdot(state.data, op.matrix @ state.data))
    return complex(np.einsum("ij,ji->", op.matrix, state.data))


def project(
    state: QuantumState, projector: Operator, min_probability: float = 1e-12
) -> tuple[QuantumState, float]:
    """Apply ``P rho P / tr[P rho P]`` and return ``(state, probability)``.

    Below ``min_probability`` the returned state carries ``valid=False`` and
    must not be evolved further.
    """
    _check_pair(state, projector)
    if not projector.is_projector():
        raise ValueError("operator is not an orthogonal projector")
    P = projector.matrix
    if state.is_ket:
        out = P @ state.data
        prob = float(np.vdot(out, out).real)
        if prob < min_probability:
            return QuantumState(state.layout, out, valid=False), max(prob, 0.0)
        return QuantumState(state.layout, out / np.sqrt(prob)), min(prob, 1.0)
    out = P @ state.data @ P
    prob = float(np.trace(out).real)
    if prob < min_probability:
        return QuantumState(state.layout, out, valid=False), max(prob, 0.0)
    return QuantumState(state.layout, out / prob), min(prob, 1.0)
