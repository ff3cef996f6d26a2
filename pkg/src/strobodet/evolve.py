"""Lindblad propagation, homodyne stochastic master equation, two-time correlations.

All integrators work on a :class:`CompiledModel`: the system restricted to
the subspace reachable from the initial state (exact, since the dynamics never
leaves it), with every operator packed for the compiled kernels in
``_kernels``. Time-dependent coefficients are evaluated per step; the
operator structure is fixed at compile time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

from . import _kernels
from .cascade import CascadeSystem, TimeOperator, coefficient_values
from .hilbert import Operator, QuantumState, SpaceLayout

TRACE_ABORT = 1e-4
NEG_EIG_ABORT = -1e-3
_EDGE = 1e-9  # relative nudge keeping step-function coefficients inside the step


class IntegrationError(RuntimeError):
    """Numerical failure (trace drift, positivity blow-up, bad step size)."""


@dataclass(frozen=True)
class EvolutionConfig:
    """Integrator settings.

    ``dt`` is the (maximum) step; when ``None`` it is ``step_factor`` divided by
    the largest instantaneous rate of the model. Deterministic runs additionally
    shorten steps locally wherever ``rate * dt`` would exceed ``step_factor``.
    ``scheme`` selects the stochastic update: plain Euler-Maruyama or the
    positivity-preserving first-order Kraus form (``"kraus"``).
    """

    dt: float | None = None
    step_factor: float = 0.01
    scheme: Literal["rk4", "euler_maruyama", "kraus"] = "rk4"
    renormalize: bool = False
    chunk_steps: int = 4096

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.step_factor > 0:
            raise ValueError("step_factor must be positive")
        if self.scheme not in ("rk4", "euler_maruyama", "kraus"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


def _pattern_union(mats: Iterable[np.ndarray], d: int) -> np.ndarray:
    mask = np.zeros((d, d), dtype=bool)
    for m in mats:
        mask |= np.abs(m) > 0
    return mask


def reachable_basis(
    d: int, edges: Iterable[np.ndarray], support: Iterable[int]
) -> np.ndarray:
    """Basis indices reachable from ``support`` through nonzero matrix elements."""
    mask = _pattern_union(edges, d)
    seen = np.zeros(d, dtype=bool)
    frontier = np.array(sorted(set(int(s) for s in support)), dtype=int)
    seen[frontier] = True
    while frontier.size:
        nxt = np.flatnonzero(mask[:, frontier].any(axis=1) & ~seen)
        seen[nxt] = True
        frontier = nxt
    return np.flatnonzero(seen)


def _simplify(op: TimeOperator) -> list[tuple[object, np.ndarray]]:
    const = None
    out = []
    for c, o in op.terms:
        if callable(c):
            out.append((c, o.matrix))
        else:
            m = complex(c) * o.matrix
            const = m if const is None else const + m
    if const is not None and np.any(const):
        out.insert(0, (1.0, const))
    return out


def _support_of(state) -> np.ndarray:
    data = state.data if isinstance(state, QuantumState) else np.asarray(state)
    if data.ndim == 1:
        return np.flatnonzero(np.abs(data) > 0)
    return np.flatnonzero((np.abs(data) > 0).any(axis=0) | (np.abs(data) > 0).any(axis=1))


class CompiledModel:
    """A :class:`CascadeSystem` packed for the kernels on its reachable subspace.

    Jump operators are ordered unmonitored first, monitored last
    (``monitored_index``, or ``None``).
    """

    def __init__(
        self,
        system: CascadeSystem,
        initial: Sequence[QuantumState | np.ndarray] | QuantumState,
        extra_ops: Sequence[Operator] = (),
        restrict: bool = True,
    ):
        if isinstance(initial, (QuantumState, np.ndarray)):
            initial = [initial]
        self.system = system
        self.layout: SpaceLayout = system.layout
        D = self.layout.dim
        jumps = list(system.unmonitored)
        self.monitored_index = None
        if system.monitored is not None:
            jumps.append(system.monitored)
            self.monitored_index = len(jumps)
        K = (-1j) * system.hamiltonian
        for L in jumps:
            K = K - 0.5 * (L.dag() @ L)
        ops = [K] + jumps
        simplified = [_simplify(op) for op in ops]

        if restrict:
            support = np.unique(np.concatenate([_support_of(s) for s in initial]))
            edges = [m for terms in simplified for _, m in terms] + [o.matrix for o in extra_ops]
            self.basis = reachable_basis(D, edges, support)
        else:
            self.basis = np.arange(D)
        b = self.basis
        d = len(b)
        self.dim = d

        ptr = np.zeros((len(ops), d + 1), dtype=np.int64)
        idx_parts, term_rows, coefs, norms = [], [], [], []
        offset = 0
        for o, terms in enumerate(simplified):
            mats = [m[np.ix_(b, b)] for _, m in terms]
            mask = _pattern_union(mats, d)
            rows, cols = np.nonzero(mask)
            counts = np.bincount(rows, minlength=d)
            ptr[o, 1:] = offset + np.cumsum(counts)
            ptr[o, 0] = offset
            idx_parts.append(cols)
            for (c, _), m in zip(terms, mats):
                term_rows.append((offset, m[rows, cols]))
                coefs.append(c)
                norms.append(np.abs(m).sum(axis=1).max() if o == 0 else 0.0)
            offset += len(rows)
        self.nnz = offset
        self.ptr = ptr
        self.idx = np.concatenate(idx_parts).astype(np.int64) if idx_parts else np.zeros(0, np.int64)
        T = np.zeros((len(term_rows), max(offset, 1)), dtype=complex)
        for k, (off, v) in enumerate(term_rows):
            T[k, off : off + len(v)] = v
        self._terms = T[:, :offset] if offset else T[:, :0]
        self._coefs = coefs
        self._norms = np.asarray(norms)

    def coefficient_table(self, t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if not self._coefs:
            return np.zeros((len(t), 0), dtype=complex)
        return np.stack([coefficient_values(c, t) for c in self._coefs], axis=1)

    def values(self, t: np.ndarray) -> np.ndarray:
        """Packed operator values, shape ``(len(t), nnz)``."""
        return np.ascontiguousarray(self.coefficient_table(t) @ self._terms)

    def rate(self, t: np.ndarray) -> np.ndarray:
        """Bound on the generator norm at each time (sum of |coefficient| * row norm)."""
        return np.abs(self.coefficient_table(t)) @ self._norms

    # state and operator conversion between the full layout and the subspace

    def restrict_state(self, state: QuantumState | np.ndarray) -> np.ndarray:
        rho = state.dm() if isinstance(state, QuantumState) else np.asarray(state, dtype=complex)
        if rho.ndim == 1:
            rho = np.outer(rho, rho.conj())
        b = self.basis
        outside = np.abs(rho).sum() - np.abs(rho[np.ix_(b, b)]).sum()
        if outside > 1e-12:
            raise ValueError("state has weight outside the compiled subspace")
        return np.ascontiguousarray(rho[np.ix_(b, b)])

    def expand_state(self, X: np.ndarray) -> QuantumState:
        D = self.layout.dim
        rho = np.zeros((D, D), dtype=complex)
        rho[np.ix_(self.basis, self.basis)] = X
        return QuantumState(self.layout, rho)

    def restrict_op(self, op: Operator | np.ndarray) -> np.ndarray:
        m = op.matrix if isinstance(op, Operator) else np.asarray(op)
        return np.ascontiguousarray(m[np.ix_(self.basis, self.basis)], dtype=complex)

    def observable_stack(self, observables: Sequence[Operator]) -> np.ndarray:
        if not observables:
            return np.zeros((0, self.dim, self.dim), dtype=complex)
        return np.stack([self.restrict_op(o) for o in observables])


def _refine(model: CompiledModel, edges: np.ndarray, step_factor: float) -> np.ndarray:
    """Bisect intervals until ``rate * dt <= step_factor`` at both ends and midpoint."""
    pts = np.asarray(edges, dtype=float)
    for _ in range(60):
        a, c = pts[:-1], pts[1:]
        mid = 0.5 * (a + c)
        r = np.maximum(np.maximum(model.rate(a + _EDGE * (c - a)), model.rate(mid)), model.rate(c - _EDGE * (c - a)))
        bad = r * (c - a) > step_factor
        if not bad.any():
            return pts
        pts = np.sort(np.concatenate([pts, mid[bad]]))
    raise IntegrationError("step refinement did not converge (singular coefficient?)")


def make_grid(
    t_start: float,
    t_end: float,
    dt: float,
    breakpoints: Iterable[float] = (),
) -> np.ndarray:
    """Grid from ``t_start`` to ``t_end`` with steps <= ``dt`` hitting every breakpoint."""
    if t_end < t_start:
        raise ValueError("t_end before t_start")
    bps = sorted({t_start, t_end, *(b for b in breakpoints if t_start < b < t_end)})
    pieces = [np.array([t_start])]
    for a, c in zip(bps[:-1], bps[1:]):
        n = max(1, int(np.ceil((c - a) / dt - 1e-9)))
        pieces.append(np.linspace(a, c, n + 1)[1:])
    return np.concatenate(pieces)


def default_dt(model: CompiledModel, t_start: float, t_end: float, config: EvolutionConfig) -> float:
    if config.dt is not None:
        return config.dt
    probe = np.linspace(t_start, t_end, 2001)
    rmax = float(model.rate(probe).max())
    span = max(t_end - t_start, 1e-12)
    return span if rmax == 0 else min(span, config.step_factor / rmax)


class Propagator:
    """Deterministic RK4 propagation of a compiled model between arbitrary times."""

    def __init__(self, model: CompiledModel, config: EvolutionConfig | None = None, dt: float | None = None):
        self.model = model
        self.config = config or EvolutionConfig()
        self.dt = dt if dt is not None else self.config.dt

    def grid(self, t0: float, t1: float, breakpoints: Iterable[float] = ()) -> np.ndarray:
        dt = self.dt if self.dt is not None else default_dt(self.model, t0, t1, self.config)
        g = make_grid(t0, t1, dt, breakpoints)
        return _refine(self.model, g, self.config.step_factor) if len(g) > 1 else g

    def run(
        self,
        X: np.ndarray,
        t0: float,
        t1: float,
        obs: np.ndarray | None = None,
        breakpoints: Iterable[float] = (),
        hermitian: bool = True,
        grid: np.ndarray | None = None,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Advance ``X`` (copied) from ``t0`` to ``t1``.

        Returns ``(X_final, grid, obs_values)`` with ``obs_values[k]`` taken at
        ``grid[k]`` (row 0 is the initial state).
        """
        m = self.model
        X = np.array(X, dtype=complex, order="C", copy=True)
        obs = m.observable_stack(()) if obs is None else obs
        g = self.grid(t0, t1, breakpoints) if grid is None else grid
        out = np.empty((len(g), obs.shape[0]), dtype=complex)
        for q in range(obs.shape[0]):
            out[0, q] = np.einsum("ij,ji->", obs[q], X)
        tr0 = np.trace(X).real
        cs = self.config.chunk_steps
        for s in range(0, len(g) - 1, cs):
            a = g[s : s + cs + 1]
            h = np.diff(a)
            lo, hi = a[:-1], a[1:]
            times = np.stack([lo + _EDGE * h, 0.5 * (lo + hi), hi - _EDGE * h], axis=1)
            vals = m.values(times.ravel()).reshape(len(h), 3, m.nnz)
            _kernels.rk4_chunk(X, h, vals, m.ptr, m.idx, hermitian, obs, out[s + 1 : s + len(a)])
            if hermitian:
                drift = abs(np.trace(X).real - tr0)
                if not np.isfinite(drift) or drift > TRACE_ABORT:
                    raise IntegrationError(
                        f"trace drift {drift:.3g} at t={a[-1]:.6g}; reduce dt (current max step {h.max():.3g})"
                    )
        if hermitian and self.config.renormalize:
            X /= np.trace(X).real
        return X, g, out


@dataclass
class LindbladResult:
    times: np.ndarray
    expectations: dict[str, np.ndarray]
    final_state: QuantumState
    trace_drift: float


def lindblad_propagate(
    system: CascadeSystem,
    rho0: QuantumState,
    t_span: tuple[float, float],
    config: EvolutionConfig | None = None,
    observables: Mapping[str, Operator] | None = None,
    record_times: Sequence[float] | None = None,
) -> LindbladResult:
    """Integrate the Lindblad equation of ``system`` from ``rho0`` over ``t_span``.

    Expectations are reported on the integration grid, or only at
    ``record_times`` (which are then added as grid breakpoints).
    """
    config = config or EvolutionConfig()
    observables = dict(observables or {})
    model = CompiledModel(system, rho0)
    prop = Propagator(model, config)
    X0 = model.restrict_state(rho0)
    obs = model.observable_stack(list(observables.values()))
    bps = record_times if record_times is not None else ()
    X, grid, vals = prop.run(X0, t_span[0], t_span[1], obs, breakpoints=bps)
    if record_times is not None:
        pos = np.searchsorted(grid, np.asarray(record_times) - 1e-12)
        pos = np.clip(pos, 0, len(grid) - 1)
        grid, vals = grid[pos], vals[pos]
    tr_drift = abs(np.trace(X).real - np.trace(X0).real)
    exps = {name: vals[:, i] for i, name in enumerate(observables)}
    return LindbladResult(grid, exps, model.expand_state(X), tr_drift)


@dataclass
class TrajectoryRecord:
    """One homodyne trajectory.

    ``current[n]`` is the bin-averaged current over ``[times[n], times[n]+dt)``,
    i.e. ``<S + S^dag> + dW_n / dt`` evaluated with the state at ``times[n]``.
    """

    seed: int
    times: np.ndarray
    current: np.ndarray
    signal: np.ndarray
    expectations: dict[str, np.ndarray] = field(default_factory=dict)
    final_state: QuantumState | None = None

    def to_bytes(self) -> bytes:
        parts = [self.times, self.current, self.signal] + [self.expectations[k] for k in sorted(self.expectations)]
        return b"".join(np.ascontiguousarray(p).tobytes() for p in parts)


class SMEIntegrator:
    """Homodyne integrator for one monitored channel, reusable across seeds.

    ``scheme="euler_maruyama"`` is the plain update ``d1 dt + d2 dW``; the
    ``"kraus"`` scheme applies the same generator as a completely positive map
    per step (always trace-normalized), which removes the negative-eigenvalue
    blowups Euler-Maruyama suffers under strong measurement back-action.
    """

    def __init__(
        self,
        model: CompiledModel,
        dt: float,
        renormalize: bool = True,
        chunk_steps: int = 4096,
        scheme: Literal["euler_maruyama", "kraus"] = "euler_maruyama",
    ):
        if model.monitored_index is None:
            raise ValueError("homodyne integration needs exactly one monitored operator")
        if not dt > 0:
            raise ValueError("dt must be positive")
        if scheme not in ("euler_maruyama", "kraus"):
            raise ValueError(f"unknown stochastic scheme {scheme!r}")
        self.model = model
        self.dt = float(dt)
        self.renormalize = renormalize
        self.chunk_steps = chunk_steps
        self.scheme = scheme

    def run(
        self,
        X0: np.ndarray,
        t0: float,
        n_steps: int,
        rng: np.random.Generator,
        obs: np.ndarray | None = None,
        chunks: Sequence[int] | None = None,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Returns ``(X_final, times, signal, dW, obs_values)``.

        ``chunks`` optionally fixes the chunk boundaries (step counts); the
        positivity check runs at the end of each chunk. Noise is drawn chunk
        by chunk from ``rng`` in order, so results depend only on the seed,
        ``dt`` and the chunk layout.
        """
        m = self.model
        dt = self.dt
        X = np.array(X0, dtype=complex, order="C", copy=True)
        obs = m.observable_stack(()) if obs is None else obs
        if chunks is None:
            chunks = [self.chunk_steps] * (n_steps // self.chunk_steps)
            if n_steps % self.chunk_steps:
                chunks.append(n_steps % self.chunk_steps)
        if sum(chunks) != n_steps:
            raise ValueError("chunk sizes must add up to n_steps")
        times = t0 + dt * np.arange(n_steps)
        signal = np.empty(n_steps)
        dW = np.empty(n_steps)
        out_obs = np.empty((n_steps, obs.shape[0]), dtype=complex)
        s = 0
        sq = np.sqrt(dt)
        for size in chunks:
            t = times[s : s + size]
            vals = m.values(t + _EDGE * dt)
            dW[s : s + size] = rng.standard_normal(size) * sq
            if self.scheme == "kraus":
                min_diag = _kernels.sme_kraus_chunk(
                    X, dt, vals, dW[s : s + size], m.ptr, m.idx, m.monitored_index,
                    obs, signal[s : s + size], out_obs[s : s + size],
                )
            else:
                min_diag = _kernels.sme_chunk(
                    X, dt, vals, dW[s : s + size], m.ptr, m.idx, m.monitored_index,
                    self.renormalize, obs, signal[s : s + size], out_obs[s : s + size],
                )
            s += size
            if not np.all(np.isfinite(X)):
                raise IntegrationError(f"non-finite state at t={t[-1] + dt:.6g}")
            lam = np.linalg.eigvalsh(X).min() if min_diag > NEG_EIG_ABORT else min_diag
            if lam < NEG_EIG_ABORT:
                raise IntegrationError(
                    f"negative eigenvalue {lam:.3g} at t={t[-1] + dt:.6g}; trajectory aborted (reduce dt)"
                )
        return X, times, signal, dW, out_obs


def sme_homodyne(
    system: CascadeSystem,
    rho0: QuantumState,
    t_span: tuple[float, float],
    seed: int,
    config: EvolutionConfig | None = None,
    observables: Mapping[str, Operator] | None = None,
) -> TrajectoryRecord:
    """Single diffusive homodyne trajectory of the monitored operator ``S``.

    The current is recorded per step (bin width ``dt``):
    ``J_n = <S + S^dag>(t_n) + dW_n / dt`` with ``dW_n ~ N(0, dt)``.
    """
    config = config or EvolutionConfig(scheme="euler_maruyama", renormalize=True)
    observables = dict(observables or {})
    model = CompiledModel(system, rho0)
    dt = default_dt(model, *t_span, config)
    n = int(round((t_span[1] - t_span[0]) / dt))
    if n < 1 or abs(n * dt - (t_span[1] - t_span[0])) > 1e-9 * max(1.0, abs(t_span[1])):
        raise IntegrationError("time span must be an integer number of steps dt")
    scheme = "kraus" if config.scheme == "kraus" else "euler_maruyama"
    integ = SMEIntegrator(model, dt, config.renormalize, config.chunk_steps, scheme)
    rng = np.random.default_rng(seed)
    obs = model.observable_stack(list(observables.values()))
    X, times, signal, dW, vals = integ.run(model.restrict_state(rho0), t_span[0], n, rng, obs)
    exps = {name: vals[:, i].real for i, name in enumerate(observables)}
    return TrajectoryRecord(
        seed=seed,
        times=times,
        current=signal + dW / dt,
        signal=signal,
        expectations=exps,
        final_state=model.expand_state(X),
    )


def two_time_correlation(
    system: CascadeSystem,
    A: Operator,
    B: Operator,
    rho0: QuantumState,
    grid: np.ndarray,
    config: EvolutionConfig | None = None,
    coherence_tol: float = 0.01,
) -> np.ndarray:
    """``G[i, j] = <A(t_j) B(t_i)>`` for ``t_j >= t_i`` by the regression theorem.

    Propagates ``rho`` to ``t_i``, applies ``B``, propagates to ``t_j`` and traces
    against ``A``; the lower triangle is the Hermitian extension. With
    ``A = c^dag``, ``B = c`` this is the first-order coherence of the field ``c``.
    """
    config = config or EvolutionConfig()
    grid = np.asarray(grid, dtype=float)
    if len(grid) > 2 and np.ptp(np.diff(grid)) > 1e-9 * (grid[-1] - grid[0]):
        raise ValueError("correlation grid must be uniform")
    model = CompiledModel(system, rho0, extra_ops=[A, B])
    prop = Propagator(model, config)
    Ar = model.observable_stack([A])
    Br = model.restrict_op(B)
    n = len(grid)
    X = model.restrict_state(rho0)
    states = []
    t_prev = grid[0]
    for k, t in enumerate(grid):
        if k:
            X, _, _ = prop.run(X, t_prev, t)
        states.append(X)
        t_prev = t
    G = np.zeros((n, n), dtype=complex)
    fine = prop.grid(grid[0], grid[-1], breakpoints=grid)
    for i in range(n):
        Y = Br @ states[i]
        G[i, i] = np.einsum("ij,ji->", Ar[0], Y)
        if i == n - 1:
            continue
        sub = fine[np.searchsorted(fine, grid[i] - 1e-12) :]
        _, g, vals = prop.run(Y, grid[i], grid[-1], Ar, hermitian=False, grid=sub)
        pos = np.searchsorted(g, grid[i + 1 :] - 1e-12)
        G[i, i + 1 :] = vals[pos, 0]
    iu = np.triu_indices(n, 1)
    G[(iu[1], iu[0])] = np.conj(G[iu])
    _warn_if_coarse(G, coherence_tol)
    return G


def _warn_if_coarse(G: np.ndarray, tol: float) -> None:
    diag = np.abs(np.diag(G))
    if len(diag) < 2 or diag.max() == 0:
        return
    off = np.abs(np.diag(G, 1))
    norm = np.sqrt(diag[:-1] * diag[1:])
    ok = norm > 1e-6 * diag.max()
    if not ok.any():
        return
    loss = np.average(1 - off[ok] / norm[ok], weights=norm[ok])
    if loss > tol:
        warnings.warn(
            f"correlation grid too coarse: neighbouring-point coherence loss {loss:.2%} exceeds {tol:.0%}",
            RuntimeWarning,
            stacklevel=3,
        )
