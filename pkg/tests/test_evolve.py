import numpy as np
import pytest

from strobodet.cascade import CascadeNode, TimeOperator, build_chain, cavity_node
from strobodet.evolve import (
    CompiledModel,
    EvolutionConfig,
    IntegrationError,
    SMEIntegrator,
    lindblad_propagate,
    sme_homodyne,
    two_time_correlation,
)
from strobodet.hilbert import SpaceLayout, annihilator, fock_state, number, quadrature


def _cavity(gamma=1.0, cutoff=2):
    lay = SpaceLayout([("a", cutoff)])
    return lay, build_chain([cavity_node(lay, "a", gamma)])


def _monitored(lay, label, gamma, H=None, leak=0.0):
    b = annihilator(lay, label)
    node = CascadeNode(
        name="b",
        hamiltonian=TimeOperator.of(H, lay),
        output=TimeOperator(lay, [(np.sqrt(leak), b)]) if leak else TimeOperator(lay),
        monitored=TimeOperator(lay, [(np.sqrt(gamma), b)]),
    )
    return build_chain([node])


@pytest.mark.parametrize("gamma", [0.3, 1.0, 4.0])
def test_decay_oracle(gamma):
    lay, sys = _cavity(gamma)
    t = np.linspace(0, 5 / gamma, 21)
    res = lindblad_propagate(sys, fock_state(lay, a=1), (0, t[-1]), observables={"n": number(lay, "a")}, record_times=t)
    np.testing.assert_allclose(res.expectations["n"].real, np.exp(-gamma * t), atol=1e-6)


def test_trace_preserved():
    lay, sys = _cavity(1.0, 4)
    res = lindblad_propagate(sys, fock_state(lay, a=3), (0, 10))
    assert res.trace_drift < 1e-10
    res.final_state.check()


def test_driven_cavity_steady_quadrature():
    gamma, beta = 10.0, 1.6
    lay = SpaceLayout([("b", 14)])
    b = annihilator(lay, "b")
    drive = beta * gamma
    H = -0.5j * drive * (b - b.dag())
    sys = _monitored(lay, "b", gamma, H)
    res = lindblad_propagate(sys, fock_state(lay), (0, 3.0), observables={"x": quadrature(lay, "b")})
    assert res.expectations["x"][-1].real == pytest.approx(2 * beta, rel=1e-2)


def test_vacuum_homodyne_noise():
    lay = SpaceLayout([("b", 2)])
    sys = _monitored(lay, "b", 10.0)
    dt = 1e-3
    rec = sme_homodyne(sys, fock_state(lay), (0, 10.0), seed=5, config=EvolutionConfig(dt=dt, scheme="euler_maruyama", renormalize=True))
    J = rec.current
    assert len(J) == 10_000
    assert abs(J.mean()) < 4 / np.sqrt(dt * len(J))
    assert J.var() * dt == pytest.approx(1.0, rel=0.05)


@pytest.mark.parametrize("scheme", ["euler_maruyama", "kraus"])
def test_seeded_determinism(scheme):
    lay = SpaceLayout([("b", 12)])
    b = annihilator(lay, "b")
    sys = _monitored(lay, "b", 2.0, -0.5j * 3 * (b - b.dag()))
    cfg = EvolutionConfig(dt=1e-3, scheme=scheme, renormalize=True)
    r1 = sme_homodyne(sys, fock_state(lay), (0, 2.0), seed=11, config=cfg)
    r2 = sme_homodyne(sys, fock_state(lay), (0, 2.0), seed=11, config=cfg)
    r3 = sme_homodyne(sys, fock_state(lay), (0, 2.0), seed=12, config=cfg)
    assert r1.to_bytes() == r2.to_bytes()
    assert r1.to_bytes() != r3.to_bytes()


@pytest.mark.parametrize(
    "scheme, dt, leak",
    [("euler_maruyama", 2.5e-4, 1.0), ("kraus", 1e-3, 1.0), ("kraus", 1e-3, 0.0)],
)
def test_sme_ensemble_matches_lindblad(scheme, dt, leak):
    """Averaging trajectories reproduces the master equation (3 standard errors)."""
    gamma = 2.0
    lay = SpaceLayout([("b", 10)])
    b = annihilator(lay, "b")
    # a Kerr term makes the conditional states non-Gaussian, so the noise matters
    H = -0.5j * 2.5 * (b - b.dag()) + 0.6 * (b.dag() @ b.dag() @ b @ b)
    # Euler-Maruyama needs the unmonitored leak: it keeps conditional states mixed
    sys = _monitored(lay, "b", gamma, H, leak=leak)
    rho = fock_state(lay).to_dm()
    x = quadrature(lay, "b")
    T = 1.0
    ref = lindblad_propagate(sys, rho, (0, T), observables={"x": x, "n": number(lay, "b")}, config=EvolutionConfig(dt=1e-3))
    model = CompiledModel(sys, rho)
    obs = model.observable_stack([x, number(lay, "b")])
    n_steps = int(round(T / dt))
    integ = SMEIntegrator(model, dt, scheme=scheme)
    finals = []
    for seed in range(500):
        Xf, _, _, _, _ = integ.run(model.restrict_state(rho), 0.0, n_steps, np.random.default_rng(seed), obs)
        finals.append(np.einsum("qij,ji->q", obs, Xf).real)
    finals = np.array(finals)
    mean, se = finals.mean(0), finals.std(0, ddof=1) / np.sqrt(len(finals))
    target = np.array([ref.expectations["x"][-1].real, ref.expectations["n"][-1].real])
    # 2e-3 absorbs the first-order time discretization bias
    assert np.all(np.abs(mean - target) < 3 * se + 2e-3), (mean, target, se)


def test_step_violation_aborts():
    with pytest.raises(ValueError):
        EvolutionConfig(dt=-1)
    with pytest.raises(ValueError):
        EvolutionConfig(scheme="milstein")
    lay, sys = _cavity()
    with pytest.raises(IntegrationError):
        sme_homodyne(_monitored(lay, "a", 1.0), fock_state(lay), (0, 1.0), seed=0, config=EvolutionConfig(dt=0.3, scheme="kraus"))


def test_correlation_decay_oracle():
    gamma = 1.3
    lay, sys = _cavity(gamma)
    a = annihilator(lay, "a") * np.sqrt(gamma)
    grid = np.linspace(0, 6, 61)
    G = two_time_correlation(sys, a.dag(), a, fock_state(lay, a=1), grid)
    exact = gamma * np.exp(-0.5 * gamma * (grid[:, None] + grid[None, :]))
    np.testing.assert_allclose(G, exact, atol=1e-6)
    dt = grid[1] - grid[0]
    # integrated flux over [0, 6/gamma] with the trapezoid end corrections
    w = np.full(len(grid), dt)
    w[[0, -1]] *= 0.5
    assert np.sum(w * np.diag(G).real) == pytest.approx(1 - np.exp(-gamma * 6), rel=2e-3)


def test_correlation_vacuum_zero():
    lay, sys = _cavity()
    a = annihilator(lay, "a")
    G = two_time_correlation(sys, a.dag(), a, fock_state(lay), np.linspace(0, 2, 11))
    assert np.abs(G).max() == 0


def test_correlation_grid_must_be_uniform():
    lay, sys = _cavity()
    a = annihilator(lay, "a")
    with pytest.raises(ValueError):
        two_time_correlation(sys, a.dag(), a, fock_state(lay, a=1), np.array([0, 0.1, 0.5]))
