import numpy as np
import pytest

from strobodet.evolve import IntegrationError
from strobodet.hilbert import SpaceLayout, fock_state
from strobodet.nonrwa import MAX_STEP_PER_PERIOD, LabFrameParams, phase_trig_ops, rwa_reference, validity_check


def test_trig_ops_trivial():
    lay = SpaceLayout([("a", 3), ("b", 4)])
    c, s = phase_trig_ops(0.0, 0.0, lay)
    np.testing.assert_allclose(c.matrix, np.eye(12), atol=1e-14)
    np.testing.assert_allclose(s.matrix, 0, atol=1e-14)


def test_trig_identity():
    lay = SpaceLayout([("a", 4), ("b", 14)])
    c, s = phase_trig_ops(1.0, 0.3, lay)
    assert c.is_hermitian() and s.is_hermitian()
    np.testing.assert_allclose((c @ c + s @ s).matrix, np.eye(lay.dim), atol=1e-10)


def test_vacuum_cos_expectation():
    # the a cutoff must be generous for alpha0 = 1 to reach the untruncated value
    lay = SpaceLayout([("a", 14), ("b", 14)])
    c, _ = phase_trig_ops(1.0, 0.3, lay)
    vac = fock_state(lay).data
    assert np.vdot(vac, c.matrix @ vac).real == pytest.approx(np.exp(-(1.0 + 0.09) / 2), abs=1e-8)


def test_params_validation():
    with pytest.raises(ValueError):
        LabFrameParams(gamma_a=0.0)
    with pytest.raises(ValueError):
        LabFrameParams(gamma_a=1e-3, omega_b=1.0)
    p = LabFrameParams(gamma_a=1e-3)
    assert p.gamma_b == pytest.approx(1e-2)
    assert p.lab_schedule.period == pytest.approx(2.5e3)
    # E_J* beta0 = beta gamma_b in lab units
    assert p.ej_star * p.detector.beta0 == pytest.approx(1.6e-2)


def test_step_bound_enforced():
    p = LabFrameParams(gamma_a=1e-2)
    with pytest.raises(IntegrationError):
        validity_check(p, dt=1.01 * MAX_STEP_PER_PERIOD * 2 * np.pi)


def test_rwa_model_stays_empty():
    assert rwa_reference(LabFrameParams(gamma_a=1e-3)) < 1e-10


@pytest.fixture(scope="module")
def sweep():
    return {g: validity_check(LabFrameParams(gamma_a=g)) for g in (1e-2, 5e-3, 3e-3)}


def test_spurious_excitation_decreases_with_bandwidth(sweep):
    peaks = [sweep[g].n_a_max for g in (1e-2, 5e-3, 3e-3)]
    assert peaks[0] > peaks[1] > peaks[2] > 0
    r = sweep[1e-2]
    assert r.gamma_dark_rot == pytest.approx(r.n_a_max * 0.4)
    assert np.all(np.diff(r.times) > 0)


def test_step_convergence(sweep):
    p = LabFrameParams(gamma_a=1e-2)
    fine = validity_check(p, dt=0.5 * MAX_STEP_PER_PERIOD * 2 * np.pi)
    assert fine.n_a_max == pytest.approx(sweep[1e-2].n_a_max, rel=0.05)
