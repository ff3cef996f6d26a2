import math

import numpy as np
import pytest

from strobodet.hilbert import SpaceLayout, annihilator, fock_state
from strobodet.jpd import JpdParams, StroboSchedule
from strobodet.multiplier import (
    MultiplierParams,
    cascade_layout,
    cascaded_detector,
    matched_drive,
    output_modes,
    output_photon_number,
    rwa_hamiltonian_mult,
)
from strobodet.pulses import PulseSpec
from strobodet.toy import MeasurementSchedule, default_window, detection_probability, sweep_rate


def test_matched_drive_values():
    assert matched_drive(MultiplierParams(n=1, gamma_am=0.3, gamma_bm=0.7)) == pytest.approx(math.sqrt(0.21))
    assert matched_drive(MultiplierParams(n=2)) == pytest.approx(1.0)
    assert matched_drive(MultiplierParams(n=3)) == pytest.approx(math.sqrt(9 / 2))
    with pytest.raises(ValueError):
        MultiplierParams(n=0)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_conversion_matrix_element(n):
    p = MultiplierParams(n=n)
    lay = SpaceLayout([("a_m", 2), ("b_m", n + 2)])
    H = rwa_hamiltonian_mult(p, lay)
    assert H.is_hermitian(1e-14)
    v = H.matrix @ fock_state(lay, a_m=1).data
    target = lay.index(b_m=n)
    assert v[target] == pytest.approx(p.coefficient * math.sqrt(math.factorial(n)))
    v[target] = 0
    assert np.abs(v).max() == 0
    assert np.abs(H.matrix @ fock_state(lay).data).max() == 0


def test_cutoff_guard():
    with pytest.raises(ValueError):
        rwa_hamiltonian_mult(MultiplierParams(n=2), SpaceLayout([("a_m", 2), ("b_m", 3)]))


def test_matched_single_converter_is_lossless():
    res = output_photon_number(MultiplierParams(n=1), PulseSpec("gaussian", 0.02))
    assert res["emitted"] == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("drive", [0.3, 1.0, 2.5])
def test_photon_bookkeeping(drive):
    p = MultiplierParams(n=2, drive=drive)
    res = output_photon_number(p, PulseSpec("gaussian", 0.1))
    absorbed = res["converted"]
    assert 0 <= absorbed <= 1 + 1e-6
    assert res["emitted"] + res["in_cavities"] == pytest.approx(p.n * absorbed, rel=1e-9)


def test_single_converter_has_one_mode():
    md = output_modes(MultiplierParams(n=1), PulseSpec("gaussian", 0.05), n_grid=120)
    assert md.occupations[0] > 0.95
    assert md.occupations.min() > -1e-8
    dt = md.times[1] - md.times[0]
    gram = md.modes[:5].conj() @ md.modes[:5].T * dt
    np.testing.assert_allclose(gram, np.eye(5), atol=1e-8)


def test_cascade_structure():
    mult = MultiplierParams(n=2)
    det = JpdParams()
    sched = StroboSchedule(count=2)
    sys = cascaded_detector(mult, det, PulseSpec("gaussian", 0.05, t0=200.0), sched)
    lay = sys.layout
    assert lay == cascade_layout(mult, det)
    assert lay.labels == ("a_u", "a_m", "b_m", "a_d", "b_d")
    # reflected field of a_m and the b_m -> a_d line are separate channels
    assert len(sys.channels) == 2
    bm = math.sqrt(mult.gamma_bm) * annihilator(lay, "b_m")
    ad = math.sqrt(det.gamma_a) * annihilator(lay, "a_d")
    np.testing.assert_allclose(sys.channels[1].at(0.0).matrix, (bm + ad).matrix)
    term = 0.5j * (bm.dag() @ ad - ad.dag() @ bm)
    # E_J off and the pulse not yet started: only the multiplier and the b_m -> a_d interference remain
    H = sys.hamiltonian.at(sched.period - 0.1).matrix
    np.testing.assert_allclose(H - rwa_hamiltonian_mult(mult, lay).matrix, term.matrix, atol=1e-12)


def test_single_converter_passes_photon_to_detector():
    """An n=1 matched converter only reshapes the pulse; detection stays close to the bare value."""
    pulse = PulseSpec("gaussian", 0.05)
    window = default_window(pulse, 1.0, tail=25.0)
    rates = [0.3, 0.4, 0.5]
    bare = sweep_rate(pulse, 1.0, rates, n_offsets=4, window=window).peak[1]
    conv = sweep_rate(pulse, 1.0, rates, n_offsets=4, window=window, multiplier=MultiplierParams(n=1)).peak[1]
    assert conv == pytest.approx(bare, abs=0.05)
