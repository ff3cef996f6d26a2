import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from strobodet.pulses import PulseSpec, fourier, spectral_width


@pytest.mark.parametrize("shape", ["gaussian", "decaying_exp", "rising_exp"])
@pytest.mark.parametrize("width", [0.05, 0.1, 1.0, 3.0])
def test_normalized(shape, width):
    p = PulseSpec(shape, width, t0=2.0)
    lo, hi = p.window
    total, _ = quad(lambda t: abs(p.amplitude(t)) ** 2, lo, hi, points=[p.t0], limit=400)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_gaussian_peak():
    s = 0.3
    assert abs(PulseSpec("gaussian", s).amplitude(0.0)) == pytest.approx((s / np.sqrt(np.pi)) ** 0.5)


def test_decaying_exp_causal_and_constant_coupling():
    p = PulseSpec("decaying_exp", 0.4, t0=1.0)
    assert p.amplitude(0.5) == 0
    t = np.linspace(1.1, 10, 7)
    # the truncated tail perturbs g at the 1e-8 * e^{gamma s} level
    np.testing.assert_allclose(np.abs(p.coupling_g(t)), np.sqrt(0.4), rtol=1e-6)


def test_coupling_early_limit():
    p = PulseSpec("gaussian", 1.0)
    t = -4.0
    assert p.coupling_g(t) == pytest.approx(np.conj(p.amplitude(t)), rel=1e-6)


def test_invalid_width():
    with pytest.raises(ValueError):
        PulseSpec("gaussian", 0.0)
    with pytest.raises(ValueError):
        PulseSpec("square", 1.0)


def test_detuning_leaves_envelope_unchanged():
    t = np.linspace(-30, 30, 101)
    np.testing.assert_array_equal(
        PulseSpec("gaussian", 0.1).amplitude(t), PulseSpec("gaussian", 0.1, detuning=0.5).amplitude(t)
    )


def test_gaussian_spectral_width():
    sigma = 0.2
    t = np.linspace(-40, 40, 4001)
    w, s = fourier(t, PulseSpec("gaussian", sigma).amplitude(t))
    # |u~|^2 is a Gaussian of standard deviation sigma / sqrt(2)
    assert spectral_width(w, s) == pytest.approx(sigma / np.sqrt(2), rel=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["gaussian", "decaying_exp", "rising_exp"]), st.floats(0.05, 5.0))
def test_remaining_energy_monotone(shape, width):
    p = PulseSpec(shape, width)
    lo, hi = p.window
    r = p.remaining(np.linspace(lo, hi, 300))
    assert np.all(np.diff(r) <= 1e-12)
    assert r[0] == pytest.approx(1.0, abs=1e-6)
    assert r[-1] == pytest.approx(0.0, abs=1e-6)
