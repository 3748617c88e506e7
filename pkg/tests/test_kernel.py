import math

import numpy as np
import pytest

from nvnmr.core import DEFAULT_CONSTANTS, F19, H1, InputError, larmor_frequency
from nvnmr.ddmodel.kernel import (
    NoiseModel,
    PhaseCycle,
    Resonance,
    SequenceSpec,
    chi_background,
    chi_resonance,
    coherence,
    cpmg_filter,
    filter_weight,
    line_power,
    lorentzian_psd,
)

B0 = 0.04
GE = DEFAULT_CONSTANTS.gamma_e


def modulation_spectrum(omega, tau, n):
    """Y(w) = integral of the +-1 CPMG modulation times exp(i w t), segment by segment."""
    omega = np.asarray(omega, float)
    edges = np.concatenate([[0.0], (np.arange(1, n + 1) - 0.5) * tau, [n * tau]])
    total = np.zeros(omega.shape, complex)
    for k, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        total += (-1) ** k * (np.exp(1j * omega * b) - np.exp(1j * omega * a)) / (1j * omega)
    return total


def chi_oracle(res, tau, n):
    """(gamma^2 / 2 pi) integral_0^inf S |Y|^2 dw on a dense grid."""
    wl = 2 * math.pi * res.frequency
    g = math.pi * res.linewidth
    w = np.unique(np.concatenate([
        np.linspace(max(wl - 400 * g, 1.0), wl + 400 * g, 60001),
        np.geomspace(1e2, 20 * wl, 40001),
    ]))
    integrand = lorentzian_psd(w, res) * np.abs(modulation_spectrum(w, tau, n)) ** 2
    return GE ** 2 / (2 * math.pi) * np.trapezoid(integrand, w)


@pytest.mark.parametrize("n", [8, 9, 16, 192])
def test_filter_matches_modulation_oracle(n):
    tau = 0.3e-6
    w = np.linspace(0.05, 6.0, 301) * math.pi / tau
    expected = w ** 2 * np.abs(modulation_spectrum(w, tau, n)) ** 2 / 2
    assert cpmg_filter(w * n * tau, n) == pytest.approx(expected, rel=1e-8, abs=1e-10)


def test_filter_removable_singularity():
    n = 8
    z_dip = n * math.pi  # cos(z/2N) = 0
    near = cpmg_filter(np.array([z_dip * (1 - 1e-9), z_dip, z_dip * (1 + 1e-9)]), n)
    assert near[1] == pytest.approx(near[0], rel=1e-6)
    assert near[1] == pytest.approx(2 * n * n, rel=1e-9)
    assert np.all(np.isfinite(cpmg_filter(np.linspace(0.1, 1000, 100001), 9)))


def test_filter_weight_pulse_window():
    w = np.array([1e6, 1e7])
    ideal = filter_weight(w, 50e-6, 192)
    windowed = filter_weight(w, 50e-6, 192, pulse_length=40e-9)
    assert np.all(windowed < ideal)
    assert windowed == pytest.approx(ideal * np.sinc(w * 40e-9 / (2 * math.pi)) ** 2)


def test_line_power_is_brms_squared():
    res = Resonance.at_field(H1, B0, 300e-9)
    assert line_power(res) == pytest.approx((300e-9) ** 2, rel=1e-8)
    assert line_power(Resonance.at_field(H1, B0, 0.0)) == 0.0


@pytest.mark.parametrize("offset", [-0.03, 0.0, 0.05])
def test_quadrature_and_exact_match_dense_oracle(offset):
    res = Resonance.at_field(H1, B0, 300e-9)
    seq = SequenceSpec(192)
    tau = 1 / (2 * res.frequency) * (1 + offset)
    oracle = chi_oracle(res, tau, seq.n_pulses)
    quad = float(chi_resonance(res, seq, np.array([tau]), method="quadrature")[0])
    exact = float(chi_resonance(res, seq, np.array([tau]), method="exact")[0])
    assert quad == pytest.approx(oracle, rel=1e-5)
    assert exact == pytest.approx(oracle, rel=1e-5)
    assert quad == pytest.approx(exact, rel=1e-6)


def test_routes_agree_across_a_scan():
    res = Resonance.at_field(F19, B0, 150e-9)
    seq = SequenceSpec(96, PhaseCycle.XY16)
    t0 = 1 / (2 * res.frequency)
    tau = np.linspace(0.9 * t0, 1.1 * t0, 41)
    a = chi_resonance(res, seq, tau, method="quadrature")
    b = chi_resonance(res, seq, tau, method="exact")
    # quadrature error is controlled relative to the largest value in the scan
    assert a == pytest.approx(b, rel=1e-6, abs=2e-6 * a.max())


def test_narrowband_limit_on_resonance():
    f = larmor_frequency(H1, B0)
    res = Resonance(H1, 100e-9, f, f * 1e-7)
    seq = SequenceSpec(96)
    tau = 1 / (2 * f)
    total = seq.total_time(tau)
    chi = float(chi_resonance(res, seq, [tau], method="exact")[0])
    assert chi == pytest.approx(2 * GE ** 2 * (100e-9) ** 2 * total ** 2 / math.pi ** 2, rel=1e-3)


def test_dip_sits_at_half_period():
    res = Resonance.at_field(H1, B0, 300e-9)
    seq = SequenceSpec(192)
    t0 = 1 / (2 * res.frequency)
    tau = np.linspace(0.97 * t0, 1.03 * t0, 601)
    chi = chi_resonance(res, seq, tau, method="exact")
    assert tau[np.argmax(chi)] == pytest.approx(t0, rel=2e-4)


def test_chi_scales_with_brms_squared():
    seq = SequenceSpec(192)
    r1 = Resonance.at_field(H1, B0, 100e-9)
    r3 = Resonance.at_field(H1, B0, 300e-9)
    tau = np.linspace(0.28e-6, 0.31e-6, 7)
    assert chi_resonance(r3, seq, tau, "exact") == pytest.approx(9 * chi_resonance(r1, seq, tau, "exact"), rel=1e-12)
    assert np.all(chi_resonance(Resonance.at_field(H1, B0, 0.0), seq, tau) == 0.0)


def test_coherence_combines_background_and_lines():
    seq = SequenceSpec(192)
    res = Resonance.at_field(H1, B0, 200e-9)
    model = NoiseModel((res,), 50e-6, 1.5)
    tau = np.geomspace(0.1e-6, 0.8e-6, 30)
    expected = np.exp(-chi_background(seq, tau, 50e-6, 1.5) - chi_resonance(res, seq, tau, "exact"))
    assert coherence(model, seq, tau, method="exact") == pytest.approx(expected, rel=1e-12)
    bare = coherence(NoiseModel((), 50e-6, 1.0), seq, tau)
    assert bare == pytest.approx(np.exp(-seq.total_time(tau) / 50e-6))
    assert np.all(np.diff(bare) < 0)


def test_finite_pulses_need_quadrature():
    seq = SequenceSpec(96, pulse_length=40e-9)
    res = Resonance.at_field(H1, B0, 300e-9)
    with pytest.raises(InputError):
        chi_resonance(res, seq, [0.29e-6], method="exact")
    ideal = chi_resonance(res, SequenceSpec(96), [0.2935e-6])
    finite = chi_resonance(res, seq, [0.2935e-6])
    assert 0 < finite[0] < ideal[0]


def test_sequence_validation_and_advisories():
    with pytest.raises(InputError):
        SequenceSpec(12)  # XY8 needs multiples of 8
    with pytest.raises(InputError):
        SequenceSpec(0, "CPMG")
    with pytest.raises(InputError):
        SequenceSpec(8, "XY4")
    with pytest.raises(InputError):
        SequenceSpec(8, pulse_length=-1.0)
    assert SequenceSpec(7, "CPMG").phase_cycle is PhaseCycle.CPMG
    assert SequenceSpec(32).advisories()
    assert SequenceSpec(192).advisories() == []
    assert SequenceSpec(192).total_time(0.5e-6) == pytest.approx(96e-6)


def test_model_validation():
    with pytest.raises(InputError):
        NoiseModel((), 50e-6, 0.5)
    with pytest.raises(InputError):
        NoiseModel((), 0.0)
    with pytest.raises(InputError):
        Resonance(H1, -1e-9, 1e6, 1e3)
    with pytest.raises(InputError):
        Resonance(H1, 1e-9, 1e6, 0.0)
    with pytest.raises(InputError):
        chi_resonance(Resonance.at_field(H1, B0, 1e-9), SequenceSpec(8), [0.0])
    with pytest.raises(InputError):
        chi_resonance(Resonance.at_field(H1, B0, 1e-9), SequenceSpec(8), [1e-6], method="fast")
    m = NoiseModel((Resonance.at_field(H1, B0, 1e-9),)).with_resonance(0, brms=2e-9)
    assert m.resonances[0].brms == 2e-9
