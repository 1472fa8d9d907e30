import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crt.data import ecg_like as make_ecg, multi_harmonic
from crt.spectral import (ComplexSeq, SpectralPair, dft_naive, fft, half_spectrum, ifft, inverse_from_half,
                          minmax, phase_magnitude_demo, restore_complex, spectral_pair, to_magnitude_phase)


def rel_err(a: ComplexSeq, b: ComplexSeq) -> float:
    za, zb = a.to_complex(), b.to_complex()
    return float(np.abs(za - zb).max() / max(1.0, np.abs(zb).max()))


def ecg_like(L=512, period=64, jitter=0.0, rng=None):
    n = np.arange(L)
    ph = (n % period) / period
    if rng is not None:
        ph = ph + jitter * rng.standard_normal()
    return (np.exp(-((ph - 0.3) / 0.015) ** 2) - 0.15 * np.exp(-((ph - 0.27) / 0.01) ** 2)
            + 0.2 * np.exp(-((ph - 0.6) / 0.05) ** 2) + 0.1 * np.exp(-((ph - 0.15) / 0.03) ** 2))


class TestDFT:
    def test_constant(self):
        c = dft_naive([1, 1, 1, 1])
        np.testing.assert_allclose(c.re, [4, 0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(c.im, 0, atol=1e-12)

    def test_delta(self):
        c = dft_naive([1, 0, 0, 0])
        np.testing.assert_allclose(c.re, 1, atol=1e-12)
        np.testing.assert_allclose(c.im, 0, atol=1e-12)

    def test_cosine(self):
        c = dft_naive(np.cos(2 * np.pi * np.arange(8) / 8))
        np.testing.assert_allclose(c.re, [0, 4, 0, 0, 0, 0, 0, 4], atol=1e-12)
        np.testing.assert_allclose(c.im, 0, atol=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            dft_naive([])
        with pytest.raises(ValueError):
            fft([])


class TestFFT:
    @pytest.mark.parametrize("N", [1, 2, 4, 8, 64, 128, 1024])
    def test_power_of_two(self, N):
        t = np.random.default_rng(N).standard_normal(N)
        assert rel_err(fft(t), dft_naive(t)) <= 1e-9

    @pytest.mark.parametrize("N", [3, 7, 100, 3000])
    def test_arbitrary_length(self, N):
        t = np.random.default_rng(N).standard_normal(N)
        assert rel_err(fft(t), dft_naive(t)) <= 1e-6

    @pytest.mark.parametrize("N", [7, 8, 100, 128, 3000])
    def test_round_trip(self, N):
        t = np.random.default_rng(N + 1).standard_normal(N)
        back = ifft(fft(t))
        assert np.abs(back.re - t).max() < 1e-9
        assert np.abs(back.im).max() < 1e-9

    def test_multichannel(self):
        t = np.random.default_rng(0).standard_normal((3, 100))
        assert rel_err(fft(t), dft_naive(t)) < 1e-9

    def test_matches_numpy(self):
        t = np.random.default_rng(1).standard_normal(5000)
        np.testing.assert_allclose(fft(t).to_complex(), np.fft.fft(t), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_fft_equals_dft_property(N, seed):
    t = np.random.default_rng(seed).standard_normal(N)
    tol = 1e-9 if N & (N - 1) == 0 else 1e-6
    assert rel_err(fft(t), dft_naive(t)) <= tol


class TestPolar:
    def test_345(self):
        p = to_magnitude_phase(ComplexSeq([3.0], [4.0]))
        assert p.magnitude[0] == pytest.approx(5.0)
        assert p.phase[0] == pytest.approx(np.arctan(4 / 3))
        assert p.phase[0] == pytest.approx(0.9273, abs=1e-4)

    def test_imaginary_axis(self):
        p = to_magnitude_phase(ComplexSeq([0.0, 0.0, 0.0], [1.0, -1.0, 0.0]))
        assert p.phase.tolist() == [np.pi / 2, -np.pi / 2, 0.0]

    def test_third_quadrant(self):
        p = to_magnitude_phase(ComplexSeq([-1.0], [-1.0]))
        assert p.phase[0] == pytest.approx(-3 * np.pi / 4)

    def test_negative_real_axis(self):
        p = to_magnitude_phase(ComplexSeq([-2.0], [0.0]))
        assert p.phase[0] == np.pi
        assert restore_complex(p).re[0] == pytest.approx(-2.0)

    def test_restore_345(self):
        c = restore_complex(SpectralPair([5.0], [np.arctan(4 / 3)]))
        assert c.re[0] == pytest.approx(3.0) and c.im[0] == pytest.approx(4.0)

    def test_restore_zero(self):
        c = restore_complex(SpectralPair([0.0], [1.234]))
        assert c.re[0] == 0.0 and c.im[0] == 0.0

    def test_round_trip_1000(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal(1000) + 1j * rng.standard_normal(1000)
        z[:6] = [0, 1, -1, 1j, -1j, -3 + 0j]
        c = ComplexSeq.from_complex(z)
        back = restore_complex(to_magnitude_phase(c)).to_complex()
        assert np.abs(back - z).max() < 1e-12

    def test_agrees_with_atan2_off_branch_cuts(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal(500), rng.standard_normal(500)
        np.testing.assert_allclose(to_magnitude_phase(ComplexSeq(a, b)).phase, np.arctan2(b, a), atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_polar_invariants(a, b):
    p = to_magnitude_phase(ComplexSeq([a], [b]))
    assert p.magnitude[0] >= 0
    assert -np.pi < p.phase[0] <= np.pi
    back = restore_complex(p)
    assert abs(back.re[0] - a) < 1e-12 * max(1, abs(a), abs(b))
    assert abs(back.im[0] - b) < 1e-12 * max(1, abs(a), abs(b))


class TestHalfSpectrum:
    def test_har_length(self):
        assert spectral_pair(np.random.default_rng(0).standard_normal(128)).bins == 64

    def test_ptbxl_length(self):
        assert spectral_pair(np.random.default_rng(0).standard_normal(5000)).bins == 2500

    def test_prefix(self):
        full = SpectralPair([4.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0])
        assert half_spectrum(full, 4).magnitude.tolist() == [4.0, 0.0]

    def test_odd_length_rejected(self):
        with pytest.raises(ValueError, match="truncate"):
            half_spectrum(SpectralPair(np.ones(5), np.zeros(5)), 5)

    def test_inverse_constant(self):
        t = np.full(16, 2.5)
        np.testing.assert_allclose(inverse_from_half(spectral_pair(t), 16), t, atol=1e-12)

    def test_inverse_band_limited(self):
        n = np.arange(128)
        t = np.sin(2 * np.pi * 3 * n / 128) + 0.5 * np.cos(2 * np.pi * 7 * n / 128 + 0.3) + 0.2
        assert np.abs(inverse_from_half(spectral_pair(t), 128) - t).max() < 1e-9

    def test_inverse_loses_only_nyquist(self):
        rng = np.random.default_rng(3)
        t = rng.standard_normal(64)
        rec = inverse_from_half(spectral_pair(t), 64)
        nyquist = np.fft.fft(t)[32].real
        # the missing term is the Nyquist bin's cosine, nyquist / L * (-1)^n
        np.testing.assert_allclose(t - rec, nyquist / 64 * (-1.0) ** np.arange(64), atol=1e-9)

    def test_bin_mismatch(self):
        with pytest.raises(ValueError):
            inverse_from_half(SpectralPair(np.ones(5), np.zeros(5)), 8)


class TestPhaseMagnitudeDemo:
    def test_ecg_phase_closer(self):
        _, _, d_phase, d_mag = phase_magnitude_demo(ecg_like())
        assert d_phase < d_mag
        _, _, d_phase, d_mag = phase_magnitude_demo(make_ecg())
        assert d_phase < d_mag

    def test_sinusoid_phase_preserved(self):
        n = np.arange(128)
        t = np.cos(2 * np.pi * 5 * n / 128 + 0.7)
        phase_only, mag_only, d_phase, d_mag = phase_magnitude_demo(t)
        # a single occupied bin: the phase-only rebuild is the signal itself
        np.testing.assert_allclose(phase_only, minmax(t), atol=1e-9)
        assert d_phase < 1e-8 < d_mag
        # the magnitude-only rebuild is a zero-phase cosine at the same frequency
        np.testing.assert_allclose(mag_only, minmax(np.cos(2 * np.pi * 5 * n / 128)), atol=1e-9)

    def test_multi_harmonic_majority(self):
        rng = np.random.default_rng(7)
        wins = sum(np.less(*phase_magnitude_demo(multi_harmonic(256, rng))[2:]) for _ in range(50))
        assert wins >= 40

    def test_white_noise_smoke(self):
        out = phase_magnitude_demo(np.random.default_rng(0).standard_normal(256))
        assert np.isfinite(out[2]) and np.isfinite(out[3])

    def test_constant_rejected(self):
        with pytest.raises(ValueError):
            phase_magnitude_demo(np.ones(64))

    def test_outputs_normalised(self):
        p, m, _, _ = phase_magnitude_demo(ecg_like())
        for x in (p, m):
            assert x.min() == pytest.approx(0.0) and x.max() == pytest.approx(1.0)
