"""Discrete Fourier transforms and the magnitude/phase representation.

Spectra are carried as separate real and imaginary arrays (``ComplexSeq``)
and converted to the polar ``SpectralPair`` consumed by the model. All
transforms act on the last axis, so a (d, L) multichannel series is handled
channel by channel in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ComplexSeq:
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=np.float64)
        self.im = np.asarray(self.im, dtype=np.float64)
        if self.re.shape != self.im.shape:
            raise ValueError(f"re/im shape mismatch: {self.re.shape} vs {self.im.shape}")
        if not (np.isfinite(self.re).all() and np.isfinite(self.im).all()):
            raise ValueError("ComplexSeq entries must be finite")

    @property
    def length(self) -> int:
        return self.re.shape[-1]

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    @classmethod
    def from_complex(cls, z) -> "ComplexSeq":
        z = np.asarray(z, dtype=np.complex128)
        return cls(z.real.copy(), z.imag.copy())


@dataclass
class SpectralPair:
    magnitude: np.ndarray
    phase: np.ndarray

    def __post_init__(self):
        self.magnitude = np.asarray(self.magnitude, dtype=np.float64)
        self.phase = np.asarray(self.phase, dtype=np.float64)
        if self.magnitude.shape != self.phase.shape:
            raise ValueError("magnitude and phase shapes differ")

    @property
    def bins(self) -> int:
        return self.magnitude.shape[-1]


def _as_signal(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0 or t.shape[-1] == 0:
        raise ValueError("transform input must have length >= 1")
    return t


def dft_naive(t) -> ComplexSeq:
    """O(N^2) DFT: F[k] = sum_n t[n] (cos(2 pi k n / N) - i sin(2 pi k n / N))."""
    t = _as_signal(t)
    N = t.shape[-1]
    n = np.arange(N)
    # k*n mod N keeps the angle argument small, which matters for large N
    angle = 2.0 * np.pi * (np.outer(n, n) % N) / N
    return ComplexSeq(t @ np.cos(angle).T, -(t @ np.sin(angle).T))


def _fft_radix2(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Iterative Cooley-Tukey over the last axis; length must be a power of two."""
    N = z.shape[-1]
    levels = N.bit_length() - 1
    rev = np.zeros(N, dtype=np.intp)
    for b in range(levels):
        rev |= ((np.arange(N) >> b) & 1) << (levels - 1 - b)
    a = z[..., rev].astype(np.complex128)
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= N:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        a = a.reshape(a.shape[:-1] + (N // size, size))
        even = a[..., :half]
        odd = a[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(a.shape[:-2] + (N,))
        size *= 2
    return a


def _fft_bluestein(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Arbitrary-length DFT as a chirp convolution evaluated with power-of-two FFTs."""
    N = z.shape[-1]
    M = 1 << (2 * N - 1).bit_length()
    k = np.arange(N)
    sign = 1.0 if inverse else -1.0
    # n^2 mod 2N keeps the chirp phase exact for large N
    chirp = np.exp(sign * 1j * np.pi * ((k * k) % (2 * N)) / N)
    a = np.zeros(z.shape[:-1] + (M,), dtype=np.complex128)
    a[..., :N] = z * chirp
    b = np.zeros(M, dtype=np.complex128)
    b[:N] = np.conj(chirp)
    b[M - N + 1:] = np.conj(chirp[1:][::-1])
    conv = _fft_radix2(_fft_radix2(a) * _fft_radix2(b), inverse=True) / M
    return conv[..., :N] * chirp


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def _transform(z: np.ndarray, inverse: bool) -> np.ndarray:
    N = z.shape[-1]
    if _is_pow2(N):
        return _fft_radix2(z, inverse)
    return _fft_bluestein(z, inverse)


def fft(t) -> ComplexSeq:
    """Fast DFT of a real (or complex) signal along the last axis."""
    t = _as_signal(t) if not np.iscomplexobj(t) else np.asarray(t)
    return ComplexSeq.from_complex(_transform(np.asarray(t, dtype=np.complex128), inverse=False))


def ifft(c: ComplexSeq) -> ComplexSeq:
    """Inverse DFT, normalised by 1/N."""
    z = c.to_complex()
    if z.shape[-1] == 0:
        raise ValueError("transform input must have length >= 1")
    return ComplexSeq.from_complex(_transform(z, inverse=True) / z.shape[-1])


def _sign(x: np.ndarray) -> np.ndarray:
    return np.sign(x)


def to_magnitude_phase(c: ComplexSeq) -> SpectralPair:
    """Polar form with phase in (-pi, pi].

    Quadrant handling follows the three-branch arctan rule (a > 0, a < 0,
    a = 0). On the negative real axis (a < 0, b = 0) the phase is pi, so the
    polar form restores -|a| rather than |a|.
    """
    a, b = c.re, c.im
    magnitude = np.sqrt(a * a + b * b)
    phase = np.zeros_like(a)
    pos = a > 0
    neg = a < 0
    axis = a == 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        base = np.arctan(b / np.where(axis, 1.0, a))
    phase[pos] = base[pos]
    neg_sign = np.where(b < 0, -1.0, 1.0)  # b == 0 on the left half-plane maps to +pi
    phase[neg] = base[neg] + neg_sign[neg] * np.pi
    phase[axis] = _sign(b[axis]) * np.pi / 2
    # a tiny negative b next to the negative real axis rounds to -pi; fold it onto pi
    phase[phase <= -np.pi] = np.pi
    return SpectralPair(magnitude, phase)


def restore_complex(pair: SpectralPair) -> ComplexSeq:
    """Cartesian form a = |z| cos(phi), b = |z| sin(phi)."""
    return ComplexSeq(pair.magnitude * np.cos(pair.phase), pair.magnitude * np.sin(pair.phase))


def half_spectrum(pair: SpectralPair, L: int) -> SpectralPair:
    """Keep bins 0 .. L/2 - 1 of a full-length spectrum."""
    if L % 2:
        raise ValueError(f"series length {L} is odd; truncate one sample upstream before the transform")
    if pair.bins != L:
        raise ValueError(f"spectrum has {pair.bins} bins, expected {L}")
    return SpectralPair(pair.magnitude[..., : L // 2].copy(), pair.phase[..., : L // 2].copy())


def inverse_from_half(pair: SpectralPair, L: int) -> np.ndarray:
    """Rebuild a real length-L signal from its first L/2 bins.

    The Nyquist bin is not stored and is taken as zero; the DC bin's
    imaginary part is dropped.
    """
    if L % 2 or pair.bins != L // 2:
        raise ValueError(f"expected {L // 2} bins for length {L}, got {pair.bins}")
    half = restore_complex(pair).to_complex()
    full = np.zeros(half.shape[:-1] + (L,), dtype=np.complex128)
    full[..., : L // 2] = half
    full[..., 0] = half[..., 0].real
    full[..., L // 2 + 1:] = np.conj(half[..., 1:][..., ::-1])
    out = ifft(ComplexSeq.from_complex(full))
    return out.re


def spectral_pair(t, L: int | None = None) -> SpectralPair:
    """Half-spectrum magnitude and phase of a real series (last axis)."""
    t = _as_signal(t)
    L = t.shape[-1] if L is None else L
    return half_spectrum(to_magnitude_phase(fft(t)), L)


def minmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        raise ValueError("min-max normalisation undefined for a constant series")
    return (x - lo) / (hi - lo)


EMPTY_BIN_RTOL = 1e-9


def phase_magnitude_demo(t) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Rebuild a series keeping only its phase, or only its magnitude.

    The phase-only signal uses the true phase with every magnitude replaced
    by the mean magnitude; the magnitude-only signal uses the true magnitude
    with zero phase. Bins whose magnitude is round-off level carry no phase
    information and are left empty in both. Returns both (min-max
    normalised) and their Euclidean distances to the normalised original.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 1:
        raise ValueError("phase_magnitude_demo expects a single channel")
    if t.max() - t.min() <= 0:
        raise ValueError("min-max normalisation undefined for a constant series")
    L = t.shape[0] - (t.shape[0] % 2)
    t = t[:L]
    pair = spectral_pair(t)
    occupied = pair.magnitude > EMPTY_BIN_RTOL * pair.magnitude.max()
    flat = np.where(occupied, pair.magnitude[occupied].mean(), 0.0)
    phase_only = inverse_from_half(SpectralPair(flat, pair.phase), L)
    magnitude_only = inverse_from_half(SpectralPair(pair.magnitude, np.zeros_like(pair.phase)), L)
    ref = minmax(t)
    phase_only = minmax(phase_only)
    magnitude_only = minmax(magnitude_only)
    return (phase_only, magnitude_only,
            float(np.linalg.norm(phase_only - ref)), float(np.linalg.norm(magnitude_only - ref)))
