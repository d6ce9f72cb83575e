"""Radix-2 Cooley-Tukey FFT, with Bluestein's chirp-z for other lengths."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SpectralFeatures:
    spectrum: np.ndarray  # complex, (..., l)
    pad: int  # zero padding used by the power-of-two transform

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.spectrum)

    @property
    def phases(self) -> np.ndarray:
        return np.angle(self.spectrum)


def next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_pow2(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Iterative decimation-in-time FFT along the last axis (length 2**k)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n & (n - 1):
        raise ValueError(f"length {n} is not a power of two")
    lead = x.shape[:-1]
    y = x[..., _bit_reverse(n)]
    sign = 1.0 if inverse else -1.0
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / m)
        y = y.reshape(*lead, n // m, m)
        even = y[..., :half]
        odd = y[..., half:] * tw
        y = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        m *= 2
    if inverse:
        y = y / n
    return y


def _bluestein(x: np.ndarray) -> tuple[np.ndarray, int]:
    n = x.shape[-1]
    m = next_pow2(2 * n - 1)
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp argument small
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    a = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    a[..., :n] = x * chirp
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:][::-1])
    conv = fft_pow2(fft_pow2(a) * fft_pow2(b), inverse=True)
    return conv[..., :n] * chirp, m - n


def fft(x: np.ndarray) -> SpectralFeatures:
    """Length-l DFT of ``x`` along the last axis.

    Power-of-two lengths go straight through the radix-2 transform; other
    lengths are computed exactly by Bluestein's method, whose convolution
    runs on a zero-padded power-of-two grid (``pad`` records the padding).
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 2:
        raise ValueError("fft needs at least 2 samples")
    if n & (n - 1) == 0:
        return SpectralFeatures(fft_pow2(x), 0)
    spec, pad = _bluestein(x.astype(np.complex128))
    return SpectralFeatures(spec, pad)


def naive_dft(x: np.ndarray) -> np.ndarray:
    """O(l^2) reference transform along the last axis."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    t = np.arange(n)
    mat = np.exp(-2j * np.pi * np.outer(t, t) / n)
    return x @ mat.T
