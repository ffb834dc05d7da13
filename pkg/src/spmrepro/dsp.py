"""Discrete-time signal primitives shared by every other module.

FIR containers, linear convolution and its matrix form, DFT helpers,
zero-phase band-pass filtering and the large-p norm used as a smooth
stand-in for the infinity norm.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import signal as sps
from scipy.linalg import toeplitz

FS = 48000.0
BAND = (200.0, 12000.0)


@dataclass(frozen=True)
class Fir:
    """Finite impulse response with its sample rate."""

    samples: np.ndarray
    sample_rate: float = FS

    def __post_init__(self):
        x = np.array(self.samples, dtype=float).ravel()
        if x.size < 1:
            raise ValueError("Fir needs at least one sample")
        if not np.all(np.isfinite(x)):
            raise ValueError("Fir samples must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class Spectrum:
    """Complex DFT bins, uniformly spaced by ``bin_hz``."""

    bins: np.ndarray
    bin_hz: float

    @property
    def n_bins(self):
        return self.bins.size

    @property
    def freqs(self):
        return np.arange(self.n_bins) * self.bin_hz


@dataclass(frozen=True)
class BandMask:
    """Per-bin weights in [0, 1] for a one-sided (rfft) spectrum."""

    weights: np.ndarray
    f_lo: float
    f_hi: float
    bin_hz: float = field(default=1.0)


def delta(length, at=0, sample_rate=FS):
    x = np.zeros(length)
    x[at] = 1.0
    return Fir(x, sample_rate)


def next_pow2(n):
    return 1 << (int(n) - 1).bit_length()


def convolve(a: Fir, b: Fir) -> Fir:
    """Linear convolution; output length is ``len(a) + len(b) - 1``."""
    if a.sample_rate != b.sample_rate:
        raise ValueError(
            f"sample rate mismatch: {a.sample_rate} vs {b.sample_rate}"
        )
    return Fir(np.convolve(a.samples, b.samples), a.sample_rate)


def conv_matrix(c, filter_len):
    """Toeplitz matrix ``C`` such that ``C @ h == convolve(c, h)``.

    Parameters
    ----------
    c : Fir or array_like, length L_c
    filter_len : int
        Length L_h of the vector the matrix acts on.

    Returns
    -------
    ndarray of shape (L_c + L_h - 1, L_h)
    """
    if filter_len < 1:
        raise ValueError("filter_len must be >= 1")
    c = c.samples if isinstance(c, Fir) else np.asarray(c, dtype=float)
    col = np.concatenate([c, np.zeros(filter_len - 1)])
    row = np.zeros(filter_len)
    row[0] = c[0]
    return toeplitz(col, row)


def block_conv_matrix(channels, filter_len):
    """Dense block matrix for a (Q, L, L_c) channel stack.

    Rows are mic-major (Q blocks of L_g), columns loudspeaker-major
    (L blocks of L_h). Only meant for small instances and oracles.
    """
    channels = np.asarray(channels, dtype=float)
    q, l, _ = channels.shape
    return np.block(
        [[conv_matrix(channels[i, j], filter_len) for j in range(l)] for i in range(q)]
    )


def dft(x, n_bins) -> Spectrum:
    """Full DFT of ``x`` zero-padded to ``n_bins``. Never truncates."""
    fs = x.sample_rate if isinstance(x, Fir) else FS
    x = x.samples if isinstance(x, Fir) else np.asarray(x, dtype=float)
    if n_bins < x.size:
        raise ValueError(f"n_bins={n_bins} shorter than input length {x.size}")
    return Spectrum(np.fft.fft(x, n_bins), fs / n_bins)


def idft(spec: Spectrum, length=None):
    x = np.fft.ifft(spec.bins)
    if length is not None:
        x = x[:length]
    return x


def dtft_matrix(freqs, length, sample_rate=FS):
    """Rows evaluate the DTFT of a length-``length`` sequence at ``freqs`` (Hz)."""
    n = np.arange(length)
    return np.exp(-2j * np.pi * np.outer(np.asarray(freqs, dtype=float), n) / sample_rate)


def rfft_adjoint(w, n_fft, length, bins=None):
    """Pull a gradient on rfft bins back to the real time-domain samples.

    ``w`` holds dL/dRe X + i dL/dIm X for the bins ``bins`` (all
    ``n_fft // 2 + 1`` bins when omitted) of ``X = rfft(x, n_fft)``; bins
    are treated as independent coordinates, so DC/Nyquist are not doubled.
    Works along the last axis.
    """
    w = np.asarray(w)
    full = np.zeros(w.shape[:-1] + (n_fft,), dtype=complex)
    if bins is None:
        full[..., : w.shape[-1]] = w
    else:
        full[..., bins] = w
    return n_fft * np.fft.ifft(full, axis=-1).real[..., :length]


def large_p_norm(v, p):
    """``(sum |v|^p)^(1/p)`` evaluated with the max factored out."""
    v = np.abs(np.asarray(v, dtype=float)).ravel()
    if v.size == 0:
        return 0.0
    m = v.max()
    if m == 0.0:
        return 0.0
    return float(m * np.sum((v / m) ** p) ** (1.0 / p))


def large_p_norm_grad(v, p):
    """Value and gradient of :func:`large_p_norm` w.r.t. ``v`` (same shape)."""
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    m = a.max() if a.size else 0.0
    if m == 0.0:
        return 0.0, np.zeros_like(v)
    r = a / m
    norm = m * np.sum(r**p) ** (1.0 / p)
    grad = np.sign(v) * (a / norm) ** (p - 1)
    return float(norm), grad


def band_mask(n_fft, f_lo=BAND[0], f_hi=BAND[1], sample_rate=FS, taper_bins=0):
    """Mask over the ``n_fft // 2 + 1`` rfft bins: 1 in band, 0 outside.

    With ``taper_bins > 0`` the edges ramp up/down with a raised cosine
    inside the band.
    """
    if not 0 <= f_lo < f_hi <= sample_rate / 2:
        raise ValueError(f"invalid band ({f_lo}, {f_hi}) for fs={sample_rate}")
    bin_hz = sample_rate / n_fft
    f = np.arange(n_fft // 2 + 1) * bin_hz
    w = ((f >= f_lo) & (f <= f_hi)).astype(float)
    if taper_bins > 0:
        idx = np.flatnonzero(w)
        ramp = 0.5 - 0.5 * np.cos(np.pi * (np.arange(taper_bins) + 1) / (taper_bins + 1))
        k = min(taper_bins, idx.size // 2)
        w[idx[:k]] = ramp[:k]
        w[idx[::-1][:k]] = ramp[:k]
    return BandMask(w, f_lo, f_hi, bin_hz)


@lru_cache(maxsize=16)
def bandpass_kernel(f_lo, f_hi, sample_rate=FS, atten_db=40.0):
    """Symmetric (zero-phase) band-pass kernel, odd length, peak at the centre.

    A Kaiser high-pass with transition [f_lo/2, f_lo] is cascaded with a
    Kaiser low-pass with transition [f_hi, f_hi + w], then convolved with
    its own reversal, which is what forward-backward filtering applies.
    Each pass gives ``atten_db`` of stop-band rejection, so the zero-phase
    result doubles it.
    """
    if not 0 < f_lo < f_hi < sample_rate / 2:
        raise ValueError(f"invalid band edges ({f_lo}, {f_hi})")
    nyq = sample_rate / 2
    w_lo = f_lo / 2
    w_hi = min(0.1 * f_hi, 0.5 * (nyq - f_hi))
    n_hp, beta = sps.kaiserord(atten_db, w_lo / nyq)
    n_hp |= 1
    hp = sps.firwin(n_hp, f_lo - w_lo / 2, window=("kaiser", beta), pass_zero=False, fs=sample_rate)
    n_lp, beta = sps.kaiserord(atten_db, w_hi / nyq)
    n_lp |= 1
    lp = sps.firwin(n_lp, f_hi + w_hi / 2, window=("kaiser", beta), fs=sample_rate)
    k = np.convolve(hp, lp)
    k = np.convolve(k, k[::-1])
    k.setflags(write=False)
    return k


def bandpass(x, f_lo=BAND[0], f_hi=BAND[1], sample_rate=None, axis=-1):
    """Zero-phase band-pass; output has the input's length and peak positions.

    Accepts a :class:`Fir` (returns a Fir) or an array filtered along ``axis``.
    Samples outside the input are taken as zero.
    """
    if isinstance(x, Fir):
        fs = x.sample_rate if sample_rate is None else sample_rate
        return Fir(bandpass(x.samples, f_lo, f_hi, fs), fs)
    fs = FS if sample_rate is None else sample_rate
    k = bandpass_kernel(float(f_lo), float(f_hi), float(fs))
    x = np.asarray(x, dtype=float)
    x = np.moveaxis(x, axis, -1)
    shape = [1] * (x.ndim - 1) + [k.size]
    y = sps.fftconvolve(x, k.reshape(shape), mode="same", axes=-1)
    return np.moveaxis(y, -1, axis)


def bandpass_response(freqs, f_lo=BAND[0], f_hi=BAND[1], sample_rate=FS):
    """Real (zero-phase) frequency response of the band-pass at ``freqs`` Hz."""
    k = bandpass_kernel(float(f_lo), float(f_hi), float(sample_rate))
    half = k.size // 2
    n = np.arange(k.size) - half
    # symmetric kernel: the DTFT about the centre tap is a cosine series
    return k[half] + 2.0 * np.cos(
        2 * np.pi * np.outer(np.asarray(freqs, dtype=float), n[half + 1 :]) / sample_rate
    ) @ k[half + 1 :]


def bandlimited_impulse(delay, length, amplitude=1.0, band=BAND, sample_rate=FS):
    """Band-passed impulse at a (fractional) ``delay`` in samples.

    Built in the frequency domain, so the delay is exact; identical to
    band-passing an ideal delayed impulse.
    """
    k = bandpass_kernel(float(band[0]), float(band[1]), float(sample_rate))
    n_fft = next_pow2(length + k.size)
    centred = np.zeros(n_fft)
    centred[: k.size] = k
    centred = np.roll(centred, -(k.size // 2))
    f = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    spec = amplitude * np.fft.rfft(centred).real
    spec = spec * np.exp(-2j * np.pi * f * delay / sample_rate)
    return np.fft.irfft(spec, n_fft)[:length]
