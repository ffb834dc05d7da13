"""Objective sound-quality metrics: nPRQ (pre/post ringing) and octave-band
spectral deviation."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import dsp

log = logging.getLogger(__name__)

ABS_FLOOR = 10.0 ** -2.5
SD_FLOOR_DB = -200.0


@dataclass(frozen=True)
class NprqResult:
    pre: float
    post: float
    overshoot_count_pre: int
    overshoot_count_post: int


def overshoot_envelope(g, w_u, floor=ABS_FLOOR):
    """Per-sample overshoot in dB above the tolerance envelope ``1 / w_u``.

    ``20 log10(|g| w_u)`` where ``|g| > 1 / w_u`` and ``|g| > floor``,
    zero elsewhere.
    """
    a = np.abs(np.asarray(g, dtype=float))
    w_u = np.asarray(w_u, dtype=float)
    if a.shape != w_u.shape:
        raise ValueError(f"response {a.shape} and envelope {w_u.shape} differ in shape")
    x = a * w_u
    over = (x > 1.0) & (a > floor)
    out = np.zeros_like(a)
    out[over] = 20.0 * np.log10(x[over])
    return out


def nprq(g, w_u, n_pre, n_post, floor=ABS_FLOOR):
    """Mean overshoot (dB) over the overshooting samples of the pre region
    ``[0, n_pre]`` and the post region ``[n_post, end]``."""
    g_e = overshoot_envelope(g, w_u, floor)
    pre = g_e[: int(n_pre) + 1]
    post = g_e[int(n_post):]
    n0_pre = int(np.count_nonzero(pre))
    n0_post = int(np.count_nonzero(post))
    return NprqResult(
        float(pre.sum() / n0_pre) if n0_pre else 0.0,
        float(post.sum() / n0_post) if n0_post else 0.0,
        n0_pre,
        n0_post,
    )


def nprq_multichannel(responses, windows, floor=ABS_FLOOR):
    """Mic-averaged nPRQ for (Q, N) responses.

    Pre/post boundaries sit ``half_width`` samples either side of each mic's
    response peak, searched inside the desired-window support.
    """
    responses = np.atleast_2d(responses)
    half = (windows.n_post - windows.n_pre) // 2
    res = []
    for q, g in enumerate(responses):
        support = np.flatnonzero(windows.desired[q] > 0)
        peak = support[np.argmax(np.abs(g[support]))]
        res.append(nprq(g, windows.tolerance_weight[q], peak - half[q], peak + half[q], floor))
    return NprqResult(
        float(np.mean([r.pre for r in res])),
        float(np.mean([r.post for r in res])),
        int(sum(r.overshoot_count_pre for r in res)),
        int(sum(r.overshoot_count_post for r in res)),
    )


def spectral_deviation(g, f_l_idx, f_h_idx, n_fft=None):
    """RMS deviation of ``10 log10 |E|`` about its mean over bins
    ``f_l_idx..f_h_idx`` (inclusive) of the ``n_fft``-point DFT of ``g``.

    Note the 10 log10 of the magnitude (not of the power).
    """
    g = np.asarray(g, dtype=float)
    n_fft = n_fft or dsp.next_pow2(g.size)
    if n_fft < g.size:
        raise ValueError("n_fft shorter than the response")
    if not 0 <= f_l_idx <= f_h_idx <= n_fft // 2:
        raise ValueError(f"bin range [{f_l_idx}, {f_h_idx}] outside the spectrum")
    mag = np.abs(np.fft.rfft(g, n_fft)[f_l_idx : f_h_idx + 1])
    return _sd_of_magnitude(mag)


def _sd_of_magnitude(mag):
    with np.errstate(divide="ignore"):
        level = 10.0 * np.log10(mag)
    bad = ~np.isfinite(level) | (level < SD_FLOOR_DB)
    if np.any(bad):
        log.warning("spectral deviation: %d zero-magnitude bins clamped to %g dB", int(bad.sum()), SD_FLOOR_DB)
        level = np.where(bad, SD_FLOOR_DB, level)
    mean_level = level.mean()
    return float(np.sqrt(np.mean((level - mean_level) ** 2)))


@dataclass(frozen=True)
class OctaveBandSet:
    """Six contiguous octave bands, edges in Hz and the matching bin ranges."""

    centers: np.ndarray
    edges: np.ndarray
    bins: tuple
    n_fft: int
    sample_rate: float


def octave_bands(n_fft, sample_rate=dsp.FS, first_center=250.0, n_bands=6, f_start=225.0):
    """Octave bands centred on 250 Hz .. 8 kHz (edges ``f_c / sqrt 2 .. f_c sqrt 2``),
    with the first band's lower edge raised to ``f_start``.

    Bin k belongs to the band with ``f_lo <= k * df < f_hi`` (the last band
    also keeps its upper edge), so the partition is disjoint and exhaustive.
    """
    centers = first_center * 2.0 ** np.arange(n_bands)
    edges = np.concatenate([centers / np.sqrt(2.0), [centers[-1] * np.sqrt(2.0)]])
    edges[0] = max(edges[0], f_start)
    if edges[-1] > sample_rate / 2:
        raise ValueError(f"band edge {edges[-1]:.0f} Hz beyond Nyquist")
    df = sample_rate / n_fft
    bins = []
    for i in range(n_bands):
        lo = int(np.ceil(edges[i] / df - 1e-9))
        if i == n_bands - 1:
            hi = int(np.floor(edges[i + 1] / df + 1e-9))
        else:
            hi = int(np.ceil(edges[i + 1] / df - 1e-9)) - 1
        if hi < lo:
            raise ValueError(f"band {i + 1} holds no bins at n_fft={n_fft}")
        bins.append((lo, hi))
    return OctaveBandSet(centers, edges, tuple(bins), n_fft, sample_rate)


@dataclass(frozen=True)
class OctaveSd:
    bands: np.ndarray
    avg5: float
    avg6: float


def octave_sd(g, bands: OctaveBandSet):
    """Per-band spectral deviation plus averages over bands 1-5 and 1-6."""
    g = np.asarray(g, dtype=float)
    if bands.n_fft < g.size:
        raise ValueError("band set n_fft shorter than the response")
    mag = np.abs(np.fft.rfft(g, bands.n_fft))
    sd = np.array([_sd_of_magnitude(mag[lo : hi + 1]) for lo, hi in bands.bins])
    return OctaveSd(sd, float(np.mean(sd[:5])), float(np.mean(sd[:6])))


def octave_sd_multichannel(responses, bands: OctaveBandSet):
    """Mic-averaged per-band spectral deviation."""
    per = [octave_sd(g, bands).bands for g in np.atleast_2d(responses)]
    sd = np.mean(per, axis=0)
    return OctaveSd(sd, float(np.mean(sd[:5])), float(np.mean(sd[:6])))
