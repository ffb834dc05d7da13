"""Delay-and-sum beamforming and spatial power maps (SPM / stacked SPM)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from .room import SPEED_OF_SOUND


@dataclass(frozen=True)
class SteeringGrid:
    """Horizontal steering azimuths (deg) and analysis frequencies (Hz)."""

    azimuths: np.ndarray
    freqs: np.ndarray

    def __post_init__(self):
        az = np.asarray(self.azimuths, dtype=float)
        f = np.asarray(self.freqs, dtype=float)
        if az.size < 4:
            raise ValueError("need at least 4 steering directions")
        if np.any(np.diff(az) <= 0) or az[0] < 0 or az[-1] >= 360:
            raise ValueError("azimuths must be sorted, unique and in [0, 360)")
        if f.size < 1 or f.min() < dsp.BAND[0] or f.max() > dsp.BAND[1]:
            raise ValueError("grid frequencies must lie in the working band")
        object.__setattr__(self, "azimuths", az)
        object.__setattr__(self, "freqs", f)

    @property
    def step(self):
        return 360.0 / self.azimuths.size


def default_grid(n_azimuths=72, n_freqs=64, f_lo=300.0, f_hi=4000.0):
    return SteeringGrid(
        np.arange(n_azimuths) * 360.0 / n_azimuths,
        np.geomspace(f_lo, f_hi, n_freqs),
    )


def plane_wave_delays(mics, center, azimuths, speed_of_sound=SPEED_OF_SOUND):
    """Arrival delay (s) at each mic relative to the centre, shape (Q, B).

    A plane wave from azimuth b reaches mic q earlier by (r_q . u_b) / c.
    """
    az = np.deg2rad(np.asarray(azimuths, dtype=float))
    u = np.stack([np.cos(az), np.sin(az), np.zeros_like(az)], axis=1)
    r = np.asarray(mics, dtype=float) - np.asarray(center, dtype=float)
    return -(r @ u.T) / speed_of_sound


def dsb_weights(geometry, grid: SteeringGrid, speed_of_sound=SPEED_OF_SOUND):
    """Delay-and-sum weights ``w[q, b, f] = exp(+i 2 pi f tau_qb) / Q``."""
    tau = plane_wave_delays(geometry.mics, geometry.center, grid.azimuths, speed_of_sound)
    q = tau.shape[0]
    return np.exp(2j * np.pi * tau[:, :, None] * grid.freqs[None, None, :]) / q


def spm(spectra, weights):
    """Beamformed power per steering direction.

    Parameters
    ----------
    spectra : complex ndarray (Q, F)
        Global-response spectra at the grid frequencies.
    weights : complex ndarray (Q, B, F)

    Returns
    -------
    ndarray (B,)
        ``sum_f |sum_q spectra[q, f] * weights[q, b, f]|^2``
    """
    spectra = np.asarray(spectra)
    if spectra.shape[0] != weights.shape[0] or spectra.shape[-1] != weights.shape[-1]:
        raise ValueError(f"spectra {spectra.shape} do not match weights {weights.shape}")
    y = np.einsum("qf,qbf->bf", spectra, weights)
    return np.sum(y.real**2 + y.imag**2, axis=1)


class Beamformer:
    """Precomputed DTFT rows and weights for one geometry, grid and response length."""

    def __init__(self, geometry, grid: SteeringGrid, length, sample_rate=dsp.FS,
                 speed_of_sound=SPEED_OF_SOUND):
        self.grid = grid
        self.length = length
        self.weights = dsb_weights(geometry, grid, speed_of_sound)
        self._weights_conj = self.weights.conj()
        self.dtft = dsp.dtft_matrix(grid.freqs, length, sample_rate)

    def spectra(self, g):
        return np.asarray(g) @ self.dtft.T

    def power(self, g):
        return spm(self.spectra(g), self.weights)

    def power_grad(self, g, dgamma):
        """Value of the map and the pullback of ``dgamma`` (B,) onto ``g`` (Q, N)."""
        x = self.spectra(g)
        y = np.einsum("qf,qbf->bf", x, self.weights)
        gamma = np.sum(y.real**2 + y.imag**2, axis=1)
        wy = 2.0 * dgamma[:, None] * y
        wx = np.einsum("bf,qbf->qf", wy, self._weights_conj)
        return gamma, (wx @ self.dtft.conj()).real


def spm_of_response(g, geometry, grid: SteeringGrid, sample_rate=dsp.FS):
    """SPM of a set of Q equal-length mic responses, shape (Q, N)."""
    g = np.asarray(g, dtype=float)
    return Beamformer(geometry, grid, g.shape[-1], sample_rate).power(g)


@dataclass(frozen=True)
class StackedSpm:
    """Rows: sources (by azimuth), columns: steering azimuths; values in dB,
    each row peaking at 0 dB."""

    db: np.ndarray
    source_azimuths: np.ndarray
    steering_azimuths: np.ndarray


def sspm(responses, source_azimuths, geometry, grid: SteeringGrid, sample_rate=dsp.FS):
    """Stack normalized dB SPM rows, one per source response set."""
    rows = []
    bf = None
    for az, g in zip(source_azimuths, responses):
        g = np.asarray(g, dtype=float)
        if bf is None or bf.length != g.shape[-1]:
            bf = Beamformer(geometry, grid, g.shape[-1], sample_rate)
        p = bf.power(g)
        if not np.max(p) > 0:
            raise ValueError(f"source at {az} deg has a zero-power field; cannot normalize")
        rows.append(10 * np.log10(np.maximum(p / p.max(), 1e-30)))
    return StackedSpm(np.array(rows), np.asarray(source_azimuths, dtype=float), grid.azimuths.copy())


def circular_distance(a, b):
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0
    return np.minimum(d, 360.0 - d)


def diag_dominance(stacked: StackedSpm, tolerance_deg):
    """Fraction of rows whose peak steering azimuth is within ``tolerance_deg``
    (circularly) of the row's source azimuth."""
    peaks = stacked.steering_azimuths[np.argmax(stacked.db, axis=1)]
    hits = circular_distance(peaks, stacked.source_azimuths) <= tolerance_deg + 1e-9
    return float(np.mean(hits)) if hits.size else 0.0
