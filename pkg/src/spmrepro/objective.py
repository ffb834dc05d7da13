"""Composite filter-design objectives and their exact gradients.

Three modes share one set of terms:

``cvx``
    matching + infinity-norm ringing, spectral-peak and filter-band terms
    (the convex baseline objective, non-smooth).
``nn``
    the same objective with every infinity norm replaced by a large-p norm,
    so it can be minimized by gradient descent.
``spmnet``
    large-p ringing and filter-band terms, a log-spectral standard-deviation
    flatness term and the spatial-power-map term.

The total is ``sum_k weights[k] / 2 * term_k``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .beamforming import Beamformer, SteeringGrid, default_grid

log = logging.getLogger(__name__)

MODES = ("cvx", "nn", "spmnet")
LN10 = np.log(10.0)


@dataclass(frozen=True)
class TemporalWindows:
    """Per-mic time windows anchored on the target peak.

    ``desired`` weights the direct-path region, ``tolerance_weight`` is
    ``w_u`` (the reciprocal of the allowed ringing envelope) and
    ``unwanted`` is ``w_u`` with the desired support zeroed.
    """

    desired: np.ndarray
    unwanted: np.ndarray
    tolerance_weight: np.ndarray
    peak: np.ndarray
    n_pre: np.ndarray
    n_post: np.ndarray


def make_windows(
    target,
    sample_rate=dsp.FS,
    half_width=32,
    pre_decay_ms=5.0,
    post_decay_ms=50.0,
    decay_db=60.0,
    floor_db=-120.0,
):
    """Build :class:`TemporalWindows` for a (Q, N) target.

    The desired window is a raised cosine of ``2 * half_width`` samples on
    the target peak. The ringing envelope starts at the peak level and
    falls by ``decay_db`` every ``pre_decay_ms`` before the peak and every
    ``post_decay_ms`` after it, bottoming out at ``floor_db`` below the peak.
    """
    target = np.atleast_2d(np.asarray(target, dtype=float))
    q, n = target.shape
    idx = np.arange(n)
    peak = np.argmax(np.abs(target), axis=1)
    level = np.abs(target[np.arange(q), peak])
    lag = idx[None, :] - peak[:, None]
    wd = np.where(np.abs(lag) < half_width, 0.5 + 0.5 * np.cos(np.pi * lag / half_width), 0.0)
    rate_pre = decay_db / (pre_decay_ms * 1e-3 * sample_rate)
    rate_post = decay_db / (post_decay_ms * 1e-3 * sample_rate)
    drop_db = np.where(lag < 0, -lag * rate_pre, lag * rate_post)
    drop_db = np.minimum(drop_db, -floor_db)
    envelope = level[:, None] * 10.0 ** (-drop_db / 20.0)
    wu = 1.0 / envelope
    unwanted = np.where(wd > 0, 0.0, wu)
    return TemporalWindows(wd, unwanted, wu, peak, peak - half_width, peak + half_width)


@dataclass
class LossConfig:
    """Objective hyperparameters.

    ``weights`` are lambda_1..lambda_5. ``spectral_weight`` is the constant
    per-bin weight V_s of the convex spectral-peak term.
    """

    weights: tuple = (1.0, 1.0, 0.1, 0.1, 1.0)
    p: float = 10.0
    band: tuple = dsp.BAND
    spm_normalize: bool = True
    pool_std: bool = False
    spectral_weight: float = 1.0
    flatness_floor: float = 1e-8
    half_width: int = 32
    pre_decay_ms: float = 5.0
    post_decay_ms: float = 50.0
    grid: SteeringGrid = field(default_factory=default_grid)

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if len(w) != 5 or min(w) < 0:
            raise ValueError(f"need five non-negative weights, got {w}")
        if max(w) == 0:
            raise ValueError("at least one weight must be positive")
        if self.p < 2:
            raise ValueError("p must be >= 2")
        self.weights = w


@dataclass
class LossBreakdown:
    terms: np.ndarray
    weights: tuple
    mode: str

    @property
    def weighted(self):
        return np.asarray(self.weights) / 2.0 * self.terms

    @property
    def total(self):
        return float(np.sum(self.weighted))


# ----------------------------------------------------------------- terms


def term_match(g, d, wd, grad=False):
    """``||W^d (g - d)||_2^2`` over all mics."""
    r = wd * (np.asarray(g) - np.asarray(d))
    val = float(np.sum(r**2))
    if grad:
        return val, 2.0 * wd * r
    return val


def term_ringing(g, wu, p=None, grad=False):
    """Norm of the envelope-weighted response outside the desired window.

    ``p=None`` gives the infinity norm (no gradient).
    """
    v = wu * np.asarray(g)
    if p is None:
        if grad:
            raise ValueError("infinity norm has no gradient; use a finite p")
        return float(np.max(np.abs(v))) if v.size else 0.0
    if not grad:
        return dsp.large_p_norm(v, p)
    val, dv = dsp.large_p_norm_grad(v, p)
    return val, wu * dv


def term_flatness_std(spectra, floor=1e-8, pool=False, grad=False):
    """Standard deviation of the dB magnitude over in-band bins.

    ``spectra`` is complex (Q, K), already restricted to the band. Per-mic
    deviations are averaged unless ``pool``. Magnitudes below ``floor`` are
    clamped (and contribute no gradient).
    """
    spectra = np.atleast_2d(spectra)
    mag = np.abs(spectra)
    clamped = mag < floor
    if np.any(clamped):
        log.debug("flatness: %d bins clamped to floor %g", int(clamped.sum()), floor)
    safe = np.where(clamped, floor, mag)
    y = 20.0 * np.log10(safe)
    if pool:
        dev = y - y.mean()
        s = np.sqrt(np.mean(dev**2))
        val = float(s)
        dy = dev / (y.size * s) if s > 0 else np.zeros_like(y)
    else:
        dev = y - y.mean(axis=1, keepdims=True)
        s = np.sqrt(np.mean(dev**2, axis=1))
        val = float(np.mean(s))
        with np.errstate(invalid="ignore", divide="ignore"):
            dy = np.where(s[:, None] > 0, dev / (y.shape[1] * s[:, None] * y.shape[0]), 0.0)
    if not grad:
        return val
    w = np.where(clamped, 0.0, dy * (20.0 / LN10) * spectra / safe**2)
    return val, w


def term_flatness_inf(spectra, v_weights, p=None, grad=False):
    """Norm of the V_s-weighted spectral magnitude; infinity norm when ``p`` is None."""
    z = v_weights * np.atleast_2d(spectra)
    mag = np.abs(z)
    if p is None:
        if grad:
            raise ValueError("infinity norm has no gradient; use a finite p")
        return float(mag.max()) if mag.size else 0.0
    if not grad:
        return dsp.large_p_norm(mag, p)
    val, dmag = dsp.large_p_norm_grad(mag, p)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(mag > 0, dmag * v_weights * z / mag, 0.0)
    return val, w


def term_filter_band(filter_spectra, xi, p=None, grad=False):
    """Norm of the masked filter spectra, all loudspeaker channels stacked.

    ``xi`` selects the out-of-band bins; infinity norm when ``p`` is None.
    """
    return term_flatness_inf(filter_spectra, xi, p=p, grad=grad)


def term_spm(gamma, target_gamma, normalize=True, grad=False):
    """Squared l2 distance between two spatial power maps.

    With ``normalize`` both maps are scaled to unit total power first; a
    zero-power reproduced map then scores ``||target||^2``.
    """
    gamma = np.asarray(gamma, dtype=float)
    target_gamma = np.asarray(target_gamma, dtype=float)
    if normalize:
        t = target_gamma / target_gamma.sum()
        total = gamma.sum()
        if not total > 0:
            val = float(np.sum(t**2))
            return (val, np.zeros_like(gamma)) if grad else val
        pn = gamma / total
        diff = pn - t
        val = float(np.sum(diff**2))
        if not grad:
            return val
        dp = 2.0 * diff
        return val, (dp - np.dot(dp, pn)) / total
    diff = gamma - target_gamma
    val = float(np.sum(diff**2))
    return (val, 2.0 * diff) if grad else val


# --------------------------------------------------------------- problem


class DesignProblem:
    """One filter-design instance: channels, target, windows and the
    precomputed transforms every loss evaluation needs.

    Parameters
    ----------
    channels : ndarray (Q, L, L_c)
    target : ndarray (Q, L_g) with ``L_g = L_c + filter_len - 1``
    geometry : ArrayGeometry
        Microphone geometry for the spatial term.
    filter_len : int
    config : LossConfig
    """

    def __init__(self, channels, target, geometry, filter_len, config: LossConfig | None = None,
                 sample_rate=dsp.FS, n_fft=None, windows: TemporalWindows | None = None):
        self.config = config or LossConfig()
        self.channels = np.asarray(channels, dtype=float)
        q, l, lc = self.channels.shape
        self.n_mics, self.n_ls, self.filter_len = q, l, int(filter_len)
        self.resp_len = lc + self.filter_len - 1
        self.target = np.asarray(target, dtype=float)
        if self.target.shape != (q, self.resp_len):
            raise ValueError(f"target shape {self.target.shape} != {(q, self.resp_len)}")
        self.sample_rate = sample_rate
        self.n_fft = n_fft or dsp.next_pow2(self.resp_len)
        if self.n_fft < self.resp_len:
            raise ValueError("n_fft shorter than the response; circular aliasing")
        self.chan_f = np.fft.rfft(self.channels, self.n_fft, axis=-1)
        # per-bin (Q, L) matrices and their conjugate transposes for batched products
        self._c_bins = np.ascontiguousarray(np.moveaxis(self.chan_f, -1, 0))
        self._ch_bins = np.ascontiguousarray(self._c_bins.conj().transpose(0, 2, 1))
        cfg = self.config
        self.windows = windows or make_windows(
            self.target, sample_rate, cfg.half_width, cfg.pre_decay_ms, cfg.post_decay_ms
        )
        mask = dsp.band_mask(self.n_fft, cfg.band[0], cfg.band[1], sample_rate).weights
        self.in_band = np.flatnonzero(mask > 0)
        self.out_band = np.flatnonzero(mask == 0)
        self.v_weights = cfg.spectral_weight * mask[self.in_band]
        self.xi = 1.0 - mask[self.out_band]
        self.beamformer = Beamformer(geometry, cfg.grid, self.resp_len, sample_rate)
        self.target_map = self.beamformer.power(self.target)

    # linear maps -------------------------------------------------------
    def response(self, h):
        """Global responses ``g[q] = sum_l c[q, l] * h[l]``, shape (Q, L_g)."""
        hf = np.fft.rfft(np.asarray(h, dtype=float).reshape(self.n_ls, self.filter_len), self.n_fft, axis=-1)
        gf = np.matmul(self._c_bins, hf.T[:, :, None])[:, :, 0].T
        return np.fft.irfft(gf, self.n_fft, axis=-1)[:, : self.resp_len]

    def adjoint(self, dg):
        """Transpose of :meth:`response`: (Q, L_g) -> (L, L_h)."""
        df = np.fft.rfft(dg, self.n_fft, axis=-1)
        hf = np.matmul(self._ch_bins, df.T[:, :, None])[:, :, 0].T
        return np.fft.irfft(hf, self.n_fft, axis=-1)[:, : self.filter_len]

    def spectra(self, g):
        return np.fft.rfft(g, self.n_fft, axis=-1)

    def zeros(self):
        return np.zeros((self.n_ls, self.filter_len))

    # loss --------------------------------------------------------------
    def evaluate(self, h, mode="spmnet", grad=False):
        """Loss breakdown for filters ``h`` (L, L_h); with ``grad`` also dL/dh."""
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if grad and mode == "cvx":
            raise ValueError("cvx mode is non-smooth; use the proximal solver")
        cfg = self.config
        h = np.asarray(h, dtype=float).reshape(self.n_ls, self.filter_len)
        weights = list(cfg.weights)
        if mode != "spmnet":
            weights[4] = 0.0
        p = None if mode == "cvx" else cfg.p
        w = self.windows
        g = self.response(h)
        x = self.spectra(g)
        hf = np.fft.rfft(h, self.n_fft, axis=-1)
        terms = np.zeros(5)
        dg = np.zeros_like(g)
        dxf = np.zeros_like(x)
        dhf = np.zeros_like(hf)

        def active(k):
            return weights[k] > 0

        if active(0):
            r = term_match(g, self.target, w.desired, grad=grad)
            terms[0], dg = (r[0], dg + weights[0] / 2 * r[1]) if grad else (r, dg)
        if active(1):
            r = term_ringing(g, w.unwanted, p, grad=grad)
            terms[1], dg = (r[0], dg + weights[1] / 2 * r[1]) if grad else (r, dg)
        if active(2):
            xb = x[:, self.in_band]
            if mode == "spmnet":
                r = term_flatness_std(xb, cfg.flatness_floor, cfg.pool_std, grad=grad)
            else:
                r = term_flatness_inf(xb, self.v_weights, p, grad=grad)
            if grad:
                terms[2] = r[0]
                dxf[:, self.in_band] += weights[2] / 2 * r[1]
            else:
                terms[2] = r
        if active(3):
            r = term_filter_band(hf[:, self.out_band], self.xi, p, grad=grad)
            if grad:
                terms[3] = r[0]
                dhf[:, self.out_band] += weights[3] / 2 * r[1]
            else:
                terms[3] = r
        if active(4):
            if grad:
                gamma = self.beamformer.power(g)
                terms[4], dgamma = term_spm(gamma, self.target_map, cfg.spm_normalize, grad=True)
                _, dg5 = self.beamformer.power_grad(g, weights[4] / 2 * dgamma)
                dg = dg + dg5
            else:
                terms[4] = term_spm(self.beamformer.power(g), self.target_map, cfg.spm_normalize)
        out = LossBreakdown(terms, tuple(weights), mode)
        if not grad:
            return out
        dg = dg + dsp.rfft_adjoint(dxf, self.n_fft, self.resp_len)
        dh = self.adjoint(dg) + dsp.rfft_adjoint(dhf, self.n_fft, self.filter_len)
        return out, dh


class MultiPositionProblem:
    """Mean of per-position losses for one shared filter bank."""

    def __init__(self, problems, labels=None):
        if not problems:
            raise ValueError("need at least one position")
        self.problems = list(problems)
        self.labels = list(labels) if labels else [str(i) for i in range(len(problems))]
        first = self.problems[0]
        self.n_ls, self.filter_len, self.config = first.n_ls, first.filter_len, first.config
        for pr in self.problems:
            if (pr.n_ls, pr.filter_len) != (self.n_ls, self.filter_len):
                raise ValueError("positions disagree on filter dimensions")

    def zeros(self):
        return self.problems[0].zeros()

    def evaluate_positions(self, h, mode="spmnet", grad=False):
        return [pr.evaluate(h, mode, grad) for pr in self.problems]

    def evaluate(self, h, mode="spmnet", grad=False):
        parts = self.evaluate_positions(h, mode, grad)
        n = len(parts)
        if grad:
            bds = [b for b, _ in parts]
            dh = sum(gr for _, gr in parts) / n
        else:
            bds = parts
        mean = LossBreakdown(sum(b.terms for b in bds) / n, bds[0].weights, mode)
        return (mean, dh) if grad else mean


def loss(h, problem, mode="spmnet"):
    return problem.evaluate(h, mode)


def loss_grad(h, problem, mode="spmnet"):
    return problem.evaluate(h, mode, grad=True)[1]
