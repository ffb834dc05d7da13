"""Synthetic cabins: image-source shoebox rooms, microphone arrays and
free-field target responses.

Coordinates are metres in the room frame: x points to the front of the
cabin, y to the left, z up. Azimuths are degrees counter-clockwise from
the front (+x).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from . import dsp

SPEED_OF_SOUND = 343.0

# lateral listening-position offsets, metres, positive = towards the right
POSITIONS = {"LL": -0.075, "L": -0.04, "O": 0.0, "R": 0.04, "RR": 0.075}
LATERAL_AXIS = np.array([0.0, -1.0, 0.0])


@dataclass(frozen=True)
class Room:
    """Shoebox room.

    ``absorption`` holds one coefficient per surface in the order
    x=0, x=Lx, y=0, y=Ly, z=0, z=Lz.
    """

    dimensions: tuple = (2.8, 1.6, 1.2)
    absorption: tuple = (0.45,) * 6
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dimensions)
        absorption = self.absorption
        if np.isscalar(absorption):
            absorption = (absorption,) * 6
        absorption = tuple(float(a) for a in absorption)
        if len(dims) != 3 or min(dims) <= 0:
            raise ValueError(f"room dimensions must be three positive lengths, got {dims}")
        if len(absorption) != 6 or not all(0 < a <= 1 for a in absorption):
            raise ValueError(f"absorption must be six values in (0, 1], got {absorption}")
        object.__setattr__(self, "dimensions", dims)
        object.__setattr__(self, "absorption", absorption)

    def contains(self, point):
        p = np.asarray(point, dtype=float)
        return bool(np.all(p > 0) and np.all(p < np.asarray(self.dimensions)))


@dataclass(frozen=True)
class ArrayGeometry:
    """Loudspeaker positions (L, 3), microphone positions (Q, 3) and the
    array centre the microphones surround."""

    loudspeakers: np.ndarray
    mics: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        ls = np.atleast_2d(np.asarray(self.loudspeakers, dtype=float))
        mics = np.atleast_2d(np.asarray(self.mics, dtype=float))
        center = np.asarray(self.center, dtype=float).reshape(3)
        if ls.shape[0] < 2 or mics.shape[0] < 2:
            raise ValueError("need at least two loudspeakers and two microphones")
        for a in (ls, mics, center):
            a.setflags(write=False)
        object.__setattr__(self, "loudspeakers", ls)
        object.__setattr__(self, "mics", mics)
        object.__setattr__(self, "center", center)

    @property
    def n_mics(self):
        return self.mics.shape[0]

    @property
    def n_loudspeakers(self):
        return self.loudspeakers.shape[0]

    @property
    def radius(self):
        return float(np.max(np.linalg.norm(self.mics - self.center, axis=1)))

    def shifted(self, offset):
        """Array moved ``offset`` metres along the lateral axis; loudspeakers stay."""
        d = float(offset) * LATERAL_AXIS
        return ArrayGeometry(self.loudspeakers, self.mics + d, self.center + d)

    def validate(self, room: Room):
        for name, pts in (("loudspeaker", self.loudspeakers), ("microphone", self.mics)):
            for i, p in enumerate(pts):
                if not room.contains(p):
                    raise ValueError(f"{name} {i} at {p} is outside the room")


@dataclass(frozen=True)
class VirtualSource:
    azimuth: float
    elevation: float = 0.0
    distance: float = 1.0

    def __post_init__(self):
        if self.distance <= 0:
            raise ValueError("source distance must be positive")
        object.__setattr__(self, "azimuth", float(self.azimuth) % 360.0)

    def direction(self):
        az, el = np.deg2rad(self.azimuth), np.deg2rad(self.elevation)
        return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])

    def position(self, reference):
        return np.asarray(reference, dtype=float) + self.distance * self.direction()


@dataclass
class ImpulseResponseSet:
    """Acoustic channels ``ir[q, l, n]`` from loudspeaker l to mic q."""

    ir: np.ndarray
    geometry: ArrayGeometry
    sample_rate: float = dsp.FS
    position: str = "O"
    band: tuple = dsp.BAND
    room: Room | None = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.ir.shape


def sphere_mic_positions(center, radius, q):
    """``q`` deterministic, quasi-uniform points on a sphere.

    A Fibonacci lattice, re-centred and projected back onto the sphere a few
    times so the centroid coincides with ``center`` (``q = 2`` becomes an
    antipodal pair).
    """
    if q < 2 or radius <= 0:
        raise ValueError("need q >= 2 and radius > 0")
    i = np.arange(q)
    z = 1.0 - (2 * i + 1) / q
    rho = np.sqrt(1.0 - z**2)
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    pts = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    for _ in range(100):
        pts -= pts.mean(axis=0)
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return np.asarray(center, dtype=float) + radius * pts


def _sinc_taps(delay, n_taps=32):
    """Hann-windowed sinc interpolating an impulse at fractional ``delay``."""
    start = int(np.floor(delay)) - n_taps // 2 + 1
    n = np.arange(start, start + n_taps)
    t = n - delay
    win = 0.5 + 0.5 * np.cos(np.pi * t / (n_taps / 2))
    return n, np.sinc(t) * win


def _images(room: Room, src, max_order, max_dist, mic):
    """Image positions and reflection gains within ``max_dist`` of ``mic``."""
    dims = np.asarray(room.dimensions)
    beta = np.sqrt(1.0 - np.asarray(room.absorption)).reshape(3, 2)
    n_max = np.ceil(max_dist / (2 * dims)).astype(int) + 1
    n_max = np.minimum(n_max, max_order // 2 + 1)
    ranges = [np.arange(-m, m + 1) for m in n_max]
    nx, ny, nz = np.meshgrid(*ranges, indexing="ij")
    lattice = np.stack([nx.ravel(), ny.ravel(), nz.ravel()], axis=1)
    positions, gains = [], []
    for parity in product((0, 1), repeat=3):
        p = np.asarray(parity)
        pos = (1 - 2 * p) * src + 2 * lattice * dims
        hits_lo = np.abs(lattice - p)  # reflections off the wall at 0
        hits_hi = np.abs(lattice)  # reflections off the wall at L
        order = (hits_lo + hits_hi).sum(axis=1)
        keep = order <= max_order
        with np.errstate(divide="ignore"):
            g = np.prod(beta[:, 0] ** hits_lo * beta[:, 1] ** hits_hi, axis=1)
        positions.append(pos[keep])
        gains.append(g[keep])
    positions = np.concatenate(positions)
    gains = np.concatenate(gains)
    dist = np.linalg.norm(positions - mic, axis=1)
    keep = (dist <= max_dist) & (gains > 0)
    return dist[keep], gains[keep]


def image_source_ir(room: Room, src, mic, max_order, ir_len, sample_rate=dsp.FS):
    """Shoebox impulse response by the image-source method.

    Every image up to ``max_order`` reflections contributes an impulse of
    amplitude (reflection product) / (4 pi distance) at delay
    distance / c, placed with a 32-tap windowed sinc. Arrivals past
    ``ir_len`` are dropped.
    """
    src = np.asarray(src, dtype=float)
    mic = np.asarray(mic, dtype=float)
    if not room.contains(src):
        raise ValueError(f"source {src} is outside the room")
    if not room.contains(mic):
        raise ValueError(f"microphone {mic} is outside the room")
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    if np.allclose(src, mic):
        raise ValueError("source and microphone coincide")
    c = room.speed_of_sound
    max_dist = (ir_len + 16) * c / sample_rate
    dist, gains = _images(room, src, max_order, max_dist, mic)
    order = np.lexsort((gains, dist))
    h = np.zeros(ir_len)
    for d, g in zip(dist[order], gains[order]):
        n, taps = _sinc_taps(d / c * sample_rate)
        ok = (n >= 0) & (n < ir_len)
        np.add.at(h, n[ok], g / (4 * np.pi * d) * taps[ok])
    return h


def simulate_channels(
    room: Room,
    geometry: ArrayGeometry,
    position="O",
    ir_len=1024,
    max_order=20,
    sample_rate=dsp.FS,
    band=dsp.BAND,
) -> ImpulseResponseSet:
    """Band-passed Q x L channel set with the array moved to ``position``.

    ``position`` is a label from :data:`POSITIONS` or a lateral offset in
    metres.
    """
    offset = POSITIONS[position] if isinstance(position, str) else float(position)
    label = position if isinstance(position, str) else f"{offset:+.3f}"
    geo = geometry.shifted(offset)
    geo.validate(room)
    ir = np.empty((geo.n_mics, geo.n_loudspeakers, ir_len))
    for q, l in product(range(geo.n_mics), range(geo.n_loudspeakers)):
        ir[q, l] = image_source_ir(room, geo.loudspeakers[l], geo.mics[q], max_order, ir_len, sample_rate)
    ir = dsp.bandpass(ir, band[0], band[1], sample_rate)
    return ImpulseResponseSet(ir, geo, sample_rate, label, tuple(band), room, {"max_order": max_order})


def free_field_target(
    source: VirtualSource,
    geometry: ArrayGeometry,
    gross_delay,
    length,
    reference=None,
    speed_of_sound=SPEED_OF_SOUND,
    sample_rate=dsp.FS,
    band=dsp.BAND,
):
    """Anechoic point-source responses at each mic, shape (Q, length).

    The source sits ``source.distance`` from ``reference`` (the array centre
    by default). Mic q gets a band-limited impulse at
    ``gross_delay + (|src - mic_q| - r) / c * fs`` with amplitude
    ``r / |src - mic_q|``. Open-sphere model: no scattering by the array.
    """
    ref = geometry.center if reference is None else np.asarray(reference, dtype=float)
    if source.distance <= np.max(np.linalg.norm(geometry.mics - ref, axis=1)):
        raise ValueError("virtual source lies inside the microphone array")
    pos = source.position(ref)
    r = source.distance
    dist = np.linalg.norm(geometry.mics - pos, axis=1)
    delays = gross_delay + (dist - r) / speed_of_sound * sample_rate
    return np.stack(
        [dsp.bandlimited_impulse(t, length, r / d, band, sample_rate) for t, d in zip(delays, dist)]
    )


# Default cabin loudspeaker layout, 11 channels placed on the walls.
CABIN_LOUDSPEAKERS = np.array(
    [
        [2.00, 1.55, 0.45],  # front left door
        [2.00, 0.05, 0.45],  # front right door
        [2.55, 0.80, 0.80],  # centre dash
        [2.40, 1.45, 0.95],  # left pillar
        [2.40, 0.15, 0.95],  # right pillar
        [0.90, 1.55, 0.45],  # rear left door
        [0.90, 0.05, 0.45],  # rear right door
        [1.20, 1.50, 1.15],  # left surround (roof)
        [1.20, 0.10, 1.15],  # right surround (roof)
        [0.15, 1.20, 0.90],  # rear shelf left
        [0.15, 0.40, 0.90],  # rear shelf right
    ]
)
CABIN_HEAD = np.array([1.50, 1.10, 0.85])


def synthetic_cabin(seed=0, n_mics=16, mic_radius=0.03, absorption_range=(0.3, 0.6), jitter=0.03):
    """Default desk-scale cabin: 2.8 x 1.6 x 1.2 m shoebox, 11 loudspeakers.

    The seed draws the per-wall absorption and jitters loudspeaker positions
    by up to ``jitter`` metres, so different seeds give different rooms.
    """
    rng = np.random.default_rng(seed)
    absorption = tuple(rng.uniform(*absorption_range, size=6))
    room = Room((2.8, 1.6, 1.2), absorption)
    ls = CABIN_LOUDSPEAKERS + rng.uniform(-jitter, jitter, size=CABIN_LOUDSPEAKERS.shape)
    ls = np.clip(ls, 0.02, np.asarray(room.dimensions) - 0.02)
    geometry = ArrayGeometry(ls, sphere_mic_positions(CABIN_HEAD, mic_radius, n_mics), CABIN_HEAD)
    geometry.validate(room)
    return room, geometry


def anechoic(room: Room) -> Room:
    return replace(room, absorption=(1.0,) * 6)
