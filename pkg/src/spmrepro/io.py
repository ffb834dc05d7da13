"""File formats: float WAV, JSON manifests, CSV tables, PGM heatmaps."""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import dsp
from .room import ArrayGeometry, ImpulseResponseSet, Room

TARGET_MODEL = "free-field point source (no rigid-sphere scattering)"


def write_wav(path, data, sample_rate=dsp.FS):
    """Write (channels, samples) data as 32-bit float little-endian WAV."""
    data = np.atleast_2d(np.asarray(data, dtype="<f4"))
    path = Path(path)
    try:
        wavfile.write(path, int(round(sample_rate)), np.ascontiguousarray(data.T))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_wav(path):
    """Return ``(data (channels, samples) float64, sample_rate)``."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    return data.T, float(rate)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_json(path, obj):
    path = Path(path)
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"
    path.write_text(text, encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def digest(path_or_bytes):
    """SHA-256 hex digest of a file or a bytes object."""
    if isinstance(path_or_bytes, (bytes, bytearray)):
        return hashlib.sha256(path_or_bytes).hexdigest()
    return hashlib.sha256(Path(path_or_bytes).read_bytes()).hexdigest()


# ------------------------------------------------------------ impulse responses


def ir_filename(l):
    return f"ls{l:02d}.wav"


def save_ir_set(directory, irs: ImpulseResponseSet, extra=None):
    """One Q-channel WAV per loudspeaker plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for l in range(irs.ir.shape[1]):
        files.append(write_wav(directory / ir_filename(l), irs.ir[:, l, :], irs.sample_rate).name)
    geo = irs.geometry
    manifest = {
        "position": irs.position,
        "sample_rate": irs.sample_rate,
        "band": list(irs.band),
        "n_mics": geo.n_mics,
        "n_loudspeakers": geo.n_loudspeakers,
        "ir_len": irs.ir.shape[2],
        "geometry": {"loudspeakers": geo.loudspeakers, "mics": geo.mics, "center": geo.center},
        "room": None if irs.room is None else {
            "dimensions": irs.room.dimensions,
            "absorption": irs.room.absorption,
            "speed_of_sound": irs.room.speed_of_sound,
        },
        "target_model": TARGET_MODEL,
        "files": files,
        "meta": irs.meta,
    }
    if extra:
        manifest.update(extra)
    write_json(directory / "manifest.json", manifest)
    return directory


def load_ir_set(directory) -> ImpulseResponseSet:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest in {directory}")
    m = read_json(manifest_path)
    chans = []
    for name in m["files"]:
        data, rate = read_wav(directory / name)
        if rate != m["sample_rate"]:
            raise ValueError(f"{directory / name}: rate {rate} differs from manifest {m['sample_rate']}")
        chans.append(data)
    ir = np.stack(chans, axis=1)
    g = m["geometry"]
    geometry = ArrayGeometry(np.array(g["loudspeakers"]), np.array(g["mics"]), np.array(g["center"]))
    room = None
    if m.get("room"):
        room = Room(tuple(m["room"]["dimensions"]), tuple(m["room"]["absorption"]), m["room"]["speed_of_sound"])
    return ImpulseResponseSet(ir, geometry, m["sample_rate"], m["position"], tuple(m["band"]), room,
                              m.get("meta", {}))


# ------------------------------------------------------------ filter banks


def save_filter_bank(stem, filters, sample_rate=dsp.FS, manifest=None):
    """``<stem>.wav`` with L channels and ``<stem>.json`` alongside."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    write_wav(stem.with_suffix(".wav"), filters, sample_rate)
    write_json(stem.with_suffix(".json"), dict(manifest or {}, sample_rate=sample_rate,
                                               n_loudspeakers=len(filters), filter_len=np.shape(filters)[-1]))
    return stem


def load_filter_bank(stem):
    stem = Path(stem)
    data, _ = read_wav(stem.with_suffix(".wav"))
    meta = read_json(stem.with_suffix(".json")) if stem.with_suffix(".json").exists() else {}
    return data, meta


# ------------------------------------------------------------ tables


def fmt(x):
    """Stable text form of a number for CSV output."""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.6f}"
    return str(x)


def write_csv(path, header, rows):
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def read_csv(path):
    with Path(path).open(newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def write_sspm_csv(path, stacked):
    header = ["source_azimuth"] + [f"{a:g}" for a in stacked.steering_azimuths]
    rows = [[f"{s:g}"] + list(r) for s, r in zip(stacked.source_azimuths, stacked.db)]
    return write_csv(path, header, rows)


def write_pgm(path, values, vmin=None, vmax=None):
    """Binary 8-bit grayscale PGM, bright = high."""
    v = np.asarray(values, dtype=float)
    lo = np.min(v) if vmin is None else vmin
    hi = np.max(v) if vmax is None else vmax
    scale = (np.clip(v, lo, hi) - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    img = np.round(scale * 255).astype(np.uint8)
    path = Path(path)
    path.write_bytes(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii") + img.tobytes())
    return path


def read_pgm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
