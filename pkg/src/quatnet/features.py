"""Acoustic quaternion features.

Each band-frame cell becomes the quaternion
``(energy, delta, delta-delta, delta-delta-delta)``. Energies come from
files (binary QACF1 or CSV) or from the small log-mel extractor below.
"""
from __future__ import annotations

import csv
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AudioTooShort, BadMagic, DataError, DimensionMismatch, TruncatedFile
from .tensor import QuaternionTensor, qt_pack

MAGIC = b"QACF1"
DELTA_WINDOW = 2
LOG_FLOOR = 1e-10


@dataclass
class EnergyMatrix:
    """Log filter-bank energies, ``values[band, frame]``."""

    values: np.ndarray
    frame_shift: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or 0 in self.values.shape:
            raise DimensionMismatch(f"energy matrix must be 2-D and non-empty, got shape {self.values.shape}")

    @property
    def bands(self):
        return self.values.shape[0]

    @property
    def frames(self):
        return self.values.shape[1]


def _values(m):
    return m.values if isinstance(m, EnergyMatrix) else np.asarray(m, dtype=np.float64)


def delta(values, window=DELTA_WINDOW):
    """One pass of the regression delta filter along the frame axis, edges replicated."""
    values = np.asarray(values, dtype=np.float64)
    frames = values.shape[-1]
    padded = np.pad(values, [(0, 0)] * (values.ndim - 1) + [(window, window)], mode="edge")
    out = np.zeros_like(values)
    for n in range(1, window + 1):
        out += n * (padded[..., window + n:window + n + frames] - padded[..., window - n:window - n + frames])
    return out / (2.0 * sum(n * n for n in range(1, window + 1)))


def compute_deltas(m, order: int):
    """Order-``order`` deltas: the delta filter applied ``order`` times."""
    if order not in (1, 2, 3):
        raise ValueError(f"delta order must be 1, 2 or 3, got {order}")
    out = _values(m)
    for _ in range(order):
        out = delta(out)
    return EnergyMatrix(out, getattr(m, "frame_shift", None)) if isinstance(m, EnergyMatrix) else out


def standardize(m):
    """Per-utterance zero mean and unit variance for each band."""
    v = _values(m)
    std = v.std(axis=1, keepdims=True)
    return (v - v.mean(axis=1, keepdims=True)) / np.where(std > 0, std, 1.0)


def build_acoustic_quaternions(m, normalize=False) -> QuaternionTensor:
    """Pack ``(e, d1, d2, d3)`` into a ``[frames, bands]`` quaternion tensor."""
    e = standardize(m) if normalize else _values(m)
    d1 = delta(e)
    d2 = delta(d1)
    d3 = delta(d2)
    return qt_pack(e.T.copy(), d1.T.copy(), d2.T.copy(), d3.T.copy())


def acoustic_input(m, normalize=False) -> np.ndarray:
    """Model input ``[frames, 4 * bands]`` in split layout r|x|y|z."""
    qt = build_acoustic_quaternions(m, normalize)
    return np.concatenate(qt.arrays(), axis=1)


# ---------------------------------------------------------------- files


def save_features(m, path):
    v = _values(m)
    bands, frames = v.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", bands, frames))
        fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def save_features_csv(m, path):
    v = _values(m)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in v.T:
            writer.writerow([repr(float(x)) for x in row])


def _load_binary(raw: bytes) -> EnergyMatrix:
    head = len(MAGIC) + 8
    if len(raw) < head:
        raise TruncatedFile(f"header needs {head} bytes, file has {len(raw)}")
    bands, frames = struct.unpack_from("<II", raw, len(MAGIC))
    expected = head + 8 * bands * frames
    if len(raw) < expected:
        raise TruncatedFile(f"expected {expected} bytes for {bands}x{frames}, file has {len(raw)}")
    if len(raw) > expected:
        raise DimensionMismatch(f"{len(raw) - expected} trailing bytes after {bands}x{frames} payload")
    values = np.frombuffer(raw, dtype="<f8", count=bands * frames, offset=head)
    return EnergyMatrix(values.astype(np.float64).reshape(bands, frames))


def _load_csv(path) -> EnergyMatrix:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DimensionMismatch(f"{path}: empty CSV")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DimensionMismatch(f"{path}: row {i} has {len(row)} columns, expected {width}")
    try:
        values = np.array([[float(x) for x in row] for row in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    return EnergyMatrix(values.T)


def load_features(path) -> EnergyMatrix:
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(MAGIC):
        return _load_binary(raw)
    if path.suffix.lower() == ".csv":
        return _load_csv(path)
    raise BadMagic(f"{path}: missing {MAGIC!r} header")


# ---------------------------------------------------------------- audio


def read_wav(path):
    """Samples in [-1, 1) and the sample rate of a 16-bit mono WAV file."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1 or w.getsampwidth() != 2:
                raise DataError(f"{path}: expected 16-bit mono, got {w.getnchannels()} ch / {8 * w.getsampwidth()} bit")
            rate = w.getframerate()
            data = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: {exc}") from None
    return np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0, rate


def write_wav(path, samples, rate):
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_edges(rate, bands):
    """``bands + 2`` edge frequencies equally spaced in mel over ``[0, rate/2]``."""
    return mel_to_hz(np.linspace(0.0, hz_to_mel(rate / 2.0), bands + 2))


def mel_band_centers(rate, bands):
    return mel_edges(rate, bands)[1:-1]


def mel_filterbank(rate, bands, nfft):
    edges = mel_edges(rate, bands)
    freqs = np.arange(nfft // 2 + 1) * rate / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_count(samples, rate, window=0.025, shift=0.010):
    length, step = int(round(window * rate)), int(round(shift * rate))
    return 1 + (samples - length) // step if samples >= length else 0


def logmel_extract(audio, rate, bands=40, window=0.025, shift=0.010, floor=LOG_FLOOR) -> EnergyMatrix:
    """Log mel energies ``[bands, frames]`` from a mono sample stream.

    Hamming-windowed frames, power spectrum via a zero-padded real FFT,
    triangular mel filters over ``[0, rate/2]``, natural log floored at
    ``floor``.
    """
    if rate <= 0:
        raise ValueError(f"sample rate must be positive, got {rate}")
    audio = np.asarray(audio, dtype=np.float64)
    length, step = int(round(window * rate)), int(round(shift * rate))
    frames = frame_count(audio.size, rate, window, shift)
    if frames < 1:
        raise AudioTooShort(f"{audio.size} samples is shorter than one {length}-sample frame")
    nfft = 1 << (length - 1).bit_length()
    index = np.arange(length)[None, :] + step * np.arange(frames)[:, None]
    power = np.abs(np.fft.rfft(audio[index] * np.hamming(length), n=nfft)) ** 2
    energies = power @ mel_filterbank(rate, bands, nfft).T
    return EnergyMatrix(np.log(np.maximum(energies, floor)).T, frame_shift=shift)
