"""Melody chroma accuracy between a piano top line and a reference f0 contour."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import PianoCoverError, UndefinedMetricError

_EPS = 1e-9


@dataclass(frozen=True)
class F0Contour:
    """Frame-wise f0 in Hz at a fixed hop; values <= 0 mark unvoiced frames."""

    frames: np.ndarray
    hop_seconds: float = 0.01

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if self.hop_seconds <= 0:
            raise ValueError("hop_seconds must be positive")
        if frames.ndim != 1 or not np.all(np.isfinite(frames)):
            raise ValueError("frames must be a finite 1-d sequence")
        object.__setattr__(self, "frames", frames)

    @property
    def voiced(self) -> np.ndarray:
        return self.frames > 0

    def semitones(self) -> np.ndarray:
        """Fractional MIDI numbers, NaN where unvoiced."""
        out = np.full(self.frames.shape, np.nan)
        v = self.voiced
        out[v] = 69.0 + 12.0 * np.log2(self.frames[v] / 440.0)
        return out

    @classmethod
    def from_semitones(cls, semitones, hop_seconds: float = 0.01) -> "F0Contour":
        """Synthesize a contour from a per-frame pitch track (NaN = unvoiced)."""
        s = np.asarray(semitones, dtype=float)
        hz = np.where(np.isnan(s), 0.0, 440.0 * 2.0 ** ((np.nan_to_num(s) - 69.0) / 12.0))
        return cls(hz, hop_seconds)


def read_f0_csv(text: str) -> F0Contour:
    """Read ``time_sec,f0_hz`` rows. Rows must be uniformly spaced.

    The hop is taken from the row spacing; a contour that does not start at
    0 s is padded with unvoiced frames.
    """
    reader = csv.reader(io.StringIO(text))
    header = [h.strip() for h in next(reader, [])]
    if header != ["time_sec", "f0_hz"]:
        raise PianoCoverError(f"f0 CSV header must be 'time_sec,f0_hz', got {','.join(header)!r}")
    rows = []
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        try:
            rows.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError):
            raise PianoCoverError(f"f0 CSV line {lineno}: cannot parse {row!r}") from None
    if len(rows) < 2:
        raise PianoCoverError("f0 CSV needs at least two rows to define the hop")
    times = np.array([r[0] for r in rows])
    f0 = np.array([r[1] for r in rows])
    steps = np.diff(times)
    hop = float(np.median(steps))
    if hop <= 0 or np.max(np.abs(steps - hop)) > 1e-6 + 1e-3 * hop:
        raise PianoCoverError("f0 CSV rows are not uniformly spaced")
    lead = int(round(times[0] / hop))
    if lead < 0:
        raise PianoCoverError("f0 CSV starts before time 0")
    return F0Contour(np.concatenate([np.zeros(lead), f0]), hop)


def write_f0_csv(contour: F0Contour) -> str:
    lines = ["time_sec,f0_hz"]
    for i, f in enumerate(contour.frames):
        lines.append(f"{i * contour.hop_seconds:.6f},{f:.6f}")
    return "\n".join(lines) + "\n"


def top_line(notes, grid, hop_seconds: float = 0.01, num_frames: int | None = None) -> np.ndarray:
    """Highest sounding MIDI pitch per frame, NaN where nothing sounds.

    Frame ``i`` sits at time ``i * hop_seconds``; a note sounds on frames in
    ``[onset, offset)``. By default frames run up to the last note-off.
    """
    sps = grid.seconds_per_step
    spans = []
    for n in notes:
        first = int(np.ceil(n.onset * sps / hop_seconds - _EPS))
        stop = int(np.ceil(n.offset * sps / hop_seconds - _EPS))
        spans.append((first, stop, n.pitch))
    if num_frames is None:
        num_frames = max((s for _, s, _ in spans), default=0)
    out = np.full(num_frames, -np.inf)
    for first, stop, pitch in spans:
        seg = out[first:stop]
        np.maximum(seg, pitch, out=seg)
    out[np.isneginf(out)] = np.nan
    return out


@dataclass(frozen=True)
class McaReport:
    mca: float
    voiced_frames: int
    matched_frames: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def chroma_distance(a, b) -> np.ndarray:
    """Pitch distance in semitones folded onto one octave, in [0, 6]."""
    d = np.mod(np.asarray(a) - np.asarray(b), 12.0)
    return np.minimum(d, 12.0 - d)


def mca(estimate, reference: F0Contour, tolerance: float = 0.5) -> McaReport:
    """Raw chroma accuracy of a per-frame pitch estimate against an f0 contour.

    Only reference-voiced frames count. A frame matches when the estimate is
    voiced and within ``tolerance`` semitones of the reference modulo octave.
    Both tracks are cut to their common length.
    """
    est = np.asarray(estimate, dtype=float)
    n = min(len(est), len(reference.frames))
    est = est[:n]
    ref = reference.semitones()[:n]
    voiced = reference.voiced[:n]
    n_voiced = int(voiced.sum())
    if n_voiced == 0:
        raise UndefinedMetricError("reference has no voiced frames; MCA is undefined")
    both = voiced & ~np.isnan(est)
    matched = int((chroma_distance(est[both], ref[both]) <= tolerance).sum())
    return McaReport(matched / n_voiced, n_voiced, matched)
