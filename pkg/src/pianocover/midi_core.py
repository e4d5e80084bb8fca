"""Standard MIDI file I/O and the 16th-note grid representation.

Pieces are assumed to be in 4/4 with a constant tempo. A parsed file is a
list of :class:`RawNote` plus a :class:`TimeGrid`; :func:`quantize` snaps the
raw notes to the grid and :func:`split_bars` groups them by the bar that holds
their onset.
"""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import EmptyInputError, MidiParseError, UnsupportedMeterError

STEPS_PER_BAR = 16
MAX_DURATION = 32
MIN_PITCH, MAX_PITCH = 21, 108
MIN_TEMPO, MAX_TEMPO = 32.0, 244.0
WRITE_PPQ = 480
DEFAULT_TEMPO_US = 500_000


@dataclass(frozen=True)
class RawNote:
    onset_ticks: int
    offset_ticks: int
    pitch: int
    velocity: int

    def __post_init__(self):
        if self.offset_ticks <= self.onset_ticks:
            raise ValueError(f"note must have positive length: {self}")
        if not (0 <= self.pitch <= 127 and 0 <= self.velocity <= 127):
            raise ValueError(f"pitch/velocity outside 0-127: {self}")


@dataclass(frozen=True)
class TimeGrid:
    """A constant-tempo 4/4 grid of 16 steps per bar.

    ``tempo_bpm`` is clamped into [32, 244] on construction.
    """

    tempo_bpm: float = 120.0
    num_bars: int = 0
    ticks_per_step: Fraction = Fraction(WRITE_PPQ // 4)
    steps_per_bar: int = field(default=STEPS_PER_BAR)

    def __post_init__(self):
        if self.steps_per_bar != STEPS_PER_BAR:
            raise ValueError("only 16 steps per bar (4/4) is supported")
        tps = Fraction(self.ticks_per_step)
        if tps <= 0:
            raise ValueError("ticks_per_step must be positive")
        if self.num_bars < 0:
            raise ValueError("num_bars must be >= 0")
        object.__setattr__(self, "ticks_per_step", tps)
        tempo = min(max(float(self.tempo_bpm), MIN_TEMPO), MAX_TEMPO)
        object.__setattr__(self, "tempo_bpm", tempo)

    @property
    def ppq(self) -> Fraction:
        return self.ticks_per_step * 4

    @property
    def seconds_per_step(self) -> float:
        return 60.0 / self.tempo_bpm / 4.0


@dataclass(frozen=True, order=True)
class NoteEvent:
    bar: int
    position: int
    pitch: int
    duration: int
    velocity: int

    def __post_init__(self):
        if self.bar < 0:
            raise ValueError(f"negative bar index: {self}")
        if not 0 <= self.position < STEPS_PER_BAR:
            raise ValueError(f"position outside 0-15: {self}")
        if not 1 <= self.duration <= MAX_DURATION:
            raise ValueError(f"duration outside 1-32: {self}")
        if not MIN_PITCH <= self.pitch <= MAX_PITCH:
            raise ValueError(f"pitch outside 21-108: {self}")
        if not 0 <= self.velocity <= 127:
            raise ValueError(f"velocity outside 0-127: {self}")

    @property
    def onset(self) -> int:
        """Absolute onset in steps from the start of the piece."""
        return self.bar * STEPS_PER_BAR + self.position

    @property
    def offset(self) -> int:
        return self.onset + self.duration


Bar = list  # list[NoteEvent]


def note_sort_key(n: NoteEvent):
    return (n.bar, n.position, n.pitch, n.duration, n.velocity)


# ---------------------------------------------------------------- reading


class _Reader:
    def __init__(self, data: bytes, pos: int = 0, end: int | None = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise MidiParseError("unexpected end of data", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def byte(self) -> int:
        return self.take(1)[0]

    def vlq(self) -> int:
        start = self.pos
        value = 0
        for _ in range(4):
            b = self.byte()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise MidiParseError("variable-length quantity longer than 4 bytes", start)


_DATA_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _parse_track(r: _Reader, notes, tempos, track_no):
    """Parse one MTrk body; returns the absolute tick of its last event."""
    tick = 0
    status = None
    active = {}  # (channel, pitch) -> (onset, velocity)

    def close(key, at):
        onset, vel = active.pop(key)
        if at > onset:
            notes.append(RawNote(onset, at, key[1], vel))

    while r.pos < r.end:
        tick += r.vlq()
        ev_pos = r.pos
        b = r.byte()
        if b == 0xFF:
            status = None
            mtype = r.byte()
            length = r.vlq()
            payload = r.take(length)
            if mtype == 0x51:
                if length != 3:
                    raise MidiParseError("tempo event must have 3 data bytes", ev_pos)
                tempos.append((tick, track_no, int.from_bytes(payload, "big")))
            elif mtype == 0x58:
                if length < 2:
                    raise MidiParseError("time signature event too short", ev_pos)
                num, den = payload[0], 2 ** payload[1]
                if (num, den) != (4, 4):
                    raise UnsupportedMeterError(
                        f"time signature {num}/{den} at tick {tick}; only 4/4 is supported")
            elif mtype == 0x2F:
                break
            continue
        if b in (0xF0, 0xF7):
            status = None
            r.take(r.vlq())
            continue
        if b & 0x80:
            if b >= 0xF0:
                raise MidiParseError(f"unexpected system message 0x{b:02X}", ev_pos)
            status = b
            data = r.take(_DATA_LEN[b & 0xF0])
        else:
            if status is None:
                raise MidiParseError("data byte without running status", ev_pos)
            data = bytes([b]) + r.take(_DATA_LEN[status & 0xF0] - 1)
        kind, channel = status & 0xF0, status & 0x0F
        if kind not in (0x80, 0x90):
            continue
        pitch, vel = data[0] & 0x7F, data[1] & 0x7F
        key = (channel, pitch)
        if kind == 0x90 and vel > 0:
            if key in active:
                # re-strike of a sounding pitch ends the earlier note here
                close(key, tick)
            active[key] = (tick, vel)
        elif key in active:
            close(key, tick)
    for key in list(active):
        close(key, tick)
    return tick


def parse_midi(data: bytes) -> tuple[list[RawNote], TimeGrid]:
    """Parse a Type-0/1 standard MIDI file into raw notes and a time grid.

    The grid's tempo comes from the earliest tempo event (120 BPM if there is
    none); later tempo changes are ignored with a warning.
    """
    r = _Reader(bytes(data))
    if r.take(4) != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    hlen = struct.unpack(">I", r.take(4))[0]
    if hlen < 6:
        raise MidiParseError("header chunk shorter than 6 bytes", 4)
    fmt, ntrks, division = struct.unpack(">HHH", r.take(6))
    r.take(hlen - 6)
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported SMF format {fmt}", 8)
    if division & 0x8000 or division == 0:
        raise MidiParseError("SMPTE or zero time division is not supported", 12)

    notes: list[RawNote] = []
    tempos = []
    end_tick = 0
    track_no = 0
    while r.pos < len(r.data) and track_no < ntrks:
        chunk_pos = r.pos
        ctype = r.take(4)
        clen = struct.unpack(">I", r.take(4))[0]
        body_end = r.pos + clen
        if body_end > len(r.data):
            raise MidiParseError("chunk length runs past end of file", chunk_pos)
        if ctype == b"MTrk":
            tr = _Reader(r.data, r.pos, body_end)
            end_tick = max(end_tick, _parse_track(tr, notes, tempos, track_no))
            track_no += 1
        r.pos = body_end
    if track_no < ntrks:
        raise MidiParseError(f"expected {ntrks} tracks, found {track_no}", r.pos)
    if not notes:
        raise EmptyInputError("MIDI file contains no notes")

    tempos.sort(key=lambda t: (t[0], t[1]))
    us = tempos[0][2] if tempos else DEFAULT_TEMPO_US
    if any(t[2] != us for t in tempos[1:]):
        warnings.warn("tempo changes found; using the first tempo only", stacklevel=2)
    if us <= 0:
        raise MidiParseError("tempo of zero microseconds per beat", 0)

    tps = Fraction(division, 4)
    last = max(end_tick, max(n.offset_ticks for n in notes))
    num_bars = math.ceil(Fraction(last) / (tps * STEPS_PER_BAR))
    notes.sort(key=lambda n: (n.onset_ticks, n.pitch, n.offset_ticks))
    return notes, TimeGrid(tempo_bpm=60e6 / us, num_bars=num_bars, ticks_per_step=tps)


# ----------------------------------------------------------- quantization


def _round_half_down(x: Fraction) -> int:
    return math.ceil(x - Fraction(1, 2))


def quantize(notes, grid: TimeGrid) -> list[NoteEvent]:
    """Snap raw notes to the 16th-note grid.

    Onsets and durations round to the nearest step (exact halves go to the
    earlier step); durations are kept within 1..32 steps and pitches clamped
    into 21..108.
    """
    tps = grid.ticks_per_step
    out = []
    for n in notes:
        step = _round_half_down(Fraction(n.onset_ticks) / tps)
        dur = _round_half_down(Fraction(n.offset_ticks - n.onset_ticks) / tps)
        bar, pos = divmod(max(step, 0), STEPS_PER_BAR)
        out.append(NoteEvent(
            bar=bar,
            position=pos,
            pitch=min(max(n.pitch, MIN_PITCH), MAX_PITCH),
            duration=min(max(dur, 1), MAX_DURATION),
            velocity=n.velocity,
        ))
    out.sort(key=note_sort_key)
    return out


def to_raw(notes, grid: TimeGrid) -> list[RawNote]:
    """Grid notes back to tick-based raw notes (inverse of :func:`quantize`)."""
    tps = grid.ticks_per_step
    out = []
    for n in notes:
        on = n.onset * tps
        off = n.offset * tps
        if on.denominator != 1 or off.denominator != 1:
            raise ValueError("grid does not map steps to whole ticks")
        out.append(RawNote(int(on), int(off), n.pitch, n.velocity))
    return out


def split_bars(notes, grid: TimeGrid) -> list[list[NoteEvent]]:
    """Group notes by onset bar. Every bar up to ``grid.num_bars`` is present."""
    num = max([grid.num_bars] + [n.bar + 1 for n in notes])
    bars = [[] for _ in range(num)]
    for n in notes:
        bars[n.bar].append(n)
    return bars


# ---------------------------------------------------------------- writing


def _vlq(value: int) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _track(events) -> bytes:
    """``events`` is a list of (tick, raw_bytes) already in order."""
    body = bytearray()
    last = 0
    for tick, raw in events:
        body += _vlq(tick - last) + raw
        last = tick
    return b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def write_midi(notes, grid: TimeGrid) -> bytes:
    """Serialize grid notes as a Type-1 SMF at 480 PPQ.

    Track 0 holds the 4/4 meter and the constant tempo, track 1 the notes on
    channel 0. Both tracks end at the later of the grid's last bar line and
    the last note-off, so re-parsing recovers ``num_bars``.

    MIDI cannot carry a note-on with velocity 0, so such notes are written
    with velocity 1.
    """
    tps = WRITE_PPQ // 4
    end_step = grid.num_bars * STEPS_PER_BAR
    if notes:
        end_step = max(end_step, max(n.offset for n in notes))
    end_tick = end_step * tps

    us = max(1, min(round(60e6 / grid.tempo_bpm), 0xFFFFFF))
    meta = [
        (0, b"\xFF\x58\x04\x04\x02\x18\x08"),
        (0, b"\xFF\x51\x03" + us.to_bytes(3, "big")),
        (end_tick, b"\xFF\x2F\x00"),
    ]
    evs = []
    for n in notes:
        evs.append((n.onset * tps, 1, n.pitch, bytes([0x90, n.pitch, max(n.velocity, 1)])))
        evs.append((n.offset * tps, 0, n.pitch, bytes([0x80, n.pitch, 0])))
    # note-offs before note-ons at the same tick so repeated pitches re-pair correctly
    evs.sort(key=lambda e: e[:3])
    note_track = [(t, raw) for t, _, _, raw in evs] + [(end_tick, b"\xFF\x2F\x00")]

    header = b"MThd" + struct.pack(">IHHH", 6, 1, 2, WRITE_PPQ)
    return header + _track(meta) + _track(note_track)
