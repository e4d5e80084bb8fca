"""Flat MIDI-like event tokens (velocity / note-on / time-shift / note-off).

Used as the ablation representation and as the baseline for token counts.
Time shifts use the same 16th-note grid as the compound-word codec.
"""
from __future__ import annotations

from collections import defaultdict, deque

from .midi_core import STEPS_PER_BAR, NoteEvent, note_sort_key

MAX_SHIFT = 32


def encode_midi_like(bars, grid=None) -> list[str]:
    """Flatten bars into an event stream such as ``["velocity_80", "note_on_60", ...]``.

    A velocity token is emitted only when the velocity changes. At equal
    times note-offs precede note-ons. ``grid`` is accepted for interface
    symmetry; tokens are grid-relative already.
    """
    events = []  # (time, order, pitch, token kind, value)
    for bar in bars:
        for n in sorted(bar, key=note_sort_key):
            events.append((n.onset, 1, n.pitch, n.duration, n.velocity))
            events.append((n.offset, 0, n.pitch, 0, 0))
    events.sort()
    out = []
    now = 0
    vel = None
    for t, is_on, pitch, _, v in events:
        gap = t - now
        while gap > 0:
            step = min(gap, MAX_SHIFT)
            out.append(f"time_shift_{step}")
            gap -= step
        now = t
        if is_on:
            if v != vel:
                out.append(f"velocity_{v}")
                vel = v
            out.append(f"note_on_{pitch}")
        else:
            out.append(f"note_off_{pitch}")
    return out


def decode_midi_like(tokens, num_bars: int | None = None) -> list[list[NoteEvent]]:
    """Inverse of :func:`encode_midi_like`.

    A note-off closes the oldest sounding note of its pitch. Unmatched
    note-offs are ignored and notes still open at the end are dropped.
    """
    now = 0
    vel = 64
    open_notes = defaultdict(deque)
    notes = []
    for tok in tokens:
        kind, _, value = tok.rpartition("_")
        value = int(value)
        if kind == "time_shift":
            now += value
        elif kind == "velocity":
            vel = value
        elif kind == "note_on":
            open_notes[value].append((now, vel))
        elif kind == "note_off":
            if open_notes[value]:
                onset, v = open_notes[value].popleft()
                if now > onset:
                    bar, pos = divmod(onset, STEPS_PER_BAR)
                    notes.append(NoteEvent(bar, pos, value, now - onset, v))
        else:
            raise ValueError(f"unknown MIDI-like token {tok!r}")
    notes.sort(key=note_sort_key)
    count = max([num_bars or 0] + [n.bar + 1 for n in notes])
    bars = [[] for _ in range(count)]
    for n in notes:
        bars[n.bar].append(n)
    return bars
