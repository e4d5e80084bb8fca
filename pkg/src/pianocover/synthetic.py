"""Small rule-based piano pieces for demos, smoke tests and overfitting checks."""
from __future__ import annotations

import random

from .midi_core import NoteEvent, TimeGrid, note_sort_key

# (root pitch class, chord tones as semitones above the root)
PROGRESSION = [(0, (0, 4, 7)), (7, (0, 4, 7)), (9, (0, 3, 7)), (5, (0, 4, 7))]


def synthetic_piece(num_bars: int = 8, seed: int = 0, tempo_bpm: float = 120.0):
    """A pop-style piece: half-bar block chords in the left hand, a chord-tone
    melody in the right. Returns ``(notes, grid)`` with notes in grid order."""
    rng = random.Random(seed)
    start = rng.randrange(len(PROGRESSION))
    notes = []
    for bar in range(num_bars):
        for half in range(2):
            root, tones = PROGRESSION[(start + 2 * bar + half) % len(PROGRESSION)]
            pos = 8 * half
            for iv in tones:
                notes.append(NoteEvent(bar, pos, 48 + (root + iv) % 12, 8, 60))
            for p in sorted(rng.sample(range(pos, pos + 8, 2), rng.randint(1, 3))):
                pitch = 72 + (root + rng.choice(tones)) % 12
                notes.append(NoteEvent(bar, p, pitch, 2, 90))
    notes.sort(key=note_sort_key)
    return notes, TimeGrid(tempo_bpm=tempo_bpm, num_bars=num_bars)
