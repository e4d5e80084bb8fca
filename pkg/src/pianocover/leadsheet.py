"""Lead sheets: a monophonic melody plus two chord labels per bar.

:func:`derive_leadsheet` builds one from a quantized piano performance
(skyline melody + template-matched chords); :func:`load_leadsheet` ingests
the JSON produced by an external audio transcriber.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace

import jsonschema

from .errors import SchemaError
from .midi_core import MAX_PITCH, MIN_PITCH, STEPS_PER_BAR, NoteEvent, TimeGrid

PITCH_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
_FLATS = {"Db": 1, "Eb": 3, "Gb": 6, "Ab": 8, "Bb": 10, "Cb": 11, "Fb": 4, "E#": 5, "B#": 0}
ROOT_BY_NAME = {**{n: i for i, n in enumerate(PITCH_NAMES)}, **_FLATS}

QUALITIES = ("maj", "min", "dim", "aug", "sus2", "sus4", "dom7", "maj7", "min7")
TEMPLATES = {
    "maj": (0, 4, 7),
    "min": (0, 3, 7),
    "dim": (0, 3, 6),
    "aug": (0, 4, 8),
    "sus2": (0, 2, 7),
    "sus4": (0, 5, 7),
    "dom7": (0, 4, 7, 10),
    "maj7": (0, 4, 7, 11),
    "min7": (0, 3, 7, 10),
}
# score = on-template mass - 0.3 * off-template mass, kept in integer tenths
_ON_WEIGHT, _OFF_WEIGHT = 10, 3
HALF_BAR = STEPS_PER_BAR // 2
DEFAULT_MELODY_VELOCITY = 64


@dataclass(frozen=True)
class ChordLabel:
    root: int | None = None
    quality: str | None = None

    def __post_init__(self):
        if (self.root is None) != (self.quality is None):
            raise ValueError("root and quality must both be set or both be None")
        if self.root is not None and not 0 <= self.root < 12:
            raise ValueError(f"chord root out of range: {self.root}")
        if self.quality is not None and self.quality not in TEMPLATES:
            raise ValueError(f"unknown chord quality: {self.quality}")

    @property
    def is_none(self) -> bool:
        return self.root is None

    def __str__(self):
        return "N" if self.is_none else f"{PITCH_NAMES[self.root]}:{self.quality}"

    @classmethod
    def parse(cls, text: str) -> "ChordLabel":
        if text == "N":
            return NO_CHORD
        name, quality = text.split(":")
        return cls(ROOT_BY_NAME[name], quality)


NO_CHORD = ChordLabel()
ALL_CHORDS = (NO_CHORD,) + tuple(ChordLabel(r, q) for r in range(12) for q in QUALITIES)


def _check_monophonic(notes, where):
    for a, b in zip(notes, notes[1:]):
        if b.onset <= a.onset or a.offset > b.onset:
            raise ValueError(f"melody not monophonic {where}: {a} / {b}")


@dataclass(frozen=True)
class LeadSheetBar:
    melody: tuple = ()
    chords: tuple = (NO_CHORD, NO_CHORD)

    def __post_init__(self):
        object.__setattr__(self, "melody", tuple(self.melody))
        object.__setattr__(self, "chords", tuple(self.chords))
        if len(self.chords) != 2:
            raise ValueError("a lead-sheet bar carries exactly two chords")
        _check_monophonic(self.melody, "within bar")


@dataclass(frozen=True)
class LeadSheet:
    bars: tuple = ()
    tempo_bpm: float = 120.0

    def __post_init__(self):
        object.__setattr__(self, "bars", tuple(self.bars))
        for k, b in enumerate(self.bars):
            if any(n.bar != k for n in b.melody):
                raise ValueError(f"melody note in bar {k} carries a different bar index")
        _check_monophonic([n for b in self.bars for n in b.melody], "across bars")

    @property
    def melody(self) -> list[NoteEvent]:
        return [n for b in self.bars for n in b.melody]


def make_monophonic(notes) -> list[NoteEvent]:
    """Keep the highest note per onset and cut each note at the next onset."""
    best = {}
    for n in notes:
        cur = best.get(n.onset)
        if cur is None or (n.pitch, n.duration, n.velocity) > (cur.pitch, cur.duration, cur.velocity):
            best[n.onset] = n
    line = [best[t] for t in sorted(best)]
    out = []
    for a, b in zip(line, line[1:] + [None]):
        if b is not None and a.offset > b.onset:
            a = replace(a, duration=b.onset - a.onset)
        out.append(a)
    return out


def skyline_melody(bars) -> list[list[NoteEvent]]:
    """Skyline melody: the highest note at each onset, truncated at the next one.

    Selection looks at onsets only, so a long high note does not hide a lower
    note that starts while it is held; the held note is cut instead.
    """
    line = make_monophonic([n for bar in bars for n in bar])
    out = [[] for _ in bars]
    for n in line:
        out[n.bar].append(n)
    return out


def _half_bar_histograms(bars):
    n_half = 2 * len(bars)
    hist = [[0] * 12 for _ in range(n_half)]
    lowest = [None] * n_half
    for bar in bars:
        for n in bar:
            first = n.onset // HALF_BAR
            last = min((n.offset - 1) // HALF_BAR, n_half - 1)
            for h in range(first, last + 1):
                lo, hi = h * HALF_BAR, (h + 1) * HALF_BAR
                mass = min(hi, n.offset) - max(lo, n.onset)
                if mass > 0:
                    hist[h][n.pitch % 12] += mass
                    if lowest[h] is None or n.pitch < lowest[h]:
                        lowest[h] = n.pitch
    return hist, lowest


def chord_scores(hist) -> dict[ChordLabel, int]:
    """Template scores in tenths: 10 * on-template mass - 3 * off-template mass."""
    total = sum(hist)
    scores = {}
    for root in range(12):
        for q in QUALITIES:
            on = sum(hist[(root + iv) % 12] for iv in TEMPLATES[q])
            scores[ChordLabel(root, q)] = _ON_WEIGHT * on - _OFF_WEIGHT * (total - on)
    return scores


def recognize_chords(bars) -> list[tuple[ChordLabel, ChordLabel]]:
    """Template-match one chord per half bar.

    Each half bar gets a duration-weighted pitch-class histogram of every note
    sounding in it, including notes held over from earlier. Ties go to the
    previous half bar's chord, then to a root equal to the lowest sounding
    note's pitch class, then to the smaller root, then to template order.
    """
    hist, lowest = _half_bar_histograms(bars)
    labels = []
    prev = NO_CHORD
    for h, lo in zip(hist, lowest):
        if sum(h) == 0:
            prev = NO_CHORD
            labels.append(prev)
            continue
        scores = chord_scores(h)
        top = max(scores.values())
        tied = [c for c, s in scores.items() if s == top]
        if prev in tied:
            pick = prev
        else:
            bass = [c for c in tied if c.root == lo % 12]
            pick = (bass or tied)[0]  # dict order is (root, template order)
        labels.append(pick)
        prev = pick
    return [(labels[2 * k], labels[2 * k + 1]) for k in range(len(bars))]


def derive_leadsheet(bars, grid: TimeGrid) -> LeadSheet:
    melody = skyline_melody(bars)
    chords = recognize_chords(bars)
    return LeadSheet(
        bars=[LeadSheetBar(m, c) for m, c in zip(melody, chords)],
        tempo_bpm=grid.tempo_bpm,
    )


# ------------------------------------------------------------------- JSON

_CHORD_SCHEMA = {
    "type": "object",
    "required": ["root", "quality"],
    "properties": {
        "root": {"enum": sorted(ROOT_BY_NAME) + [None]},
        "quality": {"type": ["string", "null"]},
    },
}
SCHEMA = {
    "type": "object",
    "required": ["tempo_bpm", "bars"],
    "properties": {
        "tempo_bpm": {"type": "number", "exclusiveMinimum": 0},
        "bars": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["melody", "chords"],
                "properties": {
                    "melody": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["position", "duration", "pitch"],
                            "properties": {
                                "position": {"type": "integer", "minimum": 0, "maximum": STEPS_PER_BAR - 1},
                                "duration": {"type": "integer", "minimum": 1, "maximum": 32},
                                "pitch": {"type": "integer", "minimum": MIN_PITCH, "maximum": MAX_PITCH},
                                "velocity": {"type": "integer", "minimum": 0, "maximum": 127},
                            },
                        },
                    },
                    "chords": {"type": "array", "minItems": 2, "maxItems": 2, "items": _CHORD_SCHEMA},
                },
            },
        },
    },
}


def _chord_from_json(obj, path) -> ChordLabel:
    root, quality = obj["root"], obj["quality"]
    if root is None and quality is None:
        return NO_CHORD
    if root is None or quality is None:
        raise SchemaError("root and quality must both be null or both be set", path)
    if quality not in TEMPLATES:
        warnings.warn(f"{path}: unknown chord quality {quality!r} mapped to no-chord", stacklevel=3)
        return NO_CHORD
    return ChordLabel(ROOT_BY_NAME[root], quality)


def load_leadsheet(data: bytes | str) -> LeadSheet:
    """Parse and validate lead-sheet JSON.

    Overlapping melody notes are cut to keep the line monophonic (highest
    note wins on a shared onset). Unknown chord qualities become no-chord.
    """
    try:
        obj = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"invalid JSON: {exc}", "$") from None
    try:
        jsonschema.validate(obj, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaError(exc.message, exc.json_path) from None

    notes = []
    chords = []
    for k, bar in enumerate(obj["bars"]):
        for m in bar["melody"]:
            notes.append(NoteEvent(k, m["position"], m["pitch"], m["duration"],
                                   m.get("velocity", DEFAULT_MELODY_VELOCITY)))
        chords.append(tuple(_chord_from_json(c, f"$.bars[{k}].chords[{i}]")
                            for i, c in enumerate(bar["chords"])))
    melody = [[] for _ in chords]
    for n in make_monophonic(notes):
        melody[n.bar].append(n)
    return LeadSheet([LeadSheetBar(m, c) for m, c in zip(melody, chords)], obj["tempo_bpm"])


def _chord_to_json(c: ChordLabel):
    return {"root": None if c.is_none else PITCH_NAMES[c.root], "quality": c.quality}


def leadsheet_to_json(ls: LeadSheet) -> dict:
    return {
        "tempo_bpm": ls.tempo_bpm,
        "bars": [
            {
                "melody": [{"position": n.position, "duration": n.duration,
                            "pitch": n.pitch, "velocity": n.velocity} for n in b.melody],
                "chords": [_chord_to_json(c) for c in b.chords],
            }
            for b in ls.bars
        ],
    }


def save_leadsheet(ls: LeadSheet) -> bytes:
    return json.dumps(leadsheet_to_json(ls), indent=1).encode("utf-8")
