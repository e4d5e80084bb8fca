"""Compound-word token codec for interleaved lead-sheet / piano sequences.

Every sequence step is a :class:`SuperToken`, a fixed-width record of eight
fields (spec, bar, position, tempo, chord, pitch, duration, velocity) in which
fields that do not belong to the token's family hold ``None`` (IGNORE). In id
form IGNORE is id 0 of every field.

A piece with B bars becomes::

    BOS, BAR_SRC, <lead sheet bar 1>, BAR_TGT, <piano bar 1>, ..., BAR_TGT, <piano bar B>, EOS
"""
from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, fields

from .errors import DecodeError, PianoCoverError
from .leadsheet import ALL_CHORDS, NO_CHORD, ChordLabel, LeadSheet, LeadSheetBar, make_monophonic
from .midi_core import MAX_DURATION, MAX_PITCH, MAX_TEMPO, MIN_PITCH, MIN_TEMPO, STEPS_PER_BAR, NoteEvent, note_sort_key

SPEC, BAR, METRIC, NOTE = "SPEC", "BAR", "METRIC", "NOTE"
BOS, EOS = "BOS", "EOS"
SRC, TGT = "SRC", "TGT"
FIELDS = ("spec", "bar", "position", "tempo", "chord", "pitch", "duration", "velocity")
FAMILIES = (SPEC, BAR, METRIC, NOTE)

_REQUIRED = {SPEC: {"spec"}, BAR: {"bar"}, METRIC: {"position"}, NOTE: {"pitch", "duration", "velocity"}}
_OPTIONAL = {SPEC: set(), BAR: set(), METRIC: {"tempo", "chord"}, NOTE: set()}

TEMPO_STEP = 4
NUM_TEMPO_BINS = int((MAX_TEMPO - MIN_TEMPO) // TEMPO_STEP) + 1  # 54


def tempo_to_bin(bpm: float) -> int:
    """Clamp to 32..244 BPM and round to the nearest multiple of 4 (halves round down)."""
    bpm = min(max(float(bpm), MIN_TEMPO), MAX_TEMPO)
    return math.ceil((bpm - MIN_TEMPO) / TEMPO_STEP - 0.5)


def bin_to_tempo(index: int) -> float:
    return MIN_TEMPO + TEMPO_STEP * index


@dataclass(frozen=True)
class SuperToken:
    family: str
    spec: str | None = None
    bar: str | None = None
    position: int | None = None
    tempo: int | None = None
    chord: ChordLabel | None = None
    pitch: int | None = None
    duration: int | None = None
    velocity: int | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        present = {f for f in FIELDS if getattr(self, f) is not None}
        missing = _REQUIRED[self.family] - present
        extra = present - _REQUIRED[self.family] - _OPTIONAL[self.family]
        if missing or extra:
            raise ValueError(f"{self.family} token with fields {sorted(present)}")

    def __repr__(self):
        vals = [f"{f}={getattr(self, f)}" for f in FIELDS if getattr(self, f) is not None]
        return f"{self.family}({', '.join(vals)})"


BOS_TOKEN = SuperToken(SPEC, spec=BOS)
EOS_TOKEN = SuperToken(SPEC, spec=EOS)
BAR_SRC = SuperToken(BAR, bar=SRC)
BAR_TGT = SuperToken(BAR, bar=TGT)


def metric(position, tempo=None, chord=None) -> SuperToken:
    return SuperToken(METRIC, position=position, tempo=tempo, chord=chord)


def note(pitch, duration, velocity) -> SuperToken:
    return SuperToken(NOTE, pitch=pitch, duration=duration, velocity=velocity)


class Vocab:
    """Per-field value <-> id tables. Id 0 of every field is IGNORE."""

    FORMAT = "pianocover-vocab/1"

    def __init__(self):
        self.values = {
            "spec": [BOS, EOS],
            "bar": [SRC, TGT],
            "position": list(range(STEPS_PER_BAR)),
            "tempo": list(range(NUM_TEMPO_BINS)),
            "chord": list(ALL_CHORDS),
            "pitch": list(range(MIN_PITCH, MAX_PITCH + 1)),
            "duration": list(range(1, MAX_DURATION + 1)),
            "velocity": list(range(128)),
        }
        self._ids = {f: {v: i + 1 for i, v in enumerate(vals)} for f, vals in self.values.items()}

    @property
    def sizes(self) -> tuple[int, ...]:
        """Table size per field, IGNORE included."""
        return tuple(len(self.values[f]) + 1 for f in FIELDS)

    def encode(self, tok: SuperToken) -> tuple[int, ...]:
        out = []
        for f in FIELDS:
            v = getattr(tok, f)
            out.append(0 if v is None else self._ids[f][v])
        return tuple(out)

    def decode(self, ids) -> SuperToken:
        """Id record back to a token. Raises ValueError on bad ids or field sets."""
        if len(ids) != len(FIELDS):
            raise ValueError(f"expected {len(FIELDS)} ids, got {len(ids)}")
        vals = {}
        for f, i in zip(FIELDS, ids):
            i = int(i)
            if not 0 <= i <= len(self.values[f]):
                raise ValueError(f"{f} id {i} out of range")
            vals[f] = None if i == 0 else self.values[f][i - 1]
        return SuperToken(family_of(vals), **vals)

    def to_json(self) -> str:
        tables = {f: [str(v) if f == "chord" else v for v in vals] for f, vals in self.values.items()}
        return json.dumps({"format": self.FORMAT, "ignore_id": 0, "fields": list(FIELDS),
                           "values": tables}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        obj = json.loads(text)
        if obj.get("format") != cls.FORMAT:
            raise PianoCoverError(f"unsupported vocab format {obj.get('format')!r}")
        vocab = cls()
        stored = {f: [ChordLabel.parse(v) if f == "chord" else v for v in vals]
                  for f, vals in obj["values"].items()}
        if stored != vocab.values:
            raise PianoCoverError("vocab file does not match this toolkit's vocabulary")
        return vocab

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.values == other.values


def family_of(vals: dict) -> str:
    """Infer the family from which fields are set; ValueError if none fits."""
    for fam in (SPEC, BAR, METRIC, NOTE):
        if vals.get(next(iter(_REQUIRED[fam]))) is not None:
            return fam
    raise ValueError("record has no family-defining field set")


VOCAB = Vocab()


@dataclass(frozen=True)
class InterleavedSequence:
    tokens: tuple
    bar_index: tuple
    side: tuple

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, tuple(getattr(self, f.name)))
        if not len(self.tokens) == len(self.bar_index) == len(self.side):
            raise ValueError("parallel arrays differ in length")

    def __len__(self):
        return len(self.tokens)

    def ids(self, vocab: Vocab = VOCAB) -> list[tuple[int, ...]]:
        return [vocab.encode(t) for t in self.tokens]

    @classmethod
    def from_tokens(cls, tokens) -> "InterleavedSequence":
        """Rebuild the bar/side annotations by walking BAR tokens."""
        bar_index, side = [], []
        k, s = 0, SRC
        started = False
        for t in tokens:
            if t.family == BAR:
                if t.bar == SRC:
                    k += started
                    started = True
                s = t.bar
            bar_index.append(k)
            side.append(s)
        return cls(tuple(tokens), bar_index, side)

    @classmethod
    def from_ids(cls, ids, vocab: Vocab = VOCAB) -> "InterleavedSequence":
        return cls.from_tokens([vocab.decode(r) for r in ids])


# --------------------------------------------------------------- encoders


def encode_piano_bar(bar, tempo_bin: int | None = None) -> list[SuperToken]:
    """One METRIC per occupied position, then its notes by ascending pitch.

    ``tempo_bin`` (if given) rides on the bar's first METRIC token.
    """
    out = []
    last_pos = None
    for n in sorted(bar, key=note_sort_key):
        if n.position != last_pos:
            out.append(metric(n.position, tempo=tempo_bin))
            tempo_bin = None
            last_pos = n.position
        out.append(note(n.pitch, n.duration, n.velocity))
    return out


def encode_leadsheet_bar(bar: LeadSheetBar, tempo_bin: int | None = None) -> list[SuperToken]:
    """Chord anchors at positions 0 and 8 plus one METRIC per melody onset."""
    by_pos = {n.position: n for n in bar.melody}
    out = []
    for p in sorted(set(by_pos) | {0, STEPS_PER_BAR // 2}):
        if p == 0:
            out.append(metric(0, tempo=tempo_bin, chord=bar.chords[0]))
        elif p == STEPS_PER_BAR // 2:
            out.append(metric(p, chord=bar.chords[1]))
        else:
            out.append(metric(p))
        if p in by_pos:
            n = by_pos[p]
            out.append(note(n.pitch, n.duration, n.velocity))
    return out


def build_interleaved(leadsheet: LeadSheet, piano=None, grid=None) -> InterleavedSequence:
    """Bar-wise mix of lead sheet and piano bars.

    Both sides are padded with empty bars to ``grid.num_bars`` (or to the
    longer side without a grid). A side longer than the grid is an error
    unless the surplus bars are empty. With ``piano=None`` the sequence stops
    right after the first BAR_TGT, which is the generation prompt.
    """
    ls_bars = list(leadsheet.bars)
    pn_bars = None if piano is None else [list(b) for b in piano]
    if grid is not None:
        target = grid.num_bars
    else:
        target = max(len(ls_bars), len(pn_bars or []))
    for name, side in (("lead sheet", ls_bars), ("piano", pn_bars)):
        if side is None:
            continue
        surplus = side[target:]
        if any((b.melody if isinstance(b, LeadSheetBar) else b) for b in surplus):
            raise PianoCoverError(f"{name} has {len(side)} bars but the grid holds {target}")
        del side[target:]
    ls_bars += [LeadSheetBar()] * (target - len(ls_bars))
    if pn_bars is not None:
        pn_bars += [[] for _ in range(target - len(pn_bars))]

    tokens, bar_index, sides = [BOS_TOKEN], [0], [SRC]

    def push(toks, k, s):
        tokens.extend(toks)
        bar_index.extend([k] * len(toks))
        sides.extend([s] * len(toks))

    tempo_bin = tempo_to_bin(leadsheet.tempo_bpm)
    for k, lbar in enumerate(ls_bars):
        push([BAR_SRC] + encode_leadsheet_bar(lbar, tempo_bin if k == 0 else None), k, SRC)
        push([BAR_TGT], k, TGT)
        if pn_bars is None:
            break
        push(encode_piano_bar(pn_bars[k]), k, TGT)
    if pn_bars is not None:
        push([EOS_TOKEN], max(target - 1, 0), TGT)
    return InterleavedSequence(tokens, bar_index, sides)


# ----------------------------------------------------------------- decoder


def decode(seq, *, strict: bool = True, skipped: Counter | None = None):
    """Invert :func:`build_interleaved`; returns ``(LeadSheet, piano_bars)``.

    Accepts a full sequence, a window starting at a BAR_SRC, or a sampled
    prefix. Without EOS, every bar whose BAR_TGT was reached is kept. In
    strict mode the first structural fault raises :class:`DecodeError`;
    otherwise faulty tokens are skipped and tallied by reason in ``skipped``.
    """
    tokens = seq.tokens if isinstance(seq, InterleavedSequence) else list(seq)
    skipped = Counter() if skipped is None else skipped
    bars = []  # [melody notes, chords, piano notes, tgt_reached]
    side = None
    pos = None
    tempo = None

    def fault(i, reason):
        if strict:
            raise DecodeError(reason, i)
        skipped[reason] += 1

    for i, t in enumerate(tokens):
        if t.family == SPEC:
            if t.spec == BOS and i == 0:
                continue
            if t.spec == EOS:
                if i != len(tokens) - 1:
                    fault(i + 1, "tokens after EOS")
                break
            fault(i, "BOS not at start")
        elif t.family == BAR:
            if t.bar == SRC:
                if side == SRC:
                    fault(i, "BAR_SRC inside a lead-sheet section")
                    continue
                bars.append([[], [NO_CHORD, NO_CHORD], [], False])
                side, pos = SRC, None
            else:
                if side != SRC:
                    fault(i, "BAR_TGT without a preceding lead-sheet section")
                    continue
                bars[-1][3] = True
                side, pos = TGT, None
        elif side is None:
            fault(i, "content before the first BAR token")
        elif t.family == METRIC:
            pos = t.position
            if t.tempo is not None and tempo is None:
                tempo = t.tempo
            if t.chord is not None:
                if side != SRC or pos % (STEPS_PER_BAR // 2):
                    fault(i, "chord outside a lead-sheet anchor")
                    continue
                bars[-1][1][pos // (STEPS_PER_BAR // 2)] = t.chord
        else:  # NOTE
            if pos is None:
                fault(i, "NOTE before any METRIC in its section")
                continue
            k = len(bars) - 1
            n = NoteEvent(k, pos, t.pitch, t.duration, t.velocity)
            bars[-1][0 if side == SRC else 2].append(n)

    bars = [b for b in bars if b[3]]
    ls_bars = []
    for k, (mel, chords, _, _) in enumerate(bars):
        mel = [n if n.bar == k else NoteEvent(k, n.position, n.pitch, n.duration, n.velocity) for n in mel]
        ls_bars.append((mel, chords))
    melody = [n for mel, _ in ls_bars for n in mel]
    mono = make_monophonic(melody)
    if len(mono) != len(melody) or any(a != b for a, b in zip(mono, melody)):
        if strict:
            raise DecodeError("lead-sheet melody is not monophonic", len(tokens) - 1)
        skipped["melody overlap repaired"] += 1
    per_bar = [[] for _ in ls_bars]
    for n in mono:
        per_bar[n.bar].append(n)
    leadsheet = LeadSheet(
        [LeadSheetBar(m, c) for m, (_, c) in zip(per_bar, ls_bars)],
        bin_to_tempo(tempo) if tempo is not None else 120.0,
    )
    piano = [sorted(b[2], key=note_sort_key) for b in bars]
    if skipped and not strict:
        warnings.warn(f"decode skipped tokens: {dict(skipped)}", stacklevel=2)
    return leadsheet, piano


# ---------------------------------------------------------------- windows


def window(seq: InterleavedSequence, max_len: int = 1024, stride_bars: int = 1) -> list[InterleavedSequence]:
    """Cut a sequence into training windows of whole bar pairs.

    Windows start at BAR_SRC tokens every ``stride_bars`` bars and take as
    many whole bar pairs as fit in ``max_len``. BOS belongs to the first bar
    pair and EOS to the last. Slicing stops once a window reaches the end of
    the sequence. A bar pair longer than ``max_len`` is dropped with a warning.
    """
    if stride_bars < 1:
        raise ValueError("stride_bars must be >= 1")
    starts = [i for i, t in enumerate(seq.tokens) if t == BAR_SRC]
    if not starts:
        return []
    bounds = [0] + starts[1:] + [len(seq.tokens)]
    spans = list(zip(bounds, bounds[1:]))
    too_long = {j for j, (a, b) in enumerate(spans) if b - a > max_len}
    for j in sorted(too_long):
        warnings.warn(f"bar pair {j} has {spans[j][1] - spans[j][0]} tokens > max_len {max_len}; dropped",
                      stacklevel=2)

    out = []
    s = 0
    while s < len(spans):
        if s in too_long:
            s += stride_bars
            continue
        e = s
        while e < len(spans) and e not in too_long and spans[e][1] - spans[s][0] <= max_len:
            e += 1
        a, b = spans[s][0], spans[e - 1][1]
        out.append(InterleavedSequence(seq.tokens[a:b], seq.bar_index[a:b], seq.side[a:b]))
        if e == len(spans):
            break
        s += stride_bars
    return out


# ------------------------------------------------------------ dataset file


def dump_windows(records) -> str:
    """JSON lines for ``(piece_id, InterleavedSequence)`` pairs."""
    lines = []
    for piece_id, w in records:
        lines.append(json.dumps({"piece_id": piece_id, "ids": [list(r) for r in w.ids()]},
                                separators=(",", ":")))
    return "".join(line + "\n" for line in lines)


def load_windows(text: str, vocab: Vocab = VOCAB) -> list[tuple[str, list[tuple[int, ...]]]]:
    """Parse a token dataset; errors name the offending 1-based line."""
    out = []
    sizes = vocab.sizes
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            ids = [tuple(int(x) for x in rec) for rec in obj["ids"]]
            if not isinstance(obj["piece_id"], str):
                raise ValueError("piece_id must be a string")
            for rec in ids:
                if len(rec) != len(FIELDS) or any(not 0 <= x < n for x, n in zip(rec, sizes)):
                    raise ValueError(f"bad id record {list(rec)}")
        except (ValueError, KeyError, TypeError) as exc:
            raise PianoCoverError(f"line {lineno}: {exc}") from None
        out.append((obj["piece_id"], ids))
    return out
