"""Random generators and brute-force oracles shared by the tests.

The oracles are deliberately written without reusing library code paths.
"""
import random
import struct
from fractions import Fraction

from pianocover.leadsheet import ALL_CHORDS, LeadSheet, LeadSheetBar, TEMPLATES
from pianocover.midi_core import NoteEvent, note_sort_key
from pianocover.tokenizer import bin_to_tempo


def random_notes(rng, num_bars, max_notes=12, pitch_range=(21, 108), min_velocity=1,
                 per_pitch_disjoint=True):
    """Random grid notes in canonical order.

    With ``per_pitch_disjoint`` no two notes of one pitch overlap in time,
    which is the domain where MIDI and MIDI-like round trips are exact.
    """
    notes = []
    for bar in range(num_bars):
        for _ in range(rng.randint(0, max_notes)):
            notes.append(NoteEvent(bar, rng.randrange(16), rng.randint(*pitch_range),
                                   rng.randint(1, 32), rng.randint(min_velocity, 127)))
    notes.sort(key=note_sort_key)
    if per_pitch_disjoint:
        last_off = {}
        kept = []
        for n in notes:
            if last_off.get(n.pitch, -1) <= n.onset:
                kept.append(n)
                last_off[n.pitch] = n.offset
        notes = kept
    return notes


def random_bars(rng, num_bars, **kw):
    notes = random_notes(rng, num_bars, **kw)
    bars = [[] for _ in range(num_bars)]
    for n in notes:
        bars[n.bar].append(n)
    return bars


def random_leadsheet(rng, num_bars):
    bars = []
    for k in range(num_bars):
        positions = sorted(rng.sample(range(16), rng.randint(0, 6)))
        melody = []
        for i, p in enumerate(positions):
            room = (positions[i + 1] - p) if i + 1 < len(positions) else 32
            melody.append(NoteEvent(k, p, rng.randint(21, 108), rng.randint(1, min(room, 32)),
                                    rng.randint(0, 127)))
        bars.append(LeadSheetBar(melody, (rng.choice(ALL_CHORDS), rng.choice(ALL_CHORDS))))
    # melody of bar k may ring into bar k+1; cut it at the next onset
    flat = [n for b in bars for n in b.melody]
    fixed = {}
    for a, b in zip(flat, flat[1:]):
        if a.offset > b.onset:
            fixed[a] = NoteEvent(a.bar, a.position, a.pitch, b.onset - a.onset, a.velocity)
    bars = [LeadSheetBar([fixed.get(n, n) for n in b.melody], b.chords) for b in bars]
    return LeadSheet(bars, bin_to_tempo(rng.randrange(54)))


# ------------------------------------------------------------------ oracles


def skyline_oracle(bars):
    """Per position keep the max-pitch onset, then truncate left to right."""
    picked = []
    for bar in bars:
        for pos in range(16):
            here = [n for n in bar if n.position == pos]
            if here:
                top = max(n.pitch for n in here)
                cands = [n for n in here if n.pitch == top]
                picked.append(max(cands, key=lambda n: (n.duration, n.velocity)))
    out = [[] for _ in bars]
    for i, n in enumerate(picked):
        if i + 1 < len(picked):
            nxt = picked[i + 1]
            start_n = n.bar * 16 + n.position
            start_next = nxt.bar * 16 + nxt.position
            if start_n + n.duration > start_next:
                n = NoteEvent(n.bar, n.position, n.pitch, start_next - start_n, n.velocity)
        out[n.bar].append(n)
    return out


def half_bar_histogram_oracle(bars, half_index):
    """Pitch-class mass by scanning every step of the half bar."""
    hist = [0] * 12
    for step in range(half_index * 8, half_index * 8 + 8):
        for bar in bars:
            for n in bar:
                start = n.bar * 16 + n.position
                if start <= step < start + n.duration:
                    hist[n.pitch % 12] += 1
    return hist


def chord_scores_oracle(hist):
    """All 108 template scores as floats, keyed by (root, quality)."""
    total = sum(hist)
    out = {}
    for root in range(12):
        for quality, ivs in TEMPLATES.items():
            pcs = {(root + iv) % 12 for iv in ivs}
            on = sum(hist[pc] for pc in pcs)
            out[(root, quality)] = on - 0.3 * (total - on)
    return out


def top_line_oracle(notes, tempo_bpm, hop, num_frames):
    """Exact per-frame scan using rational arithmetic."""
    step_s = Fraction(60) / Fraction(tempo_bpm) / 4
    hop = Fraction(str(hop))
    out = []
    for i in range(num_frames):
        t = i * hop
        sounding = [n.pitch for n in notes if n.onset * step_s <= t < n.offset * step_s]
        out.append(max(sounding) if sounding else None)
    return out


# -------------------------------------------------------------- MIDI bytes


def vlq(v):
    out = [v & 0x7F]
    v >>= 7
    while v:
        out.append(0x80 | (v & 0x7F))
        v >>= 7
    return bytes(reversed(out))


def smf(tracks, ppq=480, fmt=1):
    """Assemble an SMF from tracks given as [(delta, event_bytes), ...]."""
    out = b"MThd" + struct.pack(">IHHH", 6, fmt, len(tracks), ppq)
    for events in tracks:
        body = b"".join(vlq(d) + e for d, e in events) + b"\x00\xFF\x2F\x00"
        out += b"MTrk" + struct.pack(">I", len(body)) + body
    return out


def tempo_event(bpm):
    return b"\xFF\x51\x03" + round(60e6 / bpm).to_bytes(3, "big")


def rng_for(seed):
    return random.Random(seed)
