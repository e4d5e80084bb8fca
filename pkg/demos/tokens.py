"""
Compound-word tokens versus MIDI-like tokens
============================================

One super token carries a whole note, so chords cost far fewer steps than
in an event stream with separate note-on, note-off and time-shift tokens.
"""
from pianocover.leadsheet import derive_leadsheet
from pianocover.midi_core import split_bars
from pianocover.midilike import encode_midi_like
from pianocover.synthetic import synthetic_piece
from pianocover.tokenizer import build_interleaved, decode, encode_piano_bar, window

notes, grid = synthetic_piece(num_bars=8, seed=2)
bars = split_bars(notes, grid)

cp = sum(len(encode_piano_bar(b)) for b in bars)
ml = len(encode_midi_like(bars, grid))
print(f"{len(notes)} notes -> {cp} super tokens, {ml} MIDI-like tokens")

# training sequences interleave lead sheet and piano bar by bar
seq = build_interleaved(derive_leadsheet(bars, grid), bars, grid)
for tok in seq.tokens[:12]:
    print(" ", tok)
print("  ...", len(seq), "records in all")

sheet, piano = decode(seq)
print("decodes back exactly:", piano == bars)

wins = window(seq, max_len=120)
print(len(wins), "windows of at most 120 records")
