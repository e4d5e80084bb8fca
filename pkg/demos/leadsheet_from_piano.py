"""
Deriving a lead sheet from a piano part
=======================================

The melody is the skyline (highest onset, cut at the next onset) and each
half bar gets the best-matching chord template.
"""
from pianocover.leadsheet import derive_leadsheet, load_leadsheet, save_leadsheet
from pianocover.midi_core import split_bars
from pianocover.synthetic import synthetic_piece

notes, grid = synthetic_piece(num_bars=4, seed=0)
bars = split_bars(notes, grid)
sheet = derive_leadsheet(bars, grid)

for k, bar in enumerate(sheet.bars):
    chords = " | ".join(str(c) for c in bar.chords)
    melody = " ".join(f"{n.pitch}@{n.position}" for n in bar.melody)
    print(f"bar {k}: [{chords}]  {melody}")

# lead sheets are exchanged as JSON
text = save_leadsheet(sheet)
print(len(text), "bytes of lead-sheet JSON")
assert load_leadsheet(text) == sheet
