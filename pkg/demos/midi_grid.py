"""
Reading MIDI onto the sixteenth-note grid
=========================================

Write a small piece, parse it back, and look at the quantized notes.
"""
from pianocover.midi_core import parse_midi, quantize, split_bars, write_midi
from pianocover.synthetic import synthetic_piece

notes, grid = synthetic_piece(num_bars=2, seed=3, tempo_bpm=96)
data = write_midi(notes, grid)
print(len(data), "bytes of Standard MIDI")

raw, parsed_grid = parse_midi(data)
print("tempo", round(parsed_grid.tempo_bpm, 3), "ppq", parsed_grid.ppq, "bars", parsed_grid.num_bars)

# raw notes live in ticks; quantize snaps them to 16 steps per bar
back = quantize(raw, parsed_grid)
print("identical after the round trip:", back == notes)

for k, bar in enumerate(split_bars(back, parsed_grid)):
    print(f"bar {k}:", [(n.position, n.pitch, n.duration) for n in bar[:6]], "...")
