"""
Melody chroma accuracy
======================

Compare the top line of a piano part against a sung f0 contour. Octave
errors are forgiven, so a melody played an octave up still scores 1.
"""
import numpy as np

from pianocover.metrics import F0Contour, mca, top_line
from pianocover.midi_core import NoteEvent, TimeGrid

grid = TimeGrid(120, 2)
melody = [NoteEvent(0, 4 * i, p, 4, 90) for i, p in enumerate((60, 62, 64, 65))]
ref = F0Contour.from_semitones(top_line(melody, grid))
print(ref.frames[::50].round(1), "Hz every half second")

accompaniment = [NoteEvent(0, 0, 48, 16, 60)]
for name, piano in [("same melody", melody),
                    ("octave up", [NoteEvent(n.bar, n.position, n.pitch + 12, 4, 90) for n in melody]),
                    ("a semitone off", [NoteEvent(n.bar, n.position, n.pitch + 1, 4, 90) for n in melody])]:
    est = top_line(piano + accompaniment, grid, num_frames=len(ref.frames))
    print(f"{name:15s}", mca(est, ref).to_json())

# frames where the singer is silent are not scored
ref.frames[np.arange(len(ref.frames)) % 2 == 0] = 0.0
print("half unvoiced  ", mca(top_line(melody, grid), ref).to_json())
