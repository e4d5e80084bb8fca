"""Symbolic core of a two-stage lead-sheet-to-piano-cover pipeline."""
from .errors import (
    DecodeError, EmptyInputError, MidiParseError, NumericError, PianoCoverError,
    SchemaError, UndefinedMetricError, UnsupportedMeterError,
)
from .leadsheet import (
    ChordLabel, LeadSheet, LeadSheetBar, derive_leadsheet, load_leadsheet,
    recognize_chords, save_leadsheet, skyline_melody,
)
from .metrics import F0Contour, McaReport, mca, read_f0_csv, top_line
from .midi_core import NoteEvent, RawNote, TimeGrid, parse_midi, quantize, split_bars, write_midi
from .tokenizer import (
    VOCAB, InterleavedSequence, SuperToken, Vocab, bin_to_tempo, build_interleaved, decode,
    encode_leadsheet_bar, encode_piano_bar, tempo_to_bin, window,
)
from .midilike import decode_midi_like, encode_midi_like

__version__ = "0.1.0"
