"""Command-line entry point: ``pianocover <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Logs go to stderr; results go to files or stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import midi_core, performer
from .config import PipelineConfig, load_config
from .errors import NumericError, PianoCoverError
from .leadsheet import derive_leadsheet, load_leadsheet
from .metrics import mca, read_f0_csv, top_line
from .midilike import decode_midi_like, encode_midi_like
from .tokenizer import (
    BAR_SRC, VOCAB, InterleavedSequence, build_interleaved, decode, dump_windows,
    load_windows, window,
)

log = logging.getLogger("pianocover")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _need(path, kind="file"):
    p = Path(path)
    ok = p.is_dir() if kind == "dir" else p.exists()
    if not ok:
        raise UsageError(f"{kind} not found: {path}")
    return p


def _load_cfg(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    cfg = load_config(_need(path).read_text())
    cfg.check_paths()
    return cfg


def _piece(path: Path):
    raw, grid = midi_core.parse_midi(path.read_bytes())
    notes = midi_core.quantize(raw, grid)
    return notes, grid


# ---------------------------------------------------------- build-dataset


def _tokenize_file(args):
    path, stride, max_len = args
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            notes, grid = _piece(path)
            bars = midi_core.split_bars(notes, grid)
            seq = build_interleaved(derive_leadsheet(bars, grid), bars, grid)
            wins = window(seq, max_len=max_len, stride_bars=stride)
        return path.name, wins, None
    except (PianoCoverError, ValueError) as exc:
        return path.name, None, str(exc)


def cmd_build_dataset(ns) -> int:
    cfg = _load_cfg(ns.config)
    src = _need(ns.midi_dir, "dir")
    files = sorted(p for p in src.iterdir() if p.suffix.lower() in (".mid", ".midi"))
    if not files:
        raise UsageError(f"no .mid files in {src}")
    stride = ns.stride_bars or cfg.stride_bars
    jobs = ns.jobs or cfg.jobs
    work = [(p, stride, cfg.max_len) for p in files]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_tokenize_file, work))
    else:
        results = [_tokenize_file(w) for w in work]

    records, skipped = [], 0
    for name, wins, err in sorted(results, key=lambda r: r[0]):
        if err is not None:
            skipped += 1
            log.warning("skipping %s: %s", name, err)
            continue
        records += [(Path(name).stem, w) for w in wins]
    if not records:
        log.error("no usable MIDI files in %s", src)
        return EXIT_DATA
    out = Path(ns.out)
    out.write_text(dump_windows(records))
    out.with_suffix(".vocab.json").write_text(VOCAB.to_json())
    tokens = sum(len(w) for _, w in records)
    bars = sum(sum(t == BAR_SRC for t in w.tokens) for _, w in records)
    stats = {"files_ok": len(files) - skipped, "files_skipped": skipped, "windows": len(records),
             "super_tokens": tokens, "bars": bars, "mean_tokens_per_bar": tokens / bars}
    print(json.dumps(stats))
    return EXIT_OK


# ------------------------------------------------------------------ train


def cmd_train(ns) -> int:
    cfg = _load_cfg(ns.config)
    data = load_windows(_need(ns.dataset).read_text())
    if ns.steps is not None:
        cfg.steps = ns.steps
    if ns.seed is not None:
        cfg.seed = ns.seed
    state = performer.TrainState.create(cfg.model_config(), cfg.train_config())
    metrics_path = Path(ns.metrics or f"{ns.out}.metrics.csv")
    with metrics_path.open("w", newline="") as fh:
        rows = performer.train([ids for _, ids in data], state, metrics_file=fh)
    Path(ns.out).write_bytes(performer.save_checkpoint(state))
    print(json.dumps({"steps": len(rows), "final_loss": rows[-1]["loss"]}))
    return EXIT_OK


# --------------------------------------------------------------- generate


def cmd_generate(ns) -> int:
    cfg = _load_cfg(ns.config)
    leadsheet = load_leadsheet(_need(ns.leadsheet).read_bytes())
    state = performer.load_checkpoint(_need(ns.checkpoint).read_bytes())
    result = performer.generate_sequence(
        leadsheet, state.model,
        temperature=cfg.temperature if ns.temperature is None else ns.temperature,
        top_p=cfg.top_p if ns.top_p is None else ns.top_p,
        seed=cfg.sampling_seed if ns.seed is None else ns.seed,
        max_tokens_per_bar=ns.max_tokens_per_bar or cfg.max_tokens_per_bar,
    )
    grid = midi_core.TimeGrid(tempo_bpm=leadsheet.tempo_bpm, num_bars=len(result.bars))
    notes = [n for bar in result.bars for n in bar]
    Path(ns.out).write_bytes(midi_core.write_midi(notes, grid))
    print(json.dumps({"bars_generated": len(result.bars), "tokens_sampled": result.tokens_sampled,
                      "bars_force_closed": result.bars_force_closed}))
    return EXIT_OK


# --------------------------------------------------------------- eval-mca


def _eval_one(midi_path: Path, f0_path: Path, hop):
    contour = read_f0_csv(f0_path.read_text())
    if hop is not None and abs(hop - contour.hop_seconds) > 1e-6:
        raise PianoCoverError(f"{f0_path}: hop {contour.hop_seconds} s differs from --hop {hop}")
    notes, grid = _piece(midi_path)
    est = top_line(notes, grid, contour.hop_seconds, num_frames=len(contour.frames))
    return mca(est, contour)


def cmd_eval_mca(ns) -> int:
    midi = Path(ns.midi)
    f0 = _need(ns.f0, "dir" if midi.is_dir() else "file")
    if midi.is_dir():
        rows = []
        for m in sorted(p for p in midi.iterdir() if p.suffix.lower() in (".mid", ".midi")):
            ref = f0 / f"{m.stem}.csv"
            if not ref.exists():
                log.warning("no f0 contour for %s", m.name)
                continue
            rep = _eval_one(m, ref, ns.hop)
            rows.append({"song": m.stem, "mca": rep.mca, "voiced_frames": rep.voiced_frames,
                         "matched_frames": rep.matched_frames})
        if not rows:
            raise PianoCoverError("no MIDI / f0 pairs found")
        report = {"songs": rows, "mean_mca": sum(r["mca"] for r in rows) / len(rows)}
        text = json.dumps(report, indent=1)
    else:
        _need(midi)
        text = _eval_one(midi, f0, ns.hop).to_json()
    if ns.out:
        Path(ns.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


# --------------------------------------------------------- (de)tokenize


def cmd_tokenize(ns) -> int:
    path = _need(ns.midi)
    notes, grid = _piece(path)
    bars = midi_core.split_bars(notes, grid)
    if ns.repr == "midi-like":
        line = json.dumps({"piece_id": path.stem, "repr": "midi-like", "tempo_bpm": grid.tempo_bpm,
                           "num_bars": len(bars), "tokens": encode_midi_like(bars, grid)})
        text = line + "\n"
    else:
        seq = build_interleaved(derive_leadsheet(bars, grid), bars, grid)
        text = dump_windows([(path.stem, seq)])
    if ns.out:
        Path(ns.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_detokenize(ns) -> int:
    lines = [(i, ln) for i, ln in enumerate(_need(ns.jsonl).read_text().splitlines(), 1) if ln.strip()]
    if not 1 <= ns.line <= len(lines):
        raise UsageError(f"--line {ns.line} out of range (file has {len(lines)} records)")
    lineno, text = lines[ns.line - 1]
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PianoCoverError(f"line {lineno}: {exc}") from None
    if obj.get("repr") == "midi-like":
        try:
            bars = decode_midi_like(obj["tokens"], obj.get("num_bars"))
        except (KeyError, ValueError) as exc:
            raise PianoCoverError(f"line {lineno}: {exc}") from None
        tempo = obj.get("tempo_bpm", 120.0)
    else:
        [(_, ids)] = load_windows("\n" * (lineno - 1) + text)
        try:
            seq = InterleavedSequence.from_ids(ids)
        except ValueError as exc:
            raise PianoCoverError(f"line {lineno}: {exc}") from None
        leadsheet, bars = decode(seq, strict=not ns.tolerant)
        tempo = leadsheet.tempo_bpm
    grid = midi_core.TimeGrid(tempo_bpm=tempo, num_bars=len(bars))
    Path(ns.out).write_bytes(midi_core.write_midi([n for b in bars for n in b], grid))
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pianocover", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("build-dataset", help="tokenize a directory of piano MIDI into training windows")
    s.add_argument("midi_dir")
    s.add_argument("out", help="output JSONL; the vocab is written next to it as <out>.vocab.json")
    s.add_argument("--stride-bars", type=int)
    s.add_argument("--jobs", type=int, help="worker processes (output order is by filename)")
    s.add_argument("--config")
    s.set_defaults(func=cmd_build_dataset)

    s = sub.add_parser("train", help="train the model on a token dataset")
    s.add_argument("dataset")
    s.add_argument("out", help="checkpoint path")
    s.add_argument("--config")
    s.add_argument("--metrics", help="loss CSV (default <out>.metrics.csv)")
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="generate piano MIDI from a lead-sheet JSON")
    s.add_argument("leadsheet")
    s.add_argument("checkpoint")
    s.add_argument("out")
    s.add_argument("--config")
    s.add_argument("--temperature", type=float)
    s.add_argument("--top-p", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--max-tokens-per-bar", type=int)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval-mca", help="melody chroma accuracy of MIDI against f0 contours")
    s.add_argument("midi", help="MIDI file, or a directory of them")
    s.add_argument("f0", help="f0 CSV, or a directory of <song>.csv files")
    s.add_argument("--hop", type=float, help="expected hop in seconds (checked against the CSV)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval_mca)

    s = sub.add_parser("tokenize", help="MIDI to a one-line token JSONL")
    s.add_argument("midi")
    s.add_argument("--out")
    s.add_argument("--repr", choices=("cp", "midi-like"), default="cp")
    s.set_defaults(func=cmd_tokenize)

    s = sub.add_parser("detokenize", help="token JSONL back to MIDI")
    s.add_argument("jsonl")
    s.add_argument("out")
    s.add_argument("--line", type=int, default=1, help="1-based record to decode")
    s.add_argument("--tolerant", action="store_true", help="skip malformed tokens instead of failing")
    s.set_defaults(func=cmd_detokenize)
    return p


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return ns.func(ns)
    except (UsageError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except NumericError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except PianoCoverError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
