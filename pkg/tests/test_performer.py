import io
import math
import random

import numpy as np
import pytest
import torch

from pianocover.errors import NumericError, PianoCoverError
from pianocover.leadsheet import NO_CHORD, ChordLabel, LeadSheet, LeadSheetBar, derive_leadsheet
from pianocover.midi_core import NoteEvent, split_bars
from pianocover.performer import (
    HEADS, ModelConfig, Performer, SuperTokenEmbedding, TrainConfig, TrainState, build_model,
    generate, generate_sequence, load_checkpoint, loss, make_batch, save_checkpoint, target_mask,
    train, train_step,
)
from pianocover.synthetic import synthetic_piece
from pianocover.tokenizer import BOS_TOKEN, VOCAB, build_interleaved, decode

from helpers import random_leadsheet

TINY = ModelConfig(d_model=16, n_layers=1, n_heads=2, max_len=256, embed_dims=(2,) * 8)


def _piece_ids(num_bars=4, seed=0):
    notes, grid = synthetic_piece(num_bars, seed=seed)
    bars = split_bars(notes, grid)
    ls = derive_leadsheet(bars, grid)
    return ls, bars, build_interleaved(ls, bars, grid).ids()


# -------------------------------------------------------------- embedding


def test_embedding_shape_and_distinct_fields():
    emb = SuperTokenEmbedding(VOCAB.sizes, (4,) * 8, 12)
    ids = torch.tensor([[[0, 1, 0, 0, 0, 0, 0, 0], [0, 0, 1, 0, 0, 0, 0, 0]]])
    out = emb(ids)
    assert out.shape == (1, 2, 12)
    assert not torch.allclose(out[0, 0], out[0, 1])
    bos = torch.tensor([VOCAB.encode(BOS_TOKEN)])
    assert not torch.allclose(emb(bos), emb(torch.zeros_like(bos)))


def test_embedding_with_identity_tables_is_concatenation():
    emb = SuperTokenEmbedding((3, 3), (3, 3), 6)
    with torch.no_grad():
        for tab in emb.tables:
            tab.weight.copy_(torch.eye(3))
        emb.proj.weight.copy_(torch.eye(6))
        emb.proj.bias.zero_()
    out = emb(torch.tensor([[2, 1]]))
    assert out.tolist() == [[0, 0, 1, 0, 1, 0]]


def test_out_of_range_id_rejected():
    model = build_model(TINY)
    ids = torch.zeros((1, 2, 8), dtype=torch.long)
    ids[0, 1, 5] = VOCAB.sizes[5]
    with pytest.raises(ValueError, match="range"):
        model(ids)


def test_sequence_longer_than_max_len_rejected():
    model = build_model(ModelConfig(d_model=8, n_layers=1, n_heads=2, max_len=4))
    with pytest.raises(ValueError, match="max_len"):
        model(torch.zeros((1, 5, 8), dtype=torch.long))


# ---------------------------------------------------------------- forward


def test_output_shapes():
    model = build_model(TINY)
    out = model(torch.zeros((3, 7, 8), dtype=torch.long))
    assert set(out) == set(HEADS)
    assert out["family"].shape == (3, 7, 4)
    for name, size in zip(HEADS[1:], VOCAB.sizes):
        assert out[name].shape == (3, 7, size)


def test_causality():
    _, _, ids = _piece_ids()
    model = build_model(TINY).eval()
    rng = random.Random(3)
    base = torch.tensor([ids[:40]])
    ref = model(base)
    for _ in range(20):
        j = rng.randrange(1, 40)
        pert = base.clone()
        f = rng.randrange(8)
        pert[0, j, f] = (pert[0, j, f] + 1) % VOCAB.sizes[f]
        out = model(pert)
        for name in HEADS:
            torch.testing.assert_close(out[name][0, :j], ref[name][0, :j], rtol=0, atol=1e-6)
        assert any(not torch.allclose(out[n][0, j], ref[n][0, j]) for n in HEADS)


def fd_gradient_errors(seed=0):
    """Per-tensor relative error between autograd and central differences."""
    cfg = ModelConfig(d_model=8, n_layers=1, n_heads=2, max_len=8, embed_dims=(2,) * 8, seed=seed)
    model = build_model(cfg).double()
    _, _, ids = _piece_ids()
    inputs, targets, active = make_batch([ids[:7]])
    active = torch.ones_like(active)

    def f():
        return loss(model(inputs), targets, active)[0]

    model.zero_grad()
    f().backward()
    errors = {}
    eps = 1e-6
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            fd = torch.zeros_like(flat)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + eps
                up = f().item()
                flat[i] = old - eps
                down = f().item()
                flat[i] = old
                fd[i] = (up - down) / (2 * eps)
            g = p.grad.view(-1) if p.grad is not None else torch.zeros_like(fd)
            denom = max(g.norm().item(), fd.norm().item(), 1e-12)
            errors[name] = (g - fd).norm().item() / denom
    return errors


def test_finite_difference_gradients():
    errors = fd_gradient_errors()
    assert max(errors.values()) <= 1e-4, errors


# ------------------------------------------------------------------- loss


def test_uniform_logits_give_log_vocab():
    targets = torch.tensor([[[0, 0, 0, 0, 0, 5, 3, 7]]])
    logits = {n: torch.zeros(1, 1, s) for n, s in zip(HEADS, (4,) + VOCAB.sizes)}
    total, per_head = loss(logits, targets)
    want = math.log(4) + sum(math.log(VOCAB.sizes[i]) for i in (5, 6, 7))
    assert total.item() == pytest.approx(want)
    assert set(per_head) == {"family", "pitch", "duration", "velocity"}


def test_all_ignore_targets_give_zero():
    logits = {n: torch.randn(1, 2, s) for n, s in zip(HEADS, (4,) + VOCAB.sizes)}
    total, per_head = loss(logits, torch.zeros((1, 2, 8), dtype=torch.long))
    assert total.item() == 0 and per_head == {}


def test_two_token_cross_entropy_by_hand():
    # two METRIC targets, positions 1 and 2
    targets = torch.tensor([[[0, 0, 1, 0, 0, 0, 0, 0], [0, 0, 2, 0, 0, 0, 0, 0]]])
    logits = {n: torch.zeros(1, 2, s) for n, s in zip(HEADS, (4,) + VOCAB.sizes)}
    logits["position"][0, 0, 1] = 2.0  # first step favours its own target
    logits["family"][0, :, 2] = 1.0
    _, per_head = loss(logits, targets)
    v = VOCAB.sizes[2]
    ce0 = -(2.0 - math.log(math.exp(2.0) + v - 1))
    ce1 = math.log(v)
    assert per_head["position"].item() == pytest.approx((ce0 + ce1) / 2, rel=1e-6)
    assert per_head["family"].item() == pytest.approx(-(1 - math.log(math.e + 3)), rel=1e-6)


def test_target_mask_excludes_leadsheet_side():
    ls, bars, ids = _piece_ids(2)
    seq = build_interleaved(ls, bars)
    mask = target_mask(np.array(ids))
    for tok, side, m in zip(seq.tokens, seq.side, mask):
        if tok.family == "NOTE" or tok.family == "METRIC":
            assert m == (side == "TGT")


def test_initial_loss_near_uniform():
    _, _, ids = _piece_ids()
    model = build_model(ModelConfig())
    inputs, targets, active = make_batch([ids])
    total, per_head = loss(model(inputs), targets, active)
    sizes = dict(zip(HEADS, (4,) + VOCAB.sizes))
    want = sum(math.log(sizes[h]) for h in per_head)
    assert abs(total.item() - want) <= 0.1 * want


# --------------------------------------------------------------- training


def test_training_is_deterministic():
    _, _, ids = _piece_ids()
    runs = []
    for _ in range(2):
        st = TrainState.create(TINY, TrainConfig(steps=5, batch_size=1))
        runs.append((train([ids, ids[:50]], st), save_checkpoint(st)))
    assert runs[0] == runs[1]


def test_metrics_file_rows():
    _, _, ids = _piece_ids()
    buf = io.StringIO()
    rows = train([ids], TrainState.create(TINY, TrainConfig(steps=3)), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("step,loss,family")
    assert len(lines) == 4 == len(rows) + 1


def test_nan_aborts():
    _, _, ids = _piece_ids()
    st = TrainState.create(TINY)
    with torch.no_grad():
        st.model.ln_f.weight.fill_(float("nan"))
    with pytest.raises(NumericError):
        train_step(st, make_batch([ids]))


def test_checkpoint_round_trip_is_exact():
    _, _, ids = _piece_ids()
    st = TrainState.create(TINY, TrainConfig(steps=2))
    train([ids], st)
    data = save_checkpoint(st)
    back = load_checkpoint(data)
    assert save_checkpoint(back) == data
    x = torch.tensor([ids[:30]])
    st.model.eval()
    back.model.eval()
    for name, lg in st.model(x).items():
        assert torch.equal(lg, back.model(x)[name])
    # training continues identically
    assert train([ids], st) == train([ids], back)


# ------------------------------------------------------------- generation


def test_generate_one_piano_bar_per_leadsheet_bar():
    ls = random_leadsheet(random.Random(0), 5)
    bars = generate(ls, build_model(TINY), temperature=1.0, seed=1, max_tokens_per_bar=12)
    assert len(bars) == 5
    assert all(n.bar == k for k, b in enumerate(bars) for n in b)


def test_random_model_output_always_decodes():
    model = build_model(TINY)
    rng = random.Random(7)
    for i in range(100):
        ls = random_leadsheet(rng, rng.randint(1, 3))
        g = generate_sequence(ls, model, temperature=1.5, seed=i, max_tokens_per_bar=10)
        decode(g.sequence, strict=True)
        assert len(g.bars) == len(ls.bars)


def test_greedy_is_deterministic():
    ls = random_leadsheet(random.Random(1), 3)
    model = build_model(TINY)
    a = generate_sequence(ls, model, temperature=0, seed=1, max_tokens_per_bar=8)
    b = generate_sequence(ls, model, temperature=0, seed=99, max_tokens_per_bar=8)
    assert a.sequence.tokens == b.sequence.tokens


def test_sampling_is_seeded():
    ls = random_leadsheet(random.Random(1), 3)
    model = build_model(TINY)
    a = generate_sequence(ls, model, temperature=1, top_p=0.9, seed=5, max_tokens_per_bar=8)
    b = generate_sequence(ls, model, temperature=1, top_p=0.9, seed=5, max_tokens_per_bar=8)
    assert a.sequence.tokens == b.sequence.tokens


def test_leadsheet_conditions_the_model():
    model = build_model(TINY).eval()
    mel = (NoteEvent(0, 0, 60, 4, 80),)
    a = LeadSheet([LeadSheetBar(mel, (ChordLabel(0, "maj"),) * 2)])
    b = LeadSheet([LeadSheetBar(mel, (ChordLabel(5, "min"),) * 2)])
    sa, sb = build_interleaved(a), build_interleaved(b)
    la = model(torch.tensor([sa.ids()]))["pitch"][0, -2]
    lb = model(torch.tensor([sb.ids()]))["pitch"][0, -2]
    assert not torch.allclose(la, lb)


@pytest.mark.parametrize("seed", range(5))
def test_future_leadsheet_bars_do_not_change_earlier_output(seed):
    rng = random.Random(seed)
    a = random_leadsheet(rng, 4)
    later = [LeadSheetBar([NoteEvent(n.bar, n.position, 21 + (n.pitch + 7) % 88, n.duration, n.velocity)
                           for n in bar.melody], (ChordLabel(rng.randrange(12), "min"), NO_CHORD))
             for bar in a.bars[2:]]
    b = LeadSheet(a.bars[:2] + tuple(later), a.tempo_bpm)
    assert b != a
    model = build_model(TINY)
    ga = generate(a, model, temperature=1, seed=seed, max_tokens_per_bar=10)
    gb = generate(b, model, temperature=1, seed=seed, max_tokens_per_bar=10)
    assert ga[:2] == gb[:2]


def test_context_overflow_slides_whole_bars():
    cfg = ModelConfig(d_model=16, n_layers=1, n_heads=2, max_len=40, embed_dims=(2,) * 8)
    ls = random_leadsheet(random.Random(2), 12)
    g = generate_sequence(ls, build_model(cfg), temperature=1, seed=0, max_tokens_per_bar=6)
    assert len(g.bars) == 12


def test_empty_leadsheet_rejected():
    with pytest.raises(PianoCoverError):
        generate(LeadSheet([]), build_model(TINY))


def test_paper_scale_config():
    cfg = ModelConfig.paper_scale()
    assert (cfg.d_model, cfg.n_layers, cfg.n_heads) == (512, 8, 8)
    assert isinstance(Performer(ModelConfig(d_model=8, n_layers=1, n_heads=2)), torch.nn.Module)
