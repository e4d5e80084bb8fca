"""Decoder-only Transformer over compound-word super tokens.

Each step's eight field ids are embedded separately, concatenated and
projected to ``d_model``. The decoder predicts the next super token with one
head per field plus a family head; fields outside the sampled family are
forced to IGNORE at generation time.
"""
from __future__ import annotations

import base64
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import NumericError, PianoCoverError
from .tokenizer import (
    BAR_SRC, BAR_TGT, BOS_TOKEN, EOS_TOKEN, FAMILIES, FIELDS, METRIC, NOTE, VOCAB,
    InterleavedSequence, SuperToken, decode, encode_leadsheet_bar, tempo_to_bin,
)

HEADS = ("family",) + FIELDS
FAMILY_OF_FIELD = {"spec": 0, "bar": 1, "position": 2, "pitch": 3}
# which fields a sampled family keeps
FAMILY_FIELDS = {"SPEC": ("spec",), "BAR": ("bar",), "METRIC": ("position",),
                 "NOTE": ("pitch", "duration", "velocity")}
_SRC_ID, _TGT_ID = 1, 2  # bar-field ids
_EOS_ID = 2  # spec-field id


@dataclass
class ModelConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 1024
    embed_dims: tuple = (4, 4, 16, 16, 32, 32, 16, 32)
    d_ff: int = 0  # 0 means 4 * d_model
    seed: int = 0

    def __post_init__(self):
        self.embed_dims = tuple(self.embed_dims)
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")
        if len(self.embed_dims) != len(FIELDS):
            raise ValueError(f"need {len(FIELDS)} embedding sizes")

    @classmethod
    def paper_scale(cls, **kw) -> "ModelConfig":
        return cls(d_model=512, n_layers=8, n_heads=8, **kw)


@dataclass
class TrainConfig:
    lr: float = 3e-4
    warmup_steps: int = 100
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    batch_size: int = 8
    epochs: int = 1
    steps: int = 0  # when > 0, overrides epochs
    target_loss: float = 0.0  # stop early once a step's loss falls below this


# ------------------------------------------------------------------ model


class SuperTokenEmbedding(nn.Module):
    """Per-field embedding tables, concatenated and linearly projected."""

    def __init__(self, vocab_sizes, embed_dims, d_model):
        super().__init__()
        self.vocab_sizes = tuple(vocab_sizes)
        self.tables = nn.ModuleList(nn.Embedding(v, e) for v, e in zip(vocab_sizes, embed_dims))
        self.proj = nn.Linear(sum(embed_dims), d_model)

    def forward(self, ids):
        if ids.shape[-1] != len(self.tables):
            raise ValueError(f"expected {len(self.tables)} fields per record")
        hi = torch.tensor(self.vocab_sizes, device=ids.device)
        if (ids < 0).any() or (ids >= hi).any():
            raise ValueError("token id out of vocabulary range")
        parts = [tab(ids[..., i]) for i, tab in enumerate(self.tables)]
        return self.proj(torch.cat(parts, dim=-1))


class CausalSelfAttention(nn.Module):
    def __init__(self, d_model, n_heads):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x):
        b, t, d = x.shape
        q, k, v = self.qkv(x).split(d, dim=-1)
        q, k, v = (z.view(b, t, self.n_heads, d // self.n_heads).transpose(1, 2) for z in (q, k, v))
        att = q @ k.transpose(-2, -1) / math.sqrt(d // self.n_heads)
        future = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
        att = att.masked_fill(future, float("-inf")).softmax(dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, t, d)
        return self.out(y)


class Block(nn.Module):
    def __init__(self, d_model, n_heads, d_ff):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = CausalSelfAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(nn.Linear(d_model, d_ff), nn.GELU(), nn.Linear(d_ff, d_model))

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class Performer(nn.Module):
    def __init__(self, config: ModelConfig, vocab_sizes=VOCAB.sizes):
        super().__init__()
        self.config = config
        d = config.d_model
        self.embed = SuperTokenEmbedding(vocab_sizes, config.embed_dims, d)
        self.pos = nn.Embedding(config.max_len, d)
        self.blocks = nn.ModuleList(Block(d, config.n_heads, config.d_ff or 4 * d)
                                    for _ in range(config.n_layers))
        self.ln_f = nn.LayerNorm(d)
        self.heads = nn.ModuleDict({"family": nn.Linear(d, len(FAMILIES))})
        for name, size in zip(FIELDS, vocab_sizes):
            self.heads[name] = nn.Linear(d, size)
        for m in self.modules():
            if isinstance(m, (nn.Linear, nn.Embedding)):
                nn.init.normal_(m.weight, std=0.02)
                if isinstance(m, nn.Linear):
                    nn.init.zeros_(m.bias)

    def forward(self, ids) -> dict[str, torch.Tensor]:
        """``ids``: (batch, seq, 8) long. Returns logits per head, (batch, seq, size)."""
        t = ids.shape[1]
        if t > self.config.max_len:
            raise ValueError(f"sequence length {t} exceeds max_len {self.config.max_len}")
        x = self.embed(ids) + self.pos(torch.arange(t, device=ids.device))
        for blk in self.blocks:
            x = blk(x)
        x = self.ln_f(x)
        return {name: head(x) for name, head in self.heads.items()}


def build_model(config: ModelConfig) -> Performer:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        return Performer(config)


# ------------------------------------------------------------------- loss


def families_of(ids):
    """Family index per id record (SPEC 0, BAR 1, METRIC 2, NOTE 3)."""
    fam = torch.full(ids.shape[:-1], 3, dtype=torch.long)
    for name in ("position", "bar", "spec"):
        fam = torch.where(ids[..., FIELDS.index(name)] != 0, FAMILY_OF_FIELD[name], fam)
    return fam


def target_mask(ids: np.ndarray) -> np.ndarray:
    """Which records of one sequence are training targets.

    Piano-side records count, and so do BAR tokens and EOS; lead-sheet
    content is condition only. All-IGNORE padding never counts.
    """
    ids = np.asarray(ids)
    bar, spec = ids[:, FIELDS.index("bar")], ids[:, FIELDS.index("spec")]
    side_tgt = np.zeros(len(ids), dtype=bool)
    tgt = False
    for i, b in enumerate(bar):
        if b == _TGT_ID:
            tgt = True
        elif b == _SRC_ID:
            tgt = False
        side_tgt[i] = tgt
    return (side_tgt | (bar != 0) | (spec == _EOS_ID)) & ids.any(axis=1)


def loss(logits, targets, active=None):
    """Sum over heads of the mean cross-entropy on that head's live targets.

    A field is skipped wherever its target is IGNORE; the family head is
    scored on every active record. Returns ``(total, per_head)``.
    """
    if active is None:
        active = torch.ones(targets.shape[:-1], dtype=torch.bool)
    active = active & (targets != 0).any(dim=-1)
    per_head = {}
    fam = families_of(targets)
    if active.any():
        per_head["family"] = F.cross_entropy(logits["family"][active], fam[active])
    for i, name in enumerate(FIELDS):
        m = active & (targets[..., i] != 0)
        if m.any():
            per_head[name] = F.cross_entropy(logits[name][m], targets[..., i][m])
    total = sum(per_head.values()) if per_head else torch.zeros(())
    return total, per_head


# --------------------------------------------------------------- training


@dataclass
class TrainState:
    model: Performer
    optimizer: torch.optim.Optimizer
    train_config: TrainConfig = field(default_factory=TrainConfig)
    step: int = 0
    rng: torch.Generator = field(default_factory=torch.Generator)

    @classmethod
    def create(cls, config: ModelConfig, train_config: TrainConfig | None = None) -> "TrainState":
        train_config = train_config or TrainConfig()
        model = build_model(config)
        opt = torch.optim.AdamW(model.parameters(), lr=train_config.lr,
                                weight_decay=train_config.weight_decay)
        rng = torch.Generator()
        rng.manual_seed(config.seed)
        return cls(model, opt, train_config, 0, rng)


def make_batch(seqs):
    """Pad id sequences into (inputs, targets, active) tensors."""
    t = max(len(s) for s in seqs) - 1
    ids = np.zeros((len(seqs), t + 1, len(FIELDS)), dtype=np.int64)
    active = np.zeros((len(seqs), t), dtype=bool)
    for b, s in enumerate(seqs):
        s = np.asarray(s, dtype=np.int64)
        ids[b, :len(s)] = s
        active[b, :len(s) - 1] = target_mask(s)[1:]
    ids = torch.from_numpy(ids)
    return ids[:, :-1], ids[:, 1:], torch.from_numpy(active)


def train_step(state: TrainState, batch) -> dict[str, float]:
    inputs, targets, active = batch
    tc = state.train_config
    for g in state.optimizer.param_groups:
        g["lr"] = tc.lr * min(1.0, (state.step + 1) / max(tc.warmup_steps, 1))
    state.model.train()
    total, per_head = loss(state.model(inputs), targets, active)
    if not torch.isfinite(total):
        detail = {k: v.item() for k, v in per_head.items()}
        raise NumericError(f"non-finite loss at step {state.step}: {detail}")
    state.optimizer.zero_grad()
    total.backward()
    if tc.clip_norm:
        nn.utils.clip_grad_norm_(state.model.parameters(), tc.clip_norm)
    state.optimizer.step()
    state.step += 1
    row = {"step": state.step, "loss": total.item()}
    row.update({k: v.item() for k, v in per_head.items()})
    return row


def train(windows, state: TrainState, metrics_file=None) -> list[dict[str, float]]:
    """Train on id sequences; returns one metrics row per step.

    Batches are drawn by reshuffling the windows each epoch with the state's
    generator, so a run is fully determined by the seed. ``metrics_file``
    receives CSV rows ``step,loss,<per-head losses>`` as training proceeds.
    """
    windows = [w for w in windows if len(w) >= 2]
    if not windows:
        raise PianoCoverError("training set is empty")
    tc = state.train_config
    per_epoch = math.ceil(len(windows) / tc.batch_size)
    total_steps = tc.steps if tc.steps > 0 else tc.epochs * per_epoch
    writer = None
    if metrics_file is not None:
        writer = csv.DictWriter(metrics_file, fieldnames=("step", "loss") + HEADS, restval="")
        writer.writeheader()
    rows = []
    order = []
    while len(rows) < total_steps:
        if not order:
            order = torch.randperm(len(windows), generator=state.rng).tolist()
        pick, order = order[:tc.batch_size], order[tc.batch_size:]
        row = train_step(state, make_batch([windows[i] for i in pick]))
        rows.append(row)
        if writer:
            writer.writerow(row)
        if tc.target_loss and row["loss"] < tc.target_loss:
            break
    return rows


# ------------------------------------------------------------- checkpoint

CHECKPOINT_FORMAT = "pianocover-checkpoint/1"


def _pack(obj):
    if isinstance(obj, torch.Tensor):
        arr = obj.detach().cpu().contiguous().numpy()
        return {"__tensor__": str(arr.dtype), "shape": list(arr.shape),
                "data": base64.b64encode(arr.tobytes()).decode("ascii")}
    if isinstance(obj, dict):
        return {"__items__": [[_pack(k), _pack(v)] for k, v in obj.items()]}
    if isinstance(obj, (list, tuple)):
        return {"__list__": [_pack(v) for v in obj], "tuple": isinstance(obj, tuple)}
    return obj


def _unpack(obj):
    if isinstance(obj, dict):
        if "__tensor__" in obj:
            arr = np.frombuffer(base64.b64decode(obj["data"]), dtype=obj["__tensor__"])
            return torch.from_numpy(arr.reshape(obj["shape"]).copy())
        if "__items__" in obj:
            return {_unpack(k): _unpack(v) for k, v in obj["__items__"]}
        if "__list__" in obj:
            vals = [_unpack(v) for v in obj["__list__"]]
            return tuple(vals) if obj["tuple"] else vals
    return obj


def save_checkpoint(state: TrainState) -> bytes:
    """Serialize to a JSON container; identical states give identical bytes."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "model_config": asdict(state.model.config),
        "train_config": asdict(state.train_config),
        "step": state.step,
        "rng": _pack(state.rng.get_state()),
        "params": _pack(state.model.state_dict()),
        "optimizer": _pack(state.optimizer.state_dict()),
    }
    return json.dumps(doc, sort_keys=True).encode("utf-8")


def load_checkpoint(data: bytes) -> TrainState:
    doc = json.loads(data)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise PianoCoverError(f"unsupported checkpoint format {doc.get('format')!r}")
    config = ModelConfig(**doc["model_config"])
    state = TrainState.create(config, TrainConfig(**doc["train_config"]))
    state.model.load_state_dict(_unpack(doc["params"]))
    state.optimizer.load_state_dict(_unpack(doc["optimizer"]))
    state.rng.set_state(_unpack(doc["rng"]))
    state.step = doc["step"]
    return state


# ------------------------------------------------------------- generation


@dataclass
class Generation:
    bars: list
    sequence: InterleavedSequence
    tokens_sampled: int
    bars_force_closed: int


def _sample(logits, temperature, top_p, gen, allowed=None):
    logits = logits.clone()
    if allowed is not None:
        logits[~allowed] = float("-inf")
    if temperature <= 0:
        return int(torch.argmax(logits))
    probs = torch.softmax(logits / temperature, dim=-1)
    if top_p < 1.0:
        sorted_p, idx = probs.sort(descending=True)
        keep = sorted_p.cumsum(0) - sorted_p < top_p
        keep[0] = True
        probs = torch.zeros_like(probs).scatter(0, idx[keep], sorted_p[keep])
        probs = probs / probs.sum()
    return int(torch.multinomial(probs, 1, generator=gen))


def _fit_context(context, bar_starts, max_len):
    """BOS plus the most recent whole bar pairs that fit, or None if even one bar does not."""
    if len(context) <= max_len:
        return context
    for start in bar_starts:
        if 1 + len(context) - start <= max_len:
            return context[:1] + context[start:]
    return None


@torch.no_grad()
def generate_sequence(leadsheet, model: Performer, temperature: float = 1.0, top_p: float = 1.0,
                      seed: int = 0, max_tokens_per_bar: int = 64) -> Generation:
    """Bar-synchronous generation conditioned on a lead sheet.

    For each bar the lead-sheet tokens and BAR_TGT are forced, then piano
    tokens are sampled until the model closes the bar (any BAR or SPEC
    token) or ``max_tokens_per_bar`` is reached. A bar never sees lead-sheet
    bars after it. Temperature 0 means greedy decoding.
    """
    if not leadsheet.bars:
        raise PianoCoverError("lead sheet has no bars")
    model.eval()
    gen = torch.Generator()
    gen.manual_seed(seed)
    values = VOCAB.values
    enc = VOCAB.encode
    tempo_bin = tempo_to_bin(leadsheet.tempo_bpm)
    context = [enc(BOS_TOKEN)]
    tokens = [BOS_TOKEN]
    bar_starts = []
    sampled = forced = 0
    for k, lbar in enumerate(leadsheet.bars):
        bar_starts.append(len(context))
        forced_toks = [BAR_SRC] + encode_leadsheet_bar(lbar, tempo_bin if k == 0 else None) + [BAR_TGT]
        tokens += forced_toks
        context += [enc(t) for t in forced_toks]
        have_metric = False
        closed = False
        for _ in range(max_tokens_per_bar):
            ctx = _fit_context(context, bar_starts, model.config.max_len)
            if ctx is None:
                break
            out = model(torch.tensor([ctx], dtype=torch.long))
            last = {name: lg[0, -1] for name, lg in out.items()}
            allowed = torch.ones(len(FAMILIES), dtype=torch.bool)
            allowed[FAMILIES.index(NOTE)] = have_metric
            family = FAMILIES[_sample(last["family"], temperature, top_p, gen, allowed)]
            if family not in (METRIC, NOTE):
                closed = True
                break
            vals = {}
            for name in FAMILY_FIELDS[family]:
                live = torch.ones_like(last[name], dtype=torch.bool)
                live[0] = False  # never sample IGNORE for a required field
                vals[name] = values[name][_sample(last[name], temperature, top_p, gen, live) - 1]
            tok = SuperToken(family, **vals)
            tokens.append(tok)
            context.append(enc(tok))
            sampled += 1
            have_metric = have_metric or family == METRIC
        forced += not closed
    tokens.append(EOS_TOKEN)
    seq = InterleavedSequence.from_tokens(tokens)
    _, bars = decode(seq, strict=True)
    return Generation(bars, seq, sampled, forced)


def generate(leadsheet, state, **sampling) -> list[list]:
    """Piano bars for ``leadsheet``; ``state`` is a TrainState or a Performer."""
    model = state.model if isinstance(state, TrainState) else state
    return generate_sequence(leadsheet, model, **sampling).bars


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=("step", "loss") + HEADS, restval="")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
