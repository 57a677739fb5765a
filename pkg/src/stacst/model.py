"""Encoder-decoder transformer with a convolutional subsampling front-end and
joint CTC/NLL multi-task training over mixed ASR/ST batches.

The front-end is two stride-2 3x3 convolutions whose channel/frequency planes
are flattened per frame and projected to d_model, so the encoder (and the CTC
head on top of it) runs at a quarter of the feature frame rate. The decoder is
primed with BOS plus the two language tokens; picking [src]==[tgt] selects
transcription and [src]!=[tgt] selects translation on the same audio.

Losses combine as  lambda * ctc + (1 - lambda) * nll  exactly (affine in
lambda). The CTC term calls the forward-backward implementation in the ctc
module through a custom autograd function, so training uses the same analytic
gradient the oracle tests verify. Language tokens never enter CTC targets.

Training is CPU-oriented and deterministic per seed: fixed sinusoidal
positions, no label smoothing, 32-bit parameters.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import ctc as ctc_mod
from .serializer import TargetSequence, Vocabulary, is_language_token

__all__ = [
    "ModelConfig",
    "TrainConfig",
    "Batch",
    "TrainingExample",
    "SpeechTransformer",
    "build_model",
    "count_parameters",
    "joint_loss",
    "lr_schedule",
    "Trainer",
    "mixed_batch_sampler",
    "collate",
    "greedy_decode",
    "batch_greedy_decode",
    "save_checkpoint",
    "load_checkpoint",
]

PRESETS: dict[str, dict] = {
    "tiny": dict(d_model=32, n_enc_layers=2, n_dec_layers=2, n_heads=2, conv_channels=8),
    "s": dict(d_model=256, n_enc_layers=12, n_dec_layers=6, n_heads=4, conv_channels=256),
    "m": dict(d_model=512, n_enc_layers=14, n_dec_layers=6, n_heads=8, conv_channels=256),
    "l": dict(d_model=1024, n_enc_layers=16, n_dec_layers=6, n_heads=16, conv_channels=256),
}


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 256
    n_enc_layers: int = 12
    n_dec_layers: int = 6
    n_heads: int = 4
    ffn_mult: int = 4
    dropout: float = 0.1
    subsample_factor: int = 4
    conv_channels: int = 256
    feature_dim: int = 80
    max_positions: int = 4096

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.subsample_factor != 4:
            raise ValueError("front-end is two stride-2 convolutions: factor is 4")

    @staticmethod
    def preset(name: str, vocab_size: int, feature_dim: int = 80, dropout: float = 0.1) -> "ModelConfig":
        if name.lower() not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return ModelConfig(
            vocab_size=vocab_size,
            feature_dim=feature_dim,
            dropout=dropout,
            **PRESETS[name.lower()],
        )


def _freq_after_subsampling(feature_dim: int) -> int:
    f = (feature_dim + 1) // 2
    return (f + 1) // 2


def subsampled_lengths(lengths: torch.Tensor) -> torch.Tensor:
    return torch.div(torch.div(lengths + 1, 2, rounding_mode="floor") + 1, 2, rounding_mode="floor")


def count_parameters(cfg: ModelConfig) -> int:
    """Closed-form parameter count; equals the allocated module's count."""
    d, v, c = cfg.d_model, cfg.vocab_size, cfg.conv_channels
    f4 = _freq_after_subsampling(cfg.feature_dim)
    conv = (9 * c + c) + (9 * c * c + c)
    front = f4 * c * d + d
    enc_layer = 12 * d * d + 13 * d
    dec_layer = 16 * d * d + 19 * d
    enc = cfg.n_enc_layers * enc_layer + 2 * d
    dec = cfg.n_dec_layers * dec_layer + 2 * d
    embedding = v * d
    heads = 2 * (d * v + v)
    return conv + front + enc + dec + embedding + heads


def _sinusoidal_table(max_positions: int, d_model: int) -> torch.Tensor:
    pos = torch.arange(max_positions, dtype=torch.float32).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float32) * (-math.log(10000.0) / d_model))
    table = torch.zeros(max_positions, d_model)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div)
    return table


class _FeedForward(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        hidden = cfg.ffn_mult * cfg.d_model
        self.w1 = nn.Linear(cfg.d_model, hidden)
        self.w2 = nn.Linear(hidden, cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.w2(self.dropout(F.gelu(self.w1(x))))


class _EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.attn = nn.MultiheadAttention(cfg.d_model, cfg.n_heads, dropout=cfg.dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.ffn = _FeedForward(cfg)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, key_padding_mask: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        h, _ = self.attn(h, h, h, key_padding_mask=key_padding_mask, need_weights=False)
        x = x + self.dropout(h)
        x = x + self.dropout(self.ffn(self.norm2(x)))
        return x


class _DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = nn.MultiheadAttention(cfg.d_model, cfg.n_heads, dropout=cfg.dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = nn.MultiheadAttention(cfg.d_model, cfg.n_heads, dropout=cfg.dropout, batch_first=True)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.ffn = _FeedForward(cfg)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(
        self,
        x: torch.Tensor,
        memory: torch.Tensor,
        causal_mask: torch.Tensor,
        tgt_padding_mask: torch.Tensor | None,
        memory_padding_mask: torch.Tensor,
    ) -> torch.Tensor:
        h = self.norm1(x)
        h, _ = self.self_attn(
            h, h, h, attn_mask=causal_mask, key_padding_mask=tgt_padding_mask, need_weights=False
        )
        x = x + self.dropout(h)
        h = self.norm2(x)
        h, _ = self.cross_attn(
            h, memory, memory, key_padding_mask=memory_padding_mask, need_weights=False
        )
        x = x + self.dropout(h)
        x = x + self.dropout(self.ffn(self.norm3(x)))
        return x


class SpeechTransformer(nn.Module):
    """Conv front-end, encoder with CTC head, decoder with NLL head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.conv_channels
        self.conv1 = nn.Conv2d(1, c, kernel_size=3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(c, c, kernel_size=3, stride=2, padding=1)
        flat = _freq_after_subsampling(cfg.feature_dim) * c
        self.front_linear = nn.Linear(flat, cfg.d_model)
        self.encoder_layers = nn.ModuleList(_EncoderLayer(cfg) for _ in range(cfg.n_enc_layers))
        self.encoder_norm = nn.LayerNorm(cfg.d_model)
        self.embedding = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.decoder_layers = nn.ModuleList(_DecoderLayer(cfg) for _ in range(cfg.n_dec_layers))
        self.decoder_norm = nn.LayerNorm(cfg.d_model)
        self.ctc_head = nn.Linear(cfg.d_model, cfg.vocab_size)
        self.out_head = nn.Linear(cfg.d_model, cfg.vocab_size)
        self.dropout = nn.Dropout(cfg.dropout)
        self.register_buffer("positions", _sinusoidal_table(cfg.max_positions, cfg.d_model), persistent=False)

    def encode(
        self, features: torch.Tensor, feature_lengths: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """features (B,T,F) -> (memory, encoder lengths, ctc logits at T/4)."""
        x = features.unsqueeze(1)  # B,1,T,F
        x = F.gelu(self.conv1(x))
        x = F.gelu(self.conv2(x))  # B,C,T',F'
        b, c, t_out, f_out = x.shape
        x = x.permute(0, 2, 1, 3).reshape(b, t_out, c * f_out)
        x = self.front_linear(x)
        x = self.dropout(x + self.positions[:t_out])
        enc_lengths = subsampled_lengths(feature_lengths)
        pad_mask = torch.arange(t_out, device=x.device)[None, :] >= enc_lengths[:, None]
        for layer in self.encoder_layers:
            x = layer(x, pad_mask)
        memory = self.encoder_norm(x)
        return memory, enc_lengths, self.ctc_head(memory)

    def decode(
        self,
        memory: torch.Tensor,
        enc_lengths: torch.Tensor,
        decoder_input: torch.Tensor,
        decoder_input_lengths: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Causal decoder logits over the next token at each input position."""
        b, n = decoder_input.shape
        y = self.embedding(decoder_input) * math.sqrt(self.cfg.d_model)
        y = self.dropout(y + self.positions[:n])
        causal = torch.triu(torch.ones(n, n, dtype=torch.bool, device=y.device), diagonal=1)
        tgt_pad = None
        if decoder_input_lengths is not None:
            tgt_pad = torch.arange(n, device=y.device)[None, :] >= decoder_input_lengths[:, None]
        mem_pad = (
            torch.arange(memory.shape[1], device=y.device)[None, :] >= enc_lengths[:, None]
        )
        for layer in self.decoder_layers:
            y = layer(y, memory, causal, tgt_pad, mem_pad)
        return self.out_head(self.decoder_norm(y))

    def forward(self, batch: "Batch") -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (ctc_logits, encoder lengths, decoder logits for next-token)."""
        memory, enc_lengths, ctc_logits = self.encode(batch.features, batch.feature_lengths)
        dec_logits = self.decode(
            memory, enc_lengths, batch.decoder_ids[:, :-1], batch.decoder_lengths - 1
        )
        return ctc_logits, enc_lengths, dec_logits


def build_model(cfg: ModelConfig, seed: int = 0) -> SpeechTransformer:
    torch.manual_seed(seed)
    return SpeechTransformer(cfg)


# --------------------------------------------------------------------------
# Batching
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingExample:
    segment_id: str
    features: np.ndarray  # T x F float32
    ctc_ids: tuple[int, ...]
    decoder_ids: tuple[int, ...]  # BOS, SRC, TGT, ..., EOS
    task: str


@dataclass
class Batch:
    features: torch.Tensor  # B x T x F
    feature_lengths: torch.Tensor
    ctc_targets: tuple[tuple[int, ...], ...]
    decoder_ids: torch.Tensor  # B x N, padded with pad_id
    decoder_lengths: torch.Tensor
    pad_id: int
    tasks: tuple[str, ...] = ()

    def validate(self, vocab: Vocabulary) -> None:
        """Debug contract: decoder rows begin BOS + two language tokens and
        CTC targets never contain language-token ids."""
        lang_ids = {i for i, t in enumerate(vocab.tokens) if is_language_token(t)}
        for row in self.decoder_ids:
            ids = [int(x) for x in row[:3]]
            if ids[0] != vocab.bos_id or ids[1] not in lang_ids or ids[2] not in lang_ids:
                raise ValueError("decoder targets must start BOS, SRC_LANG, TGT_LANG")
        for targets in self.ctc_targets:
            if any(t in lang_ids for t in targets):
                raise ValueError("ctc targets must not contain language tokens")


def collate(examples: Sequence[TrainingExample], pad_id: int) -> Batch:
    max_t = max(ex.features.shape[0] for ex in examples)
    dim = examples[0].features.shape[1]
    feats = torch.zeros(len(examples), max_t, dim)
    feat_lengths = torch.zeros(len(examples), dtype=torch.long)
    max_n = max(len(ex.decoder_ids) for ex in examples)
    dec = torch.full((len(examples), max_n), pad_id, dtype=torch.long)
    dec_lengths = torch.zeros(len(examples), dtype=torch.long)
    for i, ex in enumerate(examples):
        t = ex.features.shape[0]
        feats[i, :t] = torch.from_numpy(np.ascontiguousarray(ex.features))
        feat_lengths[i] = t
        dec[i, : len(ex.decoder_ids)] = torch.tensor(ex.decoder_ids, dtype=torch.long)
        dec_lengths[i] = len(ex.decoder_ids)
    return Batch(
        features=feats,
        feature_lengths=feat_lengths,
        ctc_targets=tuple(ex.ctc_ids for ex in examples),
        decoder_ids=dec,
        decoder_lengths=dec_lengths,
        pad_id=pad_id,
        tasks=tuple(ex.task for ex in examples),
    )


# --------------------------------------------------------------------------
# Joint loss
# --------------------------------------------------------------------------


class _CtcLossFunction(torch.autograd.Function):
    """Bridges the numpy forward-backward CTC into autograd."""

    @staticmethod
    def forward(ctx, logits: torch.Tensor, targets: tuple[int, ...]) -> torch.Tensor:
        result = ctc_mod.ctc_loss(logits.detach().double().numpy(), list(targets))
        ctx.save_for_backward(torch.from_numpy(result.grad).to(logits.dtype))
        return logits.new_tensor(result.loss, dtype=torch.float64)

    @staticmethod
    def backward(ctx, grad_output: torch.Tensor):
        (grad,) = ctx.saved_tensors
        return (grad_output * grad).to(grad.dtype), None


def joint_loss(
    ctc_logits: torch.Tensor,
    enc_lengths: torch.Tensor,
    decoder_logits: torch.Tensor,
    batch: Batch,
    lambda_ctc: float,
) -> tuple[torch.Tensor, dict]:
    """lambda * L_ctc + (1 - lambda) * L_nll, exactly affine in lambda.

    L_nll is token-mean cross-entropy over the decoder targets (task tokens
    included, padding masked). L_ctc averages per-sample losses normalized by
    target length; samples whose targets cannot fit the encoder frames are
    excluded and counted.
    """
    if not 0.0 <= lambda_ctc <= 1.0:
        raise ValueError("lambda_ctc must lie in [0, 1]")
    labels = batch.decoder_ids[:, 1:].clone()
    n = labels.shape[1]
    label_mask = torch.arange(n)[None, :] < (batch.decoder_lengths - 1)[:, None]
    labels[~label_mask] = -100
    nll = F.cross_entropy(
        decoder_logits.reshape(-1, decoder_logits.shape[-1]).double(),
        labels.reshape(-1),
        ignore_index=-100,
    )

    ctc_terms: list[torch.Tensor] = []
    infeasible = 0
    for i, targets in enumerate(batch.ctc_targets):
        t_i = int(enc_lengths[i])
        if t_i < ctc_mod.min_input_length(targets):
            infeasible += 1
            continue
        sample = _CtcLossFunction.apply(ctc_logits[i, :t_i], tuple(targets))
        ctc_terms.append(sample / max(1, len(targets)))
    if ctc_terms:
        ctc = torch.stack(ctc_terms).mean()
    else:
        ctc = torch.zeros((), dtype=torch.float64)

    loss = lambda_ctc * ctc + (1.0 - lambda_ctc) * nll
    metrics = {
        "loss": float(loss.detach()),
        "ctc": float(ctc.detach()),
        "nll": float(nll.detach()),
        "ctc_infeasible": infeasible,
    }
    return loss, metrics


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int
    peak_lr: float = 5e-3
    lambda_ctc: float = 0.3
    warmup_frac: float = 0.1
    cooldown_frac: float = 0.1
    grad_clip_norm: float = 5.0
    weight_decay: float = 0.01
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.lambda_ctc <= 1.0:
            raise ValueError("lambda_ctc must lie in [0, 1]")
        if self.warmup_frac + self.cooldown_frac > 1.0:
            raise ValueError("warmup_frac + cooldown_frac must not exceed 1")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear 0->peak over the first warmup fraction, flat, then linear ->0."""
    if step < 0 or step > cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    warmup = cfg.warmup_frac * cfg.total_steps
    cooldown = cfg.cooldown_frac * cfg.total_steps
    if warmup > 0 and step < warmup:
        return cfg.peak_lr * step / warmup
    if cooldown > 0 and step > cfg.total_steps - cooldown:
        return cfg.peak_lr * (cfg.total_steps - step) / cooldown
    return cfg.peak_lr


class Trainer:
    """Owns optimizer state; one trainer per model. Deterministic per seed."""

    def __init__(self, model: SpeechTransformer, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.optimizer = torch.optim.AdamW(model.parameters(), lr=0.0, weight_decay=cfg.weight_decay)
        self.step_count = 0
        self.skipped_nonfinite = 0
        self.ctc_infeasible_total = 0
        torch.manual_seed(cfg.seed)

    def train_step(self, batch: Batch, debug_vocab: Vocabulary | None = None) -> dict:
        if debug_vocab is not None:
            batch.validate(debug_vocab)
        lr = lr_schedule(self.step_count, self.cfg)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.model.train()
        ctc_logits, enc_lengths, dec_logits = self.model(batch)
        loss, metrics = joint_loss(ctc_logits, enc_lengths, dec_logits, batch, self.cfg.lambda_ctc)
        self.ctc_infeasible_total += metrics["ctc_infeasible"]
        metrics["lr"] = lr
        if not torch.isfinite(loss):
            self.skipped_nonfinite += 1
            self.step_count += 1
            metrics["skipped"] = True
            return metrics
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        grad_norm = torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip_norm)
        self.optimizer.step()
        self.step_count += 1
        metrics["grad_norm"] = float(grad_norm)
        metrics["skipped"] = False
        return metrics


def mixed_batch_sampler(
    d_asr: Sequence[TrainingExample],
    d_st: Sequence[TrainingExample],
    batch_size: int,
    seed: int = 0,
    task_pure: bool = False,
) -> Iterator[list[TrainingExample]]:
    """Endless batch stream over the concatenation of both datasets.

    Each epoch is a fresh seeded permutation, so draws are uniform and
    proportional to dataset sizes. With task_pure=True every batch comes from
    a single task, picked proportionally to the dataset sizes.
    """
    if not d_asr and not d_st:
        raise ValueError("both datasets are empty")
    rng = np.random.Generator(np.random.PCG64(seed))

    if not task_pure:
        pool: list[TrainingExample] = list(d_asr) + list(d_st)
        buffer: list[TrainingExample] = []
        while True:
            for idx in rng.permutation(len(pool)):
                buffer.append(pool[idx])
                if len(buffer) == batch_size:
                    yield buffer
                    buffer = []
    else:
        pools = [list(d) for d in (d_asr, d_st) if d]
        weights = np.array([len(p) for p in pools], dtype=np.float64)
        weights /= weights.sum()
        cursors = [iter(()) for _ in pools]

        def refill(k: int):
            return (pools[k][i] for i in rng.permutation(len(pools[k])))

        while True:
            k = int(rng.choice(len(pools), p=weights))
            batch: list[TrainingExample] = []
            while len(batch) < batch_size:
                try:
                    batch.append(next(cursors[k]))
                except StopIteration:
                    cursors[k] = refill(k)
            yield batch


# --------------------------------------------------------------------------
# Greedy decoding
# --------------------------------------------------------------------------


def batch_greedy_decode(
    model: SpeechTransformer,
    vocab: Vocabulary,
    feature_list: Sequence[np.ndarray],
    src: str,
    tgt: str,
    max_len: int = 200,
) -> list[tuple[TargetSequence, bool]]:
    """Greedy continuation from BOS + preset language tokens, batched.

    Returns one (sequence, truncated) pair per input; truncated means EOS was
    not produced within max_len generated tokens.
    """
    model.eval()
    with torch.no_grad():
        n = len(feature_list)
        max_t = max(f.shape[0] for f in feature_list)
        feats = torch.zeros(n, max_t, feature_list[0].shape[1])
        lengths = torch.zeros(n, dtype=torch.long)
        for i, f in enumerate(feature_list):
            feats[i, : f.shape[0]] = torch.from_numpy(np.ascontiguousarray(f))
            lengths[i] = f.shape[0]
        memory, enc_lengths, _ = model.encode(feats, lengths)

        prime = [vocab.bos_id, vocab.language_id(src), vocab.language_id(tgt)]
        ids = torch.tensor([prime] * n, dtype=torch.long)
        done = torch.zeros(n, dtype=torch.bool)
        for _ in range(max_len):
            logits = model.decode(memory, enc_lengths, ids)
            nxt = logits[:, -1, :].argmax(dim=-1)
            nxt[done] = vocab.eos_id
            ids = torch.cat([ids, nxt[:, None]], dim=1)
            done |= nxt == vocab.eos_id
            if bool(done.all()):
                break

    out: list[tuple[TargetSequence, bool]] = []
    for i in range(n):
        row = [int(x) for x in ids[i, 1:]]  # drop BOS
        if vocab.eos_id in row:
            row = row[: row.index(vocab.eos_id)]
            truncated = False
        else:
            truncated = True
        out.append((vocab.decode(row), truncated))
    return out


def greedy_decode(
    model: SpeechTransformer,
    vocab: Vocabulary,
    features: np.ndarray,
    src: str,
    tgt: str,
    max_len: int = 200,
) -> tuple[TargetSequence, bool]:
    return batch_greedy_decode(model, vocab, [features], src, tgt, max_len)[0]


# --------------------------------------------------------------------------
# Checkpoints: magic "STCK", u32 header length, JSON header, raw f32 tensors
# --------------------------------------------------------------------------

_CKPT_MAGIC = b"STCK"


def save_checkpoint(path: str, model: SpeechTransformer) -> None:
    names = [name for name, _ in model.named_parameters()]
    header = {
        "format": 1,
        "config": asdict(model.cfg),
        "tensors": [
            {"name": name, "shape": list(param.shape)}
            for name, param in model.named_parameters()
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        state = dict(model.named_parameters())
        for name in names:
            fh.write(state[name].detach().cpu().numpy().astype("<f4").tobytes())


def load_checkpoint(path: str) -> SpeechTransformer:
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic)")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        if header.get("format") != 1:
            raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')}")
        cfg = ModelConfig(**header["config"])
        model = build_model(cfg, seed=0)
        with torch.no_grad():
            params = dict(model.named_parameters())
            for spec in header["tensors"]:
                shape = tuple(spec["shape"])
                count = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(fh.read(count * 4), dtype="<f4").reshape(shape)
                params[spec["name"]].copy_(torch.from_numpy(data.copy()))
    model.eval()
    return model
