"""End-to-end synthetic experiment at desk scale.

Builds a seeded two-speaker toy corpus (a small source lexicon with a
deterministic word-for-word translation into a disjoint uppercase alphabet),
runs the full pipeline -- merge, greedy segmentation, serialization with task
tokens, synthetic features, joint CTC/NLL training of the tiny preset -- then
measures held-out transcription/translation quality and how well the [TURN]
CTC spikes recover the planted speaker-change times.

Everything is a pure function of the seed: corpus, features, batch order,
parameter init. The emitted report.json carries the fields the acceptance
suite asserts on.
"""

from __future__ import annotations

import itertools
import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .corpus import Conversation, MergedTimeline, Utterance, merge_channels, write_manifest
from .ctc import PosteriorGrid, extract_spikes, log_softmax, write_spikes
from .evaluation import RttmRecord, ScdScores, corpus_bleu, corpus_wer, rttm_write, scd_score
from .features import FeatureSequence, SynthAcousticModel, UtteranceLayout, synth_features
from .model import (
    Batch,
    ModelConfig,
    TrainConfig,
    Trainer,
    TrainingExample,
    batch_greedy_decode,
    build_model,
    collate,
    joint_loss,
    mixed_batch_sampler,
    save_checkpoint,
)
from .segmenter import Segment, SegmentationConfig, segment_mtms, write_segments
from .serializer import (
    SerializedExample,
    TargetSequence,
    Vocabulary,
    build_vocabulary,
    ctc_targets,
    make_example,
    strip_task_tokens,
    write_examples,
)

__all__ = ["DemoConfig", "demo_synthetic", "run_demo", "SOURCE_WORDS", "LEXICON"]

SOURCE_WORDS = ("la", "bo", "mi", "tu", "sa", "re", "no", "pa", "du", "ki")
LEXICON = {
    "la": "UN",
    "bo": "EV",
    "mi": "OS",
    "tu": "AR",
    "sa": "IL",
    "re": "YM",
    "no": "QO",
    "pa": "WE",
    "du": "XA",
    "ki": "ZU",
}

SRC_LANG = "es"
TGT_LANG = "en"


@dataclass(frozen=True)
class DemoConfig:
    seed: int = 0
    n_train_conversations: int = 96
    n_eval_conversations: int = 10
    utterances_per_conversation: int = 24
    min_words: int = 2
    max_words: int = 4
    char_duration: float = 0.08  # seconds of audio per character
    # Inter-turn pauses run longer than a speaker's own inter-utterance
    # pauses, as in real conversation; the asymmetry makes the boundary type
    # locally decodable alongside the speaker-offset change.
    gap_min: float = 0.12
    gap_max: float = 0.30
    same_gap_min: float = 0.02
    same_gap_max: float = 0.10
    overlap_prob: float = 0.3
    overlap_min: float = 0.05
    overlap_max: float = 0.18
    same_speaker_prob: float = 0.25
    max_segment_duration: float = 4.0
    feature_dim: int = 80
    frame_stride: float = 0.01
    noise_scale: float = 0.1
    speaker_scale: float = 2.0
    steps: int = 7000
    batch_size: int = 8
    peak_lr: float = 4e-3
    lambda_ctc: float = 0.3
    dropout: float = 0.05
    tolerance: float = 0.25
    max_decode_len: int = 140


def _snap(value: float, stride: float) -> float:
    return round(value / stride) * stride


def _make_conversation(conv_id: str, cfg: DemoConfig, rng: np.random.Generator) -> Conversation:
    speakers = ("A", "B")
    utts: list[Utterance] = []
    last_end_by_channel = {0: 0.0, 1: 0.0}
    prev_end = 0.0
    prev_start = -1.0
    speaker_idx = int(rng.integers(0, 2))
    for i in range(cfg.utterances_per_conversation):
        n_words = int(rng.integers(cfg.min_words, cfg.max_words + 1))
        words = [SOURCE_WORDS[int(k)] for k in rng.integers(0, len(SOURCE_WORDS), size=n_words)]
        text = " ".join(words)
        translation = " ".join(LEXICON[w] for w in words)
        duration = len(text) * cfg.char_duration

        if i == 0:
            start = 0.0
        else:
            change = rng.random() >= cfg.same_speaker_prob
            if change:
                speaker_idx = 1 - speaker_idx
                if rng.random() < cfg.overlap_prob:
                    start = prev_end - rng.uniform(cfg.overlap_min, cfg.overlap_max)
                else:
                    start = prev_end + rng.uniform(cfg.gap_min, cfg.gap_max)
            else:
                start = prev_end + rng.uniform(cfg.same_gap_min, cfg.same_gap_max)
            # Keep the global ordering strict and never overlap own channel.
            start = max(start, prev_start + 0.05, last_end_by_channel[speaker_idx] + 0.02)
        start = _snap(start, cfg.frame_stride)
        end = _snap(start + duration, cfg.frame_stride)
        utts.append(
            Utterance(
                id=f"{conv_id}-u{i:03d}",
                channel=speaker_idx,
                speaker=speakers[speaker_idx],
                start=start,
                end=end,
                transcript=text,
                translation=translation,
            )
        )
        last_end_by_channel[speaker_idx] = end
        prev_end = end
        prev_start = start
    return Conversation.build(conv_id, utts)


def _make_corpus(cfg: DemoConfig) -> tuple[list[Conversation], list[Conversation]]:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    train = [_make_conversation(f"train-{i:03d}", cfg, rng) for i in range(cfg.n_train_conversations)]
    eval_ = [_make_conversation(f"eval-{i:03d}", cfg, rng) for i in range(cfg.n_eval_conversations)]
    return train, eval_


def _segment_examples(
    conversations: list[Conversation], cfg: DemoConfig
) -> tuple[list[tuple[Segment, MergedTimeline]], list[SerializedExample]]:
    seg_cfg = SegmentationConfig(max_duration=cfg.max_segment_duration, mode="mtms")
    pairs: list[tuple[Segment, MergedTimeline]] = []
    examples: list[SerializedExample] = []
    for conv in conversations:
        timeline = merge_channels(conv)
        for seg in segment_mtms(timeline, seg_cfg):
            pairs.append((seg, timeline))
            examples.append(make_example(seg, timeline, SRC_LANG, SRC_LANG))
            examples.append(make_example(seg, timeline, SRC_LANG, TGT_LANG))
    return pairs, examples


def _normalize(frames: np.ndarray) -> np.ndarray:
    mean = frames.mean()
    std = frames.std()
    return ((frames - mean) / (std + 1e-5)).astype(np.float32)


def _segment_features(
    seg: Segment,
    timeline: MergedTimeline,
    vocab: Vocabulary,
    acoustic: SynthAcousticModel,
    noise_seed: int,
) -> FeatureSequence:
    by_id = {u.id: u for u in timeline.utterances}
    layouts = []
    for uid in seg.utterance_ids:
        u = by_id[uid]
        symbol_ids = tuple(vocab.encode(TargetSequence(tuple(u.transcript.split(" ")))))
        layouts.append(
            UtteranceLayout(
                symbol_ids=symbol_ids,
                speaker=u.speaker,
                start=u.start - seg.start,
                end=u.end - seg.start,
            )
        )
    return synth_features(layouts, seg.duration, acoustic, noise_seed=noise_seed)


def _training_examples(
    pairs: list[tuple[Segment, MergedTimeline]],
    vocab: Vocabulary,
    acoustic: SynthAcousticModel,
    cfg: DemoConfig,
    noise_base: int,
) -> tuple[dict[str, np.ndarray], list[TrainingExample]]:
    feats_by_segment: dict[str, np.ndarray] = {}
    examples: list[TrainingExample] = []
    for k, (seg, timeline) in enumerate(pairs):
        feat = _segment_features(seg, timeline, vocab, acoustic, noise_seed=noise_base + k)
        frames = _normalize(feat.frames)
        feats_by_segment[seg.id] = frames
        for src, tgt in ((SRC_LANG, SRC_LANG), (SRC_LANG, TGT_LANG)):
            ex = make_example(seg, timeline, src, tgt)
            seq = TargetSequence(ex.tokens, src_lang=src, tgt_lang=tgt)
            examples.append(
                TrainingExample(
                    segment_id=seg.id,
                    features=frames,
                    ctc_ids=tuple(vocab.encode(ctc_targets(seq))),
                    decoder_ids=tuple([vocab.bos_id] + vocab.encode(seq) + [vocab.eos_id]),
                    task=ex.task,
                )
            )
    return feats_by_segment, examples


def _probe_loss(model, batches: list[Batch], lambda_ctc: float) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for batch in batches:
            ctc_logits, enc_lengths, dec_logits = model(batch)
            loss, _ = joint_loss(ctc_logits, enc_lengths, dec_logits, batch, lambda_ctc)
            total += float(loss)
    return total / len(batches)


def _alphabet(texts: list[str]) -> set[str]:
    chars: set[str] = set()
    for t in texts:
        chars.update(c for c in t if c != " ")
    return chars


def run_demo(cfg: DemoConfig, outdir: str) -> dict:
    """Run the full synthetic experiment; returns (and writes) the report."""
    started = time.time()
    os.makedirs(outdir, exist_ok=True)

    train_convs, eval_convs = _make_corpus(cfg)
    write_manifest(train_convs, os.path.join(outdir, "train.jsonl"))
    write_manifest(eval_convs, os.path.join(outdir, "eval.jsonl"))

    train_pairs, train_serialized = _segment_examples(train_convs, cfg)
    eval_pairs, _ = _segment_examples(eval_convs, cfg)
    write_segments([seg for seg, _ in train_pairs], os.path.join(outdir, "train-segments.jsonl"))
    write_examples(train_serialized, os.path.join(outdir, "train-examples.jsonl"))

    sequences = [TargetSequence(ex.tokens, src_lang=ex.src, tgt_lang=ex.tgt) for ex in train_serialized]
    vocab = build_vocabulary(sequences, merges=0)
    vocab.save(os.path.join(outdir, "vocab.txt"))

    acoustic = SynthAcousticModel.create(
        n_symbols=len(vocab),
        speakers=("A", "B"),
        feature_dim=cfg.feature_dim,
        seed=cfg.seed + 1,
        frame_stride=cfg.frame_stride,
        noise_scale=cfg.noise_scale,
        speaker_scale=cfg.speaker_scale,
    )
    _, train_examples = _training_examples(train_pairs, vocab, acoustic, cfg, noise_base=10_000)
    eval_feats, _ = _training_examples(eval_pairs, vocab, acoustic, cfg, noise_base=20_000)

    d_asr = [ex for ex in train_examples if ex.task == "asr"]
    d_st = [ex for ex in train_examples if ex.task == "st"]

    model_cfg = ModelConfig.preset(
        "tiny", vocab_size=len(vocab), feature_dim=cfg.feature_dim, dropout=cfg.dropout
    )
    model = build_model(model_cfg, seed=cfg.seed)
    train_cfg = TrainConfig(
        total_steps=cfg.steps,
        peak_lr=cfg.peak_lr,
        lambda_ctc=cfg.lambda_ctc,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
    )
    trainer = Trainer(model, train_cfg)

    sampler = mixed_batch_sampler(d_asr, d_st, cfg.batch_size, seed=cfg.seed)
    probe_batches = [
        collate(items, vocab.pad_id) for items in itertools.islice(sampler, 4)
    ]
    loss_initial = _probe_loss(model, probe_batches, cfg.lambda_ctc)

    history: list[float] = []
    for batch_items in itertools.islice(sampler, cfg.steps):
        metrics = trainer.train_step(collate(batch_items, vocab.pad_id))
        history.append(metrics["loss"])
    loss_final = _probe_loss(model, probe_batches, cfg.lambda_ctc)
    save_checkpoint(os.path.join(outdir, "model.stck"), model)
    with open(os.path.join(outdir, "loss_history.csv"), "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for step, value in enumerate(history):
            fh.write(f"{step},{value}\n")

    # Held-out decoding for both tasks on the same audio.
    eval_segments = [seg for seg, _ in eval_pairs]
    feats = [eval_feats[seg.id] for seg in eval_segments]
    asr_refs = [
        strip_task_tokens(TargetSequence(make_example(seg, tl, SRC_LANG, SRC_LANG).tokens))
        for seg, tl in eval_pairs
    ]
    st_refs = [
        strip_task_tokens(TargetSequence(make_example(seg, tl, SRC_LANG, TGT_LANG).tokens))
        for seg, tl in eval_pairs
    ]
    asr_out = batch_greedy_decode(model, vocab, feats, SRC_LANG, SRC_LANG, max_len=cfg.max_decode_len)
    st_out = batch_greedy_decode(model, vocab, feats, SRC_LANG, TGT_LANG, max_len=cfg.max_decode_len)
    asr_hyps = [strip_task_tokens(seq) for seq, _ in asr_out]
    st_hyps = [strip_task_tokens(seq) for seq, _ in st_out]
    asr_wer = corpus_wer(asr_hyps, asr_refs)
    st_wer = corpus_wer(st_hyps, st_refs)
    st_bleu = corpus_bleu(st_hyps, st_refs)

    source_chars = _alphabet([w for w in SOURCE_WORDS])
    target_chars = _alphabet(list(LEXICON.values()))
    asr_alphabet_ok = _alphabet(asr_hyps) <= source_chars and len(_alphabet(asr_hyps)) > 0
    st_alphabet_ok = _alphabet(st_hyps) <= target_chars and len(_alphabet(st_hyps)) > 0

    # CTC [TURN] spikes vs planted speaker-change times.
    spike_rows = []
    hyp_records: list[RttmRecord] = []
    ref_records: list[RttmRecord] = []
    matched = missed = false_alarm = 0
    model.eval()
    with torch.no_grad():
        for (seg, timeline), frames in zip(eval_pairs, feats):
            t = torch.from_numpy(frames).unsqueeze(0)
            lengths = torch.tensor([frames.shape[0]])
            _, enc_lengths, ctc_logits = model.encode(t, lengths)
            grid = PosteriorGrid(
                log_softmax(ctc_logits[0, : int(enc_lengths[0])].double().numpy()),
                frame_stride=cfg.frame_stride * model_cfg.subsample_factor,
            )
            events = [ev for ev in extract_spikes(grid, vocab) if ev.token == "TURN"]
            hyp_times = sorted(seg.start + ev.time for ev in events)
            by_id = {u.id: u for u in timeline.utterances}
            seg_utts = [by_id[uid] for uid in seg.utterance_ids]
            ref_times = [
                cur.start
                for prev, cur in zip(seg_utts, seg_utts[1:])
                if cur.speaker != prev.speaker
            ]
            scores = scd_score(ref_times, hyp_times, cfg.tolerance)
            matched += scores.matched
            missed += scores.missed
            false_alarm += scores.false_alarm
            for ev in events:
                spike_rows.append((seg.id, ev))
                hyp_records.append(
                    RttmRecord(seg.conversation_id, 1, seg.start + ev.time, 0.0, "change")
                )
            for rt in ref_times:
                ref_records.append(RttmRecord(seg.conversation_id, 1, rt, 0.0, "change"))
    scd = ScdScores.from_counts(matched, missed, false_alarm, cfg.tolerance)
    write_spikes(spike_rows, os.path.join(outdir, "spikes.jsonl"))
    rttm_write(sorted(hyp_records, key=lambda r: (r.file_id, r.onset)), os.path.join(outdir, "hyp.rttm"))
    rttm_write(sorted(ref_records, key=lambda r: (r.file_id, r.onset)), os.path.join(outdir, "ref.rttm"))

    report = {
        "config": asdict(cfg),
        "vocab_size": len(vocab),
        "n_train_segments": len(train_pairs),
        "n_eval_segments": len(eval_pairs),
        "loss_initial": loss_initial,
        "loss_final": loss_final,
        "loss_reduction_pct": 100.0 * (1.0 - loss_final / loss_initial),
        "asr_wer": asr_wer.wer,
        "st_wer": st_wer.wer,
        "st_bleu": st_bleu.score,
        "asr_alphabet_ok": asr_alphabet_ok,
        "st_alphabet_ok": st_alphabet_ok,
        "scd": {
            "f1": scd.f1,
            "mdr": scd.mdr,
            "far": scd.far,
            "tolerance": scd.tolerance,
            "matched": scd.matched,
            "missed": scd.missed,
            "false_alarm": scd.false_alarm,
        },
        "ctc_infeasible": trainer.ctc_infeasible_total,
        "skipped_steps": trainer.skipped_nonfinite,
    }
    with open(os.path.join(outdir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    # Wall time lives outside the report so reports stay byte-reproducible.
    with open(os.path.join(outdir, "timing.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"{time.time() - started:.1f}\n")
    return report


def demo_synthetic(seed: int = 0, outdir: str = "demo-out") -> dict:
    return run_demo(DemoConfig(seed=seed), outdir)
