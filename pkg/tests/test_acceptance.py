"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. Criterion 7 trains the tiny
preset end to end on the synthetic corpus and takes several minutes; all other
criteria are fast. Tolerances are pinned here and nowhere else.
"""

import itertools
import math
import time

import numpy as np
import pytest
import torch

from stacst.corpus import load_manifest, merge_channels, write_manifest
from stacst.ctc import ctc_brute_force, ctc_loss, min_input_length
from stacst.evaluation import RttmRecord, ScdScores, corpus_bleu, rttm_read, rttm_write, scd_score, wer
from stacst.model import ModelConfig, TrainConfig, count_parameters
from stacst.segmenter import SegmentationConfig, segment_mtms
from stacst.serializer import TargetSequence, serialize_targets, strip_task_tokens

from conftest import WORDS, random_conversation


def _verdict(number: int, ok: bool, detail: str) -> None:
    print(f"\n[acceptance] criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {number}: {detail}"


def _random_ctc_instance(rng, max_t, max_v, max_len):
    while True:
        n_frames = int(rng.integers(1, max_t + 1))
        vocab = int(rng.integers(2, max_v + 1))
        targets = list(rng.integers(1, vocab, size=int(rng.integers(0, max_len + 1))))
        if n_frames >= min_input_length(targets):
            return rng.normal(scale=2.0, size=(n_frames, vocab)), targets


def test_criterion_1_ctc_oracle_equivalence():
    rng = np.random.default_rng(1001)
    started = time.monotonic()
    worst = 0.0
    for _ in range(200):
        logits, targets = _random_ctc_instance(rng, max_t=6, max_v=4, max_len=3)
        got = ctc_loss(logits, targets).loss
        want = ctc_brute_force(logits, targets)
        worst = max(worst, abs(got - want))
    elapsed = time.monotonic() - started
    _verdict(
        1,
        worst < 1e-9 and elapsed < 30.0,
        f"200 instances, max |log-space diff| {worst:.2e} (< 1e-9), {elapsed:.1f}s (< 30s)",
    )


def test_criterion_2_ctc_gradient_matches_finite_differences():
    rng = np.random.default_rng(1002)
    started = time.monotonic()
    eps = 1e-5
    worst = 0.0
    for _ in range(50):
        logits, targets = _random_ctc_instance(rng, max_t=8, max_v=5, max_len=3)
        grad = ctc_loss(logits, targets).grad
        for t in range(logits.shape[0]):
            for k in range(logits.shape[1]):
                hi, lo = logits.copy(), logits.copy()
                hi[t, k] += eps
                lo[t, k] -= eps
                fd = (ctc_loss(hi, targets).loss - ctc_loss(lo, targets).loss) / (2 * eps)
                denom = max(abs(fd), abs(grad[t, k]), 1e-8)
                worst = max(worst, abs(fd - grad[t, k]) / denom)
    elapsed = time.monotonic() - started
    _verdict(
        2,
        worst < 1e-4 and elapsed < 60.0,
        f"50 instances, max relative gradient error {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)",
    )


def test_criterion_3_joint_loss_affine_in_lambda():
    from stacst.model import Batch, build_model, collate, joint_loss, TrainingExample
    from stacst.serializer import attach_language_tokens, build_vocabulary

    seqs = [attach_language_tokens(TargetSequence(("ab", "cd")), "es", "en")]
    vocab = build_vocabulary(seqs, merges=0)
    cfg = ModelConfig.preset("tiny", vocab_size=len(vocab), feature_dim=8, dropout=0.0)
    model = build_model(cfg, seed=0)
    rng = np.random.default_rng(0)
    example = TrainingExample(
        segment_id="s",
        features=rng.normal(size=(40, 8)).astype(np.float32),
        ctc_ids=tuple(vocab.encode(seqs[0])[2:]),
        decoder_ids=tuple([vocab.bos_id] + vocab.encode(seqs[0]) + [vocab.eos_id]),
        task="st",
    )
    batch = collate([example], vocab.pad_id)
    model.eval()
    with torch.no_grad():
        outputs = model(batch)
        values = {lam: float(joint_loss(*outputs, batch, lam)[0]) for lam in (0.0, 0.3, 1.0)}
    residual = abs(values[0.3] - (0.7 * values[0.0] + 0.3 * values[1.0]))
    default_ok = TrainConfig(total_steps=1).lambda_ctc == 0.3
    _verdict(
        3,
        residual < 1e-12 and default_ok,
        f"three-point collinearity residual {residual:.2e} (machine precision), default lambda 0.3",
    )


def test_criterion_4_serialization_fidelity():
    from stacst.corpus import Conversation, Utterance

    conv = Conversation.build(
        "demo",
        [
            Utterance("a", 0, "spk0", 0.0, 1.0, "WORD1"),
            Utterance("b", 1, "spk1", 1.5, 3.0, "word1 word2"),
            Utterance("c", 0, "spk0", 2.5, 5.0, "WORD2 WORD3"),
        ],
    )
    timeline = merge_channels(conv)
    seg = segment_mtms(timeline, SegmentationConfig(max_duration=30.0))[0]
    demo_text = serialize_targets(seg, timeline).text
    fixture_ok = demo_text == "WORD1 [TURN] word1 word2 [TURN] [XT] WORD2 WORD3"

    rng = np.random.default_rng(1004)
    violations = 0
    for trial in range(1000):
        conv = random_conversation(rng, f"c{trial}", n_utterances=int(rng.integers(1, 20)))
        timeline = merge_channels(conv)
        by_id = {u.id: u for u in timeline.utterances}
        for seg in segment_mtms(timeline, SegmentationConfig(max_duration=15.0)):
            seq = serialize_targets(seg, timeline)
            tokens = seq.tokens
            utts = [by_id[uid] for uid in seg.utterance_ids]
            turns = sum(1 for p, c in zip(utts, utts[1:]) if c.speaker != p.speaker)
            xts = sum(
                1 for p, c in zip(utts, utts[1:]) if c.speaker != p.speaker and c.start < p.end
            )
            if tokens.count("[TURN]") != turns:
                violations += 1
            if tokens.count("[XT]") != xts:
                violations += 1
            if any(t == "[XT]" and (i == 0 or tokens[i - 1] != "[TURN]") for i, t in enumerate(tokens)):
                violations += 1
            if strip_task_tokens(seq) != " ".join(u.transcript for u in utts):
                violations += 1
    _verdict(
        4,
        fixture_ok and violations == 0,
        f"demonstration fixture exact ({fixture_ok}); 1000 fixtures, {violations} property violations",
    )


def test_criterion_5_segmentation_partition():
    rng = np.random.default_rng(1005)
    violations = 0
    for trial in range(500):
        conv = random_conversation(rng, f"c{trial}", n_utterances=int(rng.integers(1, 30)))
        timeline = merge_channels(conv)
        segments = segment_mtms(timeline, SegmentationConfig(max_duration=30.0))
        covered = [uid for s in segments for uid in s.utterance_ids]
        if sorted(covered) != sorted(u.id for u in timeline.utterances):
            violations += 1
        if len(covered) != len(set(covered)):
            violations += 1
        for s in segments:
            if not s.over_length and s.end - s.start > 30.0:
                violations += 1
        # Reference simulator: independent greedy walk.
        utts = timeline.utterances
        expect = []
        i = 0
        while i < len(utts):
            j = i + 1
            while j < len(utts) and utts[j].end - utts[i].start <= 30.0:
                j += 1
            expect.append(tuple(u.id for u in utts[i:j]))
            i = j
        if [s.utterance_ids for s in segments] != expect:
            violations += 1
    _verdict(5, violations == 0, f"500 timelines, {violations} partition/width/maximality violations")


def test_criterion_6_scd_metric_identity_and_monotonicity():
    # Integer count fixtures that land exactly on the published rates.
    a = ScdScores.from_counts(matched=565401, missed=257599, false_alarm=121599, tolerance=0.25)
    b = ScdScores.from_counts(matched=95892, missed=35108, false_alarm=26108, tolerance=0.25)
    identity_ok = (
        abs(a.mdr - 31.3) < 1e-9
        and abs(a.far - 17.7) < 1e-9
        and abs(a.f1 - 74.9) <= 0.05
        and abs(b.mdr - 26.8) < 1e-9
        and abs(b.far - 21.4) < 1e-9
        and abs(b.f1 - 75.8) <= 0.05
    )
    rng = np.random.default_rng(1006)
    monotone_ok = True
    for _ in range(100):
        refs = sorted(rng.uniform(0, 60, int(rng.integers(0, 30))))
        hyps = sorted(rng.uniform(0, 60, int(rng.integers(0, 30))))
        prev = None
        for tol in (0.1, 0.25, 0.5, 1.0):
            scores = scd_score(refs, hyps, tol)
            if prev is not None and (
                scores.f1 < prev.f1 - 1e-9
                or scores.mdr > prev.mdr + 1e-9
                or scores.far > prev.far + 1e-9
            ):
                monotone_ok = False
            prev = scores
    _verdict(
        6,
        identity_ok and monotone_ok,
        f"MDR 31.3/FAR 17.7 -> F1 {a.f1:.2f} (74.9±0.05); MDR 26.8/FAR 21.4 -> F1 {b.f1:.2f} "
        f"(75.8±0.05); tolerance sweep monotone on 100 fixtures: {monotone_ok}",
    )


@pytest.fixture(scope="module")
def demo_report(tmp_path_factory):
    from stacst.demo import DemoConfig, run_demo

    outdir = tmp_path_factory.mktemp("demo")
    started = time.monotonic()
    report = run_demo(DemoConfig(seed=0), str(outdir))
    report["_wall_seconds"] = time.monotonic() - started
    return report


def test_criterion_7a_training_loss_falls(demo_report):
    reduction = demo_report["loss_reduction_pct"]
    budget_ok = demo_report["_wall_seconds"] < 1800
    _verdict(
        7,
        reduction >= 90.0 and budget_ok,
        f"(a) loss reduction {reduction:.1f}% (>= 90%), wall {demo_report['_wall_seconds']:.0f}s (< 1800s)",
    )


def test_criterion_7b_heldout_wer(demo_report):
    _verdict(7, demo_report["asr_wer"] < 10.0, f"(b) held-out ASR WER {demo_report['asr_wer']:.2f}% (< 10%)")


def test_criterion_7c_turn_spike_f1(demo_report):
    scd = demo_report["scd"]
    _verdict(
        7,
        scd["f1"] >= 90.0 and scd["tolerance"] == 0.25,
        f"(c) TURN-spike SCD F1 {scd['f1']:.1f}% (>= 90%) at tolerance 0.25s "
        f"(MDR {scd['mdr']:.1f}, FAR {scd['far']:.1f})",
    )


def test_criterion_7d_task_token_selection(demo_report):
    from stacst.demo import LEXICON, SOURCE_WORDS

    source_chars = set("".join(SOURCE_WORDS))
    target_chars = set("".join(LEXICON.values()))
    disjoint = not (source_chars & target_chars)
    ok = (
        demo_report["asr_alphabet_ok"]
        and demo_report["st_alphabet_ok"]
        and disjoint
        and demo_report["st_wer"] < 10.0
    )
    _verdict(
        7,
        ok,
        f"(d) ASR/ST prompts yield disjoint correct alphabets; ST WER {demo_report['st_wer']:.2f}% "
        f"(BLEU {demo_report['st_bleu']:.1f})",
    )


def test_criterion_8_round_trips_byte_exact(tmp_path):
    rng = np.random.default_rng(1008)
    manifest_ok = True
    for trial in range(100):
        convs = [random_conversation(rng, f"c{trial}-{k}", n_utterances=int(rng.integers(1, 8))) for k in range(2)]
        p1 = tmp_path / f"m{trial}a.jsonl"
        p2 = tmp_path / f"m{trial}b.jsonl"
        write_manifest(convs, str(p1))
        write_manifest(load_manifest(str(p1)), str(p2))
        if p1.read_bytes() != p2.read_bytes():
            manifest_ok = False
    rttm_ok = True
    for trial in range(100):
        records = [
            RttmRecord(
                file_id=f"f{int(rng.integers(0, 3))}",
                channel=int(rng.integers(1, 3)),
                onset=round(float(rng.uniform(0, 600)), 3),
                duration=round(float(rng.uniform(0, 20)), 3),
                speaker=f"spk{int(rng.integers(0, 5))}",
            )
            for _ in range(int(rng.integers(1, 30)))
        ]
        p1 = tmp_path / f"r{trial}a.rttm"
        p2 = tmp_path / f"r{trial}b.rttm"
        rttm_write(records, str(p1))
        rttm_write(rttm_read(str(p1)), str(p2))
        if p1.read_bytes() != p2.read_bytes():
            rttm_ok = False
    _verdict(8, manifest_ok and rttm_ok, f"manifest byte-exact: {manifest_ok}; RTTM byte-exact: {rttm_ok} (100 each)")


def test_criterion_9_wer_and_bleu_oracles():
    rng = np.random.default_rng(1009)

    def distance(a, b):
        if len(a) > len(b):
            a, b = b, a
        row = list(range(len(a) + 1))
        for j, y in enumerate(b, start=1):
            new = [j]
            for i, x in enumerate(a, start=1):
                new.append(row[i - 1] if x == y else 1 + min(row[i - 1], row[i], new[-1]))
            row = new
        return row[-1]

    wer_ok = True
    for _ in range(200):
        ref = [WORDS[int(k)] for k in rng.integers(0, len(WORDS), int(rng.integers(1, 12)))]
        hyp = [WORDS[int(k)] for k in rng.integers(0, len(WORDS), int(rng.integers(0, 12)))]
        result = wer(" ".join(hyp), " ".join(ref))
        if result.edits != distance(hyp, ref) or result.wer != pytest.approx(
            100.0 * distance(hyp, ref) / len(ref)
        ):
            wer_ok = False

    all_match = corpus_bleu(["the cat sat on the mat"] * 3, ["the cat sat on the mat"] * 3).score
    # Hand-counted two-sentence fixture: matches 9/10, 7/8, 5/6, 3/4 and
    # BP = exp(1 - 11/10); see test_evaluation for the counting.
    hand = corpus_bleu(
        ["the cat sat on the mat", "a quick brown fox"],
        ["the cat sat on the mat", "the quick brown fox jumps"],
    ).score
    hand_expected = 100.0 * math.exp(1 - 11 / 10) * (9 / 10 * 7 / 8 * 5 / 6 * 3 / 4) ** 0.25
    bleu_ok = all_match == pytest.approx(100.0, abs=1e-9) and hand == pytest.approx(
        hand_expected, abs=1e-6
    )
    _verdict(
        9,
        wer_ok and bleu_ok,
        f"WER == DP oracle on 200 pairs: {wer_ok}; all-match BLEU {all_match:.1f} == 100; "
        f"hand fixture {hand:.6f} vs {hand_expected:.6f} (within 1e-6)",
    )


def test_criterion_10_parameter_count_presets():
    targets = {"s": 21_000_000, "m": 86_000_000, "l": 298_000_000}
    counts = {name: count_parameters(ModelConfig.preset(name, vocab_size=5000)) for name in targets}
    ok = all(abs(counts[n] - t) / t <= 0.10 for n, t in targets.items())
    detail = ", ".join(
        f"{n.upper()}={counts[n]/1e6:.1f}M vs {t/1e6:.0f}M ({100*abs(counts[n]-t)/t:.1f}%)"
        for n, t in targets.items()
    )
    _verdict(10, ok, f"analytic counts within ±10%: {detail}")
