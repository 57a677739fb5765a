"""Command-line entry point: the pipeline end to end, config-driven and seeded.

Subcommands: ingest, stats, segment, synth, serialize, features, train,
decode, spikes, eval, report, and demo. Every command writes a run manifest next
to its primary output; deterministic commands are byte-reproducible from it.
Exit codes: 0 success, 1 validation/usage error, 2 I/O error. STACST_LOG
(error|warn|info|debug) controls logging verbosity.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .corpus import (
    ManifestError,
    ValidationError,
    compute_stats,
    load_manifest,
    merge_channels,
    write_manifest,
)
from .ctc import PosteriorGrid, extract_spikes, log_softmax, write_spikes
from .evaluation import (
    RttmRecord,
    corpus_bleu,
    corpus_wer,
    overlap_bin_report,
    rttm_read,
    rttm_write,
    scd_score,
    segment_overlap_ratio,
)
from .features import log_mel, read_features, read_wav, resample, write_features
from .model import (
    ModelConfig,
    TrainConfig,
    Trainer,
    TrainingExample,
    batch_greedy_decode,
    build_model,
    collate,
    load_checkpoint,
    mixed_batch_sampler,
    save_checkpoint,
)
from .segmenter import (
    SegmentationConfig,
    SynthConfig,
    duration_histogram,
    load_segments,
    segment_mtms,
    segment_single_turn,
    synthesize_multi_turn,
    write_segments,
)
from .serializer import (
    SerializedExample,
    TargetSequence,
    Vocabulary,
    build_vocabulary,
    ctc_targets,
    make_example,
    load_examples,
    strip_task_tokens,
    write_examples,
)

log = logging.getLogger("stacst")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: list[str]
    outputs: list[str]
    version: str
    duration_s: float


def _write_run_manifest(primary_output: str, manifest: RunManifest) -> None:
    path = primary_output + ".run.json"
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(asdict(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _finish(args: argparse.Namespace, inputs: list[str], outputs: list[str], started: float) -> None:
    if not outputs:
        return
    config = {k: v for k, v in vars(args).items() if k != "func"}
    _write_run_manifest(
        outputs[0],
        RunManifest(
            command=args.command,
            config=config,
            seed=getattr(args, "seed", None),
            inputs=inputs,
            outputs=outputs,
            version=__version__,
            duration_s=round(time.time() - started, 3),
        ),
    )


def _parallel_map(fn, items, jobs: int):
    """Order-preserving map, threaded when jobs > 1."""
    if jobs <= 1:
        return [fn(x) for x in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    started = time.time()
    convs = load_manifest(args.input)
    write_manifest(convs, args.output)
    log.info("ingested %d conversations", len(convs))
    _finish(args, [args.input], [args.output], started)
    return 0


def cmd_stats(args) -> int:
    started = time.time()
    convs = load_manifest(args.input)
    segments = load_segments(args.segments) if args.segments else None
    stats = compute_stats(convs, segments)
    payload = {
        "total_duration_hours": stats.total_duration_hours,
        "utterance_count": stats.utterance_count,
        "speech_activity": stats.speech_activity,
        "overlap_ratio": stats.overlap_ratio,
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _finish(args, [args.input], [args.output], started)
    return 0


def cmd_segment(args) -> int:
    started = time.time()
    convs = load_manifest(args.input)
    cfg = SegmentationConfig(max_duration=args.max_duration, mode=args.mode)

    def one(conv):
        timeline = merge_channels(conv)
        if cfg.mode == "mtms":
            return segment_mtms(timeline, cfg)
        return segment_single_turn(timeline)

    segments = [seg for segs in _parallel_map(one, convs, args.jobs) for seg in segs]
    write_segments(segments, args.output)
    outputs = [args.output]
    if args.histogram:
        counts = duration_histogram(segments, args.bin_width)
        with open(args.histogram, "w", encoding="utf-8") as fh:
            fh.write("bin_start,bin_end,count\n")
            for i, count in enumerate(counts):
                fh.write(f"{i * args.bin_width},{(i + 1) * args.bin_width},{count}\n")
        outputs.append(args.histogram)
    log.info("wrote %d segments", len(segments))
    _finish(args, [args.input], outputs, started)
    return 0


def cmd_synth(args) -> int:
    started = time.time()
    convs = load_manifest(args.input)
    pool = [u for conv in convs for u in conv.utterances]
    conv, segments = synthesize_multi_turn(pool, SynthConfig(max_duration=args.max_duration, seed=args.seed))
    write_manifest([conv], args.out_manifest)
    write_segments(segments, args.out_segments)
    log.info("synthesized %d segments from %d utterances", len(segments), len(pool))
    _finish(args, [args.input], [args.out_manifest, args.out_segments], started)
    return 0


def cmd_serialize(args) -> int:
    started = time.time()
    convs = load_manifest(args.input)
    segments = load_segments(args.segments)
    timelines = {conv.id: merge_channels(conv) for conv in convs}
    tasks = args.tasks.split(",")
    examples: list[SerializedExample] = []
    for seg in segments:
        timeline = timelines.get(seg.conversation_id)
        if timeline is None:
            raise ValidationError(f"segment {seg.id!r}: unknown conversation {seg.conversation_id!r}")
        for task in tasks:
            if task == "asr":
                examples.append(make_example(seg, timeline, args.src, args.src))
            elif task == "st":
                examples.append(make_example(seg, timeline, args.src, args.tgt))
            else:
                raise ValidationError(f"unknown task {task!r} (use asr,st)")
    write_examples(examples, args.output)
    outputs = [args.output]
    if args.vocab_out:
        sequences = [TargetSequence(ex.tokens, src_lang=ex.src, tgt_lang=ex.tgt) for ex in examples]
        vocab = build_vocabulary(sequences, merges=args.merges)
        vocab.save(args.vocab_out)
        outputs.append(args.vocab_out)
    log.info("wrote %d serialized examples", len(examples))
    _finish(args, [args.input, args.segments], outputs, started)
    return 0


def cmd_features(args) -> int:
    started = time.time()
    convs = load_manifest(args.input)
    segments = load_segments(args.segments)
    by_conv = {conv.id: conv for conv in convs}
    os.makedirs(args.outdir, exist_ok=True)

    waveforms = {}
    for conv in convs:
        if conv.audio_path is None:
            raise ValidationError(f"conversation {conv.id!r} has no audio_path")
        w = read_wav(conv.audio_path, channel="mix")
        waveforms[conv.id] = resample(w, 16000)

    def one(seg):
        w = waveforms[seg.conversation_id]
        lo = int(seg.start * w.sample_rate)
        hi = int(seg.end * w.sample_rate)
        from .features import Waveform

        feat = log_mel(Waveform(w.samples[lo:hi], w.sample_rate), n_mels=args.n_mels)
        out = os.path.join(args.outdir, f"{seg.id}.stfb")
        write_features(out, feat)
        return out

    outputs = _parallel_map(one, segments, args.jobs)
    log.info("extracted features for %d segments", len(outputs))
    _finish(args, [args.input, args.segments], [args.outdir], started)
    return 0


def _load_training_examples(examples_path: str, featdir: str, vocab: Vocabulary) -> list[TrainingExample]:
    out: list[TrainingExample] = []
    for ex in load_examples(examples_path):
        feat = read_features(os.path.join(featdir, f"{ex.segment_id}.stfb"))
        frames = feat.frames
        frames = ((frames - frames.mean()) / (frames.std() + 1e-5)).astype(np.float32)
        seq = TargetSequence(ex.tokens, src_lang=ex.src, tgt_lang=ex.tgt)
        out.append(
            TrainingExample(
                segment_id=ex.segment_id,
                features=frames,
                ctc_ids=tuple(vocab.encode(ctc_targets(seq))),
                decoder_ids=tuple([vocab.bos_id] + vocab.encode(seq) + [vocab.eos_id]),
                task=ex.task,
            )
        )
    return out


def cmd_train(args) -> int:
    import itertools

    started = time.time()
    vocab = Vocabulary.load(args.vocab)
    examples = _load_training_examples(args.examples, args.featdir, vocab)
    d_asr = [ex for ex in examples if ex.task == "asr"]
    d_st = [ex for ex in examples if ex.task == "st"]
    feature_dim = examples[0].features.shape[1]
    model_cfg = ModelConfig.preset(args.preset, vocab_size=len(vocab), feature_dim=feature_dim, dropout=args.dropout)
    model = build_model(model_cfg, seed=args.seed)
    train_cfg = TrainConfig(
        total_steps=args.steps,
        peak_lr=args.peak_lr,
        lambda_ctc=args.lambda_ctc,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    trainer = Trainer(model, train_cfg)
    sampler = mixed_batch_sampler(d_asr, d_st, args.batch_size, seed=args.seed, task_pure=args.task_pure)
    debug_vocab = vocab if log.isEnabledFor(logging.DEBUG) else None
    for step, items in enumerate(itertools.islice(sampler, args.steps)):
        metrics = trainer.train_step(collate(items, vocab.pad_id), debug_vocab=debug_vocab)
        if step % max(1, args.steps // 20) == 0:
            log.info("step %d loss %.4f (ctc %.4f nll %.4f)", step, metrics["loss"], metrics["ctc"], metrics["nll"])
    save_checkpoint(args.output, model)
    log.info("saved checkpoint to %s", args.output)
    _finish(args, [args.examples, args.featdir, args.vocab], [args.output], started)
    return 0


def cmd_decode(args) -> int:
    started = time.time()
    vocab = Vocabulary.load(args.vocab)
    model = load_checkpoint(args.checkpoint)
    segments = load_segments(args.segments)
    feats = []
    for seg in segments:
        feat = read_features(os.path.join(args.featdir, f"{seg.id}.stfb"))
        frames = ((feat.frames - feat.frames.mean()) / (feat.frames.std() + 1e-5)).astype(np.float32)
        feats.append(frames)
    results = []
    for lo in range(0, len(feats), args.batch_size):
        results.extend(
            batch_greedy_decode(
                model, vocab, feats[lo : lo + args.batch_size], args.src, args.tgt, max_len=args.max_len
            )
        )
    with open(args.output, "w", encoding="utf-8") as fh, open(args.output + ".ids", "w", encoding="utf-8") as idf:
        for seg, (seq, truncated) in zip(segments, results):
            text = seq.text if args.keep_task_tokens else strip_task_tokens(seq)
            fh.write(text + "\n")
            idf.write(seg.id + ("\ttruncated" if truncated else "") + "\n")
    _finish(args, [args.checkpoint, args.segments, args.featdir], [args.output], started)
    return 0


def cmd_spikes(args) -> int:
    import torch

    started = time.time()
    vocab = Vocabulary.load(args.vocab)
    model = load_checkpoint(args.checkpoint)
    segments = load_segments(args.segments)
    rows = []
    records = []
    with torch.no_grad():
        for seg in segments:
            feat = read_features(os.path.join(args.featdir, f"{seg.id}.stfb"))
            frames = ((feat.frames - feat.frames.mean()) / (feat.frames.std() + 1e-5)).astype(np.float32)
            t = torch.from_numpy(frames).unsqueeze(0)
            _, enc_lengths, ctc_logits = model.encode(t, torch.tensor([frames.shape[0]]))
            grid = PosteriorGrid(
                log_softmax(ctc_logits[0, : int(enc_lengths[0])].double().numpy()),
                frame_stride=feat.frame_stride * model.cfg.subsample_factor,
            )
            events = extract_spikes(grid, vocab)
            if not args.include_xt:
                events = [ev for ev in events if ev.token == "TURN"]
            if args.min_posterior is not None:
                lp = grid.log_probs
                thresh = np.log(args.min_posterior)
                events = [
                    ev
                    for ev in events
                    if lp[ev.frame, vocab.turn_id if ev.token == "TURN" else vocab.xt_id] >= thresh
                ]
            for ev in events:
                rows.append((seg.id, ev))
                records.append(RttmRecord(seg.conversation_id, 1, seg.start + ev.time, 0.0, "change"))
    write_spikes(rows, args.output)
    outputs = [args.output]
    if args.rttm:
        rttm_write(sorted(records, key=lambda r: (r.file_id, r.onset)), args.rttm)
        outputs.append(args.rttm)
    log.info("wrote %d spikes", len(rows))
    _finish(args, [args.checkpoint, args.segments, args.featdir], outputs, started)
    return 0


def _read_lines(path: str) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def cmd_eval(args) -> int:
    started = time.time()
    report: dict = {"wer": None, "bleu": None, "scd": None, "bins": None}
    lines = []
    if args.wer:
        hyp, ref = (_read_lines(p) for p in args.wer)
        result = corpus_wer([strip_task_tokens(h) for h in hyp], [strip_task_tokens(r) for r in ref])
        report["wer"] = result.wer
        lines.append(f"WER     {result.wer:8.2f}%   (S={result.substitutions} D={result.deletions} I={result.insertions} / {result.ref_words} ref words)")
    if args.bleu:
        hyp = _read_lines(args.bleu[0])
        ref_sets = list(zip(*(_read_lines(p) for p in args.bleu[1:])))
        result = corpus_bleu(
            [strip_task_tokens(h) for h in hyp],
            [[strip_task_tokens(r) for r in rs] for rs in ref_sets],
        )
        report["bleu"] = result.score
        lines.append(f"BLEU    {result.score:8.2f}    (BP={result.brevity_penalty:.3f})")
    if args.scd:
        ref_path, hyp_path = args.scd
        ref_times = sorted(r.onset for r in rttm_read(ref_path))
        hyp_times = sorted(r.onset for r in rttm_read(hyp_path))
        scores = scd_score(ref_times, hyp_times, args.tolerance)
        report["scd"] = {
            "f1": scores.f1,
            "mdr": scores.mdr,
            "far": scores.far,
            "tolerance": scores.tolerance,
        }
        lines.append(f"SCD     F1 {scores.f1:6.2f}   MDR {scores.mdr:6.2f}   FAR {scores.far:6.2f}   (tol {args.tolerance}s)")
    for line in lines:
        print(line)
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _finish(args, [], [args.output], started)
    return 0


def cmd_report(args) -> int:
    started = time.time()
    convs = load_manifest(args.input)
    segments = load_segments(args.segments)
    timelines = {conv.id: merge_channels(conv) for conv in convs}
    scores: dict[str, tuple[float, int]] = {}
    with open(args.scores, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header != ["segment_id", "score", "ref_words"]:
            raise ValidationError("scores CSV must have header segment_id,score,ref_words")
        for line in fh:
            seg_id, score, words = line.strip().split(",")
            scores[seg_id] = (float(score), int(words))
    items = []
    for seg in segments:
        if seg.id not in scores:
            continue
        ratio = segment_overlap_ratio(seg, timelines[seg.conversation_id])
        score, words = scores[seg.id]
        items.append((ratio, score, words))
    edges = tuple(float(e) for e in args.edges.split(",")) if args.edges else None
    binned = overlap_bin_report(items, edges)
    payload = {
        "edges": list(binned.edges),
        "scores": list(binned.scores),
        "word_counts": list(binned.word_counts),
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    labels = (
        [f"x <= {binned.edges[0]:.1f}%"]
        + [f"{a:.1f}% < x <= {b:.1f}%" for a, b in zip(binned.edges, binned.edges[1:])]
        + [f"x > {binned.edges[-1]:.1f}%"]
    )
    for label, score, words in zip(labels, binned.scores, binned.word_counts):
        print(f"{label:>24}   score {score:8.2f}   words {words}")
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _finish(args, [args.input, args.segments, args.scores], [args.output], started)
    return 0


def cmd_demo(args) -> int:
    from .demo import DemoConfig, run_demo

    started = time.time()
    overrides = {
        key: value
        for key, value in (
            ("steps", args.steps),
            ("n_train_conversations", args.train_conversations),
            ("n_eval_conversations", args.eval_conversations),
        )
        if value is not None
    }
    cfg = DemoConfig(seed=args.seed, **overrides)
    report = run_demo(cfg, args.outdir)
    print(json.dumps({k: report[k] for k in ("loss_reduction_pct", "asr_wer", "st_wer", "st_bleu")}, indent=2, sort_keys=True))
    print(json.dumps(report["scd"], indent=2, sort_keys=True))
    _finish(args, [], [os.path.join(args.outdir, "report.json")], started)
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="stacst", description=__doc__)
    parser.add_argument("--version", action="version", version=f"stacst {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and normalize a conversation manifest")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="speech activity / overlap ratio statistics")
    p.add_argument("input")
    p.add_argument("--segments")
    p.add_argument("--output")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("segment", help="segment merged timelines")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--max-duration", type=float, default=30.0)
    p.add_argument("--mode", choices=["mtms", "single_turn"], default="mtms")
    p.add_argument("--histogram", help="write a duration histogram CSV")
    p.add_argument("--bin-width", type=float, default=1.0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("synth", help="synthesize gapless multi-turn segments from a single-turn pool")
    p.add_argument("input")
    p.add_argument("out_manifest")
    p.add_argument("out_segments")
    p.add_argument("--max-duration", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serialize", help="build serialized task-token targets")
    p.add_argument("input")
    p.add_argument("segments")
    p.add_argument("output")
    p.add_argument("--src", default="es")
    p.add_argument("--tgt", default="en")
    p.add_argument("--tasks", default="asr,st")
    p.add_argument("--vocab-out")
    p.add_argument("--merges", type=int, default=0)
    p.set_defaults(func=cmd_serialize)

    p = sub.add_parser("features", help="extract log-mel features per segment from WAV audio")
    p.add_argument("input")
    p.add_argument("segments")
    p.add_argument("outdir")
    p.add_argument("--n-mels", type=int, default=80)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a model on serialized examples + features")
    p.add_argument("examples")
    p.add_argument("featdir")
    p.add_argument("vocab")
    p.add_argument("output")
    p.add_argument("--preset", default="tiny")
    p.add_argument("--lambda-ctc", type=float, default=0.3)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--peak-lr", type=float, default=3e-3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--task-pure", action="store_true", help="force single-task batches")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="greedy decode features with preset language tokens")
    p.add_argument("checkpoint")
    p.add_argument("segments")
    p.add_argument("featdir")
    p.add_argument("output")
    p.add_argument("--vocab", required=True)
    p.add_argument("--src", default="es")
    p.add_argument("--tgt", default="en")
    p.add_argument("--max-len", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--keep-task-tokens", action="store_true")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("spikes", help="extract [TURN]/[XT] CTC spike times")
    p.add_argument("checkpoint")
    p.add_argument("segments")
    p.add_argument("featdir")
    p.add_argument("output")
    p.add_argument("--vocab", required=True)
    p.add_argument("--rttm", help="also write spike times as RTTM")
    p.add_argument("--include-xt", action="store_true", help="count [XT] spikes as changes too")
    p.add_argument("--min-posterior", type=float, default=None)
    p.set_defaults(func=cmd_spikes)

    p = sub.add_parser("eval", help="score hypotheses: WER, BLEU, and/or SCD")
    p.add_argument("--wer", nargs=2, metavar=("HYP", "REF"))
    p.add_argument("--bleu", nargs="+", metavar="FILE", help="HYP REF [REF ...]")
    p.add_argument("--scd", nargs=2, metavar=("REF_RTTM", "HYP_RTTM"))
    p.add_argument("--tolerance", type=float, default=0.25)
    p.add_argument("--output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="overlap-ratio-binned score report")
    p.add_argument("input")
    p.add_argument("segments")
    p.add_argument("scores", help="CSV segment_id,score,ref_words")
    p.add_argument("--edges", help="comma-separated interior bin edges in percent")
    p.add_argument("--output")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("demo", help="scripted synthetic end-to-end experiment")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", default="demo-out")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--train-conversations", type=int, default=None)
    p.add_argument("--eval-conversations", type=int, default=None)
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    level = _LOG_LEVELS.get(os.environ.get("STACST_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ValidationError, ManifestError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"i/o error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
