"""Segmentation of merged conversation timelines.

Three strategies:
  * greedy multi-turn windows of up to `max_duration` seconds, anchored at the
    first uncovered utterance start (silences, turns, and cross-talks stay
    inside the window);
  * single-turn: one segment per utterance, bounds equal to the utterance;
  * synthetic multi-turn: seeded back-to-back concatenation of a single-turn
    pool, which keeps speaker turns but has no gaps or cross-talk.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .corpus import Conversation, MergedTimeline, Utterance

__all__ = [
    "Segment",
    "SegmentationConfig",
    "SynthConfig",
    "segment_mtms",
    "segment_single_turn",
    "synthesize_multi_turn",
    "duration_histogram",
    "write_segments",
    "load_segments",
]


@dataclass(frozen=True)
class Segment:
    """A window over a merged timeline referencing the utterances it covers."""

    id: str
    conversation_id: str
    start: float
    end: float
    utterance_ids: tuple[str, ...]
    over_length: bool = False

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class SegmentationConfig:
    max_duration: float = 30.0
    mode: str = "mtms"  # "mtms" | "single_turn"

    def __post_init__(self) -> None:
        if self.max_duration <= 0:
            raise ValueError("max_duration must be positive")
        if self.mode not in ("mtms", "single_turn"):
            raise ValueError(f"unknown segmentation mode {self.mode!r}")


@dataclass(frozen=True)
class SynthConfig:
    max_duration: float = 30.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_duration <= 0:
            raise ValueError("max_duration must be positive")


def segment_mtms(timeline: MergedTimeline, cfg: SegmentationConfig) -> list[Segment]:
    """Greedy up-to-max-duration windows over a start-sorted timeline.

    Each window starts at the first uncovered utterance and extends while the
    candidate utterance ends within max_duration of the window start. Every
    utterance lands in exactly one segment. A single utterance longer than
    max_duration becomes its own segment flagged over_length.
    """
    utts = timeline.utterances
    segments: list[Segment] = []
    i = 0
    while i < len(utts):
        window_start = utts[i].start
        included = [utts[i]]
        j = i + 1
        while j < len(utts) and utts[j].end - window_start <= cfg.max_duration:
            included.append(utts[j])
            j += 1
        end = max(u.end for u in included)
        over_length = end - window_start > cfg.max_duration
        segments.append(
            Segment(
                id=f"{timeline.conversation_id}-mtms{len(segments):04d}",
                conversation_id=timeline.conversation_id,
                start=window_start,
                end=end,
                utterance_ids=tuple(u.id for u in included),
                over_length=over_length,
            )
        )
        i = j
    return segments


def segment_single_turn(timeline: MergedTimeline) -> list[Segment]:
    """One segment per utterance; bounds equal the utterance bounds."""
    return [
        Segment(
            id=f"{timeline.conversation_id}-st{i:04d}",
            conversation_id=timeline.conversation_id,
            start=u.start,
            end=u.end,
            utterance_ids=(u.id,),
        )
        for i, u in enumerate(timeline.utterances)
    ]


def synthesize_multi_turn(
    pool: Sequence[Utterance], cfg: SynthConfig
) -> tuple[Conversation, list[Segment]]:
    """Concatenate a shuffled single-turn pool into gapless multi-turn segments.

    The pool holds the utterances behind single-turn segments (speaker and
    text attached). A PCG64 generator seeded from cfg.seed permutes the pool
    once; consecutive draws are packed into a segment while the summed
    duration stays within max_duration. Utterances are re-timed back to back
    (next.start == previous.end), so the output has speaker turns but no
    silences and no cross-talk. Everything lands on one synthetic conversation
    whose id records the seed.

    Output is a pure function of (pool ordering, seed, max_duration).
    """
    if not pool:
        raise ValueError("synthesize_multi_turn: empty pool")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    order = rng.permutation(len(pool))

    conv_id = f"synth-{cfg.seed}"
    segments: list[Segment] = []
    retimed: list[Utterance] = []
    cursor = 0.0
    seg_start = 0.0
    seg_members: list[Utterance] = []

    def flush() -> None:
        nonlocal seg_start, seg_members
        if not seg_members:
            return
        end = seg_members[-1].end
        segments.append(
            Segment(
                id=f"{conv_id}-seg{len(segments):04d}",
                conversation_id=conv_id,
                start=seg_start,
                end=end,
                utterance_ids=tuple(u.id for u in seg_members),
                over_length=end - seg_start > cfg.max_duration,
            )
        )
        seg_members = []
        seg_start = end

    for k, idx in enumerate(order):
        src = pool[idx]
        dur = src.duration
        if seg_members and (cursor + dur) - seg_start > cfg.max_duration:
            flush()
        moved = replace(
            src,
            id=f"{conv_id}-u{k:05d}",
            start=cursor,
            end=cursor + dur,
        )
        retimed.append(moved)
        seg_members.append(moved)
        cursor += dur
    flush()

    return Conversation.build(conv_id, retimed), segments


def duration_histogram(segments: Sequence[Segment], bin_width: float) -> list[int]:
    """Counts of segment durations in bins [i*w, (i+1)*w); covers [0, max duration]."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    if not segments:
        return []
    n_bins = int(max(s.duration for s in segments) // bin_width) + 1
    counts = [0] * n_bins
    for s in segments:
        counts[int(s.duration // bin_width)] += 1
    return counts


# --------------------------------------------------------------------------
# Segment manifest I/O (JSON-lines, one segment per line)
# --------------------------------------------------------------------------


def write_segments(segments: Sequence[Segment], path: str) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for s in segments:
            fh.write(
                json.dumps(
                    {
                        "id": s.id,
                        "conversation_id": s.conversation_id,
                        "start": s.start,
                        "end": s.end,
                        "utterance_ids": list(s.utterance_ids),
                        "over_length": s.over_length,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")


def load_segments(path: str) -> list[Segment]:
    import json

    out: list[Segment] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(
                Segment(
                    id=obj["id"],
                    conversation_id=obj["conversation_id"],
                    start=float(obj["start"]),
                    end=float(obj["end"]),
                    utterance_ids=tuple(obj["utterance_ids"]),
                    over_length=bool(obj["over_length"]),
                )
            )
    return out
