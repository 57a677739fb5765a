"""Conversation data model, JSON-lines manifest I/O, channel merging, and corpus statistics.

A conversation is a two-channel telephone-style recording with one speaker per
channel. Utterances carry absolute times in seconds. All operations here are
pure: they validate, sort, and derive, but never mutate their inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

__all__ = [
    "Utterance",
    "Conversation",
    "MergedTimeline",
    "TimelineEntry",
    "CorpusStats",
    "ValidationError",
    "ManifestError",
    "load_manifest",
    "write_manifest",
    "merge_channels",
    "compute_stats",
]


class ValidationError(ValueError):
    """An invariant of the data model is violated; message names the offender."""


class ManifestError(ValueError):
    """A manifest line cannot be parsed; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


@dataclass(frozen=True)
class Utterance:
    """One time-stamped, speaker-attributed transcript (+ optional translation) unit."""

    id: str
    channel: int
    speaker: str
    start: float
    end: float
    transcript: str
    translation: str | None = None

    @property
    def duration(self) -> float:
        return self.end - self.start

    def validate(self) -> None:
        if self.end <= self.start:
            raise ValidationError(f"utterance {self.id!r}: end ({self.end}) <= start ({self.start})")
        if self.channel not in (0, 1):
            raise ValidationError(f"utterance {self.id!r}: channel must be 0 or 1, got {self.channel}")
        if self.start < 0:
            raise ValidationError(f"utterance {self.id!r}: negative start time {self.start}")
        if not self.transcript.strip():
            raise ValidationError(f"utterance {self.id!r}: empty transcript")


def _utterance_sort_key(u: Utterance) -> tuple[float, float, int]:
    return (u.start, u.end, u.channel)


@dataclass(frozen=True)
class Conversation:
    """A two-channel conversation: utterances sorted by (start, end, channel)."""

    id: str
    utterances: tuple[Utterance, ...]
    sample_rate: int = 16000
    audio_path: str | None = None

    @staticmethod
    def build(
        conv_id: str,
        utterances: Iterable[Utterance],
        sample_rate: int = 16000,
        audio_path: str | None = None,
    ) -> "Conversation":
        """Sort, validate, and freeze a conversation."""
        utts = tuple(sorted(utterances, key=_utterance_sort_key))
        conv = Conversation(conv_id, utts, sample_rate, audio_path)
        conv.validate()
        return conv

    def validate(self) -> None:
        seen: set[str] = set()
        for u in self.utterances:
            u.validate()
            if u.id in seen:
                raise ValidationError(f"conversation {self.id!r}: duplicate utterance id {u.id!r}")
            seen.add(u.id)
        # A single speaker cannot overlap themselves: check per channel.
        for channel in (0, 1):
            prev: Utterance | None = None
            for u in self.utterances:
                if u.channel != channel:
                    continue
                if prev is not None and u.start < prev.end:
                    raise ValidationError(
                        f"conversation {self.id!r}: same-channel overlap between "
                        f"{prev.id!r} and {u.id!r} on channel {channel}"
                    )
                prev = u

    @property
    def timeline_end(self) -> float:
        return max((u.end for u in self.utterances), default=0.0)


@dataclass(frozen=True)
class TimelineEntry:
    """An utterance on the merged timeline, flagged if it starts inside the previous one."""

    utterance: Utterance
    overlaps_previous: bool


@dataclass(frozen=True)
class MergedTimeline:
    """Both channels interleaved into one start-ordered sequence."""

    conversation_id: str
    entries: tuple[TimelineEntry, ...]

    @property
    def utterances(self) -> tuple[Utterance, ...]:
        return tuple(e.utterance for e in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class CorpusStats:
    total_duration_hours: float
    utterance_count: int
    speech_activity: float  # percent of the timeline covered by speech
    overlap_ratio: float  # percent of speech time with both speakers active


# --------------------------------------------------------------------------
# Manifest I/O
# --------------------------------------------------------------------------

_CONV_KEYS = {"id", "sample_rate", "audio_path", "utterances"}
_UTT_KEYS = {"id", "channel", "speaker", "start", "end", "transcript", "translation"}


def _parse_utterance(obj: object, line_number: int) -> Utterance:
    if not isinstance(obj, dict):
        raise ManifestError(line_number, "utterance entry is not an object")
    unknown = set(obj) - _UTT_KEYS
    if unknown:
        raise ManifestError(line_number, f"unknown utterance keys: {sorted(unknown)}")
    missing = (_UTT_KEYS - {"translation"}) - set(obj)
    if missing:
        raise ManifestError(line_number, f"missing utterance keys: {sorted(missing)}")
    return Utterance(
        id=str(obj["id"]),
        channel=int(obj["channel"]),
        speaker=str(obj["speaker"]),
        start=float(obj["start"]),
        end=float(obj["end"]),
        transcript=str(obj["transcript"]),
        translation=None if obj.get("translation") is None else str(obj["translation"]),
    )


def load_manifest(path: str) -> list[Conversation]:
    """Read a JSON-lines manifest, one conversation per line.

    Raises ManifestError with the line number on malformed JSON or schema
    violations, and ValidationError naming the utterance on invariant
    violations (end <= start, bad channel, same-channel overlap, ...).
    """
    conversations: list[Conversation] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(line_number, f"malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ManifestError(line_number, "conversation entry is not an object")
            unknown = set(obj) - _CONV_KEYS
            if unknown:
                raise ManifestError(line_number, f"unknown conversation keys: {sorted(unknown)}")
            missing = _CONV_KEYS - set(obj)
            if missing:
                raise ManifestError(line_number, f"missing conversation keys: {sorted(missing)}")
            utts = [_parse_utterance(u, line_number) for u in obj["utterances"]]
            conversations.append(
                Conversation.build(
                    str(obj["id"]),
                    utts,
                    sample_rate=int(obj["sample_rate"]),
                    audio_path=None if obj["audio_path"] is None else str(obj["audio_path"]),
                )
            )
    return conversations


def conversation_to_dict(conv: Conversation) -> dict:
    return {
        "id": conv.id,
        "sample_rate": conv.sample_rate,
        "audio_path": conv.audio_path,
        "utterances": [
            {
                "id": u.id,
                "channel": u.channel,
                "speaker": u.speaker,
                "start": u.start,
                "end": u.end,
                "transcript": u.transcript,
                "translation": u.translation,
            }
            for u in conv.utterances
        ],
    }


def write_manifest(conversations: Sequence[Conversation], path: str) -> None:
    """Write conversations as JSON-lines; load_manifest() round-trips exactly."""
    for conv in conversations:
        conv.validate()
    with open(path, "w", encoding="utf-8") as fh:
        for conv in conversations:
            fh.write(json.dumps(conversation_to_dict(conv), ensure_ascii=False))
            fh.write("\n")


# --------------------------------------------------------------------------
# Channel merging
# --------------------------------------------------------------------------


def merge_channels(conv: Conversation) -> MergedTimeline:
    """Interleave both channels into one start-ordered timeline.

    overlaps_previous is true iff the utterance starts strictly before the
    end of the immediately preceding utterance and the two sit on different
    channels (same-channel overlap is a validation error upstream).
    """
    conv.validate()
    ordered = sorted(conv.utterances, key=_utterance_sort_key)
    entries: list[TimelineEntry] = []
    for i, u in enumerate(ordered):
        overlaps = False
        if i > 0:
            prev = ordered[i - 1]
            overlaps = u.start < prev.end and u.channel != prev.channel
        entries.append(TimelineEntry(u, overlaps))
    return MergedTimeline(conv.id, tuple(entries))


# --------------------------------------------------------------------------
# Corpus statistics
# --------------------------------------------------------------------------


def _merge_intervals(intervals: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    merged: list[tuple[float, float]] = []
    for start, end in sorted(intervals):
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return merged


def _measure(intervals: Sequence[tuple[float, float]]) -> float:
    return sum(end - start for start, end in intervals)


def _intersect_measure(
    a: Sequence[tuple[float, float]], b: Sequence[tuple[float, float]]
) -> float:
    total = 0.0
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi > lo:
            total += hi - lo
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return total


def _clip(intervals: Iterable[tuple[float, float]], lo: float, hi: float) -> list[tuple[float, float]]:
    out = []
    for start, end in intervals:
        s, e = max(start, lo), min(end, hi)
        if e > s:
            out.append((s, e))
    return out


def compute_stats(
    conversations: Sequence[Conversation],
    segments: Sequence | None = None,
    *,
    durations: Mapping[str, float] | None = None,
) -> CorpusStats:
    """Aggregate speech-activity and overlap statistics.

    The timeline of each conversation runs from 0 to its last utterance end
    unless `durations` supplies an explicit audio duration for it. When
    `segments` is given (objects with conversation_id/start/end, see the
    segmenter module), statistics are computed inside segment windows only
    and the timeline is the summed window length.

    speech_activity = union of speech intervals / timeline * 100.
    overlap_ratio   = both-channels-active time / union of speech * 100.
    """
    timeline_total = 0.0
    speech_total = 0.0
    overlap_total = 0.0
    utterance_count = 0

    windows_by_conv: dict[str, list[tuple[float, float]]] = {}
    if segments is not None:
        for seg in segments:
            windows_by_conv.setdefault(seg.conversation_id, []).append((seg.start, seg.end))

    for conv in conversations:
        utterance_count += len(conv.utterances)
        ch = {
            0: [(u.start, u.end) for u in conv.utterances if u.channel == 0],
            1: [(u.start, u.end) for u in conv.utterances if u.channel == 1],
        }
        if segments is None:
            duration = conv.timeline_end
            if durations is not None and conv.id in durations:
                duration = durations[conv.id]
            windows = [(0.0, duration)] if duration > 0 else []
        else:
            windows = windows_by_conv.get(conv.id, [])
        for lo, hi in windows:
            c0 = _merge_intervals(_clip(ch[0], lo, hi))
            c1 = _merge_intervals(_clip(ch[1], lo, hi))
            overlap = _intersect_measure(c0, c1)
            speech = _measure(c0) + _measure(c1) - overlap
            timeline_total += hi - lo
            speech_total += speech
            overlap_total += overlap

    if timeline_total <= 0.0:
        return CorpusStats(0.0, utterance_count, 0.0, 0.0)
    activity = 100.0 * speech_total / timeline_total
    ratio = 100.0 * overlap_total / speech_total if speech_total > 0 else 0.0
    return CorpusStats(
        total_duration_hours=timeline_total / 3600.0,
        utterance_count=utterance_count,
        speech_activity=activity,
        overlap_ratio=ratio,
    )
