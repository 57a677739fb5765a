"""Scoring: WER, corpus BLEU, tolerance-matched speaker-change detection,
RTTM I/O, and overlap-ratio-binned reporting.

All functions are pure. Text metrics expect task tokens to be stripped first
(serializer.strip_task_tokens); both metrics lowercase internally anyway so a
caller cannot accidentally score case.

Rate conventions: MDR = missed / reference events, FAR = false alarms /
hypothesized events, both in percent; F1 is the harmonic mean of (100 - FAR)
and (100 - MDR). This is the unique reading under which published
MDR/FAR/F1 triples for boundary detection are mutually consistent.
"""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import MergedTimeline

__all__ = [
    "WerResult",
    "BleuResult",
    "ScdScores",
    "RttmRecord",
    "OverlapBinReport",
    "EmptyReferenceError",
    "wer",
    "corpus_wer",
    "bleu_tokenize",
    "corpus_bleu",
    "scd_score",
    "reference_changes",
    "rttm_write",
    "rttm_read",
    "overlap_bin_report",
    "segment_overlap_ratio",
]


class EmptyReferenceError(ValueError):
    """WER against an empty reference has no denominator; filter such pairs."""


# --------------------------------------------------------------------------
# Word error rate
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WerResult:
    wer: float  # percent
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int

    @property
    def edits(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def _edit_ops(hyp: list[str], ref: list[str]) -> tuple[int, int, int]:
    """Levenshtein alignment with unit costs; returns (subs, dels, ins)."""
    n, m = len(ref), len(hyp)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if ref[i - 1] == hyp[j - 1]:
                dist[i][j] = dist[i - 1][j - 1]
            else:
                dist[i][j] = 1 + min(dist[i - 1][j - 1], dist[i - 1][j], dist[i][j - 1])
    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dist[i][j] == dist[i - 1][j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + 1:
            subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return subs, dels, ins


def wer(hyp: str, ref: str) -> WerResult:
    """WER in percent over whitespace tokens (case-folded), with edit counts."""
    ref_tokens = ref.lower().split()
    hyp_tokens = hyp.lower().split()
    if not ref_tokens:
        raise EmptyReferenceError("reference has no words")
    subs, dels, ins = _edit_ops(hyp_tokens, ref_tokens)
    return WerResult(
        wer=100.0 * (subs + dels + ins) / len(ref_tokens),
        substitutions=subs,
        deletions=dels,
        insertions=ins,
        ref_words=len(ref_tokens),
    )


def corpus_wer(hyps: Sequence[str], refs: Sequence[str]) -> WerResult:
    """Pooled WER: summed edit operations over summed reference words."""
    if len(hyps) != len(refs):
        raise ValueError("hypothesis/reference count mismatch")
    subs = dels = ins = words = 0
    for hyp, ref in zip(hyps, refs):
        r = wer(hyp, ref)
        subs += r.substitutions
        dels += r.deletions
        ins += r.insertions
        words += r.ref_words
    return WerResult(100.0 * (subs + dels + ins) / words, subs, dels, ins, words)


# --------------------------------------------------------------------------
# Corpus BLEU
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BleuResult:
    score: float
    precisions: tuple[float, ...]  # percent, per n-gram order
    brevity_penalty: float
    hyp_length: int
    ref_length: int


def bleu_tokenize(text: str) -> list[str]:
    """Lowercase; every Unicode punctuation mark becomes its own token."""
    out: list[str] = []
    for ch in text.lower():
        if unicodedata.category(ch).startswith("P"):
            out.append(f" {ch} ")
        else:
            out.append(ch)
    return "".join(out).split()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    hyps: Sequence[str],
    refs: Sequence[Sequence[str]] | Sequence[str],
    max_n: int = 4,
) -> BleuResult:
    """Corpus BLEU with exponential smoothing of zero n-gram counts.

    refs holds one reference set per hypothesis (a bare string counts as a
    singleton set). Clipping uses the per-reference maximum count; the
    brevity penalty compares against the closest reference length (ties
    favour the shorter one).
    """
    if len(hyps) != len(refs):
        raise ValueError("hypothesis/reference count mismatch")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref_set in zip(hyps, refs):
        if isinstance(ref_set, str):
            ref_set = [ref_set]
        hyp_tokens = bleu_tokenize(hyp)
        ref_token_sets = [bleu_tokenize(r) for r in ref_set]
        hyp_len += len(hyp_tokens)
        ref_len += min(
            (len(r) for r in ref_token_sets),
            key=lambda L: (abs(L - len(hyp_tokens)), L),
        )
        for n in range(1, max_n + 1):
            hyp_counts = _ngrams(hyp_tokens, n)
            if not hyp_counts:
                continue
            clip: Counter = Counter()
            for r in ref_token_sets:
                for gram, cnt in _ngrams(r, n).items():
                    clip[gram] = max(clip[gram], cnt)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(min(cnt, clip[gram]) for gram, cnt in hyp_counts.items())

    precisions: list[float] = []
    smooth = 1.0
    log_sum = 0.0
    degenerate = False
    for n in range(max_n):
        if totals[n] == 0:
            precisions.append(0.0)
            degenerate = True
            continue
        if matches[n] == 0:
            smooth *= 2.0
            p = 1.0 / (smooth * totals[n])
        else:
            p = matches[n] / totals[n]
        precisions.append(100.0 * p)
        log_sum += math.log(p)

    if hyp_len == 0 or degenerate:
        return BleuResult(0.0, tuple(precisions), 0.0, hyp_len, ref_len)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    score = 100.0 * bp * math.exp(log_sum / max_n)
    return BleuResult(score, tuple(precisions), bp, hyp_len, ref_len)


# --------------------------------------------------------------------------
# Speaker change detection
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScdScores:
    f1: float
    mdr: float
    far: float
    matched: int
    missed: int
    false_alarm: int
    tolerance: float

    @staticmethod
    def from_counts(matched: int, missed: int, false_alarm: int, tolerance: float) -> "ScdScores":
        ref_count = matched + missed
        hyp_count = matched + false_alarm
        mdr = 100.0 * missed / ref_count if ref_count else 0.0
        far = 100.0 * false_alarm / hyp_count if hyp_count else 0.0
        precision = 100.0 - far
        recall = 100.0 - mdr
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return ScdScores(f1, mdr, far, matched, missed, false_alarm, tolerance)


def scd_score(
    ref_changes: Sequence[float], hyp_events: Sequence[float], tolerance: float
) -> ScdScores:
    """Greedy in-order one-to-one matching of boundary times within +/- tolerance.

    Walking both sorted lists, each hypothesis takes the earliest unmatched
    reference within the tolerance window; leftover references are misses and
    leftover hypotheses are false alarms.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    if list(ref_changes) != sorted(ref_changes) or list(hyp_events) != sorted(hyp_events):
        raise ValueError("ref/hyp event lists must be sorted ascending")
    matched = 0
    false_alarm = 0
    i = 0
    for h in hyp_events:
        while i < len(ref_changes) and ref_changes[i] < h - tolerance:
            i += 1
        if i < len(ref_changes) and abs(ref_changes[i] - h) <= tolerance:
            matched += 1
            i += 1
        else:
            false_alarm += 1
    missed = len(ref_changes) - matched
    return ScdScores.from_counts(matched, missed, false_alarm, tolerance)


def reference_changes(timeline: MergedTimeline) -> list[float]:
    """One change time per adjacent differing-speaker pair: the later start."""
    changes: list[float] = []
    utts = timeline.utterances
    for prev, cur in zip(utts, utts[1:]):
        if cur.speaker != prev.speaker:
            changes.append(cur.start)
    return changes


# --------------------------------------------------------------------------
# RTTM
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RttmRecord:
    file_id: str
    channel: int
    onset: float
    duration: float
    speaker: str

    def validate(self) -> None:
        if self.duration < 0:
            raise ValueError(f"RTTM record {self.file_id}: negative duration")
        if self.onset < 0:
            raise ValueError(f"RTTM record {self.file_id}: negative onset")


def rttm_write(records: Sequence[RttmRecord], path: str) -> None:
    """SPEAKER lines with onset/duration printed to 3 decimals."""
    for rec in records:
        rec.validate()
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                f"SPEAKER {rec.file_id} {rec.channel} {rec.onset:.3f} {rec.duration:.3f} "
                f"<NA> <NA> {rec.speaker} <NA> <NA>\n"
            )


def rttm_read(path: str) -> list[RttmRecord]:
    records: list[RttmRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 10 or parts[0] != "SPEAKER":
                raise ValueError(f"{path}:{line_number}: malformed RTTM line")
            try:
                rec = RttmRecord(
                    file_id=parts[1],
                    channel=int(parts[2]),
                    onset=float(parts[3]),
                    duration=float(parts[4]),
                    speaker=parts[7],
                )
            except ValueError as exc:
                raise ValueError(f"{path}:{line_number}: {exc}") from exc
            rec.validate()
            records.append(rec)
    return records


# --------------------------------------------------------------------------
# Overlap-ratio binning
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OverlapBinReport:
    edges: tuple[float, ...]  # interior edges in percent, strictly increasing
    scores: tuple[float, ...]  # word-weighted mean score per bin
    word_counts: tuple[int, ...]


def segment_overlap_ratio(segment, timeline: MergedTimeline) -> float:
    """Overlapped-speech share of the speech inside one segment, in percent."""
    from .corpus import _clip, _intersect_measure, _measure, _merge_intervals

    ch = {0: [], 1: []}
    for u in timeline.utterances:
        if u.id in segment.utterance_ids:
            ch[u.channel].append((u.start, u.end))
    c0 = _merge_intervals(_clip(ch[0], segment.start, segment.end))
    c1 = _merge_intervals(_clip(ch[1], segment.start, segment.end))
    overlap = _intersect_measure(c0, c1)
    speech = _measure(c0) + _measure(c1) - overlap
    return 100.0 * overlap / speech if speech > 0 else 0.0


def overlap_bin_report(
    items: Iterable[tuple[float, float, int]],
    edges: Sequence[float] | None = None,
) -> OverlapBinReport:
    """Bin (overlap_ratio, score, ref_words) triples by overlap ratio.

    Bins are [0, e1], (e1, e2], ..., (ek, 100]. Default edges are the
    quartile boundaries of the observed ratios. Per-bin score is the
    word-weighted mean of the segment scores.
    """
    rows = list(items)
    if edges is None:
        if not rows:
            edges = (25.0, 50.0, 75.0)
        else:
            ratios = sorted(r for r, _, _ in rows)

            def pct(q: float) -> float:
                if len(ratios) == 1:
                    return ratios[0]
                pos = q * (len(ratios) - 1)
                lo = int(pos)
                frac = pos - lo
                hi = min(lo + 1, len(ratios) - 1)
                return ratios[lo] * (1 - frac) + ratios[hi] * frac

            # Duplicate quartiles collapse (heavily tied ratios); keep the
            # distinct boundaries so the bins stay well-formed.
            edges = tuple(dict.fromkeys((pct(0.25), pct(0.50), pct(0.75))))
    edges = tuple(float(e) for e in edges)
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("edges must be strictly increasing")

    n_bins = len(edges) + 1
    score_sum = [0.0] * n_bins
    words = [0] * n_bins
    for ratio, score, ref_words in rows:
        bin_idx = n_bins - 1
        for k, edge in enumerate(edges):
            if ratio <= edge:
                bin_idx = k
                break
        score_sum[bin_idx] += score * ref_words
        words[bin_idx] += ref_words
    scores = tuple(score_sum[k] / words[k] if words[k] else 0.0 for k in range(n_bins))
    return OverlapBinReport(edges, scores, tuple(words))
