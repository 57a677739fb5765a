"""Serialized target construction with task tokens, and the subword vocabulary.

Targets are built by concatenating per-utterance text in start-time order.
Four task-token kinds exist: a source-language token, a target-language token,
[TURN] between utterances of different speakers, and [XT] immediately after
[TURN] when the two utterances additionally overlap in time. Language tokens
select the task (ASR when source == target, ST otherwise) and are excluded
from CTC targets because they carry no acoustic evidence.

The vocabulary is byte-pair encoding over whitespace-pretokenized text with a
fixed reserved block (<blank> id 0 for CTC, <pad>, <bos>, <eos>, [TURN], [XT],
and one id per language token). merges=0 yields a character vocabulary. The
single-space word separator " " is an ordinary text symbol, which makes
encode/decode an exact round trip on serialized strings.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import MergedTimeline, Utterance
from .segmenter import Segment

__all__ = [
    "TURN_TOKEN",
    "XT_TOKEN",
    "language_token",
    "is_language_token",
    "is_task_token",
    "TargetSequence",
    "Vocabulary",
    "VocabularyError",
    "SerializationError",
    "serialize_targets",
    "attach_language_tokens",
    "ctc_targets",
    "strip_task_tokens",
    "build_vocabulary",
    "SerializedExample",
    "make_example",
    "write_examples",
    "load_examples",
]

TURN_TOKEN = "[TURN]"
XT_TOKEN = "[XT]"
SPACE = " "

BLANK = "<blank>"
PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"

_LANG_RE = re.compile(r"^\[[A-Z]{2}\]$")


class SerializationError(ValueError):
    pass


class VocabularyError(ValueError):
    pass


def language_token(code: str) -> str:
    """ISO-639-1 code -> its bracketed uppercase task token, e.g. "es" -> "[ES]"."""
    if not re.fullmatch(r"[A-Za-z]{2}", code):
        raise SerializationError(f"not a two-letter language code: {code!r}")
    return f"[{code.upper()}]"


def is_language_token(token: str) -> bool:
    return bool(_LANG_RE.match(token)) and token not in (TURN_TOKEN, XT_TOKEN)


def is_task_token(token: str) -> bool:
    return token in (TURN_TOKEN, XT_TOKEN) or is_language_token(token)


@dataclass(frozen=True)
class TargetSequence:
    """A serialized target: word-level text tokens interleaved with task tokens.

    src_lang/tgt_lang are set once language tokens are attached; the task is
    ASR when they are equal and ST otherwise.
    """

    tokens: tuple[str, ...]
    src_lang: str | None = None
    tgt_lang: str | None = None

    @property
    def task(self) -> str | None:
        if self.src_lang is None or self.tgt_lang is None:
            return None
        return "asr" if self.src_lang == self.tgt_lang else "st"

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


def _normalize_text(text: str) -> str:
    return " ".join(text.split())


def serialize_targets(
    segment: Segment, timeline: MergedTimeline, field: str = "transcript"
) -> TargetSequence:
    """Concatenate the requested field of covered utterances in start order.

    Between consecutive utterances of different speakers a [TURN] token is
    inserted; if the later one also starts strictly before the earlier ends,
    [XT] follows the [TURN]. Same-speaker neighbours join with a plain space.
    """
    if field not in ("transcript", "translation"):
        raise SerializationError(f"unknown field {field!r}")
    by_id = {u.id: u for u in timeline.utterances}
    try:
        utts = [by_id[uid] for uid in segment.utterance_ids]
    except KeyError as exc:
        raise SerializationError(f"segment {segment.id!r} references unknown utterance {exc}") from exc

    tokens: list[str] = []
    prev: Utterance | None = None
    for u in utts:
        value = u.transcript if field == "transcript" else u.translation
        if value is None:
            raise SerializationError(f"utterance {u.id!r} has no {field}")
        words = _normalize_text(value).split(" ")
        for w in words:
            if is_task_token(w):
                raise SerializationError(f"utterance {u.id!r}: text token {w!r} collides with a task token")
        if prev is not None and u.speaker != prev.speaker:
            tokens.append(TURN_TOKEN)
            if u.start < prev.end:
                tokens.append(XT_TOKEN)
        tokens.extend(words)
        prev = u
    return TargetSequence(tuple(tokens))


def attach_language_tokens(seq: TargetSequence, src: str, tgt: str) -> TargetSequence:
    """Prepend [SRC] [TGT]; sets the ASR/ST task. Attaching twice is an error."""
    if seq.src_lang is not None or seq.tgt_lang is not None:
        raise SerializationError("language tokens already attached")
    if seq.tokens and is_language_token(seq.tokens[0]):
        raise SerializationError("sequence already begins with a language token")
    return TargetSequence(
        (language_token(src), language_token(tgt)) + seq.tokens,
        src_lang=src.lower(),
        tgt_lang=tgt.lower(),
    )


def ctc_targets(seq: TargetSequence) -> TargetSequence:
    """Drop language tokens (no acoustic evidence); keep [TURN]/[XT] and text."""
    kept = tuple(t for t in seq.tokens if not is_language_token(t))
    return TargetSequence(kept)


def strip_task_tokens(seq: TargetSequence | str) -> str:
    """Remove all four task-token kinds; single-space normalized text remains."""
    tokens = seq.tokens if isinstance(seq, TargetSequence) else _normalize_text(seq).split(" ")
    return " ".join(t for t in tokens if t and not is_task_token(t))


# --------------------------------------------------------------------------
# Vocabulary: reserved block + BPE text symbols
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    """Bijective token<->id table. Id 0 is the CTC blank, always.

    tokens[i] is the surface form of id i. merges hold the learned BPE pairs
    in application order. Reserved tokens are never produced by text
    tokenization; the space separator " " is a text symbol like any other.
    """

    tokens: tuple[str, ...]
    merges: tuple[tuple[str, str], ...] = ()
    _ids: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(ids) != len(self.tokens):
            raise VocabularyError("duplicate tokens in vocabulary")
        if self.tokens[0] != BLANK:
            raise VocabularyError("id 0 must be the CTC blank")
        object.__setattr__(self, "_ids", ids)

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise VocabularyError(f"token not in vocabulary: {token!r}") from None

    @property
    def blank_id(self) -> int:
        return 0

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def turn_id(self) -> int:
        return self._ids[TURN_TOKEN]

    @property
    def xt_id(self) -> int:
        return self._ids[XT_TOKEN]

    @property
    def reserved_ids(self) -> frozenset[int]:
        return frozenset(
            i for i, t in enumerate(self.tokens) if t in (BLANK, PAD, BOS, EOS) or is_task_token(t)
        )

    def language_id(self, code: str) -> int:
        return self.id_of(language_token(code))

    def encode_word(self, word: str) -> list[int]:
        symbols = list(word)
        for a, b in self.merges:
            i = 0
            while i < len(symbols) - 1:
                if symbols[i] == a and symbols[i + 1] == b:
                    symbols[i : i + 2] = [a + b]
                else:
                    i += 1
        return [self.id_of(s) for s in symbols]

    def encode(self, seq: TargetSequence) -> list[int]:
        """Word-level tokens -> subword/char ids; " " id joins adjacent text words."""
        ids: list[int] = []
        prev_was_text = False
        for tok in seq.tokens:
            if is_task_token(tok):
                ids.append(self.id_of(tok))
                prev_was_text = False
            else:
                if prev_was_text:
                    ids.append(self.id_of(SPACE))
                ids.extend(self.encode_word(tok))
                prev_was_text = True
        return ids

    def decode(self, ids: Sequence[int]) -> TargetSequence:
        """Inverse of encode: ids back to word-level tokens (pad/bos/eos dropped)."""
        skip = {self.pad_id, self.bos_id, self.eos_id, self.blank_id}
        tokens: list[str] = []
        word = ""
        for i in ids:
            if i in skip:
                continue
            tok = self.tokens[i]
            if is_task_token(tok):
                if word:
                    tokens.append(word)
                    word = ""
                tokens.append(tok)
            elif tok == SPACE:
                if word:
                    tokens.append(word)
                    word = ""
            else:
                word += tok
        if word:
            tokens.append(word)
        if (
            len(tokens) >= 2
            and is_language_token(tokens[0])
            and is_language_token(tokens[1])
        ):
            return TargetSequence(
                tuple(tokens),
                src_lang=tokens[0][1:-1].lower(),
                tgt_lang=tokens[1][1:-1].lower(),
            )
        return TargetSequence(tuple(tokens))

    def save(self, path: str) -> None:
        """One token per line, line number = id; learned merges go to
        `<path>.merges` (tab-separated pairs) when any exist."""
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")
        if self.merges:
            with open(path + ".merges", "w", encoding="utf-8") as fh:
                for a, b in self.merges:
                    fh.write(f"{a}\t{b}\n")

    @staticmethod
    def load(path: str) -> "Vocabulary":
        import os

        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        merges: list[tuple[str, str]] = []
        if os.path.exists(path + ".merges"):
            with open(path + ".merges", "r", encoding="utf-8") as fh:
                for line in fh:
                    a, b = line.rstrip("\n").split("\t")
                    merges.append((a, b))
        return Vocabulary(tuple(tokens), tuple(merges))


def build_vocabulary(
    corpus: Iterable[TargetSequence],
    merges: int = 0,
    languages: Sequence[str] = (),
) -> Vocabulary:
    """Learn BPE merges over whitespace-pretokenized text and build the table.

    Reserved block first: <blank> <pad> <bos> <eos> [TURN] [XT], then one
    token per language (given plus any seen on the sequences), then " " when
    any sequence joins two text words, then text symbols sorted. merges=0
    keeps the character vocabulary.
    """
    if merges < 0:
        raise VocabularyError("merges must be >= 0")
    seqs = list(corpus)
    if not seqs:
        raise VocabularyError("empty corpus")

    langs = {c.lower() for c in languages}
    word_freq: Counter[str] = Counter()
    needs_space = False
    for seq in seqs:
        if seq.src_lang:
            langs.add(seq.src_lang)
        if seq.tgt_lang:
            langs.add(seq.tgt_lang)
        prev_was_text = False
        for tok in seq.tokens:
            if is_language_token(tok):
                langs.add(tok[1:-1].lower())
                prev_was_text = False
            elif is_task_token(tok):
                prev_was_text = False
            else:
                if prev_was_text:
                    needs_space = True
                word_freq[tok] += 1
                prev_was_text = True
    if not word_freq:
        raise VocabularyError("corpus has no text tokens")

    # BPE merge learning on (symbol tuple -> frequency).
    segmentations: dict[tuple[str, ...], int] = {
        tuple(word): freq for word, freq in word_freq.items()
    }
    learned: list[tuple[str, str]] = []
    for _ in range(merges):
        pair_freq: Counter[tuple[str, str]] = Counter()
        for symbols, freq in segmentations.items():
            for a, b in zip(symbols, symbols[1:]):
                pair_freq[(a, b)] += freq
        if not pair_freq:
            break
        top = max(pair_freq.values())
        # Frequency ties resolved by lexicographic pair order for determinism.
        pair = min(p for p, f in pair_freq.items() if f == top)
        learned.append(pair)
        merged: dict[tuple[str, ...], int] = {}
        a, b = pair
        for symbols, freq in segmentations.items():
            out: list[str] = []
            i = 0
            while i < len(symbols):
                if i < len(symbols) - 1 and symbols[i] == a and symbols[i + 1] == b:
                    out.append(a + b)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            merged[tuple(out)] = merged.get(tuple(out), 0) + freq
        segmentations = merged

    symbols: set[str] = set()
    for seg_symbols in segmentations:
        symbols.update(seg_symbols)

    reserved = [BLANK, PAD, BOS, EOS, TURN_TOKEN, XT_TOKEN]
    reserved += [language_token(c) for c in sorted(langs)]
    text_symbols = ([SPACE] if needs_space else []) + sorted(symbols)
    return Vocabulary(tuple(reserved + text_symbols), tuple(learned))


# --------------------------------------------------------------------------
# Serialized-example file (JSON-lines)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SerializedExample:
    segment_id: str
    src: str
    tgt: str
    task: str
    tokens: tuple[str, ...]
    ctc_tokens: tuple[str, ...]


def make_example(
    segment: Segment, timeline: MergedTimeline, src: str, tgt: str
) -> SerializedExample:
    """Serialize one segment for the (src, tgt) task pair.

    src == tgt selects ASR (transcript field); otherwise ST (translation).
    """
    field_name = "transcript" if src.lower() == tgt.lower() else "translation"
    seq = attach_language_tokens(serialize_targets(segment, timeline, field_name), src, tgt)
    return SerializedExample(
        segment_id=segment.id,
        src=src.lower(),
        tgt=tgt.lower(),
        task=seq.task or "asr",
        tokens=seq.tokens,
        ctc_tokens=ctc_targets(seq).tokens,
    )


def write_examples(examples: Sequence[SerializedExample], path: str) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {
                        "segment_id": ex.segment_id,
                        "src": ex.src,
                        "tgt": ex.tgt,
                        "task": ex.task,
                        "tokens": list(ex.tokens),
                        "ctc_tokens": list(ex.ctc_tokens),
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")


def load_examples(path: str) -> list[SerializedExample]:
    import json

    out: list[SerializedExample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(
                SerializedExample(
                    segment_id=obj["segment_id"],
                    src=obj["src"],
                    tgt=obj["tgt"],
                    task=obj["task"],
                    tokens=tuple(obj["tokens"]),
                    ctc_tokens=tuple(obj["ctc_tokens"]),
                )
            )
    return out
