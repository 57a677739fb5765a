"""Shared generators for randomized fixtures.

The helpers here are plain seeded generators (fast enough for the large
acceptance fuzz counts); hypothesis strategies build on them where a test
wants shrinking.
"""

from __future__ import annotations

import numpy as np
import pytest

from stacst.corpus import Conversation, Utterance

WORDS = ("uno", "dos", "tres", "agua", "sol", "mar", "luz", "pan", "rio", "voz")


def random_conversation(
    rng: np.random.Generator,
    conv_id: str = "conv",
    n_utterances: int | None = None,
    overlap_prob: float = 0.35,
    translations: bool = True,
) -> Conversation:
    """Two speakers, one per channel, random gaps and cross-channel overlaps."""
    if n_utterances is None:
        n_utterances = int(rng.integers(1, 12))
    utts: list[Utterance] = []
    last_end = {0: 0.0, 1: 0.0}
    prev_end = 0.0
    prev_start = -1.0
    channel = int(rng.integers(0, 2))
    for i in range(n_utterances):
        if i > 0 and rng.random() < 0.7:
            channel = 1 - channel
        duration = float(rng.uniform(0.3, 3.0))
        if i == 0:
            start = float(rng.uniform(0.0, 1.0))
        elif rng.random() < overlap_prob:
            start = prev_end - float(rng.uniform(0.05, 0.5))
        else:
            start = prev_end + float(rng.uniform(0.0, 1.5))
        start = max(start, prev_start + 1e-3, last_end[channel] + 1e-3)
        end = start + duration
        n_words = int(rng.integers(1, 4))
        words = [WORDS[int(k)] for k in rng.integers(0, len(WORDS), n_words)]
        utts.append(
            Utterance(
                id=f"{conv_id}-u{i:03d}",
                channel=channel,
                speaker=f"spk{channel}",
                start=round(start, 3),
                end=round(end, 3),
                transcript=" ".join(words),
                translation=" ".join(w.upper() for w in words) if translations else None,
            )
        )
        last_end[channel] = end
        prev_end = end
        prev_start = start
    return Conversation.build(conv_id, utts)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(12345))
