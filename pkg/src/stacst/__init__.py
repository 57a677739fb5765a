"""Toolkit for speaker-turn aware conversational speech translation.

Pipeline: two-channel conversation manifests are merged into one multi-speaker
timeline, cut into up-to-30s multi-turn segments, serialized into target
sequences with [TURN]/[XT]/language task tokens, and paired with filterbank
(or synthetic) features to train a joint CTC/NLL encoder-decoder. CTC spikes
of the turn tokens double as a time-aligned speaker-change detector, scored
with tolerance-matched F1/MDR/FAR.
"""

__version__ = "0.1.0"
