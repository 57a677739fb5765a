"""CTC loss with analytic gradient, exhaustive oracle, decoding, and spike extraction.

The loss marginalizes over all monotonic frame-to-label alignments via the
blank symbol (id 0). Everything runs in natural-log space with log-sum-exp;
there are no probability-space intermediates. The gradient with respect to the
logits comes from the forward-backward state posteriors, not from numerical
differentiation:

    d(-log p(l|x)) / d u[t,k] = softmax(u)[t,k] - P(emit k at t | l, x)

Spike extraction locates, for each surviving best-path token, the frame where
its posterior peaks inside its run; [TURN]/[XT] spikes time-stamp speaker
changes and cross-talk at frame_stride resolution.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "BLANK_ID",
    "CtcError",
    "CtcInfeasibleError",
    "CtcResult",
    "PosteriorGrid",
    "SpikeEvent",
    "ctc_loss",
    "ctc_brute_force",
    "min_input_length",
    "best_path_decode",
    "extract_spikes",
    "write_spikes",
    "load_spikes",
]

BLANK_ID = 0

NEG_INF = -np.inf


class CtcError(ValueError):
    pass


class CtcInfeasibleError(CtcError):
    """Targets cannot be aligned in the given number of frames."""


@dataclass(frozen=True)
class CtcResult:
    loss: float
    grad: np.ndarray  # d loss / d logits, same shape as the logits


@dataclass(frozen=True)
class PosteriorGrid:
    """Per-frame log-softmax rows from the CTC head; column 0 is the blank."""

    log_probs: np.ndarray  # T x V
    frame_stride: float  # seconds per frame

    def __post_init__(self) -> None:
        lp = np.asarray(self.log_probs, dtype=np.float64)
        if lp.ndim != 2:
            raise CtcError("log_probs must be a T x V matrix")
        row_mass = np.logaddexp.reduce(lp, axis=1)
        if not np.all(np.abs(row_mass) < 1e-6):
            raise CtcError("log_probs rows must log-sum-exp to 0 (within 1e-6)")
        if self.frame_stride <= 0:
            raise CtcError("frame_stride must be positive")
        object.__setattr__(self, "log_probs", lp)

    @staticmethod
    def from_logits(logits: np.ndarray, frame_stride: float) -> "PosteriorGrid":
        return PosteriorGrid(log_softmax(np.asarray(logits, dtype=np.float64)), frame_stride)


@dataclass(frozen=True)
class SpikeEvent:
    token: str  # "TURN" or "XT"
    frame: int
    time: float  # frame * frame_stride


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def min_input_length(targets: Sequence[int]) -> int:
    """Frames needed to emit the targets: length plus one blank per repeat."""
    repeats = sum(1 for a, b in zip(targets, targets[1:]) if a == b)
    return len(targets) + repeats


def _validate(logits: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise CtcError("logits must be a T x V matrix")
    if not np.all(np.isfinite(logits)):
        raise CtcError("logits contain NaN or Inf")
    n_frames, vocab = logits.shape
    for t in targets:
        if not (0 < t < vocab):
            raise CtcError(f"target id {t} outside [1, {vocab})")
    if n_frames < min_input_length(targets):
        raise CtcInfeasibleError(
            f"{n_frames} frames cannot align {len(targets)} targets "
            f"(need >= {min_input_length(targets)})"
        )
    return logits


def _extended(targets: Sequence[int]) -> np.ndarray:
    ext = np.full(2 * len(targets) + 1, BLANK_ID, dtype=np.int64)
    ext[1::2] = np.asarray(targets, dtype=np.int64)
    return ext


def ctc_loss(logits: np.ndarray, targets: Sequence[int]) -> CtcResult:
    """Negative log-likelihood of `targets` and its gradient w.r.t. `logits`.

    Standard forward recursion over the blank-interleaved label sequence; the
    gradient comes from forward-backward state posteriors (every grad row sums
    to zero by the softmax identity). Raises CtcInfeasibleError when the frame
    count cannot carry the targets.
    """
    logits = _validate(logits, targets)
    n_frames = logits.shape[0]
    lp = log_softmax(logits)
    ext = _extended(targets)
    n_states = len(ext)

    # Skip transition s-2 -> s exists where the label differs from two back
    # and is not blank.
    can_skip = np.zeros(n_states, dtype=bool)
    if n_states > 2:
        can_skip[2:] = (ext[2:] != BLANK_ID) & (ext[2:] != ext[:-2])

    emit = lp[:, ext]  # T x S

    alpha = np.full((n_frames, n_states), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if n_states > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, n_frames):
        prev = alpha[t - 1]
        step = np.full(n_states, NEG_INF)
        step[1:] = prev[:-1]
        skip = np.full(n_states, NEG_INF)
        if n_states > 2:
            skip[2:] = np.where(can_skip[2:], prev[:-2], NEG_INF)
        alpha[t] = emit[t] + np.logaddexp(np.logaddexp(prev, step), skip)

    tail = [alpha[-1, -1]]
    if n_states > 1:
        tail.append(alpha[-1, -2])
    log_z = np.logaddexp.reduce(np.array(tail))
    if not np.isfinite(log_z):
        raise CtcInfeasibleError("no valid alignment has nonzero probability")

    beta = np.full((n_frames, n_states), NEG_INF)
    beta[-1, -1] = emit[-1, -1]
    if n_states > 1:
        beta[-1, -2] = emit[-1, -2]
    for t in range(n_frames - 2, -1, -1):
        nxt = beta[t + 1]
        step = np.full(n_states, NEG_INF)
        step[:-1] = nxt[1:]
        skip = np.full(n_states, NEG_INF)
        if n_states > 2:
            skip[:-2] = np.where(can_skip[2:], nxt[2:], NEG_INF)
        beta[t] = emit[t] + np.logaddexp(np.logaddexp(nxt, step), skip)

    # State posteriors; both alpha and beta include the emission at t, so one
    # copy is divided back out.
    log_gamma_state = alpha + beta - emit - log_z
    gamma = np.zeros_like(lp)
    occ = np.exp(log_gamma_state)
    for s in range(n_states):
        gamma[:, ext[s]] += occ[:, s]

    grad = np.exp(lp) - gamma
    return CtcResult(loss=float(-log_z), grad=grad)


def _collapse(path: Sequence[int]) -> list[int]:
    out: list[int] = []
    prev = None
    for label in path:
        if label != prev:
            if label != BLANK_ID:
                out.append(label)
            prev = label
    return out


def ctc_brute_force(logits: np.ndarray, targets: Sequence[int]) -> float:
    """Oracle loss by exhaustive alignment enumeration. Infinity when no path maps.

    Enumerates every frame-label sequence, keeps those collapsing (merge
    repeats, then drop blanks) to the targets, and log-sum-exps their log
    probabilities. Only usable when |V|**T <= 1e7.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or not np.all(np.isfinite(logits)):
        raise CtcError("logits must be a finite T x V matrix")
    n_frames, vocab = logits.shape
    if vocab**n_frames > 10**7:
        raise CtcError(f"instance too large to enumerate: {vocab}^{n_frames}")
    lp = log_softmax(logits)
    wanted = list(targets)
    terms: list[float] = []
    for path in itertools.product(range(vocab), repeat=n_frames):
        if _collapse(path) == wanted:
            terms.append(float(sum(lp[t, label] for t, label in enumerate(path))))
    if not terms:
        return math.inf
    return -float(np.logaddexp.reduce(np.array(terms)))


def best_path_decode(grid: PosteriorGrid) -> tuple[list[int], list[int]]:
    """Greedy decode: per-frame argmax, merge repeats, drop blanks.

    Returns (token ids, peak frames); the peak frame of a token is where its
    posterior is highest inside its argmax run.
    """
    lp = grid.log_probs
    path = np.argmax(lp, axis=1)
    tokens: list[int] = []
    peaks: list[int] = []
    t = 0
    n_frames = len(path)
    while t < n_frames:
        label = int(path[t])
        run_end = t
        while run_end + 1 < n_frames and path[run_end + 1] == label:
            run_end += 1
        if label != BLANK_ID:
            run = np.arange(t, run_end + 1)
            peak = int(run[np.argmax(lp[run, label])])
            tokens.append(label)
            peaks.append(peak)
        t = run_end + 1
    return tokens, peaks


def extract_spikes(grid: PosteriorGrid, vocab) -> list[SpikeEvent]:
    """Time-stamped [TURN]/[XT] events from the best path.

    `vocab` only needs turn_id and xt_id attributes (see serializer.Vocabulary).
    """
    tokens, peaks = best_path_decode(grid)
    names = {vocab.turn_id: "TURN", vocab.xt_id: "XT"}
    events = [
        SpikeEvent(token=names[tok], frame=frame, time=frame * grid.frame_stride)
        for tok, frame in zip(tokens, peaks)
        if tok in names
    ]
    events.sort(key=lambda e: e.time)
    return events


def write_spikes(events: Sequence[tuple[str, SpikeEvent]], path: str) -> None:
    """JSON-lines dump of (segment_id, spike) pairs."""
    with open(path, "w", encoding="utf-8") as fh:
        for segment_id, ev in events:
            fh.write(json.dumps({"segment_id": segment_id, "token": ev.token, "time": ev.time}))
            fh.write("\n")


def load_spikes(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
