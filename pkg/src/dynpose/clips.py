"""Clip sampling over frame sequences and clip-vote aggregation.

Anchors sit at the midpoints of n equal spans of the sequence,
rounded half-up and clamped into range.  Multi-clip mode cuts a
t-frame window around each anchor (boundary frames repeat when a
window sticks out); single-clip mode keeps just the anchors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_CLIP_COUNT = 6
DEFAULT_CLIP_LENGTH = 36


@dataclass(frozen=True)
class ClipSet:
    """Frame-index clips plus the anchors they grew from."""

    clips: tuple[tuple[int, ...], ...]
    anchors: tuple[int, ...]
    source_length: int
    mode: str

    def __post_init__(self):
        for clip in self.clips:
            for idx in clip:
                if not 0 <= idx < self.source_length:
                    raise ValueError(f"clip index {idx} outside [0, {self.source_length})")


def _anchors(L: int, n: int) -> tuple[int, ...]:
    # midpoint of each span, rounded half-up, clamped to the last frame
    return tuple(min(int(np.floor((i + 0.5) * L / n + 0.5)), L - 1) for i in range(n))


def sample_multi_clips(L: int, n: int, t: int) -> ClipSet:
    """n clips of exactly t frames centered on the anchors."""
    if L < 1 or n < 1 or t < 1:
        raise ValueError(f"L, n, t must all be >= 1 (got {L}, {n}, {t})")
    anchors = _anchors(L, n)
    clips = []
    for a in anchors:
        idx = range(a - t // 2, a + (t + 1) // 2)
        clips.append(tuple(min(max(i, 0), L - 1) for i in idx))
    return ClipSet(tuple(clips), anchors, L, "multi")


def sample_single_clip(L: int, n: int) -> ClipSet:
    """One clip made of the n anchor frames themselves."""
    if L < 1 or n < 1:
        raise ValueError(f"L and n must be >= 1 (got {L}, {n})")
    anchors = _anchors(L, n)
    return ClipSet((anchors,), anchors, L, "single")


def aggregate_predictions(per_clip_probs) -> tuple[int, np.ndarray]:
    """Mean the per-clip probability rows, then argmax.

    Ties go to the lowest class index.  Returns (class index into the
    probability columns, mean probability vector).
    """
    probs = np.atleast_2d(np.asarray(per_clip_probs, dtype=np.float64))
    if probs.ndim != 2 or probs.shape[1] < 1:
        raise ValueError("per_clip_probs must be an n x c matrix")
    if np.any(probs < 0.0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("rows must be probability vectors summing to 1")
    mean = probs.mean(axis=0)
    return int(np.argmax(mean)), mean
