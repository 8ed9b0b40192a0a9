"""Manual blame-annotation features and IDF weights.

The catalogue (documented index-by-index in FEATURES.md) has 15 frame-level
features per (developer, frame) and 12 stack-level features per
(developer, trace). Min/max normalizations are taken over the query's
candidate developers, so every feature is computable per query without
global state. All functions are pure and safe for parallel evaluation.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .annotations import Annotation, AnnotationStore, DeveloperStack
from .trace import StackTrace, TokenSequence

TAU_DAYS = 30.0
MS_PER_DAY = 86_400_000.0
WINDOW_SIZE = 10  # error-line band [l-5, l+4]

N_FRAME_FEATURES = 15
N_STACK_FEATURES = 12

FRAME_FEATURE_NAMES = tuple(f"F{i}" for i in range(1, N_FRAME_FEATURES + 1))
STACK_FEATURE_NAMES = tuple(f"S{i}" for i in range(1, N_STACK_FEATURES + 1))


@dataclass(frozen=True)
class IdfTable:
    """Token rarity weights; unseen tokens resolve to the maximum stored weight."""

    weights: Mapping[str, float]
    corpus_size: int

    @property
    def max_weight(self) -> float:
        return max(self.weights.values(), default=0.0)

    def weight(self, token: str) -> float:
        return self.weights.get(token, self.max_weight)


def compute_idf(token_sequences: Sequence[TokenSequence]) -> IdfTable:
    """idf(t) = ln(N / (1 + df(t))), clamped at 0, over a training corpus."""
    if not token_sequences:
        raise ValueError("IDF requires a non-empty corpus")
    df: Counter[str] = Counter()
    for seq in token_sequences:
        df.update(set(seq.tokens))
    n = len(token_sequences)
    weights = {tok: max(0.0, math.log(n / (1 + c))) for tok, c in df.items()}
    return IdfTable(weights=weights, corpus_size=n)


def _days_since(report_time: int, timestamps: Iterable[int]) -> np.ndarray:
    """Elapsed days per timestamp, clamped at 0 for future-dated edits."""
    stamps = np.asarray(list(timestamps), dtype=np.float64)
    return np.maximum(report_time - stamps, 0.0) / MS_PER_DAY


def _ratio(num: float, den: float) -> float:
    return num / den if den != 0.0 else 0.0


@dataclass(frozen=True)
class _DevFrameStats:
    """Raw per-developer quantities for one annotated frame."""

    dist: float  # min |error_line - edited line|
    edited_error: bool
    n_edited: int
    decay_sum: float  # sum of e^(-dt/tau) over the developer's lines
    window_count: int
    n_distinct_ts: int
    dt_last: float  # days since most recent edit
    dt_first: float  # days since earliest edit


def _dev_frame_stats(
    dev: str, annotation: Annotation, error_line: Optional[int], report_time: int
) -> Optional[_DevFrameStats]:
    lines = annotation.lines_by(dev)
    if not lines:
        return None
    # Absent error line: distances computed against line 1, no edit credit.
    ell = error_line if error_line is not None else 1
    dists = [abs(ell - i) for i in lines]
    dt = _days_since(report_time, (annotation.lines[i - 1].timestamp for i in lines))
    lo, hi = ell - WINDOW_SIZE // 2, ell + WINDOW_SIZE // 2 - 1
    return _DevFrameStats(
        dist=float(min(dists)),
        edited_error=error_line is not None and error_line in lines,
        n_edited=len(lines),
        decay_sum=float(np.exp(-dt / TAU_DAYS).sum()),
        window_count=sum(1 for i in lines if lo <= i <= hi),
        n_distinct_ts=len({annotation.lines[i - 1].timestamp for i in lines}),
        dt_last=float(dt.min()),
        dt_first=float(dt.max()),
    )


def frame_feature_matrix(
    annotation: Annotation,
    error_line: Optional[int],
    report_time: int,
    candidates: Iterable[str],
) -> dict[str, np.ndarray]:
    """Frame features for every candidate with >= 1 line in this annotation.

    Returns a map developer -> float64 vector of length 15 (F1..F15).
    """
    stats = {}
    for dev in candidates:
        s = _dev_frame_stats(dev, annotation, error_line, report_time)
        if s is not None:
            stats[dev] = s
    if not stats:
        return {}

    length = len(annotation)
    min_dist = min(s.dist for s in stats.values())
    max_edited = max(s.n_edited for s in stats.values())
    max_decay = max(s.decay_sum for s in stats.values())
    max_window = max(s.window_count for s in stats.values())
    max_distinct = max(s.n_distinct_ts for s in stats.values())

    out = {}
    for dev, s in stats.items():
        out[dev] = np.array(
            [
                s.dist,  # F1 raw distance to error line
                s.dist / length,  # F2 / annotation length
                (s.dist + 1.0) / (min_dist + 1.0),  # F3 / candidate min
                1.0 if s.edited_error else 0.0,  # F4 edited the error line
                s.n_edited / length,  # F5 edited lines / length
                _ratio(s.n_edited, max_edited),  # F6 / candidate max
                s.decay_sum / length,  # F7 time-weighted edits / length
                _ratio(s.decay_sum, max_decay),  # F8 / candidate max
                s.window_count / WINDOW_SIZE,  # F9 edits near error line / window
                _ratio(s.window_count, max_window),  # F10 / candidate max
                float(s.n_distinct_ts),  # F11 distinct edit timestamps
                _ratio(s.n_distinct_ts, max_distinct),  # F12 / candidate max
                math.exp(-s.dt_last / TAU_DAYS),  # F13 recency decay
                math.log1p(s.dt_last),  # F14 log days since last edit
                math.log1p(s.dt_first),  # F15 log days since first edit
            ],
            dtype=np.float64,
        )
    return out


def frame_features(
    dev: str,
    annotation: Annotation,
    error_line: Optional[int],
    report_time: int,
    candidates: Iterable[str],
) -> np.ndarray:
    """F1..F15 for one developer; `dev` must have >= 1 line in the annotation."""
    matrix = frame_feature_matrix(annotation, error_line, report_time, set(candidates) | {dev})
    if dev not in matrix:
        raise ValueError(f"developer {dev!r} authored no line of this annotation")
    return matrix[dev]


@dataclass(frozen=True)
class _DevStackStats:
    first_rank: int  # 1-based index of the first edited frame
    edited_error_frames: int
    edited_lines: int
    stack_len: int


def stack_feature_matrix(
    trace: StackTrace,
    stacks: Mapping[str, DeveloperStack],
    store: AnnotationStore,
    idf: IdfTable,
    token_mode: str = "file",
) -> dict[str, np.ndarray]:
    """Stack features for every developer with a non-empty stack in `stacks`.

    Returns a map developer -> float64 vector of length 12 (S1..S12).
    """
    frame_anns = [store.for_frame(f) for f in trace.frames]
    n = len(trace.frames)
    n_annotated = sum(1 for a in frame_anns if a is not None)
    total_lines = sum(len(a) for a in frame_anns if a is not None)

    # Frame whose token carries the maximum IDF weight (ties -> first frame).
    max_idf_index = None
    best = -math.inf
    for i, (frame, ann) in enumerate(zip(trace.frames, frame_anns)):
        token = getattr(frame, token_mode)
        if token is None or ann is None:
            continue
        w = idf.weight(token)
        if w > best:
            best, max_idf_index = w, i

    stats = {}
    for dev, stack in stacks.items():
        if stack.is_empty:
            continue
        edited_error = 0
        edited_lines = 0
        for _, frame in stack.frames:
            ann = store.for_frame(frame)
            if ann is None:
                continue
            dev_lines = ann.lines_by(dev)
            edited_lines += len(dev_lines)
            ell = frame.error_line
            if ell is not None and ell in dev_lines:
                edited_error += 1
        stats[dev] = _DevStackStats(
            first_rank=stack.frames[0][0] + 1,
            edited_error_frames=edited_error,
            edited_lines=edited_lines,
            stack_len=len(stack),
        )
    if not stats:
        return {}

    min_rank = min(s.first_rank for s in stats.values())
    max_error_frames = max(s.edited_error_frames for s in stats.values())
    max_lines = max(s.edited_lines for s in stats.values())
    max_stack = max(s.stack_len for s in stats.values())

    out = {}
    for dev, s in stats.items():
        if max_idf_index is None:
            idf_frame_ratio = 0.0
        else:
            ann = frame_anns[max_idf_index]
            idf_frame_ratio = len(ann.lines_by(dev)) / len(ann)
        out[dev] = np.array(
            [
                float(s.first_rank),  # S1 first edited frame, 1-based
                s.first_rank / n,  # S2 / stack length
                s.first_rank / n_annotated,  # S3 / annotated frames
                min_rank / s.first_rank,  # S4 candidate min / own
                s.edited_error_frames / n,  # S5 edited error lines / length
                _ratio(s.edited_error_frames, max_error_frames),  # S6 / candidate max
                _ratio(s.edited_lines, total_lines),  # S7 edited lines / total lines
                _ratio(s.edited_lines, max_lines),  # S8 / candidate max
                idf_frame_ratio,  # S9 edited share of the max-IDF frame
                s.stack_len / n,  # S10 edited frames / length
                s.stack_len / n_annotated,  # S11 / annotated frames
                _ratio(s.stack_len, max_stack),  # S12 / candidate max
            ],
            dtype=np.float64,
        )
    return out


def stack_features(
    dev: str,
    trace: StackTrace,
    stacks: Mapping[str, DeveloperStack],
    store: AnnotationStore,
    idf: IdfTable,
    token_mode: str = "file",
) -> np.ndarray:
    """S1..S12 for one developer; its stack in `stacks` must be non-empty."""
    matrix = stack_feature_matrix(trace, stacks, store, idf, token_mode)
    if dev not in matrix:
        raise ValueError(f"developer {dev!r} has an empty stack for this trace")
    return matrix[dev]
