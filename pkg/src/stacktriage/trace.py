"""Crash-report domain model: frames, traces, loop compression, tokenization.

Reports arrive as JSON lines, one object per crash, frames ordered
top-of-stack first. All values are immutable after construction and safe
to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Hashable, Optional, Sequence

TOKEN_MODES = ("file", "method", "subsystem")


class ReportParseError(ValueError):
    """A report record is malformed or violates a schema invariant."""


@dataclass(frozen=True)
class StackFrame:
    """One stack entry. Any field may be absent in collected data."""

    method: Optional[str] = None
    file: Optional[str] = None
    subsystem: Optional[str] = None
    commit: Optional[str] = None
    error_line: Optional[int] = None

    def __post_init__(self):
        if self.error_line is not None and self.error_line < 1:
            raise ReportParseError(
                f"field 'line' must be >= 1 when present, got {self.error_line}"
            )

    def key(self) -> tuple:
        """Equality key used by loop compression (all five fields)."""
        return (self.method, self.file, self.subsystem, self.commit, self.error_line)


@dataclass(frozen=True)
class StackTrace:
    report_id: str
    timestamp: int  # ms since Unix epoch
    frames: tuple[StackFrame, ...]
    fixer: Optional[str] = None  # ground truth; absent at inference

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class TokenSequence:
    """Text tokens extracted from a trace plus their originating frame indices."""

    tokens: tuple[str, ...]
    source_frame_indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.source_frame_indices):
            raise ValueError("tokens and source_frame_indices must have equal length")

    def __len__(self) -> int:
        return len(self.tokens)


def _optional_str(record: dict, field: str, where: str):
    value = record.get(field)
    if value is None or isinstance(value, str):
        return value
    raise ReportParseError(f"{where}: field '{field}' must be a string or null")


def parse_report(raw: str) -> StackTrace:
    """Parse one JSON-lines report record into a StackTrace.

    Raises ReportParseError naming the offending field on malformed input;
    an empty frame list is rejected.
    """
    try:
        record = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ReportParseError(f"report is not valid JSON: {exc}") from exc
    if not isinstance(record, dict):
        raise ReportParseError("report record must be a JSON object")

    report_id = record.get("id")
    if not isinstance(report_id, str):
        raise ReportParseError("field 'id' must be a string")
    timestamp = record.get("timestamp")
    if not isinstance(timestamp, int) or isinstance(timestamp, bool):
        raise ReportParseError(f"report {report_id}: field 'timestamp' must be an integer")
    fixer = _optional_str(record, "fixer", f"report {report_id}")

    raw_frames = record.get("frames")
    if not isinstance(raw_frames, list):
        raise ReportParseError(f"report {report_id}: field 'frames' must be an array")
    if not raw_frames:
        raise ReportParseError(f"report {report_id}: field 'frames' must be non-empty")

    frames = []
    for i, rf in enumerate(raw_frames):
        where = f"report {report_id} frame {i}"
        if not isinstance(rf, dict):
            raise ReportParseError(f"{where}: frame must be a JSON object")
        line = rf.get("line")
        if line is not None and (not isinstance(line, int) or isinstance(line, bool)):
            raise ReportParseError(f"{where}: field 'line' must be an integer or null")
        try:
            frames.append(
                StackFrame(
                    method=_optional_str(rf, "method", where),
                    file=_optional_str(rf, "file", where),
                    subsystem=_optional_str(rf, "subsystem", where),
                    commit=_optional_str(rf, "commit", where),
                    error_line=line,
                )
            )
        except ReportParseError as exc:
            raise ReportParseError(f"{where}: {exc}") from exc

    return StackTrace(report_id=report_id, timestamp=timestamp, frames=tuple(frames), fixer=fixer)


def serialize_report(trace: StackTrace) -> str:
    """Inverse of parse_report; parse(serialize(t)) reproduces t exactly."""
    return json.dumps(
        {
            "id": trace.report_id,
            "timestamp": trace.timestamp,
            "fixer": trace.fixer,
            "frames": [
                {
                    "method": f.method,
                    "file": f.file,
                    "subsystem": f.subsystem,
                    "commit": f.commit,
                    "line": f.error_line,
                }
                for f in trace.frames
            ],
        }
    )


def _first_tandem_repeat(symbols: Sequence[Hashable]) -> Optional[tuple[int, int, int]]:
    """Leftmost (position, period, repeats) with repeats >= 2, smallest period first.

    For a fixed position and period the repeat count is maximal.
    """
    n = len(symbols)
    for i in range(n - 1):
        for period in range(1, (n - i) // 2 + 1):
            block = symbols[i : i + period]
            k = 1
            while symbols[i + k * period : i + (k + 1) * period] == block:
                k += 1
            if k >= 2:
                return i, period, k
    return None


def compress_symbol_indices(symbols: Sequence[Hashable]) -> list[int]:
    """Indices of elements surviving consecutive tandem-repeat collapsing.

    Repeatedly find the leftmost repeated block (smallest period there,
    maximal repeat count), keep its first occurrence, drop the rest, and
    restart until no consecutive repeat remains.
    """
    syms = list(symbols)
    idx = list(range(len(syms)))
    while True:
        found = _first_tandem_repeat(syms)
        if found is None:
            return idx
        i, period, k = found
        del syms[i + period : i + k * period]
        del idx[i + period : i + k * period]


def compress_loops(trace: StackTrace) -> StackTrace:
    """Collapse consecutively repeated frame blocks down to one occurrence.

    Very long traces (typically stack-overflow crashes) contain frame loops;
    only the first occurrence of each loop body is kept. Surviving frames
    preserve their relative order, and the result is a fixpoint (idempotent).
    """
    keep = compress_symbol_indices([f.key() for f in trace.frames])
    if len(keep) == len(trace.frames):
        return trace
    return replace(trace, frames=tuple(trace.frames[i] for i in keep))


def tokenize(trace: StackTrace, mode: str = "file") -> TokenSequence:
    """Map each frame to a text token from the selected field, skipping nulls.

    Frames whose selected field is absent are skipped entirely, so the
    result may be shorter than the trace (or empty).
    """
    if mode not in TOKEN_MODES:
        raise ValueError(f"unknown token mode {mode!r}, expected one of {TOKEN_MODES}")
    tokens = []
    indices = []
    for i, frame in enumerate(trace.frames):
        value = getattr(frame, mode)
        if value is not None:
            tokens.append(value)
            indices.append(i)
    return TokenSequence(tokens=tuple(tokens), source_frame_indices=tuple(indices))
