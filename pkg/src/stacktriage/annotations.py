"""VCS blame annotations and per-developer stack-trace construction.

An annotation records, for one (file, commit) pair, the last author and
last-edit timestamp of every line. A developer's stack trace for a query
is the ordered sub-sequence of query frames whose file the developer has
edited at least one line of.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .trace import StackFrame, StackTrace

logger = logging.getLogger(__name__)


class AnnotationParseError(ValueError):
    """An annotation record is malformed or violates a schema invariant."""


@dataclass(frozen=True)
class AnnotationLine:
    author: str
    timestamp: int  # ms since Unix epoch

    def __post_init__(self):
        if self.timestamp < 0:
            raise AnnotationParseError(f"line timestamp must be >= 0, got {self.timestamp}")


@dataclass(frozen=True)
class Annotation:
    """Blame record for one (file, commit); lines[i] describes line i+1."""

    file: str
    commit: str
    lines: tuple[AnnotationLine, ...]
    author_set: frozenset[str] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if not self.lines:
            raise AnnotationParseError(
                f"annotation ({self.file}, {self.commit}) has an empty lines array"
            )
        object.__setattr__(self, "author_set", frozenset(l.author for l in self.lines))

    def __len__(self) -> int:
        return len(self.lines)

    def lines_by(self, dev: str) -> list[int]:
        """1-based line numbers last edited by `dev`."""
        return [i + 1 for i, l in enumerate(self.lines) if l.author == dev]


class AnnotationStore:
    """Immutable-after-load map from (file, commit) to Annotation.

    Missing keys are reported as absent, never fabricated; lookups are
    read-only and safe for concurrent use.
    """

    def __init__(self, annotations: Iterable[Annotation] = ()):
        self._by_key: dict[tuple[str, str], Annotation] = {}
        for ann in annotations:
            key = (ann.file, ann.commit)
            if key in self._by_key:
                logger.warning("duplicate annotation for %s, keeping the last record", key)
            self._by_key[key] = ann

    def get(self, file: Optional[str], commit: Optional[str]) -> Optional[Annotation]:
        if file is None or commit is None:
            return None
        return self._by_key.get((file, commit))

    def for_frame(self, frame: StackFrame) -> Optional[Annotation]:
        return self.get(frame.file, frame.commit)

    def authors(self) -> set[str]:
        """All developer ids appearing anywhere in the store."""
        out: set[str] = set()
        for ann in self._by_key.values():
            out |= ann.author_set
        return out

    def __len__(self) -> int:
        return len(self._by_key)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self._by_key

    def __iter__(self):
        return iter(self._by_key.values())


def parse_annotations(raw: str) -> AnnotationStore:
    """Parse JSON-lines annotation records into a store (last record wins on
    duplicate (file, commit) keys, with a warning)."""
    annotations = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        annotations.append(parse_annotation_record(line, lineno))
    return AnnotationStore(annotations)


def parse_annotation_record(raw: str, lineno: int = 0) -> Annotation:
    where = f"annotation record {lineno}" if lineno else "annotation record"
    try:
        record = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise AnnotationParseError(f"{where}: not valid JSON: {exc}") from exc
    if not isinstance(record, dict):
        raise AnnotationParseError(f"{where}: must be a JSON object")
    file = record.get("file")
    commit = record.get("commit")
    if not isinstance(file, str):
        raise AnnotationParseError(f"{where}: field 'file' must be a string")
    if not isinstance(commit, str):
        raise AnnotationParseError(f"{where}: field 'commit' must be a string")
    raw_lines = record.get("lines")
    if not isinstance(raw_lines, list) or not raw_lines:
        raise AnnotationParseError(f"{where}: field 'lines' must be a non-empty array")
    lines = []
    for i, rl in enumerate(raw_lines):
        if not isinstance(rl, dict) or not isinstance(rl.get("author"), str):
            raise AnnotationParseError(f"{where} line {i + 1}: field 'author' must be a string")
        ts = rl.get("timestamp")
        if not isinstance(ts, int) or isinstance(ts, bool):
            raise AnnotationParseError(f"{where} line {i + 1}: field 'timestamp' must be an integer")
        lines.append(AnnotationLine(author=rl["author"], timestamp=ts))
    return Annotation(file=file, commit=commit, lines=tuple(lines))


def serialize_annotation(ann: Annotation) -> str:
    return json.dumps(
        {
            "file": ann.file,
            "commit": ann.commit,
            "lines": [{"author": l.author, "timestamp": l.timestamp} for l in ann.lines],
        }
    )


@dataclass(frozen=True)
class DeveloperStack:
    """Sub-trace of a query containing only frames whose file `developer`
    edited (>= 1 blame line); original frame order preserved."""

    developer: str
    frames: tuple[tuple[int, StackFrame], ...]  # (index in query trace, frame)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.frames)

    @property
    def is_empty(self) -> bool:
        return not self.frames


def build_developer_stack(dev: str, trace: StackTrace, store: AnnotationStore) -> DeveloperStack:
    """Walk the query frames top to bottom, keeping those whose annotation
    lists `dev` among its line authors.

    Frames with an absent file/commit or a missing annotation contribute
    nothing (treated as having no authors).
    """
    kept = []
    for i, frame in enumerate(trace.frames):
        ann = store.for_frame(frame)
        if ann is not None and dev in ann.author_set:
            kept.append((i, frame))
    return DeveloperStack(developer=dev, frames=tuple(kept))


def candidate_developers(trace: StackTrace, store: AnnotationStore) -> set[str]:
    """Developers whose stack for this trace is non-empty, i.e. the union of
    author sets over the trace's annotated frames."""
    devs: set[str] = set()
    for frame in trace.frames:
        ann = store.for_frame(frame)
        if ann is not None:
            devs |= ann.author_set
    return devs
