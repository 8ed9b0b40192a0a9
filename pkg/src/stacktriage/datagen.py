"""Synthetic report/annotation corpora with a planted assignment signal.

Every file gets an owner who authored most of its lines recently plus one
minority editor with older edits. Each report's fixer is the owner of its
top-most annotated frame with probability 1 - noise. The top-most annotated
frame points at a fresh per-report commit whose annotation carries very
recent owner edits, while deeper frames share one old per-file annotation,
so recency-aware models have a clean signal to find. A small fraction of
frames gets loop-injected repeats and null fields to exercise
preprocessing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .annotations import Annotation, AnnotationLine, serialize_annotation
from .trace import StackFrame, StackTrace, serialize_report

DAY_MS = 86_400_000
BASE_TIME = 1_577_836_800_000  # 2020-01-01 UTC

_STEMS = ("Parser", "Cache", "Index", "Render", "Socket", "Scheduler", "Editor", "Daemon")
_MODULES = ("core", "ui", "vcs", "net", "index", "lang", "build", "debug")
_VERBS = ("run", "invoke", "apply", "update", "resolve", "dispatch", "flush", "accept")
_EXTS = ("java", "kt", "scala")

NULL_FIELD_RATE = 0.05
LOOP_ATTEMPT_RATE = 0.02  # ~5% of frames end up inside an injected repeat


@dataclass
class GeneratorConfig:
    n_developers: int
    n_files: int
    n_reports: int
    mean_trace_len: float = 50.0
    noise: float = 0.0
    drop_annotations: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_developers < 2:
            raise ValueError("n_developers must be >= 2")
        if self.n_files < 1 or self.n_reports < 1:
            raise ValueError("n_files and n_reports must be >= 1")
        if self.mean_trace_len <= 0:
            raise ValueError("mean_trace_len must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must be in [0, 1]")
        if not 0.0 <= self.drop_annotations <= 1.0:
            raise ValueError("drop_annotations must be in [0, 1]")


@dataclass
class Corpus:
    reports: list[StackTrace]
    annotations: list[Annotation]
    manifest: dict


@dataclass
class _FileMeta:
    name: str
    subsystem: str
    method: str
    commit: str
    owner: str
    minority: str
    owner_frac: float
    n_lines: int


def _make_files(config: GeneratorConfig, devs: list[str], rng: np.random.Generator):
    owners = rng.permutation(
        np.tile(np.arange(config.n_developers), -(-config.n_files // config.n_developers))[
            : config.n_files
        ]
    )
    files = []
    for i in range(config.n_files):
        class_name = f"{_STEMS[i % len(_STEMS)]}{i:03d}"
        subsystem = f"com.acme.{_MODULES[i % len(_MODULES)]}"
        owner_idx = int(owners[i])
        minority_idx = (owner_idx + 1 + int(rng.integers(config.n_developers - 1))) % config.n_developers
        files.append(
            _FileMeta(
                name=f"{class_name}.{_EXTS[i % len(_EXTS)]}",
                subsystem=subsystem,
                method=f"{subsystem}.{class_name}.{_VERBS[i % len(_VERBS)]}",
                commit=f"c{i:05d}",
                owner=devs[owner_idx],
                minority=devs[minority_idx],
                owner_frac=0.7 + 0.2 * rng.random(),
                n_lines=int(rng.integers(20, 61)),
            )
        )
    return files


def _annotation_lines(
    meta: _FileMeta,
    rng: np.random.Generator,
    owner_lo: int,
    owner_hi: int,
    minority_lo: int,
    minority_hi: int,
) -> tuple[AnnotationLine, ...]:
    """Lines attributed to the owner (at owner_frac) or the minority editor,
    with timestamps drawn from the two given windows. Line 1 is forced to
    the owner and the last line to the minority editor so both always
    appear."""
    lines = []
    for i in range(meta.n_lines):
        is_owner = rng.random() < meta.owner_frac
        if i == 0:
            is_owner = True
        elif i == meta.n_lines - 1:
            is_owner = False
        if is_owner:
            author, ts = meta.owner, int(rng.integers(owner_lo, owner_hi))
        else:
            author, ts = meta.minority, int(rng.integers(minority_lo, minority_hi))
        lines.append(AnnotationLine(author=author, timestamp=ts))
    return tuple(lines)


def generate_corpus(config: GeneratorConfig) -> Corpus:
    """Deterministically generate reports, annotations, and the ground-truth
    manifest for one seed."""
    rng = np.random.default_rng(config.seed)
    devs = [f"dev{i:03d}" for i in range(config.n_developers)]
    files = _make_files(config, devs, rng)

    base_annotations = [
        Annotation(
            file=meta.name,
            commit=meta.commit,
            lines=_annotation_lines(
                meta,
                rng,
                BASE_TIME - 300 * DAY_MS,
                BASE_TIME - 200 * DAY_MS,
                BASE_TIME - 600 * DAY_MS,
                BASE_TIME - 400 * DAY_MS,
            ),
        )
        for meta in files
    ]

    zipf = 1.0 / np.arange(1, config.n_files + 1) ** 0.8
    zipf /= zipf.sum()

    reports = []
    fresh_annotations = []
    manifest_reports = []
    now = BASE_TIME
    for r in range(config.n_reports):
        now += int(rng.integers(30 * 60_000, 4 * 3_600_000))
        n = max(1, int(rng.poisson(config.mean_trace_len)))
        file_ids = [int(f) for f in rng.choice(config.n_files, size=n, p=zipf)]
        frames = []
        for fid in file_ids:
            meta = files[fid]
            frames.append(
                {
                    "method": meta.method,
                    "file": meta.name,
                    "subsystem": meta.subsystem,
                    "commit": meta.commit,
                    "line": int(rng.integers(1, meta.n_lines + 1)),
                }
            )

        # Null fields on ~5% of frames.
        for frame in frames:
            if rng.random() < NULL_FIELD_RATE:
                frame[("method", "file", "subsystem", "commit", "line")[int(rng.integers(5))]] = None

        # Loop injection: overwrite following frames with repeats of a block,
        # so trace length stays put and compression can undo it.
        for _ in range(int(rng.binomial(n, LOOP_ATTEMPT_RATE))):
            i = int(rng.integers(0, n))
            period = int(rng.integers(1, 4))
            k = int(rng.integers(2, 4))
            if i + period * k > n:
                continue
            for rep in range(1, k):
                for off in range(period):
                    frames[i + rep * period + off] = dict(frames[i + off])
                    file_ids[i + rep * period + off] = file_ids[i + off]

        # The planted frame is the top-most annotated one; make sure it exists.
        planted = next(
            (i for i, f in enumerate(frames) if f["file"] is not None and f["commit"] is not None),
            None,
        )
        if planted is None:
            planted = 0
            frames[0]["file"] = files[file_ids[0]].name
            frames[0]["commit"] = files[file_ids[0]].commit

        meta = files[file_ids[planted]]
        fresh_commit = f"r{r:05d}"
        fresh = Annotation(
            file=meta.name,
            commit=fresh_commit,
            lines=_annotation_lines(
                meta,
                rng,
                now - 3 * DAY_MS,
                now - DAY_MS // 4,
                now - 600 * DAY_MS,
                now - 300 * DAY_MS,
            ),
        )
        fresh_annotations.append(fresh)
        frames[planted]["commit"] = fresh_commit
        owner_lines = fresh.lines_by(meta.owner)
        if frames[planted]["line"] is not None:
            frames[planted]["line"] = owner_lines[int(rng.integers(len(owner_lines)))]

        if rng.random() >= config.noise:
            fixer = meta.owner
        else:
            owner_idx = devs.index(meta.owner)
            fixer = devs[(owner_idx + 1 + int(rng.integers(config.n_developers - 1))) % config.n_developers]

        reports.append(
            StackTrace(
                report_id=f"report{r:05d}",
                timestamp=now,
                frames=tuple(
                    StackFrame(
                        method=f["method"],
                        file=f["file"],
                        subsystem=f["subsystem"],
                        commit=f["commit"],
                        error_line=f["line"],
                    )
                    for f in frames
                ),
                fixer=fixer,
            )
        )
        manifest_reports.append({"id": f"report{r:05d}", "planted_owner": meta.owner})

    kept_base = [a for a in base_annotations if rng.random() >= config.drop_annotations]
    manifest = {
        "config": asdict(config),
        "developers": devs,
        "reports": manifest_reports,
    }
    return Corpus(reports=reports, annotations=kept_base + fresh_annotations, manifest=manifest)


def write_corpus(corpus: Corpus, out_dir) -> dict[str, Path]:
    """Write reports.jsonl, annotations.jsonl, and manifest.json; returns the
    paths. Output is byte-identical for a fixed seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "reports": out / "reports.jsonl",
        "annotations": out / "annotations.jsonl",
        "manifest": out / "manifest.json",
    }
    with open(paths["reports"], "w", encoding="utf-8") as f:
        for report in corpus.reports:
            f.write(serialize_report(report) + "\n")
    with open(paths["annotations"], "w", encoding="utf-8") as f:
        for ann in corpus.annotations:
            f.write(serialize_annotation(ann) + "\n")
    with open(paths["manifest"], "w", encoding="utf-8") as f:
        json.dump(corpus.manifest, f, indent=2)
        f.write("\n")
    return paths
