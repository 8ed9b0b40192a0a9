"""End-to-end plumbing shared by the CLI and the test suite: corpus I/O,
preprocessing, model/baseline evaluation, and eval-report assembly."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .annotations import AnnotationStore, build_developer_stack, candidate_developers, parse_annotation_record
from .baselines import TfidfVectorizer, LinearModel, heuristic_rank, logreg_rank, logreg_train
from .evaluation import EvalResult, compute_metrics, metrics_from_ranks
from .features import (
    FRAME_FEATURE_NAMES,
    STACK_FEATURE_NAMES,
    IdfTable,
    compute_idf,
    frame_feature_matrix,
    stack_feature_matrix,
)
from .ranker import RankedList, RankingModel, rank
from .trace import StackTrace, compress_loops, parse_report, tokenize

REPORTS_FILE = "reports.jsonl"
ANNOTATIONS_FILE = "annotations.jsonl"


def load_reports(path) -> list[StackTrace]:
    reports = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                reports.append(parse_report(line))
    return reports


def load_annotation_store(path) -> AnnotationStore:
    annotations = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if line.strip():
                annotations.append(parse_annotation_record(line, lineno))
    return AnnotationStore(annotations)


def load_corpus(data_dir) -> tuple[list[StackTrace], AnnotationStore]:
    data = Path(data_dir)
    return load_reports(data / REPORTS_FILE), load_annotation_store(data / ANNOTATIONS_FILE)


def preprocess_reports(reports: Iterable[StackTrace]) -> list[StackTrace]:
    """Dataset-level preprocessing: loop compression on every trace."""
    return [compress_loops(r) for r in reports]


def known_developers(reports: Iterable[StackTrace], store: AnnotationStore) -> list[str]:
    """The developer universe: everyone in the blame store plus every fixer."""
    devs = store.authors()
    devs |= {r.fixer for r in reports if r.fixer is not None}
    return sorted(devs)


# ---------------------------------------------------------------------------
# Evaluation harnesses (one RankedList per query, then shared metrics)


def evaluate_rankings(rankings: Sequence[RankedList], reports: Sequence[StackTrace]) -> EvalResult:
    targets = [r.fixer for r in reports]
    if any(t is None for t in targets):
        raise ValueError("cannot evaluate reports without a fixer label")
    return compute_metrics(rankings, targets)


def rank_with_model(
    model: RankingModel, reports: Sequence[StackTrace], store: AnnotationStore, all_devs: Sequence[str]
) -> list[RankedList]:
    return [rank(r, store, model, all_devs) for r in reports]


def rank_with_heuristic(
    reports: Sequence[StackTrace], store: AnnotationStore, all_devs: Sequence[str]
) -> list[RankedList]:
    return [heuristic_rank(r, store, all_devs) for r in reports]


@dataclass
class TfidfLogregBaseline:
    vectorizer: TfidfVectorizer
    model: LinearModel


def train_tfidf_logreg(
    train_reports: Sequence[StackTrace],
    token_mode: str = "file",
    l2: float = 1e-5,
    epochs: int = 25,
    seed: int = 0,
) -> TfidfLogregBaseline:
    """Fit the TF-IDF + logistic-regression classifier on the training split
    (reports without a fixer label are ignored)."""
    labeled = [r for r in train_reports if r.fixer is not None]
    sequences = [tokenize(r, token_mode) for r in labeled]
    vectorizer = TfidfVectorizer.fit(sequences)
    vectors = [vectorizer.transform(seq.tokens) for seq in sequences]
    labels = [r.fixer for r in labeled]
    model = logreg_train(
        vectors, labels, vectorizer.n_features, l2=l2, epochs=epochs, seed=seed
    )
    return TfidfLogregBaseline(vectorizer=vectorizer, model=model)


def rank_with_tfidf_logreg(
    baseline: TfidfLogregBaseline,
    reports: Sequence[StackTrace],
    all_devs: Sequence[str],
    token_mode: str = "file",
) -> list[RankedList]:
    out = []
    for report in reports:
        vec = baseline.vectorizer.transform(tokenize(report, token_mode).tokens)
        out.append(logreg_rank(vec, baseline.model, all_devs))
    return out


# ---------------------------------------------------------------------------
# Eval-report assembly


def unseen_fixer_block(
    eval_reports: Sequence[StackTrace],
    train_reports: Sequence[StackTrace],
    result: EvalResult,
) -> dict:
    """How queries whose fixer never appears in training fared: the count,
    their Acc@1, and how many still received a (finite) rank."""
    train_fixers = {r.fixer for r in train_reports if r.fixer is not None}
    unseen = [i for i, r in enumerate(eval_reports) if r.fixer not in train_fixers]
    block = {"unseen_fixer_queries": len(unseen)}
    if unseen:
        ranks = np.asarray([result.ranks[i] for i in unseen], dtype=np.float64)
        block["unseen_fixer_acc@1"] = float((ranks <= 1).mean())
        block["unseen_fixer_ranked"] = len(unseen)  # ranking lists are total
    return block


def model_report(name: str, result: EvalResult, extra: Optional[dict] = None) -> dict:
    doc = {"model": name}
    doc.update(result.as_dict())
    if extra:
        doc.update(extra)
    return doc


# ---------------------------------------------------------------------------
# Feature CSV dump


def dump_feature_csv(
    path,
    reports: Sequence[StackTrace],
    store: AnnotationStore,
    idf: IdfTable,
    token_mode: str = "file",
) -> int:
    """One row per (report, developer-with-non-empty-stack): frame features
    averaged over the developer's stack frames, then the stack features.
    Returns the number of rows written."""
    n_rows = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["report_id", "developer"]
            + [name.lower() for name in FRAME_FEATURE_NAMES]
            + [name.lower() for name in STACK_FEATURE_NAMES]
        )
        for report in reports:
            candidates = sorted(candidate_developers(report, store))
            if not candidates:
                continue
            stacks = {d: build_developer_stack(d, report, store) for d in candidates}
            stack_feats = stack_feature_matrix(report, stacks, store, idf, token_mode)
            frame_sums = {dev: np.zeros(len(FRAME_FEATURE_NAMES)) for dev in candidates}
            frame_counts = {dev: 0 for dev in candidates}
            seen_frames = set()
            for dev in candidates:
                for idx, frame in stacks[dev].frames:
                    seen_frames.add(idx)
            for idx in sorted(seen_frames):
                frame = report.frames[idx]
                matrix = frame_feature_matrix(
                    store.for_frame(frame), frame.error_line, report.timestamp, candidates
                )
                for dev, row in matrix.items():
                    frame_sums[dev] += row
                    frame_counts[dev] += 1
            for dev in candidates:
                if frame_counts[dev] == 0:
                    continue
                means = frame_sums[dev] / frame_counts[dev]
                writer.writerow(
                    [report.report_id, dev]
                    + [repr(float(x)) for x in means]
                    + [repr(float(x)) for x in stack_feats[dev]]
                )
                n_rows += 1
    return n_rows


def write_json(path, doc: dict) -> None:
    if str(path) == "-":
        print(json.dumps(doc, indent=2))
        return
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
