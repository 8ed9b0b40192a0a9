"""Comparison models: a blame-counting heuristic and TF-IDF + logistic
regression adapted to tokenized stack traces.

The classifier deliberately keeps the classification limitation: it can
only predict developers seen in training; everyone else is appended to the
tail of the ranking.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .annotations import AnnotationStore
from .features import MS_PER_DAY, TAU_DAYS, compute_idf
from .ranker import RankedList
from .trace import StackTrace, TokenSequence

HEURISTIC_TOP_FRAMES = 20


def heuristic_rank(
    trace: StackTrace,
    store: AnnotationStore,
    all_devs: Iterable[str],
    top_frames: int = HEURISTIC_TOP_FRAMES,
    tau_days: float = TAU_DAYS,
) -> RankedList:
    """Credit the last editor of each frame's error line, weighted by edit
    recency (e^(-days/tau)), over the first min(top_frames, n) frames.

    Deterministic and independent of developer enumeration order.
    """
    known = set(all_devs)
    scores = {dev: 0.0 for dev in known}
    for frame in trace.frames[:top_frames]:
        ann = store.for_frame(frame)
        if ann is None or frame.error_line is None or frame.error_line > len(ann):
            continue
        line = ann.lines[frame.error_line - 1]
        if line.author not in known:
            continue
        dt_days = max(0.0, (trace.timestamp - line.timestamp) / MS_PER_DAY)
        scores[line.author] += math.exp(-dt_days / tau_days)
    return RankedList.from_scores(scores)


# ---------------------------------------------------------------------------
# TF-IDF


@dataclass
class TfidfVectorizer:
    """tf (raw count) times idf (as in the feature module), L2-normalized.

    Fit on the training split only; tokens outside the fitted vocabulary are
    dropped at transform time.
    """

    vocabulary: dict[str, int]
    idf: np.ndarray  # weight per column

    @classmethod
    def fit(cls, sequences: Sequence[TokenSequence]) -> "TfidfVectorizer":
        table = compute_idf(sequences)
        vocab = {tok: i for i, tok in enumerate(sorted(table.weights))}
        idf = np.empty(len(vocab))
        for tok, col in vocab.items():
            idf[col] = table.weights[tok]
        return cls(vocabulary=vocab, idf=idf)

    @property
    def n_features(self) -> int:
        return len(self.vocabulary)

    def transform(self, tokens: Iterable[str]) -> dict[int, float]:
        """Sparse tf-idf vector as a column -> weight map; an empty or fully
        out-of-vocabulary document gives the zero vector."""
        counts = Counter(tok for tok in tokens if tok in self.vocabulary)
        vec = {self.vocabulary[tok]: c * self.idf[self.vocabulary[tok]] for tok, c in counts.items()}
        norm = math.sqrt(sum(w * w for w in vec.values()))
        if norm > 0.0:
            vec = {col: w / norm for col, w in vec.items()}
        return vec


# ---------------------------------------------------------------------------
# Multinomial logistic regression (SGD, L2)


@dataclass
class LinearModel:
    """Per-class weights over the TF-IDF vocabulary; classes are the
    developers seen in training, so unseen developers cannot be predicted."""

    classes: list[str]
    weights: np.ndarray  # (n_classes, n_features)
    biases: np.ndarray  # (n_classes,)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def _class_scores(weights, biases, vector: dict[int, float]) -> np.ndarray:
    z = biases.copy()
    for col, w in vector.items():
        z += weights[:, col] * w
    return z


def logreg_loss_grad(
    weights: np.ndarray,
    biases: np.ndarray,
    vector: dict[int, float],
    label: int,
    l2: float,
):
    """Regularized log loss of one sample and its dense gradients."""
    probs = _softmax(_class_scores(weights, biases, vector))
    loss = -math.log(probs[label]) + 0.5 * l2 * float((weights * weights).sum())
    g = probs.copy()
    g[label] -= 1.0
    d_weights = l2 * weights.copy()
    for col, w in vector.items():
        d_weights[:, col] += g * w
    return loss, d_weights, g


def logreg_train(
    vectors: Sequence[dict[int, float]],
    labels: Sequence[str],
    n_features: int,
    l2: float = 1e-5,
    epochs: int = 25,
    learning_rate: float = 0.1,
    seed: int = 0,
) -> LinearModel:
    """SGD over the multinomial log loss with L2 regularization."""
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError(f"need at least 2 classes, got {len(classes)}")
    class_index = {c: i for i, c in enumerate(classes)}
    y = [class_index[l] for l in labels]
    weights = np.zeros((len(classes), n_features))
    biases = np.zeros(len(classes))
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for i in rng.permutation(len(vectors)):
            vec = vectors[i]
            probs = _softmax(_class_scores(weights, biases, vec))
            g = probs
            g[y[i]] -= 1.0
            weights *= 1.0 - learning_rate * l2
            for col, w in vec.items():
                weights[:, col] -= learning_rate * g * w
            biases -= learning_rate * g
    return LinearModel(classes=classes, weights=weights, biases=biases)


def logreg_predict_proba(model: LinearModel, vector: dict[int, float]) -> np.ndarray:
    return _softmax(_class_scores(model.weights, model.biases, vector))


def logreg_rank(
    vector: dict[int, float], model: LinearModel, all_devs: Iterable[str]
) -> RankedList:
    """Seen classes ordered by probability; developers unseen in training are
    appended after them in id order (scored below every probability)."""
    probs = logreg_predict_proba(model, vector)
    scores = {dev: float(p) for dev, p in zip(model.classes, probs)}
    for dev in all_devs:
        if dev not in scores:
            scores[dev] = -1.0
    return RankedList.from_scores(scores)
