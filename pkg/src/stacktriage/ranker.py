"""The ranking model: encoders, comparison module, RankNet training, ranking.

A query (crash) and each candidate developer are encoded into fixed-width
vectors by same-architecture encoders (shared token embeddings, separate
encoder weights). The comparison module joins [x_q; x_q^T M x_d; x_d;
stack features] and a two-layer MLP produces the relevance score. Training
minimizes the pairwise RankNet loss between the known fixer and every other
candidate of the query.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import nn
from .annotations import AnnotationStore, build_developer_stack, candidate_developers
from .features import (
    N_FRAME_FEATURES,
    N_STACK_FEATURES,
    IdfTable,
    compute_idf,
    frame_feature_matrix,
    stack_feature_matrix,
)
from .trace import StackTrace, compress_loops, tokenize

UNK_TOKEN = "<UNK>"

ENCODERS = ("rnn", "cnn")
FEATURE_MODES = ("none", "manual_frame", "neural_frame")

PRESETS = {
    "public": {"embedding_dim": 50, "hidden_size": 70, "num_filters": 32},
    "private": {"embedding_dim": 70, "hidden_size": 100, "num_filters": 64},
}


class TrainingDataError(ValueError):
    """No usable training reports remain after the skip rules."""


@dataclass
class ModelConfig:
    encoder: str = "rnn"
    feature_mode: str = "manual_frame"
    use_stack_features: bool = False
    embedding_dim: int = 50
    hidden_size: int = 70
    num_filters: int = 32
    mlp_hidden: int = 64
    annotation_hidden: int = 10
    token_mode: str = "file"
    epochs: int = 10
    learning_rate: float = 1e-3
    weight_decay: float = 1e-3
    dropout: float = 0.2
    candidate_cap: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"feature_mode must be one of {FEATURE_MODES}, got {self.feature_mode!r}")
        for name in ("embedding_dim", "hidden_size", "num_filters", "mlp_hidden",
                     "annotation_hidden", "candidate_cap"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def encoder_width(self) -> int:
        return 4 * self.hidden_size if self.encoder == "rnn" else self.num_filters

    @property
    def frame_feature_width(self) -> int:
        return 0 if self.feature_mode == "none" else N_FRAME_FEATURES

    @property
    def dev_input_width(self) -> int:
        return self.embedding_dim + self.frame_feature_width

    @property
    def join_width(self) -> int:
        return 2 * self.encoder_width + 1 + (N_STACK_FEATURES if self.use_stack_features else 0)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def init_parameters(
    config: ModelConfig, vocab_size: int, rng: Optional[np.random.Generator] = None
) -> nn.ParameterSet:
    """Fresh parameters for the configured graph; creation order is fixed so
    a given rng always yields the same tensors."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    tensors: dict[str, np.ndarray] = {}
    nn.init_embedding(rng, tensors, "emb", vocab_size, config.embedding_dim)
    if config.encoder == "rnn":
        nn.init_rnn_encoder(rng, tensors, "bug", config.embedding_dim, config.hidden_size)
        nn.init_rnn_encoder(rng, tensors, "dev", config.dev_input_width, config.hidden_size)
    else:
        nn.init_cnn_encoder(rng, tensors, "bug", config.embedding_dim, config.num_filters)
        nn.init_cnn_encoder(rng, tensors, "dev", config.dev_input_width, config.num_filters)
    if config.feature_mode == "neural_frame":
        nn.init_rnn_encoder(rng, tensors, "ann", 2, config.annotation_hidden)
        ann_out = 4 * config.annotation_hidden
        tensors["ann.proj.w"] = nn.glorot(
            rng, (ann_out, N_FRAME_FEATURES), ann_out, N_FRAME_FEATURES
        )
        tensors["ann.proj.b"] = np.zeros(N_FRAME_FEATURES)
    w = config.encoder_width
    tensors["m"] = nn.glorot(rng, (w, w), w, w)
    nn.init_mlp(rng, tensors, "mlp", config.join_width, config.mlp_hidden)
    return nn.ParameterSet(tensors=tensors, rng_seed=config.seed)


# ---------------------------------------------------------------------------
# Query preparation


@dataclass
class DevCase:
    """Encoder-ready view of one candidate for one query."""

    dev: str
    token_ids: np.ndarray  # (k,)
    frame_features: Optional[np.ndarray]  # (k, 15) in manual mode
    annotation_series: Optional[list[np.ndarray]]  # k arrays (L_i, 2) in neural mode
    stack_features: Optional[np.ndarray]  # (12,) when enabled


@dataclass
class QueryCase:
    report_id: str
    target: Optional[str]
    bug_token_ids: np.ndarray
    devs: list[DevCase]


def annotation_series(dev, annotation, error_line, report_time) -> np.ndarray:
    """The developer's blame lines as an irregular time series: rows of
    (|error_line - line|, ln(1 + ms since edit)), sorted by edit time."""
    ell = error_line if error_line is not None else 1
    lines = annotation.lines_by(dev)
    entries = sorted((annotation.lines[i - 1].timestamp, i) for i in lines)
    rows = [
        (abs(ell - i), math.log1p(max(0, report_time - ts)))
        for ts, i in entries
    ]
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), 2)


def prepare_query(
    trace: StackTrace,
    store: AnnotationStore,
    config: ModelConfig,
    vocab_index: Mapping[str, int],
    idf: Optional[IdfTable],
) -> Optional[QueryCase]:
    """Preprocess one report into encoder-ready inputs for all candidates.

    Returns None when the bug trace has no tokens at all. Candidates whose
    stack has no encodable frame (selected token field null everywhere) are
    dropped, mirroring the empty-representation rule.
    """
    trace = compress_loops(trace)
    seq = tokenize(trace, config.token_mode)
    if not seq.tokens:
        return None
    bug_ids = np.asarray([vocab_index.get(t, 0) for t in seq.tokens], dtype=np.intp)

    candidates = sorted(candidate_developers(trace, store))
    stacks = {d: build_developer_stack(d, trace, store) for d in candidates}
    if config.use_stack_features:
        if idf is None:
            raise ValueError("stack features require an IDF table")
        stack_feats = stack_feature_matrix(trace, stacks, store, idf, config.token_mode)
    else:
        stack_feats = {}

    frame_feats_cache: dict[int, dict[str, np.ndarray]] = {}

    def manual_features_for(frame_index, frame):
        if frame_index not in frame_feats_cache:
            ann = store.for_frame(frame)
            frame_feats_cache[frame_index] = frame_feature_matrix(
                ann, frame.error_line, trace.timestamp, candidates
            )
        return frame_feats_cache[frame_index]

    devs = []
    for dev in candidates:
        tokens = []
        feat_rows = []
        series = []
        for frame_index, frame in stacks[dev].frames:
            token = getattr(frame, config.token_mode)
            if token is None:
                continue
            tokens.append(vocab_index.get(token, 0))
            if config.feature_mode == "manual_frame":
                feat_rows.append(manual_features_for(frame_index, frame)[dev])
            elif config.feature_mode == "neural_frame":
                ann = store.for_frame(frame)
                series.append(annotation_series(dev, ann, frame.error_line, trace.timestamp))
        if not tokens:
            continue
        devs.append(
            DevCase(
                dev=dev,
                token_ids=np.asarray(tokens, dtype=np.intp),
                frame_features=np.vstack(feat_rows) if feat_rows else None,
                annotation_series=series if config.feature_mode == "neural_frame" else None,
                stack_features=stack_feats.get(dev),
            )
        )
    return QueryCase(
        report_id=trace.report_id, target=trace.fixer, bug_token_ids=bug_ids, devs=devs
    )


# ---------------------------------------------------------------------------
# Forward / backward over the composed graph


def _encode_forward(inputs: np.ndarray, params: nn.ParameterSet, prefix: str, config: ModelConfig):
    if config.encoder == "rnn":
        return nn.bilstm_attention_forward(inputs, params, prefix)
    return nn.conv_maxpool_forward(inputs, params[f"{prefix}.conv.k"], params[f"{prefix}.conv.b"])


def _encode_backward(d_out, cache, grads, prefix: str, config: ModelConfig):
    if config.encoder == "rnn":
        return nn.bilstm_attention_backward(d_out, cache, grads, prefix)
    d_inputs, d_k, d_b = nn.conv_maxpool_backward(d_out, cache)
    grads[f"{prefix}.conv.k"] += d_k
    grads[f"{prefix}.conv.b"] += d_b
    return d_inputs


def encode_annotation_forward(series: np.ndarray, params: nn.ParameterSet):
    """Annotation time series (L, 2) -> width-15 frame-feature replacement."""
    enc, cache = nn.bilstm_attention_forward(series, params, "ann")
    out = enc @ params["ann.proj.w"] + params["ann.proj.b"]
    return out, (enc, cache)


def encode_annotation(dev, annotation, error_line, report_time, params: nn.ParameterSet) -> np.ndarray:
    """Spec surface: neural replacement for the manual frame features."""
    series = annotation_series(dev, annotation, error_line, report_time)
    return encode_annotation_forward(series, params)[0]


def _dev_inputs_forward(dev_case: DevCase, params: nn.ParameterSet, config: ModelConfig):
    """Token embeddings, optionally widened with per-frame features."""
    x_tok = nn.embed(dev_case.token_ids, params["emb"])
    ann_caches = None
    if config.feature_mode == "manual_frame":
        inputs = np.hstack([x_tok, dev_case.frame_features])
    elif config.feature_mode == "neural_frame":
        ann_caches = []
        rows = []
        for series in dev_case.annotation_series:
            vec, cache = encode_annotation_forward(series, params)
            rows.append(vec)
            ann_caches.append(cache)
        inputs = np.hstack([x_tok, np.vstack(rows)])
    else:
        inputs = x_tok
    return inputs, ann_caches


def _dev_inputs_backward(d_inputs, dev_case: DevCase, ann_caches, grads, params, config):
    d_tok = d_inputs[:, : config.embedding_dim]
    nn.embed_backward(d_tok, dev_case.token_ids, grads["emb"])
    if config.feature_mode == "neural_frame":
        d_feat = d_inputs[:, config.embedding_dim :]
        for row, (enc, cache) in enumerate(ann_caches):
            d_vec = d_feat[row]
            grads["ann.proj.w"] += np.outer(enc, d_vec)
            grads["ann.proj.b"] += d_vec
            d_enc = params["ann.proj.w"] @ d_vec
            nn.bilstm_attention_backward(d_enc, cache, grads, "ann")
    # manual features are data, not parameters: no gradient flows out of them


def score(x_q: np.ndarray, x_d: np.ndarray, stack_feats, params: nn.ParameterSet) -> float:
    """f(q, d) = mlp([x_q; x_q^T M x_d; x_d; stack features])."""
    sim = nn.bilinear(x_q, params["m"], x_d)
    parts = [x_q, np.array([sim]), x_d]
    if stack_feats is not None:
        parts.append(stack_feats)
    return nn.score_mlp(np.concatenate(parts), params)


def ranknet_loss(target_score: float, other_scores: Sequence[float]) -> float:
    """Sum over others of ln(1 + e^-(target - other)); empty others -> 0."""
    others = np.asarray(list(other_scores), dtype=np.float64)
    if others.size == 0:
        return 0.0
    return float(np.logaddexp(0.0, -(target_score - others)).sum())


def encode_bug(trace: StackTrace, model: "RankingModel") -> np.ndarray:
    """Preprocess (loop compression + tokenization) and encode one trace."""
    trace = compress_loops(trace)
    seq = tokenize(trace, model.config.token_mode)
    if not seq.tokens:
        raise ValueError(f"report {trace.report_id}: no tokens in mode {model.config.token_mode!r}")
    ids = [model.vocab_index.get(t, 0) for t in seq.tokens]
    inputs = nn.embed(ids, model.params["emb"])
    return _encode_forward(inputs, model.params, "bug", model.config)[0]


def encode_developer(dev_case: DevCase, params: nn.ParameterSet, config: ModelConfig) -> np.ndarray:
    """Encode one candidate's stack inputs with the developer encoder."""
    if dev_case.token_ids.size == 0:
        raise ValueError("developer stack has no encodable frames")
    inputs, _ = _dev_inputs_forward(dev_case, params, config)
    return _encode_forward(inputs, params, "dev", config)[0]


def _forward_case(
    case: QueryCase,
    params: nn.ParameterSet,
    config: ModelConfig,
    dropout_rng: Optional[np.random.Generator] = None,
):
    """Scores for every candidate of a query plus the caches needed to run
    the graph backwards. Dropout masks are sampled only when a generator is
    supplied (training); inference is deterministic."""
    rate = config.dropout
    bug_inputs = nn.embed(case.bug_token_ids, params["emb"])
    x_q_raw, bug_cache = _encode_forward(bug_inputs, params, "bug", config)
    q_mask = nn.dropout_mask(dropout_rng, x_q_raw.shape, rate)
    x_q = nn.apply_mask(x_q_raw, q_mask)

    scores = []
    caches = []
    for dev_case in case.devs:
        inputs, ann_caches = _dev_inputs_forward(dev_case, params, config)
        x_d_raw, enc_cache = _encode_forward(inputs, params, "dev", config)
        d_mask = nn.dropout_mask(dropout_rng, x_d_raw.shape, rate)
        x_d = nn.apply_mask(x_d_raw, d_mask)
        sim = nn.bilinear(x_q, params["m"], x_d)
        parts = [x_q, np.array([sim]), x_d]
        if config.use_stack_features:
            parts.append(dev_case.stack_features)
        x_join = np.concatenate(parts)
        h_mask = nn.dropout_mask(dropout_rng, (config.mlp_hidden,), rate)
        s, mlp_cache = nn.mlp_forward(
            x_join, params["mlp.w1"], params["mlp.b1"], params["mlp.w2"], params["mlp.b2"], h_mask
        )
        scores.append(s)
        caches.append((inputs, ann_caches, enc_cache, d_mask, x_d, mlp_cache))
    return scores, (bug_inputs, bug_cache, q_mask, x_q, caches)


def query_loss(case: QueryCase, params: nn.ParameterSet, config: ModelConfig) -> float:
    """Forward-only RankNet loss of a query (used by gradient checking)."""
    if case.target is None:
        raise ValueError("query has no target developer")
    scores, _ = _forward_case(case, params, config)
    idx = [d.dev for d in case.devs].index(case.target)
    return ranknet_loss(scores[idx], [s for i, s in enumerate(scores) if i != idx])


def loss_and_gradients(
    case: QueryCase,
    params: nn.ParameterSet,
    config: ModelConfig,
    dropout_rng: Optional[np.random.Generator] = None,
):
    """RankNet loss of one query and its gradient for every parameter.

    Reverse-mode over the composed graph: embed -> encoders -> bilinear
    join -> MLP -> pairwise loss. The bug encoding is shared by all
    candidates, so its gradient accumulates across them.
    """
    if case.target is None:
        raise ValueError("query has no target developer")
    devs = [d.dev for d in case.devs]
    t_idx = devs.index(case.target)

    scores, fw = _forward_case(case, params, config, dropout_rng)
    bug_inputs, bug_cache, q_mask, x_q, caches = fw

    s = np.asarray(scores)
    margins = s[t_idx] - np.delete(s, t_idx)
    loss = float(np.logaddexp(0.0, -margins).sum())

    # dL/ds_j = sigmoid(-(s_t - s_j)) for others, minus their sum for the target
    d_scores = np.zeros(len(s))
    others = [i for i in range(len(s)) if i != t_idx]
    grad_pairs = nn.sigmoid(-margins)
    for k, j in enumerate(others):
        d_scores[j] = grad_pairs[k]
    d_scores[t_idx] = -grad_pairs.sum()

    grads = params.zero_grads()
    w = config.encoder_width
    d_x_q = np.zeros(w)
    for i, dev_case in enumerate(case.devs):
        if d_scores[i] == 0.0:
            continue
        inputs, ann_caches, enc_cache, d_mask, x_d, mlp_cache = caches[i]
        d_join, dw1, db1, dw2, db2 = nn.mlp_backward(d_scores[i], mlp_cache)
        grads["mlp.w1"] += dw1
        grads["mlp.b1"] += db1
        grads["mlp.w2"] += dw2
        grads["mlp.b2"] += db2
        d_x_q += d_join[:w]
        d_sim = d_join[w]
        d_x_d = d_join[w + 1 : 2 * w + 1]
        dq, dm, dd = nn.bilinear_backward(d_sim, x_q, params["m"], x_d)
        d_x_q += dq
        grads["m"] += dm
        d_x_d = d_x_d + dd
        d_x_d_raw = nn.apply_mask(d_x_d, d_mask)
        d_inputs = _encode_backward(d_x_d_raw, enc_cache, grads, "dev", config)
        _dev_inputs_backward(d_inputs, dev_case, ann_caches, grads, params, config)

    d_bug_inputs = _encode_backward(nn.apply_mask(d_x_q, q_mask), bug_cache, grads, "bug", config)
    nn.embed_backward(d_bug_inputs, case.bug_token_ids, grads["emb"])
    return loss, grads


# ---------------------------------------------------------------------------
# Ranked lists


@dataclass(frozen=True)
class RankedList:
    """Developers in descending score order; ties break by id ascending."""

    entries: tuple[tuple[str, float], ...]

    @classmethod
    def from_scores(cls, scores: Mapping[str, float]) -> "RankedList":
        return cls(tuple(sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))))

    def developers(self) -> tuple[str, ...]:
        return tuple(dev for dev, _ in self.entries)

    def rank_of(self, dev: str) -> int:
        """1-based rank; raises KeyError when the developer is absent."""
        for i, (d, _) in enumerate(self.entries):
            if d == dev:
                return i + 1
        raise KeyError(dev)

    def __len__(self) -> int:
        return len(self.entries)

    def to_json_obj(self, report_id: str, top: Optional[int] = None) -> dict:
        shown = self.entries if top is None else self.entries[:top]
        return {
            "report_id": report_id,
            "ranking": [{"developer": d, "score": s} for d, s in shown],
        }


# ---------------------------------------------------------------------------
# The trained model bundle


@dataclass
class RankingModel:
    config: ModelConfig
    params: nn.ParameterSet
    vocabulary: list[str]
    idf: Optional[IdfTable] = None
    vocab_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.vocab_index = {tok: i for i, tok in enumerate(self.vocabulary)}

    def save(self, path) -> None:
        idf_doc = None
        if self.idf is not None:
            idf_doc = {"weights": dict(self.idf.weights), "corpus_size": self.idf.corpus_size}
        nn.save_checkpoint(path, self.params, self.config.as_dict(), self.vocabulary, idf_doc)

    @classmethod
    def load(cls, path) -> "RankingModel":
        params, doc = nn.load_checkpoint(path)
        idf = None
        if "idf" in doc:
            idf = IdfTable(weights=doc["idf"]["weights"], corpus_size=doc["idf"]["corpus_size"])
        return cls(
            config=ModelConfig.from_dict(doc["config"]),
            params=params,
            vocabulary=list(doc["vocabulary"]),
            idf=idf,
        )


def rank(
    trace: StackTrace,
    store: AnnotationStore,
    model: RankingModel,
    all_devs: Iterable[str],
) -> RankedList:
    """Rank every known developer for one report.

    Candidates with a non-empty stack representation are scored by the
    model; everyone else gets one point less than the minimum model score,
    keeping the list total and serializable. A trace with no annotated (or
    no tokenizable) frames yields an all-sentinel list.
    """
    known = sorted(set(all_devs))
    case = prepare_query(trace, store, model.config, model.vocab_index, model.idf)
    scored: dict[str, float] = {}
    if case is not None and case.devs:
        scores, _ = _forward_case(case, model.params, model.config)
        for dev_case, s in zip(case.devs, scores):
            if dev_case.dev in known:
                scored[dev_case.dev] = s
    sentinel = (min(scored.values()) - 1.0) if scored else 0.0
    return RankedList.from_scores({dev: scored.get(dev, sentinel) for dev in known})


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainingLog:
    epoch_mean_loss: list[float]
    n_used: int
    n_skipped_no_tokens: int
    n_skipped_empty_target: int
    n_skipped_few_candidates: int


def train(
    reports: Sequence[StackTrace], store: AnnotationStore, config: ModelConfig
) -> tuple[RankingModel, TrainingLog]:
    """Train the configured ranking model on the given (training) reports.

    Reports whose target has an empty stack representation are removed, as
    are reports with fewer than two candidates or no tokens. Candidate sets
    larger than config.candidate_cap are subsampled once per report (target
    always kept). Fully deterministic for a fixed config.seed.
    """
    if not reports:
        raise TrainingDataError("training split is empty")
    ss = np.random.SeedSequence(config.seed)
    init_ss, cap_ss, train_ss = ss.spawn(3)

    sequences = [tokenize(compress_loops(r), config.token_mode) for r in reports]
    vocab = [UNK_TOKEN] + sorted({tok for seq in sequences for tok in seq.tokens})
    idf = compute_idf(sequences)
    vocab_index = {tok: i for i, tok in enumerate(vocab)}

    params = init_parameters(config, len(vocab), np.random.default_rng(init_ss))
    cap_rng = np.random.default_rng(cap_ss)

    cases = []
    n_no_tokens = n_empty_target = n_few = 0
    for report in reports:
        case = prepare_query(report, store, config, vocab_index, idf)
        if case is None:
            n_no_tokens += 1
            continue
        devs = [d.dev for d in case.devs]
        if case.target is None or case.target not in devs:
            n_empty_target += 1
            continue
        if len(devs) < 2:
            n_few += 1
            continue
        if len(devs) > config.candidate_cap:
            others = [d for d in case.devs if d.dev != case.target]
            picked = cap_rng.choice(len(others), size=config.candidate_cap - 1, replace=False)
            kept = [others[i] for i in sorted(picked)]
            target_case = next(d for d in case.devs if d.dev == case.target)
            case.devs = sorted(kept + [target_case], key=lambda d: d.dev)
        cases.append(case)

    if not cases:
        raise TrainingDataError(
            "no usable training reports: "
            f"{n_no_tokens} without tokens, {n_empty_target} with an empty target "
            f"representation, {n_few} with fewer than two candidates"
        )

    opt = nn.OptimizerState.create(params, config.learning_rate, config.weight_decay, config.dropout)
    train_rng = np.random.default_rng(train_ss)
    epoch_losses = []
    for _ in range(config.epochs):
        order = train_rng.permutation(len(cases))
        total = 0.0
        for i in order:
            loss, grads = loss_and_gradients(cases[i], params, config, dropout_rng=train_rng)
            nn.adam_step(params, grads, opt)
            total += loss
        epoch_losses.append(total / len(cases))

    model = RankingModel(config=config, params=params, vocabulary=vocab, idf=idf)
    log = TrainingLog(
        epoch_mean_loss=epoch_losses,
        n_used=len(cases),
        n_skipped_no_tokens=n_no_tokens,
        n_skipped_empty_target=n_empty_target,
        n_skipped_few_candidates=n_few,
    )
    return model, log
