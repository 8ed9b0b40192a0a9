"""Command-line entry point: generate / train / rank / eval.

Any two invocations with identical flags and inputs produce identical
outputs. Exit codes: 0 success, 1 validation failure, 2 I/O failure.
The DAPSTEP_SEED environment variable supplies the seed when --seed is
omitted.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import datagen, pipeline, ranker
from .annotations import AnnotationParseError
from .evaluation import METRICS, bootstrap_diff, split_by_time
from .features import compute_idf
from .ranker import ModelConfig, PRESETS, RankingModel, TrainingDataError
from .trace import ReportParseError, tokenize

FEATURE_FLAG_TO_MODE = {"none": "none", "manual": "manual_frame", "neural": "neural_frame"}
BASELINES = ("heuristic", "tfidf-logreg")


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with code 1, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _default_seed() -> int:
    return int(os.environ.get("DAPSTEP_SEED", "0"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stacktriage", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="generate a synthetic planted-signal corpus")
    gen.add_argument("--devs", type=int, required=True, help="number of developers (>= 2)")
    gen.add_argument("--files", type=int, required=True, help="number of source files")
    gen.add_argument("--reports", type=int, required=True, help="number of crash reports")
    gen.add_argument("--mean-trace-len", type=float, default=50.0, help="mean frames per trace (default 50)")
    gen.add_argument("--noise", type=float, default=0.0, help="probability the fixer is not the planted owner (default 0)")
    gen.add_argument("--drop-annotations", type=float, default=0.0, help="fraction of per-file annotations to withhold (default 0)")
    gen.add_argument("--seed", type=int, default=None, help="RNG seed (default: $DAPSTEP_SEED or 0)")
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train a ranking model on the time-ordered training split")
    tr.add_argument("--data", required=True, help="corpus directory (reports.jsonl + annotations.jsonl)")
    tr.add_argument("--out", required=True, help="checkpoint path to write")
    tr.add_argument("--model", choices=("rnn", "cnn"), default="rnn", help="encoder architecture (default rnn)")
    tr.add_argument("--features", choices=tuple(FEATURE_FLAG_TO_MODE), default="manual",
                    help="per-frame annotation features (default manual)")
    tr.add_argument("--stack-features", action="store_true", help="also concatenate stack-level features")
    tr.add_argument("--preset", choices=tuple(PRESETS), default=None, help="named dimension preset")
    tr.add_argument("--emb-dim", type=int, default=None, help="token embedding width")
    tr.add_argument("--hidden", type=int, default=None, help="LSTM hidden size")
    tr.add_argument("--filters", type=int, default=None, help="number of convolution filters")
    tr.add_argument("--mlp-hidden", type=int, default=None, help="scorer hidden width (default 64)")
    tr.add_argument("--epochs", type=int, default=10, help="training epochs (default 10)")
    tr.add_argument("--token-mode", choices=("file", "method", "subsystem"), default="file",
                    help="frame field used as the text token (default file)")
    tr.add_argument("--seed", type=int, default=None, help="RNG seed (default: $DAPSTEP_SEED or 0)")
    tr.add_argument("--log", default=None, help="optional JSON training-log path")
    tr.set_defaults(func=cmd_train)

    rk = sub.add_parser("rank", help="rank all known developers for one report")
    rk.add_argument("--data", required=True, help="corpus directory")
    rk.add_argument("--model", required=True, help="checkpoint path")
    rk.add_argument("--report", required=True, help="report id to rank")
    rk.add_argument("--top", type=int, default=None, help="truncate the displayed list (computation always ranks everyone)")
    rk.add_argument("--out", default="-", help="output path (default: stdout)")
    rk.set_defaults(func=cmd_rank)

    ev = sub.add_parser("eval", help="evaluate a model and/or baseline on a held-out split")
    ev.add_argument("--data", required=True, help="corpus directory")
    ev.add_argument("--model", default=None, help="checkpoint path of the ranking model")
    ev.add_argument("--baseline", choices=BASELINES, default=None, help="baseline to evaluate")
    ev.add_argument("--split", choices=("validation", "test"), default="test", help="split to evaluate (default test)")
    ev.add_argument("--bootstrap", type=int, default=0,
                    help="paired bootstrap resamples for the model-vs-baseline comparison (default off)")
    ev.add_argument("--metric", choices=METRICS, default="mrr", help="comparison metric (default mrr)")
    ev.add_argument("--dump-features", default=None, help="write a per-(report, developer) feature CSV here")
    ev.add_argument("--seed", type=int, default=None, help="RNG seed (default: $DAPSTEP_SEED or 0)")
    ev.add_argument("--out", default="-", help="output path (default: stdout)")
    ev.set_defaults(func=cmd_eval)

    return parser


def _seed_of(args) -> int:
    return args.seed if args.seed is not None else _default_seed()


def cmd_generate(args) -> int:
    config = datagen.GeneratorConfig(
        n_developers=args.devs,
        n_files=args.files,
        n_reports=args.reports,
        mean_trace_len=args.mean_trace_len,
        noise=args.noise,
        drop_annotations=args.drop_annotations,
        seed=_seed_of(args),
    )
    paths = datagen.write_corpus(datagen.generate_corpus(config), args.out)
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    return 0


def _train_config(args) -> ModelConfig:
    dims = dict(PRESETS[args.preset]) if args.preset else {}
    if args.emb_dim is not None:
        dims["embedding_dim"] = args.emb_dim
    if args.hidden is not None:
        dims["hidden_size"] = args.hidden
    if args.filters is not None:
        dims["num_filters"] = args.filters
    if args.mlp_hidden is not None:
        dims["mlp_hidden"] = args.mlp_hidden
    return ModelConfig(
        encoder=args.model,
        feature_mode=FEATURE_FLAG_TO_MODE[args.features],
        use_stack_features=args.stack_features,
        token_mode=args.token_mode,
        epochs=args.epochs,
        seed=_seed_of(args),
        **dims,
    )


def cmd_train(args) -> int:
    reports, store = pipeline.load_corpus(args.data)
    reports = pipeline.preprocess_reports(reports)
    split = split_by_time(reports)
    config = _train_config(args)
    model, log = ranker.train(split.select(reports, "train"), store, config)
    model.save(args.out)
    for epoch, loss in enumerate(log.epoch_mean_loss, start=1):
        print(f"epoch {epoch}: mean_loss={loss:.6f}")
    print(
        f"trained on {log.n_used} reports "
        f"(skipped: {log.n_skipped_no_tokens} without tokens, "
        f"{log.n_skipped_empty_target} with empty target representation, "
        f"{log.n_skipped_few_candidates} with fewer than two candidates)"
    )
    print(f"wrote checkpoint: {args.out}")
    if args.log:
        pipeline.write_json(
            args.log,
            {
                "epoch_mean_loss": log.epoch_mean_loss,
                "n_used": log.n_used,
                "n_skipped_no_tokens": log.n_skipped_no_tokens,
                "n_skipped_empty_target": log.n_skipped_empty_target,
                "n_skipped_few_candidates": log.n_skipped_few_candidates,
            },
        )
    return 0


def cmd_rank(args) -> int:
    reports, store = pipeline.load_corpus(args.data)
    reports = pipeline.preprocess_reports(reports)
    model = RankingModel.load(args.model)
    all_devs = pipeline.known_developers(reports, store)
    trace = next((r for r in reports if r.report_id == args.report), None)
    if trace is None:
        raise ValueError(f"report {args.report!r} not found in {args.data}")
    ranking = ranker.rank(trace, store, model, all_devs)
    pipeline.write_json(args.out, ranking.to_json_obj(trace.report_id, top=args.top))
    return 0


def cmd_eval(args) -> int:
    if args.model is None and args.baseline is None:
        raise ValueError("eval needs --model and/or --baseline")
    seed = _seed_of(args)
    reports, store = pipeline.load_corpus(args.data)
    reports = pipeline.preprocess_reports(reports)
    split = split_by_time(reports)
    train_reports = split.select(reports, "train")
    eval_reports = [r for r in split.select(reports, args.split) if r.fixer is not None]
    if not eval_reports:
        raise ValueError(f"the {args.split} split has no labeled reports")
    all_devs = pipeline.known_developers(reports, store)

    doc: dict = {"split": args.split, "n_developers": len(all_devs)}
    model_result = None
    baseline_result = None

    if args.model is not None:
        model = RankingModel.load(args.model)
        rankings = pipeline.rank_with_model(model, eval_reports, store, all_devs)
        model_result = pipeline.evaluate_rankings(rankings, eval_reports)
        name = f"{model.config.encoder}-ranking"
        doc.update(pipeline.model_report(name, model_result))
        doc.update(pipeline.unseen_fixer_block(eval_reports, train_reports, model_result))

    if args.baseline is not None:
        if args.baseline == "heuristic":
            rankings = pipeline.rank_with_heuristic(eval_reports, store, all_devs)
        else:
            baseline = pipeline.train_tfidf_logreg(train_reports, seed=seed)
            rankings = pipeline.rank_with_tfidf_logreg(baseline, eval_reports, all_devs)
        baseline_result = pipeline.evaluate_rankings(rankings, eval_reports)
        block = pipeline.model_report(args.baseline, baseline_result)
        block.update(pipeline.unseen_fixer_block(eval_reports, train_reports, baseline_result))
        if args.model is None:
            doc.update(block)
        else:
            doc["baseline"] = block

    if args.bootstrap > 0 and model_result is not None and baseline_result is not None:
        result = bootstrap_diff(
            model_result.ranks,
            baseline_result.ranks,
            metric=args.metric,
            n_resamples=args.bootstrap,
            seed=seed,
        )
        doc["comparison"] = {"baseline": args.baseline, "metric": args.metric}
        doc["comparison"].update(result.as_dict())

    if args.dump_features:
        idf = compute_idf([tokenize(r) for r in train_reports])
        n_rows = pipeline.dump_feature_csv(args.dump_features, eval_reports, store, idf)
        doc["feature_dump"] = {"path": args.dump_features, "rows": n_rows}

    pipeline.write_json(args.out, doc)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, ReportParseError, AnnotationParseError, TrainingDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
