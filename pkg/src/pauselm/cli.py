"""Command-line entry point orchestrating the full pipeline.

Subcommands map 1:1 onto the module operations: gen-synth, ingest,
build-vocab, pretrain, finetune, eval-pause, eval-clf, stats. Every run
writes its fully-resolved config into the run directory (named by
timestamp + config hash unless --run-dir pins it). Exit codes: 0
success, 2 config error, 3 data validation error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import evaluator, synth, trainer
from .errors import ConfigError, DataValidationError, NumericError, PauseLMError
from .ingest import dataset_summary, parse_dataset
from .model import ForwardStats, ModelConfig, load_checkpoint
from .runconfig import RunConfig
from .tokenizer import Vocabulary, build_vocab, encode_corpus

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="INI config file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )
    p.add_argument("--run-dir", type=Path, default=None, help="exact output directory")
    p.add_argument(
        "--out-root", type=Path, default=Path("runs"), help="parent for auto-named run dirs"
    )
    p.add_argument("--threads", type=int, default=1, help="worker threads (default 1, deterministic)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pauselm",
        description="Pause-aware masked language modeling over timestamped transcripts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic two-group corpus")
    _add_common(p)

    p = sub.add_parser("ingest", help="validate a transcript JSONL file and report counts")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)

    p = sub.add_parser("build-vocab", help="build the word vocabulary from a training corpus")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)

    p = sub.add_parser("pretrain", help="stage-1 masked-LM pretraining")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to resume from")

    p = sub.add_parser("finetune", help="stage-2 classification fine-tuning")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--init", type=Path, required=True, help="initial checkpoint")

    p = sub.add_parser("eval-pause", help="masked-pause prediction RMSE report")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("eval-clf", help="binary classification metrics report")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("stats", help="pause histogram and per-group moments")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)

    return parser


def _resolve_run_dir(args, cfg: RunConfig) -> Path:
    if args.run_dir is not None:
        run_dir = args.run_dir
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = args.out_root / f"{stamp}-{cfg.config_hash()}"
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(run_dir / "resolved.ini")
    return run_dir


def _model_cfg_from_checkpoint(path: Path, cfg: RunConfig) -> tuple[ModelConfig, dict]:
    ckpt_cfg, params = load_checkpoint(path)
    cfg.check_structural_match(ckpt_cfg)
    overrides = cfg.model_overrides()
    if overrides:
        ckpt_cfg = ckpt_cfg.with_overrides(**overrides)
    return ckpt_cfg, params


def _cmd_gen_synth(args, cfg: RunConfig) -> int:
    run_dir = _resolve_run_dir(args, cfg)
    out = run_dir / "dataset.jsonl"
    summary = synth.generate_to_file(cfg.synth_spec(), out)
    evaluator.write_json_report(summary, run_dir / "gen_summary.json")
    print(f"wrote {summary['n_transcripts']} transcripts to {out}")
    return EXIT_OK


def _cmd_ingest(args, cfg: RunConfig) -> int:
    run_dir = _resolve_run_dir(args, cfg)
    transcripts = parse_dataset(args.data)
    summary = dataset_summary(transcripts)
    evaluator.write_json_report(summary, run_dir / "ingest_report.json")
    print(
        f"validated {summary['n_transcripts']} transcripts "
        f"({summary['n_words']} words) from {args.data}"
    )
    return EXIT_OK


def _cmd_build_vocab(args, cfg: RunConfig) -> int:
    run_dir = _resolve_run_dir(args, cfg)
    transcripts = parse_dataset(args.data)
    vocab = build_vocab(transcripts, min_count=cfg.get("vocab", "min_count"))
    out = run_dir / "vocab.txt"
    vocab.save(out)
    evaluator.write_json_report(
        {"vocab_size": len(vocab), "n_words": vocab.n_words}, run_dir / "vocab_report.json"
    )
    print(f"wrote vocabulary of {len(vocab)} tokens to {out}")
    return EXIT_OK


def _cmd_pretrain(args, cfg: RunConfig) -> int:
    run_dir = _resolve_run_dir(args, cfg)
    transcripts = parse_dataset(args.data)
    vocab = Vocabulary.load(args.vocab)
    model_cfg = cfg.model_config(vocab_size=len(vocab))
    dataset = encode_corpus(transcripts, vocab, model_cfg.max_seq_len)
    ckpt, _ = trainer.pretrain(
        dataset, cfg.pretrain_config(), model_cfg, run_dir, resume_from=args.resume
    )
    print(f"pretraining finished; checkpoint at {ckpt}")
    return EXIT_OK


def _cmd_finetune(args, cfg: RunConfig) -> int:
    run_dir = _resolve_run_dir(args, cfg)
    transcripts = parse_dataset(args.data)
    vocab = Vocabulary.load(args.vocab)
    model_cfg, params = _model_cfg_from_checkpoint(args.init, cfg)
    if len(vocab) != model_cfg.vocab_size:
        raise DataValidationError(
            f"vocabulary size {len(vocab)} does not match checkpoint vocab_size "
            f"{model_cfg.vocab_size}"
        )
    dataset = encode_corpus(transcripts, vocab, model_cfg.max_seq_len)
    ckpt, _ = trainer.finetune(
        dataset, (model_cfg, params), cfg.finetune_config(), run_dir
    )
    print(f"fine-tuning finished; checkpoint at {ckpt}")
    return EXIT_OK


def _cmd_eval_pause(args, cfg: RunConfig) -> int:
    run_dir = _resolve_run_dir(args, cfg)
    transcripts = parse_dataset(args.data)
    vocab = Vocabulary.load(args.vocab)
    model_cfg, params = _model_cfg_from_checkpoint(args.checkpoint, cfg)
    stats = ForwardStats()
    report = evaluator.eval_masked_pause(
        transcripts,
        params,
        model_cfg,
        vocab,
        sweep=cfg.get("eval", "sweep_masking"),
        stats=stats,
        n_threads=args.threads,
    )
    evaluator.write_json_report(report.to_dict(), run_dir / "pause_rmse.json")
    for name, summary in sorted(report.groups.items()):
        print(
            f"group {name}: n={summary.n_transcripts} mean={summary.mean_rmse_s:.4f}s "
            f"min={summary.min_rmse_s:.4f}s max={summary.max_rmse_s:.4f}s"
        )
    return EXIT_OK


def _cmd_eval_clf(args, cfg: RunConfig) -> int:
    run_dir = _resolve_run_dir(args, cfg)
    transcripts = parse_dataset(args.data)
    vocab = Vocabulary.load(args.vocab)
    model_cfg, params = _model_cfg_from_checkpoint(args.checkpoint, cfg)
    report = evaluator.eval_classification(transcripts, params, model_cfg, vocab)
    evaluator.write_json_report(report.to_dict(), run_dir / "classification.json")
    d = report.to_dict()
    print(
        f"acc={d['accuracy_pct']}% pre={d['precision_pct']}% "
        f"rec={d['recall_pct']}% f1={d['f1_pct']}%"
    )
    return EXIT_OK


def _cmd_stats(args, cfg: RunConfig) -> int:
    run_dir = _resolve_run_dir(args, cfg)
    transcripts = parse_dataset(args.data)
    report = evaluator.pause_stats(transcripts)
    evaluator.write_json_report(report.to_dict(), run_dir / "pause_stats.json")
    report.write_csv(run_dir / "pause_histogram.csv")
    for name, g in sorted(report.groups.items()):
        print(f"group {name}: n={g.n} mean={g.mean_s:.4f}s var={g.variance_s2:.6f}")
    return EXIT_OK


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "ingest": _cmd_ingest,
    "build-vocab": _cmd_build_vocab,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "eval-pause": _cmd_eval_pause,
    "eval-clf": _cmd_eval_clf,
    "stats": _cmd_stats,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.overrides)
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataValidationError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PauseLMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
