"""Command-line entry point.

Subcommands: train, generate, chat, eval, export-latents, inspect. Every
command echoes the fully-resolved configuration before acting, and exits 0
only when the requested artifact was completely written.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from latentdialog.config import RunConfig, resolve_config


def _resolve(args: argparse.Namespace) -> RunConfig:
    run = resolve_config(getattr(args, "config", None), getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        run.seed = args.seed
    flag_map = {
        "epochs": ("train", "epochs"),
        "batch_size": ("train", "batch_size"),
        "max_steps": ("train", "max_steps"),
        "mode": ("generation", "mode"),
        "beam_width": ("generation", "beam_width"),
        "nucleus_p": ("generation", "nucleus_p"),
        "max_length": ("generation", "max_length"),
        "r_policy": ("generation", "r_policy"),
        "alpha": ("generation", "length_norm_alpha"),
    }
    for flag, (section, key) in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(getattr(run, section), key, value)
    for flag in ("no_uncorrelated", "no_denoising", "attention"):
        if getattr(args, flag, False):
            setattr(run.train, flag, True)
    if getattr(args, "no_denoising", False):
        run.data.replace_prob = 0.0
    return run


def _echo(run: RunConfig) -> None:
    print(run.echo())
    print()


def _load_bundle(args: argparse.Namespace):
    from latentdialog.model import load_checkpoint

    if not args.checkpoint:
        raise ValueError("--checkpoint is required")
    path = Path(args.checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_train(args: argparse.Namespace) -> int:
    from latentdialog.training import train, train_baseline

    run = _resolve(args)
    _echo(run)
    train_file = args.train_file or run.data.train_file
    valid_file = args.valid_file or run.data.valid_file or None
    if not train_file:
        print("error: no training corpus given (--train)", file=sys.stderr)
        return 2
    if not args.out:
        print("error: no output directory given (--out)", file=sys.stderr)
        return 2
    common = dict(
        cfg=run.train_config(),
        valid_path=valid_file,
        resume_from=args.resume,
        run_config_flat=run.flat(),
    )
    if args.model == "baseline":
        result = train_baseline(
            train_file,
            args.out,
            baseline_cfg=run.baseline_config(vocab_size=1),
            **common,
        )
    else:
        result = train(
            train_file,
            args.out,
            loss_cfg=run.loss_config(),
            model_cfg=run.model_config(vocab_size=1),
            **common,
        )
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"best checkpoint: {result.best_checkpoint_path}")
    print(f"log: {result.log_path}")
    print(f"steps: {result.steps}  epochs: {result.epochs_run}")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    from latentdialog.inference import batch_generate

    run = _resolve(args)
    _echo(run)
    if not args.prompts:
        print("error: no prompt file given (--prompts)", file=sys.stderr)
        return 2
    if not args.out:
        print("error: no output file given (--out)", file=sys.stderr)
        return 2
    if not Path(args.prompts).exists():
        raise FileNotFoundError(f"prompt file not found: {args.prompts}")
    bundle = _load_bundle(args)
    n = batch_generate(
        bundle.model, bundle.vocab, args.prompts, args.out, run.generation_options()
    )
    print(f"wrote {n} responses to {args.out}")
    return 0


def cmd_chat(args: argparse.Namespace) -> int:
    from latentdialog.inference import chat_repl

    run = _resolve(args)
    _echo(run)
    bundle = _load_bundle(args)
    return chat_repl(bundle.model, bundle.vocab, run.generation_options())


def cmd_eval(args: argparse.Namespace) -> int:
    from latentdialog.metrics import evaluate_files, load_annotations, ui_score

    run = _resolve(args)
    _echo(run)
    for path in (args.hyp, args.ref):
        if not Path(path).exists():
            raise FileNotFoundError(f"input not found: {path}")
    report = evaluate_files(args.hyp, args.ref, args.embeddings)
    record = report.as_dict()
    if record["sim"] != record["sim"]:  # NaN: no embedding table given
        record["sim"] = None
    if args.annotations:
        record["ui"] = ui_score(load_annotations(args.annotations))
    print(report.table())
    if record.get("ui") is not None:
        print(f"{'UI':>8}: {record['ui']:.3f}")
    print(json.dumps(record))
    if args.out:
        Path(args.out).write_text(json.dumps(record) + "\n", encoding="utf-8")
        print(f"report written to {args.out}")
    return 0


def cmd_export_latents(args: argparse.Namespace) -> int:
    from latentdialog.latent_inspect import export_latents

    run = _resolve(args)
    _echo(run)
    if not args.out:
        print("error: no output file given (--out)", file=sys.stderr)
        return 2
    sentences_path = Path(args.sentences)
    if not sentences_path.exists():
        raise FileNotFoundError(f"sentence file not found: {sentences_path}")
    bundle = _load_bundle(args)
    sentences = []
    for lineno, line in enumerate(
        sentences_path.read_text(encoding="utf-8").splitlines(), 1
    ):
        if not line.strip():
            continue
        parts = line.split("\t", 1)
        if len(parts) != 2:
            raise ValueError(f"{sentences_path}:{lineno}: expected 'role<TAB>text'")
        sentences.append((parts[1], parts[0].strip()))
    written, skipped = export_latents(bundle.model, bundle.vocab, sentences, args.out)
    print(f"wrote {written} records to {args.out} ({skipped} skipped)")
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    from latentdialog.latent_inspect import nearest_neighbors, read_latents

    run = _resolve(args)
    _echo(run)
    if not Path(args.latents).exists():
        raise FileNotFoundError(f"latent file not found: {args.latents}")
    records = read_latents(args.latents)
    neighbors = nearest_neighbors(args.query, records, args.k, metric=args.metric)
    by_id = {rec.id: rec for rec in records}
    for rec_id in neighbors:
        rec = by_id[rec_id]
        print(f"{rec_id}\t{rec.role}\t{rec.text}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentdialog",
        description="Dialogue generation via latent-space regression.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file ('dotted.key = value' lines)")
    common.add_argument("--seed", type=int, help="root seed for all randomness")
    common.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override one config key"
    )
    common.add_argument("--checkpoint", help="model checkpoint path")
    common.add_argument("--out", help="output path (file or directory per command)")

    decode = argparse.ArgumentParser(add_help=False)
    decode.add_argument("--mode", choices=("beam", "nucleus"))
    decode.add_argument("--beam-width", type=int, dest="beam_width")
    decode.add_argument("--nucleus-p", type=float, dest="nucleus_p")
    decode.add_argument("--max-length", type=int, dest="max_length")
    decode.add_argument("--r-policy", choices=("zeros", "sample"), dest="r_policy")
    decode.add_argument("--alpha", type=float, help="length normalization exponent")

    p_train = sub.add_parser("train", parents=[common], help="train a model")
    p_train.add_argument("--train", dest="train_file", help="training pair file")
    p_train.add_argument("--valid", dest="valid_file", help="validation pair file")
    p_train.add_argument("--model", choices=("latent", "baseline"), default="latent")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", type=int, dest="batch_size")
    p_train.add_argument("--max-steps", type=int, dest="max_steps")
    p_train.add_argument("--no-uncorrelated", action="store_true", dest="no_uncorrelated")
    p_train.add_argument("--no-denoising", action="store_true", dest="no_denoising")
    p_train.add_argument("--attention", action="store_true")
    p_train.add_argument("--resume", help="checkpoint to continue from")
    p_train.set_defaults(func=cmd_train)

    p_gen = sub.add_parser(
        "generate", parents=[common, decode], help="batch-generate responses"
    )
    p_gen.add_argument("--prompts", help="input file, one prompt per line")
    p_gen.set_defaults(func=cmd_generate)

    p_chat = sub.add_parser(
        "chat", parents=[common, decode], help="interactive chat loop"
    )
    p_chat.set_defaults(func=cmd_chat)

    p_eval = sub.add_parser("eval", parents=[common], help="score generated responses")
    p_eval.add_argument("--hyp", required=True, help="hypothesis file")
    p_eval.add_argument("--ref", required=True, help="reference file (line-aligned)")
    p_eval.add_argument("--embeddings", help="embedding table for the Sim column")
    p_eval.add_argument("--annotations", help="human annotation TSV for the UI score")
    p_eval.set_defaults(func=cmd_eval)

    p_export = sub.add_parser(
        "export-latents", parents=[common], help="encode sentences to a vector TSV"
    )
    p_export.add_argument(
        "--sentences", required=True, help="input file, 'role<TAB>text' per line"
    )
    p_export.set_defaults(func=cmd_export_latents)

    p_inspect = sub.add_parser(
        "inspect", parents=[common], help="nearest-neighbor query over a latent TSV"
    )
    p_inspect.add_argument("--latents", required=True, help="exported latent TSV")
    p_inspect.add_argument("--query", required=True, help="record id to query")
    p_inspect.add_argument("--k", type=int, default=5)
    p_inspect.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_err:
        return int(exit_err.code or 0)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
